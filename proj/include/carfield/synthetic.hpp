#pragma once

#include <utility>

#include "carfield/geometry.hpp"
#include "carfield/image.hpp"
#include "carfield/sample.hpp"

namespace carfield {

// Analytic stand-in car in the canonical cube: a box body with a
// half-ellipsoid cabin, smooth density band at the surface, flat colors.
struct SyntheticScene {
  Vec3 body_center = Vec3(0.0, -0.35, 0.0);
  Vec3 body_half = Vec3(0.95, 0.6, 0.85);
  Vec3 cabin_center = Vec3(-0.05, 0.2, 0.0);
  Vec3 cabin_semi = Vec3(0.55, 0.6, 0.68);
  double cut_y = 0.2;      // cabin exists only above this plane
  double band = 0.08;      // smooth-step width in normalized distance
  double density = 24.0;   // interior density scale
  Vec3 body_color = Vec3(0.75, 0.12, 0.12);
  Vec3 window_color = Vec3(0.16, 0.22, 0.34);

  void validate() const;
};

// Analytic density and color at a canonical-frame point.
std::pair<double, Vec3> synth_scene_sample(const SyntheticScene& scene, const Vec3& p);

struct GtRender {
  Image rgb;   // H x W x 3
  Image acc;   // H x W x 1, accumulated weight
  Image mask;  // H x W x 1, acc > 0.5
};

// Ground truth by dense uniform midpoint quadrature (samples bins per ray).
GtRender synth_render_gt(const SyntheticScene& scene, const Mat4& canonical_from_camera,
                         const Intrinsics& k, int width, int height, int samples = 512);

// Camera on a sphere looking at the canonical origin; pinhole frame is
// x-right / y-down / z-forward. Azimuth spins about +y from the +x axis.
Mat4 orbit_pose_canonical(double azimuth, double elevation, double radius);

// Intrinsics that frame the whole car at orbit radius ~3.4.
Intrinsics synth_intrinsics(int resolution);

// Full supervised patch from the oracle.
TrainingSample synth_sample(const SyntheticScene& scene, double azimuth, double elevation,
                            double radius, int resolution, int samples, std::string instance,
                            int view_id);

}  // namespace carfield
