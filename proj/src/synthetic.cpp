#include "carfield/synthetic.hpp"

#include <cmath>
#include <limits>

#include "carfield/errors.hpp"
#include "carfield/renderer.hpp"

namespace carfield {

void SyntheticScene::validate() const {
  if (band <= 0 || density <= 0) {
    throw InvalidArgument("synthetic scene: band and density must be positive");
  }
  const double reach = 1.0 + band / 2.0;  // density support in d units
  for (int j = 0; j < 3; ++j) {
    if (std::abs(body_center[j]) + body_half[j] * reach > 1.0 ||
        std::abs(cabin_center[j]) + cabin_semi[j] * reach > 1.0) {
      throw InvalidArgument("synthetic scene: geometry leaves the canonical cube");
    }
  }
}

namespace {

double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

}  // namespace

std::pair<double, Vec3> synth_scene_sample(const SyntheticScene& scene, const Vec3& p) {
  double d_box = 0.0;
  for (int j = 0; j < 3; ++j) {
    d_box = std::max(d_box, std::abs(p[j] - scene.body_center[j]) / scene.body_half[j]);
  }
  double d_cab = std::numeric_limits<double>::infinity();
  if (p[1] >= scene.cut_y) {
    d_cab = ((p - scene.cabin_center).array() / scene.cabin_semi.array()).matrix().norm();
  }
  const double d = std::min(d_box, d_cab);
  const double sigma = scene.density * smoothstep01((1.0 + scene.band / 2.0 - d) / scene.band);
  const Vec3 color = d_cab < d_box ? scene.window_color : scene.body_color;
  return {sigma, color};
}

GtRender synth_render_gt(const SyntheticScene& scene, const Mat4& canonical_from_camera,
                         const Intrinsics& k, int width, int height, int samples) {
  scene.validate();
  if (samples < 2) throw InvalidArgument("synthetic render: need at least 2 samples per ray");
  GtRender out;
  out.rgb = Image::zeros(width, height, 3);
  out.acc = Image::zeros(width, height, 1);
  out.mask = Image::zeros(width, height, 1);

  const Vec3 origin = canonical_from_camera.block<3, 1>(0, 3);
  const Mat3 rot = canonical_from_camera.block<3, 3>(0, 0);

  VecX<double> sigma(samples);
  MatX<double> color(samples, 3);
  VecX<double> edges(samples + 1);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec3 d_cam((x + 0.5 - k.principal_x) / k.focal_x,
                       (y + 0.5 - k.principal_y) / k.focal_y, 1.0);
      Cone ray;
      ray.apex = origin;
      ray.dir = rot * d_cam;
      auto bounds = canonical_bounds(ray, 1e-4);
      if (!bounds) continue;
      const double t_n = bounds->first;
      const double t_f = bounds->second;
      const double step = (t_f - t_n) / samples;
      for (int i = 0; i <= samples; ++i) edges[i] = t_n + i * step;
      for (int i = 0; i < samples; ++i) {
        const double tm = t_n + (i + 0.5) * step;
        auto [s, c] = synth_scene_sample(scene, ray.apex + tm * ray.dir);
        sigma[i] = s;
        color.row(i) = c.transpose();
      }
      auto res = composite<double>(sigma, color, edges);
      for (int c = 0; c < 3; ++c) {
        out.rgb.at(x, y, c) = static_cast<float>(std::clamp(res.rgb[c], 0.0, 1.0));
      }
      out.acc.at(x, y, 0) = static_cast<float>(std::clamp(res.acc, 0.0, 1.0));
      out.mask.at(x, y, 0) = res.acc > 0.5 ? 1.0f : 0.0f;
    }
  }
  return out;
}

Mat4 orbit_pose_canonical(double azimuth, double elevation, double radius) {
  if (radius <= 0) throw InvalidArgument("orbit pose: radius must be positive");
  const Vec3 pos(radius * std::cos(elevation) * std::cos(azimuth),
                 radius * std::sin(elevation),
                 radius * std::cos(elevation) * std::sin(azimuth));
  const Vec3 forward = (-pos).normalized();
  Vec3 up(0, 1, 0);
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3(0, 0, 1);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Mat4 pose = Mat4::Identity();
  pose.block<3, 1>(0, 0) = right;
  pose.block<3, 1>(0, 1) = down;
  pose.block<3, 1>(0, 2) = forward;
  pose.block<3, 1>(0, 3) = pos;
  return pose;
}

Intrinsics synth_intrinsics(int resolution) {
  Intrinsics k;
  k.focal_x = k.focal_y = 0.8 * resolution;
  k.principal_x = k.principal_y = resolution / 2.0;
  return k;
}

TrainingSample synth_sample(const SyntheticScene& scene, double azimuth, double elevation,
                            double radius, int resolution, int samples, std::string instance,
                            int view_id) {
  TrainingSample s;
  s.k = synth_intrinsics(resolution);
  s.canonical_from_camera = orbit_pose_canonical(azimuth, elevation, radius);
  GtRender gt = synth_render_gt(scene, s.canonical_from_camera, s.k, resolution, resolution,
                                samples);
  s.patch = std::move(gt.rgb);
  s.mask = std::move(gt.mask);
  s.instance = std::move(instance);
  s.view_id = view_id;
  return s;
}

}  // namespace carfield
