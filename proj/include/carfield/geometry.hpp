#pragma once

#include <Eigen/Dense>
#include <array>

#include "carfield/errors.hpp"

namespace carfield {

using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Car extents in meters. Plausibility gate keeps obviously broken detector
// output (zero/negative or absurd sizes) from propagating.
struct CarDimensions {
  double length = 0.0;
  double height = 0.0;
  double width = 0.0;

  void validate() const;
};

// Detector 3D box in the camera frame (x right, y down, z forward); yaw is
// about the camera vertical axis.
struct Box3D {
  Vec3 center = Vec3::Zero();
  CarDimensions dims;
  double yaw = 0.0;
};

struct Box2D {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
};

struct Intrinsics {
  double focal_x = 0.0, focal_y = 0.0;
  double principal_x = 0.0, principal_y = 0.0;
};

// diag(2/l, 2/h, 2/w, 1): object-sized extents -> [-1, 1] cube.
Mat4 scaled_cam_transform(const CarDimensions& dims);

// scaled_cam * inverse(cam_car) * diag(1, -1, -1, 1). The trailing flip
// fixes the canonical axis orientation; see render_frame_car_pose for how
// pinhole-frame car poses enter this formula.
Mat4 canonical_cam_pose(const Mat4& scaled_cam, const Mat4& cam_car);

// Axis-aligned pixel bounding box of the 8 projected box corners.
Box2D project_box3d(const Box3D& box, const Intrinsics& k);

double iou_2d(const Box2D& a, const Box2D& b);

// Principal point at the image center, focal scaled from a reference
// calibration proportionally to image width.
Intrinsics rough_intrinsics(int image_width, int image_height, double reference_focal,
                            double reference_width);

// ---- support ----------------------------------------------------------

bool is_rigid(const Mat4& m, double tol = 1e-6);

// (Rt, -Rt t) for rigid inputs, general inverse otherwise.
// Throws InvalidArgument("singular transform...") when not invertible.
Mat4 invert_transform(const Mat4& m);

// Car-to-camera rigid transform from a detector box: R_y(yaw) about the
// camera vertical axis, translation = box center.
Mat4 car_to_camera(const Box3D& box);

// diag(1, -1, -1, 1).
Mat4 axis_flip();

// Conjugated car pose F * T(car->camera) * F. Feeding this into
// canonical_cam_pose yields the camera->canonical map that is consistent
// with pinhole rays built as ((u-cx)/fx, (v-cy)/fy, 1): the two flips
// combine so the composed map equals flip * scale * inverse(car->camera).
Mat4 render_frame_car_pose(const Box3D& box);

// Full chain for a dataset record: camera-frame points -> canonical frame.
Mat4 canonical_from_camera(const Box3D& box);

// 8 corners of the box in the camera frame.
std::array<Vec3, 8> box3d_corners(const Box3D& box);

}  // namespace carfield
