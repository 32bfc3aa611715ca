#include "carfield/geometry.hpp"

#include <cmath>

#include "carfield/log.hpp"

namespace carfield {

void CarDimensions::validate() const {
  if (!(length > 0.0) || !(height > 0.0) || !(width > 0.0) || length < 0.5 || length > 30.0 ||
      height < 0.5 || height > 30.0 || width < 0.5 || width > 30.0) {
    throw InvalidArgument(strf("invalid dimensions: l=%g h=%g w=%g (each must lie in [0.5, 30])",
                               length, height, width));
  }
}

Mat4 scaled_cam_transform(const CarDimensions& dims) {
  dims.validate();
  Mat4 m = Mat4::Identity();
  m(0, 0) = 2.0 / dims.length;
  m(1, 1) = 2.0 / dims.height;
  m(2, 2) = 2.0 / dims.width;
  return m;
}

bool is_rigid(const Mat4& m, double tol) {
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol) return false;
  Mat3 r = m.topLeftCorner<3, 3>();
  if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) < tol;
}

Mat4 invert_transform(const Mat4& m) {
  if (is_rigid(m)) {
    Mat3 rt = m.topLeftCorner<3, 3>().transpose();
    Mat4 inv = Mat4::Identity();
    inv.topLeftCorner<3, 3>() = rt;
    inv.topRightCorner<3, 1>() = -rt * m.topRightCorner<3, 1>();
    return inv;
  }
  Eigen::FullPivLU<Mat4> lu(m);
  if (!lu.isInvertible()) {
    throw InvalidArgument("singular transform: matrix is not invertible");
  }
  return lu.inverse();
}

Mat4 axis_flip() {
  Mat4 f = Mat4::Identity();
  f(1, 1) = -1.0;
  f(2, 2) = -1.0;
  return f;
}

Mat4 canonical_cam_pose(const Mat4& scaled_cam, const Mat4& cam_car) {
  return scaled_cam * invert_transform(cam_car) * axis_flip();
}

Mat4 car_to_camera(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Mat4 m = Mat4::Identity();
  // Rotation about the camera vertical (y) axis.
  m(0, 0) = c;
  m(0, 2) = s;
  m(2, 0) = -s;
  m(2, 2) = c;
  m.topRightCorner<3, 1>() = box.center;
  return m;
}

Mat4 render_frame_car_pose(const Box3D& box) {
  const Mat4 f = axis_flip();
  return f * car_to_camera(box) * f;
}

Mat4 canonical_from_camera(const Box3D& box) {
  return canonical_cam_pose(scaled_cam_transform(box.dims), render_frame_car_pose(box));
}

std::array<Vec3, 8> box3d_corners(const Box3D& box) {
  const Mat4 t = car_to_camera(box);
  const double hx = box.dims.length * 0.5;
  const double hy = box.dims.height * 0.5;
  const double hz = box.dims.width * 0.5;
  std::array<Vec3, 8> out;
  int i = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) {
        Eigen::Vector4d p(sx * hx, sy * hy, sz * hz, 1.0);
        out[i++] = (t * p).head<3>();
      }
  return out;
}

Box2D project_box3d(const Box3D& box, const Intrinsics& k) {
  box.dims.validate();
  Box2D b;
  b.x_min = b.y_min = std::numeric_limits<double>::infinity();
  b.x_max = b.y_max = -std::numeric_limits<double>::infinity();
  for (const Vec3& p : box3d_corners(box)) {
    if (p.z() <= 0.0) {
      throw InvalidArgument(strf("behind camera: box corner at depth %g", p.z()));
    }
    const double u = k.principal_x + k.focal_x * p.x() / p.z();
    const double v = k.principal_y + k.focal_y * p.y() / p.z();
    b.x_min = std::min(b.x_min, u);
    b.x_max = std::max(b.x_max, u);
    b.y_min = std::min(b.y_min, v);
    b.y_max = std::max(b.y_max, v);
  }
  return b;
}

double iou_2d(const Box2D& a, const Box2D& b) {
  if (!a.valid() || !b.valid()) {
    throw InvalidArgument("invalid box: x_min/y_min must be strictly less than x_max/y_max");
  }
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

Intrinsics rough_intrinsics(int image_width, int image_height, double reference_focal,
                            double reference_width) {
  if (image_width <= 0 || image_height <= 0 || reference_focal <= 0.0 || reference_width <= 0.0) {
    throw InvalidArgument("rough_intrinsics: sizes and reference values must be positive");
  }
  Intrinsics k;
  k.focal_x = k.focal_y = reference_focal * (static_cast<double>(image_width) / reference_width);
  k.principal_x = image_width / 2.0;
  k.principal_y = image_height / 2.0;
  return k;
}

}  // namespace carfield
