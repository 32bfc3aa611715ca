#pragma once

#include <Eigen/Dense>

#include "carfield/errors.hpp"
#include "carfield/geometry.hpp"

namespace carfield {

// Cone through a pixel: points at parameter t sit at apex + t*dir with
// world-space cross-section radius r_base * t (r_base is the radius at
// t = 1, i.e. "unit distance along d").
struct Cone {
  Vec3 apex = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  double r_base = 0.0;
};

// Gaussian approximation of a conical frustum, stored as mean + axis with
// along-axis / perpendicular variances (world units). The full covariance
// is sigma_t2 * a a^T + sigma_r2 * (I - a a^T) with a the unit axis.
struct GaussianSegment {
  Vec3 mean = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double sigma_t2 = 0.0;
  double sigma_r2 = 0.0;

  Vec3 cov_diag() const {
    Vec3 d;
    for (int j = 0; j < 3; ++j) {
      const double a2 = axis[j] * axis[j];
      d[j] = sigma_t2 * a2 + sigma_r2 * (1.0 - a2);
    }
    return d;
  }

  Mat3 cov() const {
    return sigma_t2 * (axis * axis.transpose()) +
           sigma_r2 * (Mat3::Identity() - axis * axis.transpose());
  }
};

// Closed-form frustum moments between parameters t0 < t1 (stable forms).
GaussianSegment frustum_gaussian(const Cone& cone, double t0, double t1);

constexpr int ipe_width(int levels) { return 6 * levels; }

// Feature layout, shared by ipe_encode and dir_encode: for axis j and
// frequency level l, index j*2L + 2l is the sin feature and +1 the cos.
// sin/cos of 2^l x are attenuated by exp(-0.5 * 4^l * cov_jj).
template <typename T>
void ipe_encode_into(const Vec3& mu, const Vec3& cov_diag, int levels, T* out) {
  for (int j = 0; j < 3; ++j) {
    double s = std::sin(mu[j]);
    double c = std::cos(mu[j]);
    double a = std::exp(-0.5 * cov_diag[j]);
    T* axis_out = out + j * 2 * levels;
    for (int l = 0; l < levels; ++l) {
      axis_out[2 * l] = static_cast<T>(s * a);
      axis_out[2 * l + 1] = static_cast<T>(c * a);
      // Angle doubling: sin/cos(2^{l+1} x) from 2^l x; attenuation obeys
      // a_{l+1} = a_l^4.
      const double s2 = 2.0 * s * c;
      const double c2 = c * c - s * s;
      s = s2;
      c = c2;
      const double a2 = a * a;
      a = a2 * a2;
    }
  }
}

Eigen::VectorXd ipe_encode(const GaussianSegment& seg, int levels);
Eigen::VectorXd ipe_encode_mu_cov(const Vec3& mu, const Vec3& cov_diag, int levels);

// Features plus per-feature partials with respect to the mean entry and
// covariance diagonal entry of the feature's own axis (the only nonzero
// Jacobian entries).
void ipe_encode_grad(const Vec3& mu, const Vec3& cov_diag, int levels, Eigen::VectorXd& features,
                     Eigen::VectorXd& d_mu, Eigen::VectorXd& d_cov);

constexpr int dir_width(int levels) { return 6 * levels; }

// Plain positional encoding of the normalized direction (zero-variance
// case of the integrated encoding), same layout as above.
template <typename T>
void dir_encode_into(const Vec3& d, int levels, T* out) {
  const double n = d.norm();
  if (!(n > 0.0)) throw InvalidArgument("dir_encode: zero-norm direction");
  const Vec3 u = d / n;
  for (int j = 0; j < 3; ++j) {
    double s = std::sin(u[j]);
    double c = std::cos(u[j]);
    T* axis_out = out + j * 2 * levels;
    for (int l = 0; l < levels; ++l) {
      axis_out[2 * l] = static_cast<T>(s);
      axis_out[2 * l + 1] = static_cast<T>(c);
      const double s2 = 2.0 * s * c;
      const double c2 = c * c - s * s;
      s = s2;
      c = c2;
    }
  }
}

Eigen::VectorXd dir_encode(const Vec3& d, int levels);

}  // namespace carfield
