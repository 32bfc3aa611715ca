#include "carfield/encoding.hpp"

#include <cmath>

#include "carfield/log.hpp"

namespace carfield {

GaussianSegment frustum_gaussian(const Cone& cone, double t0, double t1) {
  if (!(t0 > 0.0) || !(t0 < t1)) {
    throw InvalidArgument(strf("invalid interval: t0=%g t1=%g (need 0 < t0 < t1)", t0, t1));
  }
  const double norm = cone.dir.norm();
  if (!(norm > 0.0)) throw InvalidArgument("frustum_gaussian: zero-norm cone direction");
  if (!(cone.r_base > 0.0)) throw InvalidArgument("frustum_gaussian: r_base must be positive");

  const double tm = 0.5 * (t0 + t1);
  const double td = 0.5 * (t1 - t0);
  const double tm2 = tm * tm;
  const double td2 = td * td;
  const double denom = 3.0 * tm2 + td2;

  // Stable closed-form frustum moments in ray-parameter units.
  const double t_mean = tm + 2.0 * tm * td2 / denom;
  const double var_t = td2 / 3.0 - (4.0 * td2 * td2 * (12.0 * tm2 - td2)) / (15.0 * denom * denom);
  const double var_r =
      cone.r_base * cone.r_base *
      (tm2 / 4.0 + 5.0 * td2 / 12.0 - (4.0 * td2 * td2) / (15.0 * denom));

  GaussianSegment seg;
  seg.mean = cone.apex + t_mean * cone.dir;
  seg.axis = cone.dir / norm;
  // Along-axis spread converts to world units with the direction's speed;
  // the radial law is already world-space by the r_base definition.
  seg.sigma_t2 = std::max(0.0, var_t * norm * norm);
  seg.sigma_r2 = std::max(0.0, var_r);
  return seg;
}

Eigen::VectorXd ipe_encode_mu_cov(const Vec3& mu, const Vec3& cov_diag, int levels) {
  Eigen::VectorXd out(ipe_width(levels));
  ipe_encode_into<double>(mu, cov_diag, levels, out.data());
  return out;
}

Eigen::VectorXd ipe_encode(const GaussianSegment& seg, int levels) {
  return ipe_encode_mu_cov(seg.mean, seg.cov_diag(), levels);
}

void ipe_encode_grad(const Vec3& mu, const Vec3& cov_diag, int levels, Eigen::VectorXd& features,
                     Eigen::VectorXd& d_mu, Eigen::VectorXd& d_cov) {
  const int n = ipe_width(levels);
  features.resize(n);
  d_mu.resize(n);
  d_cov.resize(n);
  for (int j = 0; j < 3; ++j) {
    double s = std::sin(mu[j]);
    double c = std::cos(mu[j]);
    double a = std::exp(-0.5 * cov_diag[j]);
    double freq = 1.0;
    double var_scale = 0.5;  // = 0.5 * 4^l
    const int base = j * 2 * levels;
    for (int l = 0; l < levels; ++l) {
      const double fs = s * a;
      const double fc = c * a;
      features[base + 2 * l] = fs;
      features[base + 2 * l + 1] = fc;
      d_mu[base + 2 * l] = freq * fc;
      d_mu[base + 2 * l + 1] = -freq * fs;
      d_cov[base + 2 * l] = -var_scale * fs;
      d_cov[base + 2 * l + 1] = -var_scale * fc;
      const double s2 = 2.0 * s * c;
      const double c2 = c * c - s * s;
      s = s2;
      c = c2;
      const double a2 = a * a;
      a = a2 * a2;
      freq *= 2.0;
      var_scale *= 4.0;
    }
  }
}

Eigen::VectorXd dir_encode(const Vec3& d, int levels) {
  Eigen::VectorXd out(dir_width(levels));
  dir_encode_into<double>(d, levels, out.data());
  return out;
}

}  // namespace carfield
