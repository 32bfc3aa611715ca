#include "carfield/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace carfield {

Cone pixel_cone(double u, double v, const Intrinsics& k, const Mat4& cam_pose_canonical) {
  if (k.focal_x <= 0 || k.focal_y <= 0) {
    throw InvalidArgument(strf("invalid intrinsics: focal (%g, %g)", k.focal_x, k.focal_y));
  }
  const Vec3 d_cam((u - k.principal_x) / k.focal_x, (v - k.principal_y) / k.focal_y, 1.0);
  Cone cone;
  cone.apex = cam_pose_canonical.block<3, 1>(0, 3);
  cone.dir = cam_pose_canonical.block<3, 3>(0, 0) * d_cam;
  cone.r_base = (2.0 / std::sqrt(12.0)) / k.focal_x;
  return cone;
}

std::optional<std::pair<double, double>> canonical_bounds(const Cone& cone, double t_eps) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double o = cone.apex[i];
    const double d = cone.dir[i];
    if (std::abs(d) < 1e-12) {
      if (o < -1.0 || o > 1.0) return std::nullopt;
      continue;
    }
    double a = (-1.0 - o) / d;
    double b = (1.0 - o) / d;
    if (a > b) std::swap(a, b);
    lo = std::max(lo, a);
    hi = std::min(hi, b);
  }
  lo = std::max(lo, t_eps);
  if (!(lo < hi)) return std::nullopt;
  return std::make_pair(lo, hi);
}

Eigen::VectorXd stratified_edges(double t_n, double t_f, int n, Rng* rng) {
  if (!(t_f > t_n) || t_n < 0) {
    throw InvalidArgument(strf("invalid interval: t_n=%g t_f=%g", t_n, t_f));
  }
  if (n < 1) throw InvalidArgument("stratified_edges: need at least one bin");
  Eigen::VectorXd edges(n + 1);
  for (int i = 0; i <= n; ++i) {
    edges[i] = t_n + (t_f - t_n) * (static_cast<double>(i) / n);
  }
  if (!rng) return edges;
  // Jitter each edge within its half-stratum; consecutive strata share only
  // a boundary, so the result stays strictly increasing.
  Eigen::VectorXd out(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double lower = i == 0 ? edges[0] : 0.5 * (edges[i - 1] + edges[i]);
    const double upper = i == n ? edges[n] : 0.5 * (edges[i] + edges[i + 1]);
    out[i] = lower + (upper - lower) * rng->uniform();
  }
  return out;
}

Eigen::VectorXd resample_fine(const Eigen::VectorXd& weights, const Eigen::VectorXd& edges,
                              int n_fine, Rng& rng, double floor_frac) {
  const Eigen::Index n = weights.size();
  if (edges.size() != n + 1 || n < 1) {
    throw InvalidArgument("resample_fine: weights/edges size mismatch");
  }
  if (n_fine < 1) throw InvalidArgument("resample_fine: need at least one fine bin");
  if (weights.minCoeff() < 0) throw InvalidArgument("resample_fine: negative weight");

  Eigen::VectorXd w = weights;
  double total = w.sum();
  if (total <= 0) {
    w.setOnes();
    total = static_cast<double>(n);
  }
  w.array() += floor_frac * total / static_cast<double>(n);

  Eigen::VectorXd cdf(n + 1);
  cdf[0] = 0.0;
  const double norm = w.sum();
  for (Eigen::Index i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + w[i] / norm;
  cdf[n] = 1.0;

  Eigen::VectorXd out(n_fine + 1);
  Eigen::Index bin = 0;
  for (int k = 0; k <= n_fine; ++k) {
    const double u = (k + rng.uniform()) / (n_fine + 1);  // stratified, increasing
    while (bin < n - 1 && cdf[bin + 1] < u) ++bin;
    const double denom = cdf[bin + 1] - cdf[bin];
    const double frac = denom > 0 ? (u - cdf[bin]) / denom : 0.5;
    out[k] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
  }
  const double nudge = 1e-12 * (edges[n] - edges[0]);
  for (int k = 1; k <= n_fine; ++k) out[k] = std::max(out[k], out[k - 1] + nudge);
  return out;
}

}  // namespace carfield
