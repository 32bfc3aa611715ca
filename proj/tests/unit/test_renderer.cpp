#include "carfield/renderer.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "carfield/rng.hpp"
#include "test_support.hpp"

namespace carfield {
namespace {

Intrinsics simple_intrinsics() {
  Intrinsics k;
  k.focal_x = 100.0;
  k.focal_y = 100.0;
  k.principal_x = 50.0;
  k.principal_y = 50.0;
  return k;
}

// One-sample Kolmogorov-Smirnov p-value against U(a, b).
double ks_uniform_pvalue(Eigen::VectorXd samples, double a, double b) {
  std::sort(samples.data(), samples.data() + samples.size());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double cdf = (samples[i] - a) / (b - a);
    d = std::max(d, std::abs(cdf - (i + 1) / n));
    d = std::max(d, std::abs(cdf - i / n));
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  if (lambda < 0.2) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  }
  return std::clamp(p, 0.0, 1.0);
}

TEST(PixelCone, CentralRayFollowsOpticalAxis) {
  const Intrinsics k = simple_intrinsics();
  Cone c = pixel_cone(50.0, 50.0, k, axis_flip());
  EXPECT_LT(c.apex.norm(), 1e-15);
  EXPECT_LT((c.dir - Vec3(0, 0, -1)).norm(), 1e-15);
}

TEST(PixelCone, MirroredPixelsGiveMirroredDirections) {
  const Intrinsics k = simple_intrinsics();
  Cone plus = pixel_cone(70.0, 50.0, k, Mat4::Identity());
  Cone minus = pixel_cone(30.0, 50.0, k, Mat4::Identity());
  EXPECT_NEAR(plus.dir[0], -minus.dir[0], 1e-15);
  EXPECT_NEAR(plus.dir[1], minus.dir[1], 1e-15);
  EXPECT_NEAR(plus.dir[2], minus.dir[2], 1e-15);

  Cone up = pixel_cone(50.0, 80.0, k, Mat4::Identity());
  Cone down = pixel_cone(50.0, 20.0, k, Mat4::Identity());
  EXPECT_NEAR(up.dir[1], -down.dir[1], 1e-15);
}

TEST(PixelCone, DoubledFocalHalvesFootprint) {
  Intrinsics k = simple_intrinsics();
  const double r1 = pixel_cone(10, 10, k, Mat4::Identity()).r_base;
  k.focal_x *= 2;
  k.focal_y *= 2;
  const double r2 = pixel_cone(10, 10, k, Mat4::Identity()).r_base;
  EXPECT_NEAR(r1, 2.0 * r2, 1e-15);
  EXPECT_NEAR(r1, 2.0 / std::sqrt(12.0) / 100.0, 1e-15);
}

TEST(PixelCone, BadIntrinsicsThrow) {
  Intrinsics k;
  EXPECT_THROW(pixel_cone(0, 0, k, Mat4::Identity()), InvalidArgument);
}

TEST(CanonicalBounds, AxisAlignedSlab) {
  Cone c;
  c.apex = Vec3(0, 0, -3);
  c.dir = Vec3(0, 0, 1);
  auto b = canonical_bounds(c);
  ASSERT_TRUE(b.has_value());
  EXPECT_NEAR(b->first, 2.0, 1e-12);
  EXPECT_NEAR(b->second, 4.0, 1e-12);
}

TEST(CanonicalBounds, PointingAwayMisses) {
  Cone c;
  c.apex = Vec3(0, 0, -3);
  c.dir = Vec3(0, 0, -1);
  EXPECT_FALSE(canonical_bounds(c).has_value());
  c.dir = Vec3(1, 0, 0);  // parallel to the cube, offset outside
  EXPECT_FALSE(canonical_bounds(c).has_value());
}

TEST(CanonicalBounds, ApexInsideStartsAtEps) {
  Cone c;
  c.apex = Vec3(0.2, 0.1, 0.0);
  c.dir = Vec3(0, 0, 1);
  auto b = canonical_bounds(c, 1e-4);
  ASSERT_TRUE(b.has_value());
  EXPECT_DOUBLE_EQ(b->first, 1e-4);
  EXPECT_NEAR(b->second, 1.0, 1e-12);
}

TEST(CanonicalBounds, AgreesWithDenseMarching) {
  Rng rng({2024, 7});
  const double step = 1e-4;
  int hits = 0;
  for (int trial = 0; trial < 60; ++trial) {
    Cone c;
    const double radius = rng.uniform(2.5, 4.0);
    Vec3 dir_pt;
    for (int i = 0; i < 3; ++i) {
      c.apex[i] = rng.normal();
      dir_pt[i] = rng.uniform(-0.9, 0.9);
    }
    c.apex *= radius / c.apex.norm();
    // Half the rays aim at the cube interior, half are random.
    if (trial % 2 == 0) {
      c.dir = (dir_pt - c.apex).normalized();
    } else {
      for (int i = 0; i < 3; ++i) c.dir[i] = rng.normal();
      c.dir.normalize();
    }

    const double t_max = c.apex.norm() + 4.0;
    double first = -1.0, last = -1.0;
    for (double t = step; t <= t_max; t += step) {
      const Vec3 p = c.apex + t * c.dir;
      if (p.cwiseAbs().maxCoeff() <= 1.0) {
        if (first < 0) first = t;
        last = t;
      }
    }

    auto b = canonical_bounds(c, 1e-4);
    if (first < 0) {
      // Tolerate a sliver the marcher cannot resolve.
      if (b.has_value()) {
        EXPECT_LT(b->second - b->first, 2 * step);
      }
      continue;
    }
    ASSERT_TRUE(b.has_value()) << "marching found [" << first << ", " << last << "]";
    EXPECT_NEAR(b->first, first, 1e-3);
    EXPECT_NEAR(b->second, last, 1e-3);
    ++hits;
  }
  EXPECT_GT(hits, 20);
}

TEST(StratifiedEdges, NoJitterIsExactlyUniform) {
  Eigen::VectorXd e = stratified_edges(2.0, 4.0, 4, nullptr);
  ASSERT_EQ(e.size(), 5);
  EXPECT_DOUBLE_EQ(e[0], 2.0);
  EXPECT_DOUBLE_EQ(e[1], 2.5);
  EXPECT_DOUBLE_EQ(e[2], 3.0);
  EXPECT_DOUBLE_EQ(e[3], 3.5);
  EXPECT_DOUBLE_EQ(e[4], 4.0);
}

TEST(StratifiedEdges, JitteredEdgesStayInsideAndIncrease) {
  Rng rng({3, 4});
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd e = stratified_edges(1.0, 3.0, 16, &rng);
    ASSERT_EQ(e.size(), 17);
    EXPECT_GE(e[0], 1.0);
    EXPECT_LE(e[16], 3.0);
    for (int i = 0; i < 16; ++i) EXPECT_LT(e[i], e[i + 1]);
  }
}

TEST(StratifiedEdges, DeterministicUnderFixedSeed) {
  Rng a({5, 6}), b({5, 6});
  Eigen::VectorXd ea = stratified_edges(0.5, 2.5, 32, &a);
  Eigen::VectorXd eb = stratified_edges(0.5, 2.5, 32, &b);
  EXPECT_EQ((ea - eb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(StratifiedEdges, RejectsBadInterval) {
  EXPECT_THROW(stratified_edges(2.0, 2.0, 4, nullptr), InvalidArgument);
  EXPECT_THROW(stratified_edges(3.0, 2.0, 4, nullptr), InvalidArgument);
}

TEST(ResampleFine, UniformWeightsLookUniform) {
  const int n_bins = 8;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n_bins);
  Eigen::VectorXd edges = stratified_edges(1.0, 3.0, n_bins, nullptr);
  Rng rng({11, 2});
  Eigen::VectorXd draws = resample_fine(w, edges, 9999, rng);
  EXPECT_GT(ks_uniform_pvalue(draws, 1.0, 3.0), 0.01);
}

TEST(ResampleFine, ConcentratesInTheHotBin) {
  const int n_bins = 8;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n_bins);
  w[3] = 5.0;
  Eigen::VectorXd edges = stratified_edges(0.0, 8.0, n_bins, nullptr);
  Rng rng({12, 3});
  Eigen::VectorXd draws = resample_fine(w, edges, 9999, rng);
  int inside = 0;
  for (Eigen::Index i = 0; i < draws.size(); ++i) {
    if (draws[i] >= 3.0 && draws[i] <= 4.0) ++inside;
  }
  EXPECT_GT(static_cast<double>(inside) / static_cast<double>(draws.size()), 0.98);
}

TEST(ResampleFine, ZeroWeightsFallBackToUniform) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(6);
  Eigen::VectorXd edges = stratified_edges(2.0, 4.0, 6, nullptr);
  Rng rng({13, 4});
  Eigen::VectorXd draws = resample_fine(w, edges, 4999, rng);
  EXPECT_GT(ks_uniform_pvalue(draws, 2.0, 4.0), 0.01);
  EXPECT_GE(draws.minCoeff(), 2.0);
  EXPECT_LE(draws.maxCoeff(), 4.0);
}

TEST(ResampleFine, OutputIsSortedStrict) {
  Eigen::VectorXd w(4);
  w << 0.1, 3.0, 0.0, 0.5;
  Eigen::VectorXd edges = stratified_edges(1.0, 2.0, 4, nullptr);
  Rng rng({14, 5});
  Eigen::VectorXd out = resample_fine(w, edges, 64, rng);
  ASSERT_EQ(out.size(), 65);
  for (int i = 0; i < 64; ++i) EXPECT_LT(out[i], out[i + 1]);
  EXPECT_THROW(resample_fine((-w).eval(), edges, 4, rng), InvalidArgument);
}

TEST(Composite, EmptySpaceGivesNothing) {
  VecX<double> sigma = VecX<double>::Zero(8);
  MatX<double> rgb = MatX<double>::Constant(8, 3, 0.7);
  VecX<double> edges = stratified_edges(1.0, 2.0, 8, nullptr);
  auto res = composite(sigma, rgb, edges);
  EXPECT_EQ(res.acc, 0.0);
  EXPECT_EQ(res.rgb.norm(), 0.0);
  EXPECT_EQ(res.weights.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Composite, ConstantDensityMatchesAnalyticTransmittance) {
  const int n = 256;
  VecX<double> sigma = VecX<double>::Ones(n);  // sigma*(tf-tn) = 1
  MatX<double> rgb = MatX<double>::Constant(n, 3, 0.5);
  VecX<double> edges = stratified_edges(0.0, 1.0, n, nullptr);
  auto res = composite(sigma, rgb, edges);
  EXPECT_NEAR(res.acc, 1.0 - std::exp(-1.0), 1e-3);
}

TEST(Composite, OpaqueFirstSampleWins) {
  VecX<double> sigma(3);
  sigma << 1e4, 0.5, 0.5;
  MatX<double> rgb(3, 3);
  rgb << 0.9, 0.1, 0.2, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0;
  VecX<double> edges = stratified_edges(1.0, 4.0, 3, nullptr);
  auto res = composite(sigma, rgb, edges);
  EXPECT_NEAR(res.acc, 1.0, 1e-9);
  EXPECT_NEAR(res.rgb[0], 0.9, 1e-9);
  EXPECT_NEAR(res.rgb[1], 0.1, 1e-9);
}

TEST(Composite, WeightsSumToAccWithinRounding) {
  Rng rng({15, 6});
  VecX<double> sigma(32);
  MatX<double> rgb(32, 3);
  for (int i = 0; i < 32; ++i) {
    sigma[i] = rng.uniform(0.0, 3.0);
    for (int c = 0; c < 3; ++c) rgb(i, c) = rng.uniform();
  }
  VecX<double> edges = stratified_edges(0.5, 2.5, 32, nullptr);
  auto res = composite(sigma, rgb, edges);
  EXPECT_GE(res.weights.minCoeff(), 0.0);
  EXPECT_NEAR(res.weights.sum(), res.acc, 1e-6);
  EXPECT_LE(res.acc, 1.0 + 1e-6);
  for (int c = 0; c < 3; ++c) EXPECT_LE(res.rgb[c], res.acc + 1e-6);
}

TEST(Composite, TransparentPrefixIsNeutral) {
  VecX<double> sigma(4);
  sigma << 0.7, 1.2, 0.1, 2.0;
  MatX<double> rgb = MatX<double>::Constant(4, 3, 0.4);
  VecX<double> edges = stratified_edges(1.0, 2.0, 4, nullptr);
  auto base = composite(sigma, rgb, edges);

  VecX<double> sigma2(5);
  sigma2 << 0.0, sigma;
  MatX<double> rgb2(5, 3);
  rgb2.row(0).setConstant(0.9);
  rgb2.bottomRows(4) = rgb;
  VecX<double> edges2(6);
  edges2 << 0.5, edges;
  auto ext = composite(sigma2, rgb2, edges2);
  EXPECT_NEAR(ext.acc, base.acc, 1e-15);
  EXPECT_LT((ext.rgb - base.rgb).norm(), 1e-15);
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
  Rng rng({16, 7});
  const int n = 12;
  VecX<double> sigma(n);
  MatX<double> rgb(n, 3);
  for (int i = 0; i < n; ++i) {
    sigma[i] = rng.uniform(0.05, 2.0);
    for (int c = 0; c < 3; ++c) rgb(i, c) = rng.uniform();
  }
  VecX<double> edges = stratified_edges(0.8, 2.2, n, nullptr);
  Eigen::Vector3d d_rgb(0.3, -0.7, 0.5);
  const double d_acc = 0.9;

  auto loss = [&](const VecX<double>& s, const MatX<double>& c) {
    auto r = composite(s, c, edges);
    return d_rgb.dot(r.rgb) + d_acc * r.acc;
  };

  auto res = composite(sigma, rgb, edges);
  VecX<double> d_sigma;
  MatX<double> d_c;
  composite_backward(res, rgb, edges, d_rgb, d_acc, d_sigma, d_c);

  const double eps = 1e-7;
  for (int i = 0; i < n; ++i) {
    VecX<double> sp = sigma, sm = sigma;
    sp[i] += eps;
    sm[i] -= eps;
    const double fd = (loss(sp, rgb) - loss(sm, rgb)) / (2 * eps);
    EXPECT_LT(std::abs(fd - d_sigma[i]) / std::max(1.0, std::abs(fd)), 1e-6) << "sigma " << i;
    for (int c = 0; c < 3; ++c) {
      MatX<double> cp = rgb, cm = rgb;
      cp(i, c) += eps;
      cm(i, c) -= eps;
      const double fdc = (loss(sigma, cp) - loss(sigma, cm)) / (2 * eps);
      EXPECT_LT(std::abs(fdc - d_c(i, c)) / std::max(1.0, std::abs(fdc)), 1e-6);
    }
  }
}

// ---- full pipeline ---------------------------------------------------------

FieldConfig tiny_field_config() {
  FieldConfig cfg;
  cfg.hidden = 16;
  cfg.shape_depth = 2;
  cfg.skip_layer = 1;
  cfg.texture_depth = 1;
  cfg.l_pos = 3;
  cfg.l_dir = 2;
  return cfg;
}

RenderConfig tiny_render_config() {
  RenderConfig cfg;
  cfg.n_coarse = 8;
  cfg.n_fine = 8;
  return cfg;
}

std::vector<Cone> test_cones() {
  std::vector<Cone> cones;
  Cone a;
  a.apex = Vec3(0, 0, -3);
  a.dir = Vec3(0.05, -0.02, 1.0);
  a.r_base = 0.002;
  cones.push_back(a);
  Cone b;
  b.apex = Vec3(2.5, 0.3, 0.4);
  b.dir = Vec3(-1.0, -0.1, -0.15);
  b.r_base = 0.002;
  cones.push_back(b);
  Cone miss;
  miss.apex = Vec3(0, 0, -3);
  miss.dir = Vec3(0, 0, -1);
  miss.r_base = 0.002;
  cones.push_back(miss);
  return cones;
}

TEST(Renderer, MissedConeRendersZeros) {
  Field<double> field(tiny_field_config());
  field.init(61);
  Renderer<double> renderer(field, tiny_render_config());
  VecX<double> z = VecX<double>::Zero(16);
  Cone miss;
  miss.apex = Vec3(0, 0, -3);
  miss.dir = Vec3(0, 0, -1);
  auto out = renderer.render_pixel(miss, 1, 0, 0, z, z);
  EXPECT_FALSE(out.hit);
  EXPECT_EQ(out.acc_coarse, 0.0);
  EXPECT_EQ(out.acc_fine, 0.0);
  EXPECT_EQ(out.rgb_fine.norm(), 0.0);
}

TEST(Renderer, ZeroDensityFieldGivesZeroAcc) {
  Field<double> field(tiny_field_config());
  field.init(62);
  field.params()[2 + 2 * 2 + 1]->value(0, 0) = -60.0;  // shape.sigma.b: softplus -> ~0
  field.params()[2 + 2 * 2]->value.setZero();          // shape.sigma.w
  Renderer<double> renderer(field, tiny_render_config());
  VecX<double> z = VecX<double>::Zero(16);
  Cone c;
  c.apex = Vec3(0, 0, -3);
  c.dir = Vec3(0, 0, 1);
  c.r_base = 0.002;
  auto out = renderer.render_pixel(c, 2, 0, 0, z, z);
  EXPECT_TRUE(out.hit);
  EXPECT_LT(out.acc_coarse, 1e-12);
  EXPECT_LT(out.acc_fine, 1e-12);
}

TEST(Renderer, DeterministicGivenSeed) {
  Field<float> field(tiny_field_config());
  field.init(63);
  Renderer<float> renderer(field, tiny_render_config());
  VecX<float> z = VecX<float>::Zero(16);
  auto cones = test_cones();
  std::vector<uint64_t> ids = {10, 11, 12};

  Renderer<float>::BatchTape t1, t2;
  Renderer<float>::BatchOutput o1, o2;
  renderer.render_batch(cones, ids, 99, 5, z, z, 1, t1, o1);
  renderer.render_batch(cones, ids, 99, 5, z, z, 1, t2, o2);
  EXPECT_EQ((o1.rgb_f - o2.rgb_f).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ((o1.acc_f - o2.acc_f).cwiseAbs().maxCoeff(), 0.0f);

  Renderer<float>::BatchTape t3;
  Renderer<float>::BatchOutput o3;
  renderer.render_batch(cones, ids, 99, 6, z, z, 1, t3, o3);  // new salt, new jitter
  EXPECT_GT((o1.rgb_f - o3.rgb_f).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Renderer, StreamsFollowPixelIdsNotBatchOrder) {
  Field<float> field(tiny_field_config());
  field.init(64);
  Renderer<float> renderer(field, tiny_render_config());
  VecX<float> z = VecX<float>::Zero(16);
  auto cones = test_cones();

  Renderer<float>::BatchTape t1, t2;
  Renderer<float>::BatchOutput o1, o2;
  renderer.render_batch(cones, {10, 11, 12}, 7, 1, z, z, 1, t1, o1);
  std::vector<Cone> swapped = {cones[1], cones[0], cones[2]};
  renderer.render_batch(swapped, {11, 10, 12}, 7, 1, z, z, 1, t2, o2);
  EXPECT_EQ(o1.rgb_f(0, 0), o2.rgb_f(1, 0));
  EXPECT_EQ(o1.rgb_f(1, 2), o2.rgb_f(0, 2));
  EXPECT_EQ(o1.acc_f[0], o2.acc_f[1]);
}

TEST(Renderer, ThreadCountDoesNotChangeResults) {
  Field<float> field(tiny_field_config());
  field.init(65);
  Renderer<float> renderer(field, tiny_render_config());
  VecX<float> z = VecX<float>::Zero(16);
  auto cones = test_cones();
  std::vector<uint64_t> ids = {1, 2, 3};
  Renderer<float>::BatchTape t1, t4;
  Renderer<float>::BatchOutput o1, o4;
  renderer.render_batch(cones, ids, 21, 0, z, z, 1, t1, o1);
  renderer.render_batch(cones, ids, 21, 0, z, z, 4, t4, o4);
  EXPECT_EQ((o1.rgb_f - o4.rgb_f).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ((o1.rgb_c - o4.rgb_c).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Renderer, OutputsRespectAccBound) {
  Field<double> field(tiny_field_config());
  field.init(66);
  Renderer<double> renderer(field, tiny_render_config());
  Rng zr({67});
  VecX<double> zs(16), zt(16);
  for (int i = 0; i < 16; ++i) {
    zs[i] = zr.uniform(-1, 1);
    zt[i] = zr.uniform(-1, 1);
  }
  auto cones = test_cones();
  Renderer<double>::BatchTape tape;
  Renderer<double>::BatchOutput out;
  renderer.render_batch(cones, {0, 1, 2}, 3, 0, zs, zt, 1, tape, out);
  for (int p = 0; p < 3; ++p) {
    EXPECT_GE(out.acc_c[p], 0.0);
    EXPECT_LE(out.acc_c[p], 1.0 + 1e-9);
    EXPECT_LE(out.acc_f[p], 1.0 + 1e-9);
    for (int c = 0; c < 3; ++c) {
      EXPECT_LE(out.rgb_c(p, c), out.acc_c[p] + 1e-9);
      EXPECT_LE(out.rgb_f(p, c), out.acc_f[p] + 1e-9);
    }
  }
}

TEST(Renderer, QuadratureConvergence) {
  Field<double> field(tiny_field_config());
  field.init(68);
  VecX<double> z = VecX<double>::Zero(16);
  Cone c;
  c.apex = Vec3(0, 0, -3);
  c.dir = Vec3(0.02, 0.01, 1.0);
  c.r_base = 0.002;

  RenderConfig base = tiny_render_config();
  base.jitter = false;
  base.n_coarse = 64;
  Renderer<double> r64(field, base);
  base.n_coarse = 128;
  Renderer<double> r128(field, base);
  const double a64 = r64.render_pixel(c, 1, 0, 0, z, z).acc_coarse;
  const double a128 = r128.render_pixel(c, 1, 0, 0, z, z).acc_coarse;
  EXPECT_LT(std::abs(a64 - a128), 1e-3);
}

// Finite differences through the full two-pass render with frozen sample
// positions (resampling is gradient-stopped).
TEST(Renderer, GradientMatchesFiniteDifferences) {
  Field<double> field(tiny_field_config());
  field.init(71);
  Renderer<double> renderer(field, tiny_render_config());
  Rng zr({72});
  VecX<double> zs(16), zt(16);
  for (int i = 0; i < 16; ++i) {
    zs[i] = zr.uniform(-0.5, 0.5);
    zt[i] = zr.uniform(-0.5, 0.5);
  }
  auto cones = test_cones();
  std::vector<uint64_t> ids = {4, 5, 6};

  Renderer<double>::BatchTape tape;
  Renderer<double>::BatchOutput out;
  renderer.render_batch(cones, ids, 73, 0, zs, zt, 1, tape, out);

  // Random upstream weights over every output.
  Rng ur({74});
  MatX<double> d_rgb_c(3, 3), d_rgb_f(3, 3);
  VecX<double> d_acc_c(3), d_acc_f(3);
  for (int p = 0; p < 3; ++p) {
    d_acc_c[p] = ur.uniform(-1, 1);
    d_acc_f[p] = ur.uniform(-1, 1);
    for (int c = 0; c < 3; ++c) {
      d_rgb_c(p, c) = ur.uniform(-1, 1);
      d_rgb_f(p, c) = ur.uniform(-1, 1);
    }
  }
  auto loss_of = [&](const Renderer<double>::BatchOutput& o) {
    return (d_rgb_c.array() * o.rgb_c.array()).sum() + d_acc_c.dot(o.acc_c) +
           (d_rgb_f.array() * o.rgb_f.array()).sum() + d_acc_f.dot(o.acc_f);
  };

  auto g = field.alloc_grads();
  renderer.backward_batch(tape, d_rgb_c, d_acc_c, d_rgb_f, d_acc_f, g);

  const double eps = 1e-5;
  const double tol = 1e-4;
  auto ps = field.params();
  Rng pick({75});
  int checked = 0;
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    MatX<double>& v = ps[pi]->value;
    for (int rep = 0; rep < 4; ++rep) {
      const Eigen::Index r = static_cast<Eigen::Index>(pick.uniform_int(v.rows()));
      const Eigen::Index c = static_cast<Eigen::Index>(pick.uniform_int(v.cols()));
      const double orig = v(r, c);
      Renderer<double>::BatchOutput op, om;
      v(r, c) = orig + eps;
      renderer.render_frozen(tape, zs, zt, 1, op);
      v(r, c) = orig - eps;
      renderer.render_frozen(tape, zs, zt, 1, om);
      v(r, c) = orig;
      const double fd = (loss_of(op) - loss_of(om)) / (2 * eps);
      const double an = g.by_param[pi](r, c);
      EXPECT_LT(std::abs(fd - an) / std::max(1.0, std::abs(fd)), tol)
          << ps[pi]->name << "(" << r << "," << c << ") fd=" << fd << " an=" << an;
      ++checked;
    }
  }
  EXPECT_GE(checked, 60);

  for (int i = 0; i < 16; ++i) {
    VecX<double> zp = zs, zm = zs;
    zp[i] += eps;
    zm[i] -= eps;
    Renderer<double>::BatchOutput op, om;
    renderer.render_frozen(tape, zp, zt, 1, op);
    renderer.render_frozen(tape, zm, zt, 1, om);
    const double fd = (loss_of(op) - loss_of(om)) / (2 * eps);
    EXPECT_LT(std::abs(fd - g.d_z_shape[i]) / std::max(1.0, std::abs(fd)), tol) << "z_shape " << i;

    VecX<double> tp = zt, tm = zt;
    tp[i] += eps;
    tm[i] -= eps;
    renderer.render_frozen(tape, zs, tp, 1, op);
    renderer.render_frozen(tape, zs, tm, 1, om);
    const double fdt = (loss_of(op) - loss_of(om)) / (2 * eps);
    EXPECT_LT(std::abs(fdt - g.d_z_texture[i]) / std::max(1.0, std::abs(fdt)), tol)
        << "z_texture " << i;
  }

  // render_frozen at the original parameters reproduces the taped render.
  Renderer<double>::BatchOutput replay;
  renderer.render_frozen(tape, zs, zt, 1, replay);
  EXPECT_EQ((replay.rgb_f - out.rgb_f).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((replay.acc_c - out.acc_c).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RenderView, ProducesBoundedImages) {
  Field<float> field(tiny_field_config());
  field.init(81);
  RenderConfig cfg = tiny_render_config();
  cfg.jitter = false;
  Intrinsics k;
  k.focal_x = k.focal_y = 20.0;
  k.principal_x = k.principal_y = 8.0;
  Mat4 pose = Mat4::Identity();
  pose.block<3, 3>(0, 0) = axis_flip().block<3, 3>(0, 0);
  pose(2, 3) = 3.0;  // camera at canonical +3z looking back toward origin

  VecX<float> z = VecX<float>::Zero(16);
  ViewRender view = render_view(field, cfg, k, pose, 16, 16, z, z, 17, 1);
  EXPECT_EQ(view.rgb.width, 16);
  EXPECT_EQ(view.rgb.height, 16);
  EXPECT_EQ(view.acc.channels, 1);
  float acc_max = 0;
  for (float v : view.acc.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
    acc_max = std::max(acc_max, v);
  }
  EXPECT_GT(acc_max, 0.0f);  // something in front of the camera
}

}  // namespace
}  // namespace carfield
