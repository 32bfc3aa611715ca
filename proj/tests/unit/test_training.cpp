#include <gtest/gtest.h>

#include "carfield/losses.hpp"
#include "carfield/optim.hpp"
#include "carfield/rng.hpp"
#include "test_support.hpp"

namespace carfield {
namespace {

struct LossBatch {
  MatX<double> rgb_c, rgb_f, gt;
  VecX<double> acc_c, acc_f, alpha;
};

LossBatch single_pixel(Eigen::Vector3d gt, Eigen::Vector3d fine, Eigen::Vector3d coarse,
                       double acc_f, double acc_c, double alpha) {
  LossBatch b;
  b.gt = gt.transpose();
  b.rgb_f = fine.transpose();
  b.rgb_c = coarse.transpose();
  b.acc_f = VecX<double>::Constant(1, acc_f);
  b.acc_c = VecX<double>::Constant(1, acc_c);
  b.alpha = VecX<double>::Constant(1, alpha);
  return b;
}

TEST(Losses, PerfectPredictionIsZero) {
  auto b = single_pixel({0.2, 0.4, 0.6}, {0.2, 0.4, 0.6}, {0.2, 0.4, 0.6}, 1.0, 1.0, 1.0);
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.2);
  EXPECT_DOUBLE_EQ(l.render, 0.0);
  EXPECT_DOUBLE_EQ(l.seg, 0.0);
  EXPECT_DOUBLE_EQ(l.total, 0.0);
}

TEST(Losses, BackgroundPixelContributesNoRenderLoss) {
  auto b = single_pixel({1, 0, 0}, {0.3, 0.9, 0.1}, {0.8, 0.8, 0.8}, 0.0, 0.0, 0.0);
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.2);
  EXPECT_DOUBLE_EQ(l.render, 0.0);
}

TEST(Losses, RenderLossWorkedExample) {
  // gt red, both passes black, alpha 1, lambda_c 0.1 -> 1.0 + 0.1.
  auto b = single_pixel({1, 0, 0}, {0, 0, 0}, {0, 0, 0}, 1.0, 1.0, 1.0);
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.0);
  EXPECT_NEAR(l.render, 1.1, 1e-12);
}

TEST(Losses, SegLossWorkedExamples) {
  // alpha 0 but fully opaque render -> 1 + 0.1.
  auto a = single_pixel({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, 1.0, 1.0, 0.0);
  auto la = compute_losses(a.rgb_c, a.rgb_f, a.acc_c, a.acc_f, a.gt, a.alpha, 0.1, 1.0);
  EXPECT_NEAR(la.seg, 1.1, 1e-12);

  // alpha 1, acc_fine 0.5, acc_coarse 0, lambda_c 1 -> 0.25 + 1.
  auto b = single_pixel({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, 0.5, 0.0, 1.0);
  auto lb = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 1.0, 1.0);
  EXPECT_NEAR(lb.seg, 1.25, 1e-12);
}

TEST(Losses, TotalCombinesWorkedExamples) {
  // L_r = 1.1 and L_s = 1.25 with lambda_s = 0.2 -> 1.35.
  EXPECT_NEAR(1.1 + 0.2 * 1.25, 1.35, 1e-12);
  auto b = single_pixel({1, 0, 0}, {0, 0, 0}, {0, 0, 0}, 0.5, 0.0, 1.0);
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.2);
  EXPECT_NEAR(l.total, l.render + 0.2 * l.seg, 1e-12);
}

TEST(Losses, LambdaSZeroDropsSegTerm) {
  auto b = single_pixel({1, 0, 0}, {0.2, 0, 0}, {0.1, 0, 0}, 0.3, 0.4, 1.0);
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(l.total, l.render);
  EXPECT_GT(l.seg, 0.0);  // still reported
}

TEST(Losses, DecompositionIdentityOnRandomBatches) {
  Rng rng({31, 1});
  const int p = 64;
  LossBatch b;
  b.gt.resize(p, 3);
  b.rgb_c.resize(p, 3);
  b.rgb_f.resize(p, 3);
  b.acc_c.resize(p);
  b.acc_f.resize(p);
  b.alpha.resize(p);
  for (int i = 0; i < p; ++i) {
    b.acc_c[i] = rng.uniform();
    b.acc_f[i] = rng.uniform();
    b.alpha[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    for (int c = 0; c < 3; ++c) {
      b.gt(i, c) = rng.uniform();
      b.rgb_c(i, c) = rng.uniform();
      b.rgb_f(i, c) = rng.uniform();
    }
  }
  auto l = compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, 0.1, 0.2);
  EXPECT_GE(l.render, 0.0);
  EXPECT_GE(l.seg, 0.0);
  EXPECT_NEAR(l.total, l.render + 0.2 * l.seg, 1e-6);
}

TEST(Losses, BackwardMatchesFiniteDifferences) {
  Rng rng({32, 2});
  const int p = 5;
  LossBatch b;
  b.gt.resize(p, 3);
  b.rgb_c.resize(p, 3);
  b.rgb_f.resize(p, 3);
  b.acc_c.resize(p);
  b.acc_f.resize(p);
  b.alpha.resize(p);
  for (int i = 0; i < p; ++i) {
    b.acc_c[i] = rng.uniform();
    b.acc_f[i] = rng.uniform();
    b.alpha[i] = i % 2 == 0 ? 1.0 : 0.0;
    for (int c = 0; c < 3; ++c) {
      b.gt(i, c) = rng.uniform();
      b.rgb_c(i, c) = rng.uniform();
      b.rgb_f(i, c) = rng.uniform();
    }
  }
  const double lc = 0.1, ls = 0.2;
  MatX<double> d_rgb_c, d_rgb_f;
  VecX<double> d_acc_c, d_acc_f;
  loss_backward(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, b.alpha, lc, ls, d_rgb_c, d_rgb_f,
                d_acc_c, d_acc_f);
  auto total = [&](const LossBatch& x) {
    return compute_losses(x.rgb_c, x.rgb_f, x.acc_c, x.acc_f, x.gt, x.alpha, lc, ls).total;
  };
  const double eps = 1e-7;
  for (int i = 0; i < p; ++i) {
    for (int c = 0; c < 3; ++c) {
      LossBatch bp = b, bm = b;
      bp.rgb_f(i, c) += eps;
      bm.rgb_f(i, c) -= eps;
      EXPECT_NEAR((total(bp) - total(bm)) / (2 * eps), d_rgb_f(i, c), 1e-8);
      bp = b;
      bm = b;
      bp.rgb_c(i, c) += eps;
      bm.rgb_c(i, c) -= eps;
      EXPECT_NEAR((total(bp) - total(bm)) / (2 * eps), d_rgb_c(i, c), 1e-8);
    }
    LossBatch bp = b, bm = b;
    bp.acc_f[i] += eps;
    bm.acc_f[i] -= eps;
    EXPECT_NEAR((total(bp) - total(bm)) / (2 * eps), d_acc_f[i], 1e-8);
    bp = b;
    bm = b;
    bp.acc_c[i] += eps;
    bm.acc_c[i] -= eps;
    EXPECT_NEAR((total(bp) - total(bm)) / (2 * eps), d_acc_c[i], 1e-8);
  }
  // Mask gating is exact: zero-alpha pixels carry zero photometric grad.
  for (int i = 0; i < p; ++i) {
    if (b.alpha[i] == 0.0) {
      EXPECT_EQ(d_rgb_f.row(i).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ(d_rgb_c.row(i).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_NE(d_acc_f[i], 0.0);
    }
  }
}

TEST(Losses, RejectsMismatchedShapes) {
  auto b = single_pixel({1, 0, 0}, {0, 0, 0}, {0, 0, 0}, 1, 1, 1);
  VecX<double> bad = VecX<double>::Zero(2);
  EXPECT_THROW(compute_losses(b.rgb_c, b.rgb_f, b.acc_c, b.acc_f, b.gt, bad, 0.1, 0.2),
               InvalidArgument);
}

TEST(Schedule, GeometricDecayEndpoints) {
  OptimConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 1e-3);
  EXPECT_NEAR(lr_at(cfg, cfg.step_max), 1e-4, 1e-19);
  EXPECT_NEAR(lr_at(cfg, cfg.step_max / 2), 3.1622776601683794e-4, 1e-12);
  EXPECT_NEAR(lr_at(cfg, 2 * cfg.step_max), 1e-4, 1e-19);  // constant past step_max
}

TEST(RAdam, ZeroGradientLeavesParamsUnchanged) {
  Param<double> p("w", 3, 3);
  p.value.setConstant(0.7);
  OptimConfig cfg;
  cfg.lr_final = cfg.lr;  // constant lr
  RAdam<double> opt({&p}, cfg);
  for (int i = 0; i < 10; ++i) {
    p.zero_grad();
    opt.step();
  }
  EXPECT_EQ((p.value.array() - 0.7).abs().maxCoeff(), 0.0);
}

// Frozen reference trace of the scalar recurrence; the momentum-only branch
// runs through t=4 and rectification activates at t=5.
TEST(RAdam, MatchesReferenceScalarTrace) {
  Param<double> p("w", 1, 1);
  p.value(0, 0) = 0.5;
  OptimConfig cfg;
  cfg.lr_final = cfg.lr;  // isolate the recurrence from the schedule
  RAdam<double> opt({&p}, cfg);
  const double grads[6] = {0.3, -0.2, 0.5, 0.1, -0.4, 0.25};
  const double want[6] = {0.49969999999999998, 0.49966315789473681, 0.49945540881724604,
                          0.49927899125400088, 0.49927713014178104, 0.49927055132444526};
  for (int t = 0; t < 6; ++t) {
    p.grad(0, 0) = grads[t];
    opt.step();
    EXPECT_NEAR(p.value(0, 0), want[t], 1e-15) << "step " << t + 1;
  }
  EXPECT_EQ(opt.steps_done(), 6);
}

TEST(RAdam, EarlyStepsAreVarianceFree) {
  // Before rectification activates, the update must not depend on the
  // gradient magnitude through v (pure momentum-with-bias-correction).
  Param<double> a("a", 1, 1), b("b", 1, 1);
  a.value(0, 0) = b.value(0, 0) = 1.0;
  OptimConfig cfg;
  cfg.lr_final = cfg.lr;
  RAdam<double> oa({&a}, cfg), ob({&b}, cfg);
  a.grad(0, 0) = 0.01;
  b.grad(0, 0) = 100.0;
  oa.step();
  ob.step();
  const double da = 1.0 - a.value(0, 0);
  const double db = 1.0 - b.value(0, 0);
  EXPECT_NEAR(db / da / (100.0 / 0.01), 1.0, 1e-9);  // proportional to g, not g/|g|
}

TEST(RAdam, ScheduleAppliesPerStep) {
  Param<double> p("w", 1, 1);
  p.value(0, 0) = 0.0;
  OptimConfig cfg;
  cfg.step_max = 2;
  cfg.lr = 1e-2;
  cfg.lr_final = 1e-4;
  RAdam<double> opt({&p}, cfg);
  // First step uses lr(0) = 1e-2: update = -lr * mhat = -lr * g.
  p.grad(0, 0) = 1.0;
  opt.step();
  EXPECT_NEAR(p.value(0, 0), -1e-2, 1e-15);
  EXPECT_NEAR(opt.current_lr(), 1e-3, 1e-15);  // lr(1) midway geometrically
}

TEST(RAdam, FloatParamsStayFinite) {
  Param<float> p("w", 4, 4);
  p.value.setConstant(0.5f);
  OptimConfig cfg;
  RAdam<float> opt({&p}, cfg);
  Rng rng({9});
  for (int t = 0; t < 50; ++t) {
    for (int i = 0; i < 16; ++i) p.grad.data()[i] = static_cast<float>(rng.normal());
    opt.step();
  }
  EXPECT_TRUE(p.value.allFinite());
}

}  // namespace
}  // namespace carfield
