#pragma once

#include "carfield/errors.hpp"
#include "carfield/field.hpp"

namespace carfield {

template <typename T>
struct LossBreakdown {
  T render = T(0);  // photometric term, mask-gated
  T seg = T(0);     // accumulation-vs-mask term, NOT gated
  T total = T(0);   // render + lambda_s * seg
};

namespace detail {

template <typename T>
void check_loss_shapes(const MatX<T>& rgb_c, const MatX<T>& rgb_f, const VecX<T>& acc_c,
                       const VecX<T>& acc_f, const MatX<T>& gt, const VecX<T>& alpha) {
  const Eigen::Index p = gt.rows();
  if (gt.cols() != 3 || rgb_c.rows() != p || rgb_f.rows() != p || rgb_c.cols() != 3 ||
      rgb_f.cols() != 3 || acc_c.size() != p || acc_f.size() != p || alpha.size() != p || p == 0) {
    throw InvalidArgument("loss: batch shapes disagree");
  }
}

}  // namespace detail

// Batch-averaged losses. The photometric term is gated by the mask value
// alpha (background pixels contribute nothing); the segmentation term
// supervises every pixel's accumulated weight toward its mask value.
template <typename T>
LossBreakdown<T> compute_losses(const MatX<T>& rgb_c, const MatX<T>& rgb_f, const VecX<T>& acc_c,
                                const VecX<T>& acc_f, const MatX<T>& gt, const VecX<T>& alpha,
                                T lambda_c, T lambda_s) {
  detail::check_loss_shapes(rgb_c, rgb_f, acc_c, acc_f, gt, alpha);
  const Eigen::Index p = gt.rows();
  T render = T(0);
  T seg = T(0);
  for (Eigen::Index i = 0; i < p; ++i) {
    const T df = (rgb_f.row(i) - gt.row(i)).squaredNorm();
    const T dc = (rgb_c.row(i) - gt.row(i)).squaredNorm();
    render += alpha[i] * (df + lambda_c * dc);
    const T sf = acc_f[i] - alpha[i];
    const T sc = acc_c[i] - alpha[i];
    seg += sf * sf + lambda_c * sc * sc;
  }
  LossBreakdown<T> out;
  out.render = render / static_cast<T>(p);
  out.seg = seg / static_cast<T>(p);
  out.total = out.render + lambda_s * out.seg;
  return out;
}

// Gradient of the TOTAL loss w.r.t. the four render outputs.
template <typename T>
void loss_backward(const MatX<T>& rgb_c, const MatX<T>& rgb_f, const VecX<T>& acc_c,
                   const VecX<T>& acc_f, const MatX<T>& gt, const VecX<T>& alpha, T lambda_c,
                   T lambda_s, MatX<T>& d_rgb_c, MatX<T>& d_rgb_f, VecX<T>& d_acc_c,
                   VecX<T>& d_acc_f) {
  detail::check_loss_shapes(rgb_c, rgb_f, acc_c, acc_f, gt, alpha);
  const Eigen::Index p = gt.rows();
  const T inv = T(2) / static_cast<T>(p);
  d_rgb_c.resize(p, 3);
  d_rgb_f.resize(p, 3);
  d_acc_c.resize(p);
  d_acc_f.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    d_rgb_f.row(i) = inv * alpha[i] * (rgb_f.row(i) - gt.row(i));
    d_rgb_c.row(i) = inv * alpha[i] * lambda_c * (rgb_c.row(i) - gt.row(i));
    d_acc_f[i] = lambda_s * inv * (acc_f[i] - alpha[i]);
    d_acc_c[i] = lambda_s * inv * lambda_c * (acc_c[i] - alpha[i]);
  }
}

}  // namespace carfield
