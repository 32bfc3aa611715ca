#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "carfield/encoding.hpp"
#include "carfield/errors.hpp"
#include "carfield/log.hpp"
#include "carfield/rng.hpp"

namespace carfield {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowX = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// One learnable tensor with its gradient accumulator. Biases are (n x 1).
template <typename T>
struct Param {
  std::string name;
  MatX<T> value;
  MatX<T> grad;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(MatX<T>::Zero(rows, cols)), grad(MatX<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

struct FieldConfig {
  int hidden = 128;        // D: hidden width == latent width
  int shape_depth = 8;     // ReLU trunk layers after latent injection
  int skip_layer = 4;      // trunk index whose input is concat(h, x0); 0 disables
  int texture_depth = 2;   // ReLU layers in the texture stack
  int l_pos = 10;          // IPE frequency count
  int l_dir = 4;           // direction encoding frequency count

  int ipe_dim() const { return ipe_width(l_pos); }
  int dir_dim() const { return dir_width(l_dir); }

  void validate() const {
    if (hidden <= 0 || shape_depth < 1 || texture_depth < 1 || l_pos < 1 || l_dir < 1) {
      throw InvalidArgument("field config: widths, depths, and levels must be positive");
    }
    if (skip_layer < 0 || skip_layer >= shape_depth) {
      throw InvalidArgument(
          strf("field config: skip_layer %d out of range [0, shape_depth)", skip_layer));
    }
  }
};

namespace detail {

template <typename T>
inline T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// Latent-conditioned two-stack MLP with hand-written reverse mode. The
// shape stack maps projected position features plus z_shape to (density,
// feature); the texture stack maps feature + projected direction features
// plus z_texture to color. Batched: rows are samples.
template <typename T>
class Field {
 public:
  // Recorded intermediates of the shape stack forward pass.
  struct ShapeTape {
    bool valid = false;
    MatX<T> ipe;        // M x ipe_dim
    MatX<T> x0;         // M x D, projection + latent
    std::vector<MatX<T>> h;  // post-ReLU activations per trunk layer
    VecX<T> sigma_pre;  // M
    VecX<T> sigma;      // M, softplus applied
    MatX<T> f_out;      // M x D
  };

  // Recorded intermediates of the texture stack forward pass.
  struct TextureTape {
    bool valid = false;
    MatX<T> f_in;       // M x D (shape feature fed in)
    MatX<T> dirf;       // M x dir_dim
    MatX<T> y0;         // M x D, f_in + dir projection + latent
    std::vector<MatX<T>> g;
    MatX<T> rgb_pre;    // M x 3
    MatX<T> rgb;        // M x 3, sigmoid applied
  };

  struct Tape {
    ShapeTape shape;
    TextureTape texture;
  };

  // Gradients aligned with params(); latents and (optionally) encodings.
  struct Grads {
    std::vector<MatX<T>> by_param;
    VecX<T> d_z_shape;
    VecX<T> d_z_texture;
    MatX<T> d_ipe;   // filled when requested
    MatX<T> d_dirf;  // filled when requested
  };

  explicit Field(FieldConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.hidden;
    pos_proj_w_ = Param<T>("shape.proj.w", d, cfg_.ipe_dim());
    pos_proj_b_ = Param<T>("shape.proj.b", d, 1);
    for (int i = 0; i < cfg_.shape_depth; ++i) {
      const int in = trunk_in_width(i);
      trunk_w_.emplace_back(strf("shape.trunk%d.w", i), d, in);
      trunk_b_.emplace_back(strf("shape.trunk%d.b", i), d, 1);
    }
    sigma_w_ = Param<T>("shape.sigma.w", 1, d);
    sigma_b_ = Param<T>("shape.sigma.b", 1, 1);
    feat_w_ = Param<T>("shape.feat.w", d, d);
    feat_b_ = Param<T>("shape.feat.b", d, 1);
    dir_proj_w_ = Param<T>("tex.proj.w", d, cfg_.dir_dim());
    dir_proj_b_ = Param<T>("tex.proj.b", d, 1);
    for (int i = 0; i < cfg_.texture_depth; ++i) {
      tex_w_.emplace_back(strf("tex.trunk%d.w", i), d, d);
      tex_b_.emplace_back(strf("tex.trunk%d.b", i), d, 1);
    }
    rgb_w_ = Param<T>("tex.rgb.w", 3, d);
    rgb_b_ = Param<T>("tex.rgb.b", 3, 1);
  }

  const FieldConfig& config() const { return cfg_; }

  // Fixed registry order; checkpoints and the optimizer rely on it.
  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    out.push_back(&pos_proj_w_);
    out.push_back(&pos_proj_b_);
    for (int i = 0; i < cfg_.shape_depth; ++i) {
      out.push_back(&trunk_w_[i]);
      out.push_back(&trunk_b_[i]);
    }
    out.push_back(&sigma_w_);
    out.push_back(&sigma_b_);
    out.push_back(&feat_w_);
    out.push_back(&feat_b_);
    out.push_back(&dir_proj_w_);
    out.push_back(&dir_proj_b_);
    for (int i = 0; i < cfg_.texture_depth; ++i) {
      out.push_back(&tex_w_[i]);
      out.push_back(&tex_b_[i]);
    }
    out.push_back(&rgb_w_);
    out.push_back(&rgb_b_);
    return out;
  }

  std::vector<const Param<T>*> params() const {
    auto mut = const_cast<Field*>(this)->params();
    return std::vector<const Param<T>*>(mut.begin(), mut.end());
  }

  void zero_grad() {
    for (Param<T>* p : params()) p->zero_grad();
  }

  // He-style uniform fan-in init, deterministic in (seed, registry index).
  void init(uint64_t seed) {
    auto ps = params();
    for (size_t i = 0; i < ps.size(); ++i) {
      Param<T>& p = *ps[i];
      if (p.value.cols() == 1 && p.name.back() == 'b') {
        p.value.setZero();
        continue;
      }
      Rng rng({seed, stream::kInit, static_cast<uint64_t>(i)});
      const double bound = std::sqrt(6.0 / static_cast<double>(p.value.cols()));
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        for (Eigen::Index r = 0; r < p.value.rows(); ++r)
          p.value(r, c) = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  Grads alloc_grads(bool with_encoding_grads = false, int rows = 0) const {
    Grads g;
    for (const Param<T>* p : params()) {
      g.by_param.emplace_back(MatX<T>::Zero(p->value.rows(), p->value.cols()));
    }
    g.d_z_shape = VecX<T>::Zero(cfg_.hidden);
    g.d_z_texture = VecX<T>::Zero(cfg_.hidden);
    if (with_encoding_grads && rows > 0) {
      g.d_ipe = MatX<T>::Zero(rows, cfg_.ipe_dim());
      g.d_dirf = MatX<T>::Zero(rows, cfg_.dir_dim());
    }
    return g;
  }

  // Add per-chunk grads into the parameter accumulators (called in fixed
  // chunk order for determinism).
  void accumulate(const Grads& g) {
    auto ps = params();
    if (g.by_param.size() != ps.size()) {
      throw InvalidArgument("field grads: store does not match parameter registry");
    }
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->grad += g.by_param[i];
  }

  // ---- forward ---------------------------------------------------------

  void forward_shape(const MatX<T>& ipe, const VecX<T>& z_shape, ShapeTape& tape) const {
    if (ipe.cols() != cfg_.ipe_dim()) {
      throw InvalidArgument(strf("shape error: ipe width %d, expected %d",
                                 static_cast<int>(ipe.cols()), cfg_.ipe_dim()));
    }
    if (z_shape.size() != cfg_.hidden) {
      throw InvalidArgument(strf("shape error: z_shape width %d, expected %d",
                                 static_cast<int>(z_shape.size()), cfg_.hidden));
    }
    tape.ipe = ipe;
    tape.x0.noalias() = ipe * pos_proj_w_.value.transpose();
    tape.x0.rowwise() += (pos_proj_b_.value.col(0) + z_shape).transpose();

    tape.h.assign(static_cast<size_t>(cfg_.shape_depth), MatX<T>());
    const MatX<T>* prev = &tape.x0;
    MatX<T> cat;
    for (int i = 0; i < cfg_.shape_depth; ++i) {
      const MatX<T>* in = prev;
      if (i == cfg_.skip_layer && i > 0) {
        cat.resize(prev->rows(), 2 * cfg_.hidden);
        cat << *prev, tape.x0;
        in = &cat;
      }
      tape.h[i].noalias() = (*in) * trunk_w_[i].value.transpose();
      tape.h[i].rowwise() += trunk_b_[i].value.col(0).transpose();
      tape.h[i] = tape.h[i].cwiseMax(T(0));
      prev = &tape.h[i];
    }

    tape.sigma_pre.noalias() = *prev * sigma_w_.value.transpose();
    tape.sigma_pre.array() += sigma_b_.value(0, 0);
    tape.sigma = tape.sigma_pre.unaryExpr([](T x) { return detail::softplus(x); });
    tape.f_out.noalias() = *prev * feat_w_.value.transpose();
    tape.f_out.rowwise() += feat_b_.value.col(0).transpose();
    tape.valid = true;
  }

  void forward_texture(const MatX<T>& f_in, const MatX<T>& dirf, const VecX<T>& z_texture,
                       TextureTape& tape) const {
    if (f_in.cols() != cfg_.hidden) {
      throw InvalidArgument(strf("shape error: feature width %d, expected %d",
                                 static_cast<int>(f_in.cols()), cfg_.hidden));
    }
    if (dirf.cols() != cfg_.dir_dim()) {
      throw InvalidArgument(strf("shape error: dir feature width %d, expected %d",
                                 static_cast<int>(dirf.cols()), cfg_.dir_dim()));
    }
    if (z_texture.size() != cfg_.hidden) {
      throw InvalidArgument(strf("shape error: z_texture width %d, expected %d",
                                 static_cast<int>(z_texture.size()), cfg_.hidden));
    }
    if (dirf.rows() != f_in.rows()) {
      throw InvalidArgument("shape error: feature/dir row mismatch");
    }
    tape.f_in = f_in;
    tape.dirf = dirf;
    tape.y0.noalias() = dirf * dir_proj_w_.value.transpose();
    tape.y0 += f_in;
    tape.y0.rowwise() += (dir_proj_b_.value.col(0) + z_texture).transpose();

    tape.g.assign(static_cast<size_t>(cfg_.texture_depth), MatX<T>());
    const MatX<T>* prev = &tape.y0;
    for (int i = 0; i < cfg_.texture_depth; ++i) {
      tape.g[i].noalias() = (*prev) * tex_w_[i].value.transpose();
      tape.g[i].rowwise() += tex_b_[i].value.col(0).transpose();
      tape.g[i] = tape.g[i].cwiseMax(T(0));
      prev = &tape.g[i];
    }
    tape.rgb_pre.noalias() = *prev * rgb_w_.value.transpose();
    tape.rgb_pre.rowwise() += rgb_b_.value.col(0).transpose();
    tape.rgb = tape.rgb_pre.unaryExpr([](T x) { return detail::sigmoid(x); });
    tape.valid = true;
  }

  void forward(const MatX<T>& ipe, const MatX<T>& dirf, const VecX<T>& z_shape,
               const VecX<T>& z_texture, Tape& tape) const {
    forward_shape(ipe, z_shape, tape.shape);
    forward_texture(tape.shape.f_out, dirf, z_texture, tape.texture);
  }

  // ---- backward --------------------------------------------------------

  // d_rgb: M x 3 upstream. Returns d(f_in): M x D. Accumulates into g.
  MatX<T> backward_texture(const TextureTape& tape, const MatX<T>& d_rgb, Grads& g,
                           bool want_encoding_grads = false) const {
    if (!tape.valid) throw InvalidArgument("state error: backward_texture before forward");
    const int np = 2 + 2 * cfg_.shape_depth + 4;  // offset of tex params in registry
    MatX<T> d_pre = (d_rgb.array() * tape.rgb.array() * (T(1) - tape.rgb.array())).matrix();

    // rgb head
    const MatX<T>& last = cfg_.texture_depth > 0 ? tape.g.back() : tape.y0;
    g.by_param[np + 2 + 2 * cfg_.texture_depth].noalias() += d_pre.transpose() * last;
    g.by_param[np + 3 + 2 * cfg_.texture_depth].col(0) += d_pre.colwise().sum().transpose();
    MatX<T> d_h = d_pre * rgb_w_.value;

    for (int i = cfg_.texture_depth - 1; i >= 0; --i) {
      d_h = (d_h.array() * (tape.g[i].array() > T(0)).template cast<T>()).matrix();
      const MatX<T>& in = i == 0 ? tape.y0 : tape.g[i - 1];
      g.by_param[np + 2 + 2 * i].noalias() += d_h.transpose() * in;
      g.by_param[np + 3 + 2 * i].col(0) += d_h.colwise().sum().transpose();
      d_h = d_h * tex_w_[i].value;  // now gradient at layer input
    }

    // d_h is d(y0): split into f_in, dir projection, and latent.
    g.by_param[np + 0].noalias() += d_h.transpose() * tape.dirf;
    g.by_param[np + 1].col(0) += d_h.colwise().sum().transpose();
    g.d_z_texture += d_h.colwise().sum().transpose();
    if (want_encoding_grads) g.d_dirf = d_h * dir_proj_w_.value;
    return d_h;
  }

  // d_sigma: M upstream on post-softplus density; d_f_out: M x D upstream
  // on the shape feature (usually from backward_texture).
  void backward_shape(const ShapeTape& tape, const VecX<T>& d_sigma, const MatX<T>& d_f_out,
                      Grads& g, bool want_encoding_grads = false) const {
    if (!tape.valid) throw InvalidArgument("state error: backward_shape before forward");
    const MatX<T>& last = tape.h.back();

    VecX<T> d_sigma_pre =
        (d_sigma.array() * tape.sigma_pre.unaryExpr([](T x) { return detail::sigmoid(x); }).array())
            .matrix();

    // Heads.
    const int isw = 2 + 2 * cfg_.shape_depth;  // sigma.w registry index
    g.by_param[isw].noalias() += d_sigma_pre.transpose() * last;
    g.by_param[isw + 1](0, 0) += d_sigma_pre.sum();
    g.by_param[isw + 2].noalias() += d_f_out.transpose() * last;
    g.by_param[isw + 3].col(0) += d_f_out.colwise().sum().transpose();

    MatX<T> d_h = d_sigma_pre * sigma_w_.value;  // (M x 1) * (1 x D)
    d_h.noalias() += d_f_out * feat_w_.value;

    MatX<T> d_x0 = MatX<T>::Zero(tape.x0.rows(), cfg_.hidden);
    for (int i = cfg_.shape_depth - 1; i >= 0; --i) {
      d_h = (d_h.array() * (tape.h[i].array() > T(0)).template cast<T>()).matrix();
      const bool skip_here = i == cfg_.skip_layer && i > 0;
      if (skip_here) {
        MatX<T> cat(tape.x0.rows(), 2 * cfg_.hidden);
        cat << tape.h[i - 1], tape.x0;
        g.by_param[2 + 2 * i].noalias() += d_h.transpose() * cat;
      } else {
        const MatX<T>& in = i == 0 ? tape.x0 : tape.h[i - 1];
        g.by_param[2 + 2 * i].noalias() += d_h.transpose() * in;
      }
      g.by_param[3 + 2 * i].col(0) += d_h.colwise().sum().transpose();
      MatX<T> d_in = d_h * trunk_w_[i].value;
      if (skip_here) {
        d_x0 += d_in.rightCols(cfg_.hidden);
        d_h = d_in.leftCols(cfg_.hidden);
      } else if (i == 0) {
        d_x0 += d_in;
      } else {
        d_h = std::move(d_in);
      }
    }

    g.by_param[0].noalias() += d_x0.transpose() * tape.ipe;
    g.by_param[1].col(0) += d_x0.colwise().sum().transpose();
    g.d_z_shape += d_x0.colwise().sum().transpose();
    if (want_encoding_grads) g.d_ipe = d_x0 * pos_proj_w_.value;
  }

  // Full reverse pass for (density, color) upstream gradients.
  void backward(const Tape& tape, const VecX<T>& d_sigma, const MatX<T>& d_rgb, Grads& g,
                bool want_encoding_grads = false) const {
    MatX<T> d_f = backward_texture(tape.texture, d_rgb, g, want_encoding_grads);
    backward_shape(tape.shape, d_sigma, d_f, g, want_encoding_grads);
  }

  // ---- single-sample convenience ops ------------------------------------

  std::pair<VecX<T>, T> eval_shape(const VecX<T>& ipe, const VecX<T>& z_shape) const {
    ShapeTape tape;
    forward_shape(ipe.transpose(), z_shape, tape);
    return {tape.f_out.row(0).transpose(), tape.sigma[0]};
  }

  Eigen::Matrix<T, 3, 1> eval_texture(const VecX<T>& f_out, const VecX<T>& dirf,
                                      const VecX<T>& z_texture) const {
    TextureTape tape;
    forward_texture(f_out.transpose(), dirf.transpose(), z_texture, tape);
    return tape.rgb.row(0).transpose();
  }

 private:
  int trunk_in_width(int layer) const {
    return (layer == cfg_.skip_layer && layer > 0) ? 2 * cfg_.hidden : cfg_.hidden;
  }

  FieldConfig cfg_;
  Param<T> pos_proj_w_, pos_proj_b_;
  std::vector<Param<T>> trunk_w_, trunk_b_;
  Param<T> sigma_w_, sigma_b_, feat_w_, feat_b_;
  Param<T> dir_proj_w_, dir_proj_b_;
  std::vector<Param<T>> tex_w_, tex_b_;
  Param<T> rgb_w_, rgb_b_;
};

}  // namespace carfield
