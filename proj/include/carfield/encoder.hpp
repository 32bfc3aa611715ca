#pragma once

#include <Eigen/Dense>
#include <vector>

#include "carfield/errors.hpp"
#include "carfield/field.hpp"
#include "carfield/image.hpp"

namespace carfield {

struct EncoderConfig {
  int resolution = 64;
  std::vector<int> channels = {16, 32, 64, 128};
  int latent_dim = 128;

  void validate() const {
    if (resolution < 8) throw InvalidArgument("encoder config: resolution too small");
    if (channels.empty()) throw InvalidArgument("encoder config: need at least one conv block");
    for (int c : channels)
      if (c <= 0) throw InvalidArgument("encoder config: channel counts must be positive");
    if (latent_dim <= 0) throw InvalidArgument("encoder config: latent_dim must be positive");
  }
};

template <typename T>
struct LatentPair {
  VecX<T> z_shape;
  VecX<T> z_texture;
};

// Zero the background and letterbox patch+mask to the encoder resolution.
struct EncoderInput {
  Image masked;  // resolution x resolution x 3
  Image mask;    // resolution x resolution x 1, re-binarized
};
inline EncoderInput prepare_encoder_input(const Image& patch, const Image& mask, int resolution) {
  if (patch.channels != 3) throw InvalidArgument("shape error: patch must be RGB");
  if (mask.channels != 1 || mask.width != patch.width || mask.height != patch.height) {
    throw InvalidArgument("shape error: mask must be single-channel and match the patch");
  }
  EncoderInput out;
  out.masked = letterbox(patch, resolution).image;
  out.mask = letterbox(mask, resolution).image;
  threshold_mask(out.mask);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const float m = out.mask.at(x, y, 0);
      for (int c = 0; c < 3; ++c) out.masked.at(x, y, c) *= m;
    }
  return out;
}

// Strided conv trunk (3x3, stride 2, zero pad 1) + global average pool +
// two independent affine heads. Feature maps are (pixels x channels)
// matrices with row index y*W + x; conv layers run as im2col + GEMM.
template <typename T>
class Encoder {
 public:
  struct Tape {
    bool valid = false;
    std::vector<MatX<T>> cols;  // im2col matrix per layer
    std::vector<MatX<T>> act;   // post-ReLU feature map per layer
    std::vector<int> width;     // spatial size per layer output
    VecX<T> z_base;
  };

  struct Grads {
    std::vector<MatX<T>> by_param;
  };

  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    int cin = 3;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) {
      const int cout = cfg_.channels[i];
      conv_w_.emplace_back(strf("enc.conv%zu.w", i), cout, 9 * cin);
      conv_b_.emplace_back(strf("enc.conv%zu.b", i), cout, 1);
      cin = cout;
    }
    head_shape_w_ = Param<T>("enc.head_shape.w", cfg_.latent_dim, cin);
    head_shape_b_ = Param<T>("enc.head_shape.b", cfg_.latent_dim, 1);
    head_tex_w_ = Param<T>("enc.head_tex.w", cfg_.latent_dim, cin);
    head_tex_b_ = Param<T>("enc.head_tex.b", cfg_.latent_dim, 1);
  }

  const EncoderConfig& config() const { return cfg_; }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (size_t i = 0; i < conv_w_.size(); ++i) {
      out.push_back(&conv_w_[i]);
      out.push_back(&conv_b_[i]);
    }
    out.push_back(&head_shape_w_);
    out.push_back(&head_shape_b_);
    out.push_back(&head_tex_w_);
    out.push_back(&head_tex_b_);
    return out;
  }

  std::vector<const Param<T>*> params() const {
    auto mut = const_cast<Encoder*>(this)->params();
    return std::vector<const Param<T>*>(mut.begin(), mut.end());
  }

  void zero_grad() {
    for (Param<T>* p : params()) p->zero_grad();
  }

  void init(uint64_t seed) {
    auto ps = params();
    for (size_t i = 0; i < ps.size(); ++i) {
      Param<T>& p = *ps[i];
      if (p.name.back() == 'b') {
        p.value.setZero();
        continue;
      }
      Rng rng({seed, stream::kInit, 0x1000 + static_cast<uint64_t>(i)});
      const double bound = std::sqrt(6.0 / static_cast<double>(p.value.cols()));
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        for (Eigen::Index r = 0; r < p.value.rows(); ++r)
          p.value(r, c) = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  Grads alloc_grads() const {
    Grads g;
    for (const Param<T>* p : params())
      g.by_param.emplace_back(MatX<T>::Zero(p->value.rows(), p->value.cols()));
    return g;
  }

  void accumulate(const Grads& g) {
    auto ps = params();
    if (g.by_param.size() != ps.size()) {
      throw InvalidArgument("encoder grads: store does not match parameter registry");
    }
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->grad += g.by_param[i];
  }

  // Masks the patch and runs the trunk. Inputs must already be at the
  // encoder resolution (see prepare_encoder_input for arbitrary patches).
  LatentPair<T> encode(const Image& patch, const Image& mask, Tape& tape) const {
    if (patch.width != cfg_.resolution || patch.height != cfg_.resolution ||
        patch.channels != 3) {
      throw InvalidArgument(strf("shape error: encoder expects %dx%dx3 patch, got %dx%dx%d",
                                 cfg_.resolution, cfg_.resolution, patch.width, patch.height,
                                 patch.channels));
    }
    if (mask.width != patch.width || mask.height != patch.height || mask.channels != 1) {
      throw InvalidArgument("shape error: mask must be single-channel and match the patch");
    }

    const int n = cfg_.resolution * cfg_.resolution;
    MatX<T> input(n, 3);
    for (int y = 0; y < cfg_.resolution; ++y)
      for (int x = 0; x < cfg_.resolution; ++x) {
        const float m = mask.at(x, y, 0) >= 0.5f ? 1.0f : 0.0f;
        for (int c = 0; c < 3; ++c)
          input(y * cfg_.resolution + x, c) = static_cast<T>(patch.at(x, y, c) * m);
      }
    return forward(input, cfg_.resolution, tape);
  }

  // input: (w*w x 3) feature matrix at spatial size w.
  LatentPair<T> forward(const MatX<T>& input, int w, Tape& tape) const {
    tape.cols.clear();
    tape.act.clear();
    tape.width.clear();

    MatX<T> cur = input;
    int cur_w = w;
    for (size_t l = 0; l < conv_w_.size(); ++l) {
      const int out_w = conv_out_size(cur_w);
      MatX<T> cols = im2col(cur, cur_w, out_w);
      MatX<T> act = cols * conv_w_[l].value.transpose();
      act.rowwise() += conv_b_[l].value.col(0).transpose();
      act = act.cwiseMax(T(0));
      tape.cols.push_back(std::move(cols));
      tape.act.push_back(act);
      tape.width.push_back(out_w);
      cur = std::move(act);
      cur_w = out_w;
    }

    tape.z_base = tape.act.back().colwise().mean().transpose();
    LatentPair<T> out;
    out.z_shape = head_shape_w_.value * tape.z_base + head_shape_b_.value.col(0);
    out.z_texture = head_tex_w_.value * tape.z_base + head_tex_b_.value.col(0);
    tape.valid = true;
    return out;
  }

  // Reverse pass; accumulates into g.
  void backward(const Tape& tape, const VecX<T>& d_z_shape, const VecX<T>& d_z_texture,
                Grads& g) const {
    if (!tape.valid) throw InvalidArgument("state error: encoder backward before forward");
    const size_t nl = conv_w_.size();
    const size_t ih = 2 * nl;  // head params offset

    g.by_param[ih + 0].noalias() += d_z_shape * tape.z_base.transpose();
    g.by_param[ih + 1].col(0) += d_z_shape;
    g.by_param[ih + 2].noalias() += d_z_texture * tape.z_base.transpose();
    g.by_param[ih + 3].col(0) += d_z_texture;

    VecX<T> d_z_base = head_shape_w_.value.transpose() * d_z_shape +
                       head_tex_w_.value.transpose() * d_z_texture;

    const Eigen::Index npix = tape.act.back().rows();
    MatX<T> d_act =
        (VecX<T>::Ones(npix) * (d_z_base.transpose() / static_cast<T>(npix)));

    for (size_t l = nl; l-- > 0;) {
      MatX<T> d_pre =
          (d_act.array() * (tape.act[l].array() > T(0)).template cast<T>()).matrix();
      g.by_param[2 * l].noalias() += d_pre.transpose() * tape.cols[l];
      g.by_param[2 * l + 1].col(0) += d_pre.colwise().sum().transpose();
      if (l == 0) break;
      MatX<T> d_cols = d_pre * conv_w_[l].value;
      const int in_w = tape.width[l - 1];
      d_act = col2im(d_cols, in_w, tape.width[l], static_cast<int>(tape.act[l - 1].cols()));
    }
  }

 private:
  static int conv_out_size(int in) { return (in - 1) / 2 + 1; }

  // Gather 3x3 stride-2 pad-1 neighborhoods. Column layout: c*9 + ky*3 + kx.
  static MatX<T> im2col(const MatX<T>& input, int in_w, int out_w) {
    const int cin = static_cast<int>(input.cols());
    MatX<T> cols = MatX<T>::Zero(static_cast<Eigen::Index>(out_w) * out_w, 9 * cin);
    for (int oy = 0; oy < out_w; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= in_w) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= in_w) continue;
            const Eigen::Index in_row = static_cast<Eigen::Index>(iy) * in_w + ix;
            for (int c = 0; c < cin; ++c) cols(row, c * 9 + ky * 3 + kx) = input(in_row, c);
          }
        }
      }
    }
    return cols;
  }

  // Scatter-add the im2col gradient back onto the input feature map.
  static MatX<T> col2im(const MatX<T>& d_cols, int in_w, int out_w, int cin) {
    MatX<T> d_input = MatX<T>::Zero(static_cast<Eigen::Index>(in_w) * in_w, cin);
    for (int oy = 0; oy < out_w; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= in_w) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= in_w) continue;
            const Eigen::Index in_row = static_cast<Eigen::Index>(iy) * in_w + ix;
            for (int c = 0; c < cin; ++c) d_input(in_row, c) += d_cols(row, c * 9 + kx + ky * 3);
          }
        }
      }
    }
    return d_input;
  }

  EncoderConfig cfg_;
  std::vector<Param<T>> conv_w_, conv_b_;
  Param<T> head_shape_w_, head_shape_b_;
  Param<T> head_tex_w_, head_tex_b_;
};

}  // namespace carfield
