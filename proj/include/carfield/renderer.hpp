#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "carfield/encoding.hpp"
#include "carfield/errors.hpp"
#include "carfield/field.hpp"
#include "carfield/geometry.hpp"
#include "carfield/image.hpp"
#include "carfield/parallel.hpp"
#include "carfield/rng.hpp"

namespace carfield {

struct RenderConfig {
  int n_coarse = 64;
  int n_fine = 64;
  bool jitter = true;
  double t_eps = 1e-4;          // near-plane clamp for cube entry
  double weight_floor = 0.01;   // resampling floor as a fraction of the mean weight

  void validate() const {
    if (n_coarse < 1 || n_fine < 1) {
      throw InvalidArgument("render config: sample counts must be positive");
    }
    if (t_eps <= 0) throw InvalidArgument("render config: t_eps must be positive");
    if (weight_floor < 0) throw InvalidArgument("render config: weight_floor must be >= 0");
  }
};

// Cone through the center of pixel (u, v), expressed in the canonical
// frame. cam_pose_canonical maps camera coordinates to canonical ones.
Cone pixel_cone(double u, double v, const Intrinsics& k, const Mat4& cam_pose_canonical);

// Slab intersection of the cone axis with the cube [-1,1]^3, clamped to
// t >= t_eps. nullopt on a miss.
std::optional<std::pair<double, double>> canonical_bounds(const Cone& cone, double t_eps = 1e-4);

// n+1 bin edges over [t_n, t_f]. With rng null the edges are exactly
// uniform; otherwise each edge is jittered within its half-stratum.
Eigen::VectorXd stratified_edges(double t_n, double t_f, int n, Rng* rng);

// n_fine+1 edges drawn by inverse-CDF sampling from the per-bin weight
// histogram (floored for full support; zero total falls back to uniform).
Eigen::VectorXd resample_fine(const Eigen::VectorXd& weights, const Eigen::VectorXd& edges,
                              int n_fine, Rng& rng, double floor_frac = 0.01);

// ---- volume-rendering quadrature -----------------------------------------

template <typename T>
struct CompositeResult {
  Eigen::Matrix<T, 3, 1> rgb = Eigen::Matrix<T, 3, 1>::Zero();
  T acc = T(0);
  VecX<T> weights;     // w_i = T_i * alpha_i
  VecX<T> trans_next;  // transmittance after sample i
};

template <typename T>
CompositeResult<T> composite(const VecX<T>& sigma, const MatX<T>& rgb, const VecX<T>& edges) {
  const Eigen::Index n = sigma.size();
  if (rgb.rows() != n || rgb.cols() != 3 || edges.size() != n + 1) {
    throw InvalidArgument("composite: sample/edge sizes disagree");
  }
  CompositeResult<T> out;
  out.weights.resize(n);
  out.trans_next.resize(n);
  T trans = T(1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T delta = edges[i + 1] - edges[i];
    const T alpha = -std::expm1(-sigma[i] * delta);
    const T w = trans * alpha;
    trans *= T(1) - alpha;
    out.weights[i] = w;
    out.trans_next[i] = trans;
    out.rgb += w * rgb.row(i).transpose();
    out.acc += w;
  }
  return out;
}

// Reverse pass of composite: upstream (d_rgb, d_acc) to (d_sigma, d_c).
template <typename T>
void composite_backward(const CompositeResult<T>& res, const MatX<T>& rgb, const VecX<T>& edges,
                        const Eigen::Matrix<T, 3, 1>& d_rgb, T d_acc, VecX<T>& d_sigma,
                        MatX<T>& d_c) {
  const Eigen::Index n = res.weights.size();
  d_sigma.resize(n);
  d_c.resize(n, 3);
  T suffix = T(0);  // sum_{k>i} g_k w_k
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const T g = rgb.row(i).dot(d_rgb) + d_acc;  // dL/dw_i
    const T delta = edges[i + 1] - edges[i];
    d_sigma[i] = delta * (res.trans_next[i] * g - suffix);
    suffix += g * res.weights[i];
    d_c.row(i) = res.weights[i] * d_rgb.transpose();
  }
}

struct RenderOutput {
  Eigen::Vector3d rgb_coarse = Eigen::Vector3d::Zero();
  Eigen::Vector3d rgb_fine = Eigen::Vector3d::Zero();
  double acc_coarse = 0.0;
  double acc_fine = 0.0;
  bool hit = false;
};

// ---- batched cone-tracing pipeline ----------------------------------------

// Renders batches of pixel cones against one field + latent pair, keeping
// enough tape for an exact reverse pass. Fine-pass sample positions are
// gradient-stopped (frozen at forward time), the usual hierarchical
// convention.
template <typename T>
class Renderer {
 public:
  struct BatchTape {
    bool valid = false;
    std::vector<int> hit_index;            // per input pixel; -1 on miss
    std::vector<Cone> cones;               // hit pixels only
    Eigen::MatrixXd edges_c, edges_f;      // H x (n+1), double precision
    typename Field<T>::Tape tape_c, tape_f;
    std::vector<CompositeResult<T>> comp_c, comp_f;
  };

  struct BatchOutput {
    MatX<T> rgb_c, rgb_f;  // P x 3
    VecX<T> acc_c, acc_f;  // P
    std::vector<uint8_t> hit;
  };

  Renderer(const Field<T>& field, RenderConfig cfg) : field_(&field), cfg_(cfg) {
    cfg_.validate();
  }

  const RenderConfig& config() const { return cfg_; }

  // Full coarse -> resample -> fine render of a pixel batch. Per-pixel rng
  // streams derive from (seed, salt, pixel_ids[p]) so results do not depend
  // on batch composition or thread count.
  void render_batch(const std::vector<Cone>& cones, const std::vector<uint64_t>& pixel_ids,
                    uint64_t seed, uint64_t salt, const VecX<T>& z_shape, const VecX<T>& z_texture,
                    int threads, BatchTape& tape, BatchOutput& out) const {
    const int p_count = static_cast<int>(cones.size());
    if (pixel_ids.size() != cones.size()) {
      throw InvalidArgument("render batch: pixel_ids must match cones");
    }
    init_output(p_count, out);
    tape = BatchTape();
    tape.hit_index.assign(cones.size(), -1);

    std::vector<std::pair<double, double>> bounds;
    for (int p = 0; p < p_count; ++p) {
      auto b = canonical_bounds(cones[p], cfg_.t_eps);
      if (!b) continue;
      tape.hit_index[p] = static_cast<int>(tape.cones.size());
      tape.cones.push_back(cones[p]);
      bounds.push_back(*b);
      out.hit[p] = 1;
    }
    const int h_count = static_cast<int>(tape.cones.size());
    if (h_count == 0) return;

    std::vector<uint64_t> hit_ids(h_count);
    for (int p = 0; p < p_count; ++p) {
      if (tape.hit_index[p] >= 0) hit_ids[tape.hit_index[p]] = pixel_ids[p];
    }

    // Coarse edges.
    tape.edges_c.resize(h_count, cfg_.n_coarse + 1);
    for (int h = 0; h < h_count; ++h) {
      Rng rng({seed, stream::kRay, salt, hit_ids[h], 0});
      tape.edges_c.row(h) = stratified_edges(bounds[h].first, bounds[h].second, cfg_.n_coarse,
                                             cfg_.jitter ? &rng : nullptr)
                                .transpose();
    }

    run_pass(tape.cones, tape.edges_c, z_shape, z_texture, threads, tape.tape_c, tape.comp_c);
    scatter(tape, tape.comp_c, out.rgb_c, out.acc_c);

    // Fine edges from the coarse weight histogram (gradient-stopped).
    tape.edges_f.resize(h_count, cfg_.n_fine + 1);
    for (int h = 0; h < h_count; ++h) {
      Rng rng({seed, stream::kRay, salt, hit_ids[h], 1});
      Eigen::VectorXd w = tape.comp_c[h].weights.template cast<double>();
      tape.edges_f.row(h) =
          resample_fine(w, tape.edges_c.row(h).transpose(), cfg_.n_fine, rng, cfg_.weight_floor)
              .transpose();
    }

    run_pass(tape.cones, tape.edges_f, z_shape, z_texture, threads, tape.tape_f, tape.comp_f);
    scatter(tape, tape.comp_f, out.rgb_f, out.acc_f);
    tape.valid = true;
  }

  // Re-render with the sample positions frozen in an existing tape (the
  // differentiable path: edges fixed, parameters/latents may have moved).
  void render_frozen(BatchTape& tape, const VecX<T>& z_shape, const VecX<T>& z_texture,
                     int threads, BatchOutput& out) const {
    const int p_count = static_cast<int>(tape.hit_index.size());
    init_output(p_count, out);
    for (int p = 0; p < p_count; ++p) out.hit[p] = tape.hit_index[p] >= 0 ? 1 : 0;
    if (tape.cones.empty()) return;
    if (!tape.valid) throw InvalidArgument("state error: render_frozen needs a rendered tape");
    run_pass(tape.cones, tape.edges_c, z_shape, z_texture, threads, tape.tape_c, tape.comp_c);
    scatter(tape, tape.comp_c, out.rgb_c, out.acc_c);
    run_pass(tape.cones, tape.edges_f, z_shape, z_texture, threads, tape.tape_f, tape.comp_f);
    scatter(tape, tape.comp_f, out.rgb_f, out.acc_f);
  }

  // Reverse pass. Upstream gradients are indexed by input pixel; missed
  // pixels are constants and their upstream is ignored. Accumulates into g.
  void backward_batch(const BatchTape& tape, const MatX<T>& d_rgb_c, const VecX<T>& d_acc_c,
                      const MatX<T>& d_rgb_f, const VecX<T>& d_acc_f,
                      typename Field<T>::Grads& g) const {
    if (tape.cones.empty()) return;
    if (!tape.valid) throw InvalidArgument("state error: backward_batch before render");
    backward_pass(tape, tape.tape_f, tape.comp_f, tape.edges_f, d_rgb_f, d_acc_f, g);
    backward_pass(tape, tape.tape_c, tape.comp_c, tape.edges_c, d_rgb_c, d_acc_c, g);
  }

  // Single-pixel convenience wrapper.
  RenderOutput render_pixel(const Cone& cone, uint64_t seed, uint64_t salt, uint64_t pixel_id,
                            const VecX<T>& z_shape, const VecX<T>& z_texture) const {
    BatchTape tape;
    BatchOutput out;
    render_batch({cone}, {pixel_id}, seed, salt, z_shape, z_texture, 1, tape, out);
    RenderOutput r;
    r.hit = out.hit[0] != 0;
    r.rgb_coarse = out.rgb_c.row(0).transpose().template cast<double>();
    r.rgb_fine = out.rgb_f.row(0).transpose().template cast<double>();
    r.acc_coarse = static_cast<double>(out.acc_c[0]);
    r.acc_fine = static_cast<double>(out.acc_f[0]);
    return r;
  }

 private:
  void init_output(int p_count, BatchOutput& out) const {
    out.rgb_c = MatX<T>::Zero(p_count, 3);
    out.rgb_f = MatX<T>::Zero(p_count, 3);
    out.acc_c = VecX<T>::Zero(p_count);
    out.acc_f = VecX<T>::Zero(p_count);
    out.hit.assign(static_cast<size_t>(p_count), 0);
  }

  // Encode every bin of every hit pixel and run one batched field forward,
  // then composite per pixel.
  void run_pass(const std::vector<Cone>& cones, const Eigen::MatrixXd& edges,
                const VecX<T>& z_shape, const VecX<T>& z_texture, int threads,
                typename Field<T>::Tape& ftape, std::vector<CompositeResult<T>>& comp) const {
    const int h_count = static_cast<int>(cones.size());
    const int n = static_cast<int>(edges.cols()) - 1;
    const FieldConfig& fc = field_->config();
    using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor ipe(static_cast<Eigen::Index>(h_count) * n, fc.ipe_dim());
    RowMajor dirf(static_cast<Eigen::Index>(h_count) * n, fc.dir_dim());

    parallel_for_chunks(h_count, threads, [&](int begin, int end, int) {
      std::vector<T> dbuf(static_cast<size_t>(fc.dir_dim()));
      for (int h = begin; h < end; ++h) {
        dir_encode_into<T>(cones[h].dir, fc.l_dir, dbuf.data());
        for (int i = 0; i < n; ++i) {
          const Eigen::Index row = static_cast<Eigen::Index>(h) * n + i;
          const GaussianSegment gs = frustum_gaussian(cones[h], edges(h, i), edges(h, i + 1));
          ipe_encode_into<T>(gs.mean, gs.cov_diag(), fc.l_pos, ipe.row(row).data());
          for (int d = 0; d < fc.dir_dim(); ++d) dirf(row, d) = dbuf[d];
        }
      }
    });

    field_->forward(MatX<T>(ipe), MatX<T>(dirf), z_shape, z_texture, ftape);

    comp.assign(static_cast<size_t>(h_count), CompositeResult<T>());
    for (int h = 0; h < h_count; ++h) {
      const VecX<T> sig = ftape.shape.sigma.segment(static_cast<Eigen::Index>(h) * n, n);
      const MatX<T> rgb = ftape.texture.rgb.middleRows(static_cast<Eigen::Index>(h) * n, n);
      const VecX<T> e = edges.row(h).transpose().template cast<T>();
      comp[h] = composite(sig, rgb, e);
    }
  }

  void scatter(const BatchTape& tape, const std::vector<CompositeResult<T>>& comp, MatX<T>& rgb,
               VecX<T>& acc) const {
    for (size_t p = 0; p < tape.hit_index.size(); ++p) {
      const int h = tape.hit_index[p];
      if (h < 0) continue;
      rgb.row(p) = comp[h].rgb.transpose();
      acc[p] = comp[h].acc;
    }
  }

  void backward_pass(const BatchTape& tape, const typename Field<T>::Tape& ftape,
                     const std::vector<CompositeResult<T>>& comp, const Eigen::MatrixXd& edges,
                     const MatX<T>& d_rgb, const VecX<T>& d_acc,
                     typename Field<T>::Grads& g) const {
    const int h_count = static_cast<int>(tape.cones.size());
    const int n = static_cast<int>(edges.cols()) - 1;
    VecX<T> d_sigma = VecX<T>::Zero(static_cast<Eigen::Index>(h_count) * n);
    MatX<T> d_c = MatX<T>::Zero(static_cast<Eigen::Index>(h_count) * n, 3);

    for (size_t p = 0; p < tape.hit_index.size(); ++p) {
      const int h = tape.hit_index[p];
      if (h < 0) continue;
      const MatX<T> rgb = ftape.texture.rgb.middleRows(static_cast<Eigen::Index>(h) * n, n);
      const VecX<T> e = edges.row(h).transpose().template cast<T>();
      VecX<T> ds;
      MatX<T> dc;
      const Eigen::Matrix<T, 3, 1> up_rgb = d_rgb.row(p).transpose();
      composite_backward(comp[h], rgb, e, up_rgb, d_acc[p], ds, dc);
      d_sigma.segment(static_cast<Eigen::Index>(h) * n, n) = ds;
      d_c.middleRows(static_cast<Eigen::Index>(h) * n, n) = dc;
    }
    field_->backward(ftape, d_sigma, d_c, g);
  }

  const Field<T>* field_;
  RenderConfig cfg_;
};

// Full-view render (evaluation path): every pixel of a view, chunked to
// bound tape memory. Returns the fine RGB image and accumulation map.
struct ViewRender {
  Image rgb;  // H x W x 3
  Image acc;  // H x W x 1
};

template <typename T>
ViewRender render_view(const Field<T>& field, const RenderConfig& cfg, const Intrinsics& k,
                       const Mat4& cam_pose_canonical, int width, int height,
                       const VecX<T>& z_shape, const VecX<T>& z_texture, uint64_t seed,
                       int threads) {
  Renderer<T> renderer(field, cfg);
  ViewRender view;
  view.rgb = Image::zeros(width, height, 3);
  view.acc = Image::zeros(width, height, 1);

  const int chunk = 4096;
  const int total = width * height;
  for (int start = 0; start < total; start += chunk) {
    const int count = std::min(chunk, total - start);
    std::vector<Cone> cones(static_cast<size_t>(count));
    std::vector<uint64_t> ids(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int pix = start + i;
      const int x = pix % width;
      const int y = pix / width;
      cones[i] = pixel_cone(x + 0.5, y + 0.5, k, cam_pose_canonical);
      ids[i] = static_cast<uint64_t>(pix);
    }
    typename Renderer<T>::BatchTape tape;
    typename Renderer<T>::BatchOutput out;
    renderer.render_batch(cones, ids, seed, 0, z_shape, z_texture, threads, tape, out);
    for (int i = 0; i < count; ++i) {
      const int pix = start + i;
      const int x = pix % width;
      const int y = pix / width;
      for (int c = 0; c < 3; ++c) {
        view.rgb.at(x, y, c) = std::clamp(static_cast<float>(out.rgb_f(i, c)), 0.0f, 1.0f);
      }
      view.acc.at(x, y, 0) = std::clamp(static_cast<float>(out.acc_f[i]), 0.0f, 1.0f);
    }
  }
  return view;
}

}  // namespace carfield
