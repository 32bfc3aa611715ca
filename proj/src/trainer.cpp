#include "carfield/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <unordered_map>

#include "carfield/losses.hpp"
#include "carfield/log.hpp"
#include "carfield/metrics.hpp"
#include "carfield/rng.hpp"

#include "json.hpp"

namespace carfield {
namespace {

std::vector<Param<float>*> concat_params(Field<float>& field, Encoder<float>& encoder) {
  std::vector<Param<float>*> out = field.params();
  for (Param<float>* p : encoder.params()) out.push_back(p);
  return out;
}

double global_grad_norm(const std::vector<Param<float>*>& params) {
  double s = 0.0;
  for (const Param<float>* p : params) s += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(s);
}

// One supervised batch against one view: uniform pixel draw over the whole
// patch (foreground and background), render, loss, gradient back to the
// field parameters and incoming latents. Shared by Trainer and TTO.
struct BatchResult {
  LossBreakdown<float> loss;
  typename Field<float>::Grads field_grads;
};

BatchResult supervised_batch(const Field<float>& field, const Renderer<float>& renderer,
                             const TrainingSample& view, const VecX<float>& z_shape,
                             const VecX<float>& z_texture, int batch_pixels, double lambda_c,
                             double lambda_s, std::uint64_t seed, std::uint64_t step_id,
                             int threads) {
  const int w = view.patch.width;
  const int h = view.patch.height;
  Rng pix_rng({seed, stream::kPixels, step_id});
  std::vector<Cone> cones(static_cast<std::size_t>(batch_pixels));
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(batch_pixels));
  MatX<float> gt(batch_pixels, 3);
  VecX<float> alpha(batch_pixels);
  for (int i = 0; i < batch_pixels; ++i) {
    const int x = pix_rng.uniform_int(w);
    const int y = pix_rng.uniform_int(h);
    ids[i] = static_cast<std::uint64_t>(y) * static_cast<std::uint64_t>(w) +
             static_cast<std::uint64_t>(x);
    cones[i] = pixel_cone(x + 0.5, y + 0.5, view.k, view.canonical_from_camera);
    for (int c = 0; c < 3; ++c) gt(i, c) = view.patch.at(x, y, c);
    alpha[i] = view.mask.at(x, y, 0) >= 0.5f ? 1.0f : 0.0f;
  }

  typename Renderer<float>::BatchTape tape;
  typename Renderer<float>::BatchOutput out;
  renderer.render_batch(cones, ids, seed, step_id, z_shape, z_texture, threads, tape, out);

  BatchResult r;
  r.loss = compute_losses<float>(out.rgb_c, out.rgb_f, out.acc_c, out.acc_f, gt, alpha,
                                 static_cast<float>(lambda_c), static_cast<float>(lambda_s));
  MatX<float> d_rgb_c, d_rgb_f;
  VecX<float> d_acc_c, d_acc_f;
  loss_backward<float>(out.rgb_c, out.rgb_f, out.acc_c, out.acc_f, gt, alpha,
                       static_cast<float>(lambda_c), static_cast<float>(lambda_s), d_rgb_c,
                       d_rgb_f, d_acc_c, d_acc_f);
  r.field_grads = field.alloc_grads();
  renderer.backward_batch(tape, d_rgb_c, d_acc_c, d_rgb_f, d_acc_f, r.field_grads);
  return r;
}

double masked_probe_psnr(const Field<float>& field, RenderConfig render_cfg,
                         const TrainingSample& probe, const VecX<float>& z_shape,
                         const VecX<float>& z_texture, std::uint64_t seed, int threads) {
  render_cfg.jitter = false;  // deterministic evaluation path
  const ViewRender v = render_view(field, render_cfg, probe.k, probe.canonical_from_camera,
                                   probe.patch.width, probe.patch.height, z_shape, z_texture,
                                   seed, threads);
  const PsnrResult p = psnr_masked(v.rgb, probe.patch, probe.mask);
  return p.infinite ? std::numeric_limits<double>::infinity() : p.db;
}

nlohmann::json stats_to_json(const StepStats& s) {
  nlohmann::json j{{"step", s.step}, {"lr", s.lr},       {"loss", s.loss}, {"l_r", s.l_r},
                   {"l_s", s.l_s},   {"grad_norm", s.grad_norm}, {"ms", s.ms}};
  if (s.psnr) j["psnr"] = *s.psnr;
  return j;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<TrainingSample> data, std::string log_path,
                 std::string checkpoint_dir)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      field_(cfg_.field),
      encoder_(cfg_.encoder),
      renderer_(field_, cfg_.render),
      all_params_(concat_params(field_, encoder_)),
      opt_(all_params_, cfg_.optim),
      checkpoint_dir_(std::move(checkpoint_dir)) {
  cfg_.validate();
  if (data_.empty()) throw DataError("training dataset is empty");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const TrainingSample& s = data_[i];
    if (s.patch.channels != 3 || s.mask.channels != 1 || s.mask.width != s.patch.width ||
        s.mask.height != s.patch.height) {
      throw InvalidArgument(strf("training record %zu: patch/mask shapes disagree", i));
    }
    auto [it, fresh] = index.emplace(s.instance, static_cast<int>(instances_.size()));
    if (fresh) {
      instances_.push_back(s.instance);
      views_of_.emplace_back();
    }
    instance_of_record_.push_back(it->second);
    views_of_[it->second].push_back(static_cast<int>(i));
  }
  if (cfg_.multi_view) {
    bool any_pair = false;
    for (const auto& v : views_of_) any_pair |= v.size() >= 2;
    if (!any_pair) {
      throw ConfigError(
          "multi-view supervision needs cross-frame instance labels "
          "(no instance has two or more views)");
    }
  }
  if (cfg_.probe_every > 0 && cfg_.probe_index >= static_cast<int>(data_.size())) {
    throw ConfigError(strf("config: probe_index %d out of range (dataset has %zu records)",
                           cfg_.probe_index, data_.size()));
  }
  field_.init(cfg_.seed);
  encoder_.init(cfg_.seed);
  if (!log_path.empty()) {
    log_.open(log_path, std::ios::trunc);
    if (!log_) throw DataError("trainer: cannot open log file " + log_path);
  }
}

StepStats Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const int s = step_;

  Rng patch_rng({cfg_.seed, stream::kPatch, static_cast<std::uint64_t>(s)});
  int enc_idx = patch_rng.uniform_int(static_cast<int>(data_.size()));
  int sup_idx = enc_idx;
  if (cfg_.multi_view) {
    const std::vector<int>& views = views_of_[instance_of_record_[enc_idx]];
    sup_idx = views[patch_rng.uniform_int(static_cast<int>(views.size()))];
  }

  const TrainingSample& enc_view = data_[enc_idx];
  const EncoderInput ein =
      prepare_encoder_input(enc_view.patch, enc_view.mask, cfg_.encoder.resolution);
  typename Encoder<float>::Tape enc_tape;
  const LatentPair<float> z = encoder_.encode(ein.masked, ein.mask, enc_tape);

  BatchResult batch = supervised_batch(field_, renderer_, data_[sup_idx], z.z_shape, z.z_texture,
                                       cfg_.batch_pixels, cfg_.lambda_c, cfg_.lambda_s, cfg_.seed,
                                       static_cast<std::uint64_t>(s), cfg_.threads);

  field_.zero_grad();
  encoder_.zero_grad();
  field_.accumulate(batch.field_grads);
  typename Encoder<float>::Grads eg = encoder_.alloc_grads();
  encoder_.backward(enc_tape, batch.field_grads.d_z_shape, batch.field_grads.d_z_texture, eg);
  encoder_.accumulate(eg);

  StepStats st;
  st.step = s;
  st.lr = opt_.current_lr();
  st.loss = batch.loss.total;
  st.l_r = batch.loss.render;
  st.l_s = batch.loss.seg;
  st.grad_norm = global_grad_norm(all_params_);
  if (!std::isfinite(st.loss) || !std::isfinite(st.grad_norm)) {
    throw NumericError(strf("non-finite loss at step %d (loss=%g grad_norm=%g)", s, st.loss,
                            st.grad_norm));
  }
  opt_.step();
  ++step_;

  if (cfg_.probe_every > 0 && (step_ % cfg_.probe_every == 0 || step_ == cfg_.steps)) {
    st.psnr = probe_psnr();
  }
  st.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return st;
}

void Trainer::run() {
  while (step_ < cfg_.steps) {
    const StepStats st = step();
    if (st.step % cfg_.log_every == 0 || step_ == cfg_.steps || st.psnr) write_log(st);
    if (!checkpoint_dir_.empty() && cfg_.checkpoint_every > 0 &&
        step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.steps) {
      const std::filesystem::path p =
          std::filesystem::path(checkpoint_dir_) / strf("step_%06d.ckpt", step_);
      save_checkpoint(p.string(), make_checkpoint());
    }
  }
  if (log_.is_open()) log_.flush();
}

double Trainer::probe_psnr() {
  const TrainingSample& probe = data_[cfg_.probe_index];
  const EncoderInput ein = prepare_encoder_input(probe.patch, probe.mask, cfg_.encoder.resolution);
  typename Encoder<float>::Tape tape;
  const LatentPair<float> z = encoder_.encode(ein.masked, ein.mask, tape);
  return masked_probe_psnr(field_, cfg_.render, probe, z.z_shape, z.z_texture, cfg_.seed,
                           cfg_.threads);
}

Checkpoint Trainer::make_checkpoint() {
  Checkpoint c;
  c.config_json = train_config_to_json(cfg_).dump();
  put_params(c, "field.", field_.params());
  put_params(c, "", encoder_.params());
  for (int i = 0; i < static_cast<int>(instances_.size()); ++i) {
    const TrainingSample& first = data_[views_of_[i].front()];
    const EncoderInput ein =
        prepare_encoder_input(first.patch, first.mask, cfg_.encoder.resolution);
    typename Encoder<float>::Tape tape;
    const LatentPair<float> z = encoder_.encode(ein.masked, ein.mask, tape);
    put_latents(c, instances_[i], z.z_shape, z.z_texture);
  }
  return c;
}

void Trainer::write_log(const StepStats& s) {
  if (!log_.is_open()) return;
  log_ << stats_to_json(s).dump() << "\n";
}

TtoResult test_time_optimize(Field<float>& field, const Eigen::VectorXf& z_shape0,
                             const Eigen::VectorXf& z_texture0,
                             const std::vector<TrainingSample>& patches, const TtoConfig& cfg) {
  if (patches.empty()) throw DataError("test-time optimization needs at least one patch");
  if (z_shape0.size() != z_texture0.size()) {
    throw InvalidArgument("test-time optimization: latent widths disagree");
  }
  if (cfg.steps < 0 || cfg.batch_pixels < 1) {
    throw ConfigError("config: tto steps must be >= 0 and batch_pixels positive");
  }
  if (cfg.probe_index < 0 || cfg.probe_index >= static_cast<int>(patches.size())) {
    throw ConfigError("config: tto probe_index out of range");
  }
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const TrainingSample& p = patches[i];
    if (p.patch.channels != 3 || p.mask.channels != 1 || p.mask.width != p.patch.width ||
        p.mask.height != p.patch.height) {
      throw InvalidArgument(strf("tto patch %zu: patch/mask shapes disagree", i));
    }
  }

  const int dim = static_cast<int>(z_shape0.size());
  Param<float> zs("tto.z_shape", dim, 1);
  Param<float> zt("tto.z_texture", dim, 1);
  zs.value.col(0) = z_shape0;
  zt.value.col(0) = z_texture0;

  std::vector<Param<float>*> params = field.params();
  params.push_back(&zs);
  params.push_back(&zt);
  RAdam<float> opt(params, cfg.optim);
  Renderer<float> renderer(field, cfg.render);

  TtoResult res;
  for (int s = 0; s < cfg.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng patch_rng({cfg.seed, stream::kPatch, static_cast<std::uint64_t>(s)});
    const TrainingSample& view = patches[patch_rng.uniform_int(static_cast<int>(patches.size()))];

    BatchResult batch = supervised_batch(field, renderer, view, zs.value.col(0), zt.value.col(0),
                                         cfg.batch_pixels, cfg.lambda_c, cfg.lambda_s, cfg.seed,
                                         static_cast<std::uint64_t>(s), cfg.threads);

    field.zero_grad();
    zs.zero_grad();
    zt.zero_grad();
    field.accumulate(batch.field_grads);
    zs.grad.col(0) = batch.field_grads.d_z_shape;
    zt.grad.col(0) = batch.field_grads.d_z_texture;

    StepStats st;
    st.step = s;
    st.lr = opt.current_lr();
    st.loss = batch.loss.total;
    st.l_r = batch.loss.render;
    st.l_s = batch.loss.seg;
    st.grad_norm = global_grad_norm(params);
    if (!std::isfinite(st.loss) || !std::isfinite(st.grad_norm)) {
      throw NumericError(strf("non-finite loss at tto step %d", s));
    }
    opt.step();
    if (cfg.probe_every > 0 && ((s + 1) % cfg.probe_every == 0 || s + 1 == cfg.steps)) {
      st.psnr = masked_probe_psnr(field, cfg.render, patches[cfg.probe_index], zs.value.col(0),
                                  zt.value.col(0), cfg.seed, cfg.threads);
    }
    st.ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(st);
  }
  res.z_shape = zs.value.col(0);
  res.z_texture = zt.value.col(0);
  return res;
}

}  // namespace carfield
