#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "carfield/checkpoint.hpp"
#include "carfield/config.hpp"
#include "carfield/encoder.hpp"
#include "carfield/field.hpp"
#include "carfield/renderer.hpp"
#include "carfield/sample.hpp"

namespace carfield {

struct StepStats {
  int step = 0;       // 0-based index of the completed step
  double lr = 0.0;    // learning rate applied by this step
  double loss = 0.0;  // total
  double l_r = 0.0;   // photometric term
  double l_s = 0.0;   // segmentation term
  double grad_norm = 0.0;  // global L2 over all parameter gradients
  double ms = 0.0;         // wall time of the step
  std::optional<double> psnr;  // probe-view PSNR if probed this step
};

// Owns the model pair (field + encoder), the optimizer, and the step loop:
// sample a patch, encode to latents, sample a pixel batch, render, loss,
// backward through renderer -> field -> encoder, one optimizer update.
class Trainer {
 public:
  // log_path: JSONL step log ("" = none). checkpoint_dir: periodic
  // checkpoint directory ("" = none; cadence from config.checkpoint_every).
  Trainer(TrainConfig cfg, std::vector<TrainingSample> data, std::string log_path = "",
          std::string checkpoint_dir = "");

  StepStats step();  // one optimization step; throws NumericError on NaN
  void run();        // remaining steps with logging and periodic checkpoints

  double probe_psnr();  // masked probe-view PSNR under a jitter-free render
  Checkpoint make_checkpoint();

  Field<float>& field() { return field_; }
  Encoder<float>& encoder() { return encoder_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<TrainingSample>& data() const { return data_; }
  int steps_done() const { return step_; }

 private:
  void write_log(const StepStats& s);

  TrainConfig cfg_;
  std::vector<TrainingSample> data_;
  std::vector<std::string> instances_;     // first-appearance order
  std::vector<int> instance_of_record_;    // record -> index into instances_
  std::vector<std::vector<int>> views_of_; // instance -> record indices
  Field<float> field_;
  Encoder<float> encoder_;
  Renderer<float> renderer_;
  std::vector<Param<float>*> all_params_;
  RAdam<float> opt_;
  int step_ = 0;
  std::string checkpoint_dir_;
  std::ofstream log_;
};

// Second-stage refinement: latents detach from the encoder and become free
// parameters, optimized jointly with the field weights against the target
// patches. The encoder itself is untouched.
struct TtoConfig {
  RenderConfig render;
  OptimConfig optim;
  double lambda_c = 0.1;
  double lambda_s = 0.2;
  int batch_pixels = 1024;
  int steps = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  int probe_every = 0;  // PSNR probe cadence against patches[probe_index]
  int probe_index = 0;
};

struct TtoResult {
  Eigen::VectorXf z_shape;
  Eigen::VectorXf z_texture;
  std::vector<StepStats> history;
};

TtoResult test_time_optimize(Field<float>& field, const Eigen::VectorXf& z_shape0,
                             const Eigen::VectorXf& z_texture0,
                             const std::vector<TrainingSample>& patches, const TtoConfig& cfg);

}  // namespace carfield
