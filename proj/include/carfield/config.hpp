#pragma once

#include <cstdint>
#include <string>

#include "carfield/encoder.hpp"
#include "carfield/field.hpp"
#include "carfield/optim.hpp"
#include "carfield/renderer.hpp"

#include "json.hpp"

namespace carfield {

// Everything one training run needs, minus file paths (those belong to the
// command layer). Serializes to/from strict JSON: unknown keys anywhere are
// a ConfigError naming the full key path.
struct TrainConfig {
  FieldConfig field;
  EncoderConfig encoder;
  RenderConfig render;
  OptimConfig optim;
  double lambda_c = 0.1;  // coarse balance
  double lambda_s = 0.2;  // segmentation balance
  int batch_pixels = 1024;
  int steps = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
  bool multi_view = false;
  int log_every = 25;    // JSONL cadence (steps)
  int probe_every = 0;   // probe-view PSNR cadence; 0 disables
  int probe_index = 0;   // dataset record used as the probe view
  int checkpoint_every = 0;  // periodic checkpoint cadence; 0 disables

  void validate() const;
};

// Named baselines: "desk" fits an interactive single-core budget, "paper"
// carries the full-scale defaults. Overridable key-by-key from JSON.
TrainConfig preset_by_name(const std::string& name);

nlohmann::json train_config_to_json(const TrainConfig& cfg);

// Parses a run config. An optional "preset" key picks the baseline; any
// other present key overrides that baseline field-by-field. Unknown keys,
// wrong types, and invalid values all throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

}  // namespace carfield
