#include "carfield/config.hpp"

#include <fstream>

#include "carfield/errors.hpp"
#include "carfield/json_strict.hpp"

namespace carfield {
namespace {

using nlohmann::json;

// Shared strict walker with the config error flavor.
class StrictObject : public StrictWalker<ConfigError> {
 public:
  StrictObject(const json& j, std::string path)
      : StrictWalker<ConfigError>(j, "config: ", std::move(path)) {}
};

void read_field(const json& j, const std::string& path, FieldConfig& cfg) {
  StrictObject o(j, path);
  o.read_int("hidden", cfg.hidden);
  o.read_int("shape_depth", cfg.shape_depth);
  o.read_int("skip_layer", cfg.skip_layer);
  o.read_int("texture_depth", cfg.texture_depth);
  o.read_int("l_pos", cfg.l_pos);
  o.read_int("l_dir", cfg.l_dir);
  o.finish();
}

void read_encoder(const json& j, const std::string& path, EncoderConfig& cfg) {
  StrictObject o(j, path);
  o.read_int("resolution", cfg.resolution);
  o.read_int_list("channels", cfg.channels);
  o.read_int("latent_dim", cfg.latent_dim);
  o.finish();
}

void read_render(const json& j, const std::string& path, RenderConfig& cfg) {
  StrictObject o(j, path);
  o.read_int("n_coarse", cfg.n_coarse);
  o.read_int("n_fine", cfg.n_fine);
  o.read_bool("jitter", cfg.jitter);
  o.read_double("t_eps", cfg.t_eps);
  o.read_double("weight_floor", cfg.weight_floor);
  o.finish();
}

void read_optim(const json& j, const std::string& path, OptimConfig& cfg) {
  StrictObject o(j, path);
  o.read_double("beta1", cfg.beta1);
  o.read_double("beta2", cfg.beta2);
  o.read_double("lr", cfg.lr);
  o.read_double("eps", cfg.eps);
  o.read_double("lr_final", cfg.lr_final);
  o.read_i64("step_max", cfg.step_max);
  o.finish();
}

}  // namespace

void TrainConfig::validate() const {
  try {
    field.validate();
    encoder.validate();
    render.validate();
    optim.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (lambda_c < 0 || lambda_s < 0) {
    throw ConfigError("config: lambda_c and lambda_s must be non-negative");
  }
  if (batch_pixels < 1) throw ConfigError("config: batch_pixels must be positive");
  if (steps < 1) throw ConfigError("config: steps must be positive");
  if (threads < 1) throw ConfigError("config: threads must be positive");
  if (log_every < 1) throw ConfigError("config: log_every must be positive");
  if (probe_every < 0 || probe_index < 0 || checkpoint_every < 0) {
    throw ConfigError("config: probe_every, probe_index, checkpoint_every must be non-negative");
  }
  if (encoder.latent_dim != field.hidden) {
    throw ConfigError(strf("config: encoder.latent_dim %d must equal field.hidden %d",
                           encoder.latent_dim, field.hidden));
  }
}

TrainConfig preset_by_name(const std::string& name) {
  if (name == "desk") {
    TrainConfig cfg;
    cfg.field.hidden = 48;
    cfg.field.shape_depth = 3;
    cfg.field.skip_layer = 2;
    cfg.field.texture_depth = 2;
    cfg.field.l_pos = 6;
    cfg.field.l_dir = 4;
    cfg.encoder.latent_dim = 48;
    cfg.render.n_coarse = 24;
    cfg.render.n_fine = 24;
    cfg.batch_pixels = 1024;
    cfg.steps = 2000;
    return cfg;
  }
  if (name == "paper") {
    TrainConfig cfg;  // field/encoder/render struct defaults are full-scale
    cfg.batch_pixels = 3072;
    cfg.steps = 500000;
    return cfg;
  }
  throw ConfigError("config: unknown preset '" + name + "' (expected \"desk\" or \"paper\")");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["field"] = {{"hidden", cfg.field.hidden},
                {"shape_depth", cfg.field.shape_depth},
                {"skip_layer", cfg.field.skip_layer},
                {"texture_depth", cfg.field.texture_depth},
                {"l_pos", cfg.field.l_pos},
                {"l_dir", cfg.field.l_dir}};
  j["encoder"] = {{"resolution", cfg.encoder.resolution},
                  {"channels", cfg.encoder.channels},
                  {"latent_dim", cfg.encoder.latent_dim}};
  j["render"] = {{"n_coarse", cfg.render.n_coarse},
                 {"n_fine", cfg.render.n_fine},
                 {"jitter", cfg.render.jitter},
                 {"t_eps", cfg.render.t_eps},
                 {"weight_floor", cfg.render.weight_floor}};
  j["optim"] = {{"beta1", cfg.optim.beta1}, {"beta2", cfg.optim.beta2},
                {"lr", cfg.optim.lr},       {"eps", cfg.optim.eps},
                {"lr_final", cfg.optim.lr_final}, {"step_max", cfg.optim.step_max}};
  j["lambda_c"] = cfg.lambda_c;
  j["lambda_s"] = cfg.lambda_s;
  j["batch_pixels"] = cfg.batch_pixels;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["mode"] = cfg.multi_view ? "multi-view" : "single-view";
  j["log_every"] = cfg.log_every;
  j["probe_every"] = cfg.probe_every;
  j["probe_index"] = cfg.probe_index;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  StrictObject top(j, "");
  std::string preset;
  top.read_string("preset", preset);
  TrainConfig cfg = preset.empty() ? TrainConfig{} : preset_by_name(preset);

  if (const json* f = top.child("field")) read_field(*f, "field", cfg.field);
  if (const json* e = top.child("encoder")) read_encoder(*e, "encoder", cfg.encoder);
  if (const json* r = top.child("render")) read_render(*r, "render", cfg.render);
  if (const json* o = top.child("optim")) read_optim(*o, "optim", cfg.optim);
  top.read_double("lambda_c", cfg.lambda_c);
  top.read_double("lambda_s", cfg.lambda_s);
  top.read_int("batch_pixels", cfg.batch_pixels);
  top.read_int("steps", cfg.steps);
  top.read_u64("seed", cfg.seed);
  top.read_int("threads", cfg.threads);
  std::string mode = cfg.multi_view ? "multi-view" : "single-view";
  top.read_string("mode", mode);
  if (mode == "single-view") {
    cfg.multi_view = false;
  } else if (mode == "multi-view") {
    cfg.multi_view = true;
  } else {
    throw ConfigError("config: mode must be \"single-view\" or \"multi-view\", got \"" + mode +
                      "\"");
  }
  top.read_int("log_every", cfg.log_every);
  top.read_int("probe_every", cfg.probe_every);
  top.read_int("probe_index", cfg.probe_index);
  top.read_int("checkpoint_every", cfg.checkpoint_every);
  top.finish();
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return train_config_from_json(j);
}

}  // namespace carfield
