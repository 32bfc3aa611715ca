#include "carfield/config.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

namespace carfield {
namespace {

using nlohmann::json;
using test::TmpDir;

TEST(Config, DefaultsValidateAndRoundTrip) {
  TrainConfig cfg;
  cfg.validate();
  const json j = train_config_to_json(cfg);
  const TrainConfig back = train_config_from_json(j);
  EXPECT_EQ(train_config_to_json(back).dump(), j.dump());
}

TEST(Config, PresetsAreValidAndDistinct) {
  const TrainConfig desk = preset_by_name("desk");
  const TrainConfig paper = preset_by_name("paper");
  desk.validate();
  paper.validate();
  EXPECT_EQ(desk.field.hidden, 48);
  EXPECT_EQ(desk.encoder.latent_dim, 48);
  EXPECT_EQ(desk.render.n_coarse, 24);
  EXPECT_EQ(desk.batch_pixels, 1024);
  EXPECT_EQ(desk.steps, 2000);
  EXPECT_EQ(paper.field.hidden, 128);
  EXPECT_EQ(paper.field.shape_depth, 8);
  EXPECT_EQ(paper.batch_pixels, 3072);
  EXPECT_EQ(paper.steps, 500000);
  EXPECT_THROW(preset_by_name("large"), ConfigError);
}

TEST(Config, PresetThenOverride) {
  const json j = {{"preset", "desk"}, {"render", {{"n_fine", 8}}}, {"steps", 12}};
  const TrainConfig cfg = train_config_from_json(j);
  EXPECT_EQ(cfg.field.hidden, 48);   // from preset
  EXPECT_EQ(cfg.render.n_fine, 8);   // overridden
  EXPECT_EQ(cfg.render.n_coarse, 24);
  EXPECT_EQ(cfg.steps, 12);
}

TEST(Config, UnknownKeysAreNamedWithFullPath) {
  {
    const json j = {{"field", {{"hidden", 32}, {"hiden", 1}}}};
    try {
      train_config_from_json(j);
      FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("field.hiden"), std::string::npos) << e.what();
    }
  }
  {
    const json j = {{"optim", {{"learning_rate", 0.1}}}};
    try {
      train_config_from_json(j);
      FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("optim.learning_rate"), std::string::npos);
    }
  }
  {
    const json j = {{"stepz", 7}};
    try {
      train_config_from_json(j);
      FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("stepz"), std::string::npos);
    }
  }
}

TEST(Config, TypeErrorsNameThePath) {
  const json j = {{"optim", {{"lr", "fast"}}}};
  try {
    train_config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("optim.lr"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json(json{{"encoder", {{"channels", {4, "x"}}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"render", {{"jitter", 1}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"seed", -4}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json::array()), ConfigError);
}

TEST(Config, ModeStringMapsToSupervision) {
  EXPECT_FALSE(train_config_from_json(json{{"mode", "single-view"}}).multi_view);
  EXPECT_TRUE(train_config_from_json(json{{"mode", "multi-view"}}).multi_view);
  EXPECT_THROW(train_config_from_json(json{{"mode", "stereo"}}), ConfigError);
  TrainConfig cfg;
  cfg.multi_view = true;
  EXPECT_EQ(train_config_to_json(cfg)["mode"], "multi-view");
}

TEST(Config, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(train_config_from_json(json{{"lambda_c", -0.5}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"steps", 0}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"batch_pixels", 0}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"field", {{"hidden", -1}}}}), ConfigError);
  // Latent width must match the field width.
  EXPECT_THROW(train_config_from_json(json{{"encoder", {{"latent_dim", 64}}}}), ConfigError);
  const TrainConfig ok =
      train_config_from_json(json{{"encoder", {{"latent_dim", 32}}}, {"field", {{"hidden", 32}}}});
  EXPECT_EQ(ok.encoder.latent_dim, ok.field.hidden);
}

TEST(Config, LoadFromFile) {
  TmpDir tmp;
  {
    std::ofstream f(tmp.file("run.json"));
    f << R"({"preset": "desk", "seed": 42, "render": {"jitter": false}})";
  }
  const TrainConfig cfg = load_train_config(tmp.file("run.json"));
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_FALSE(cfg.render.jitter);
  EXPECT_EQ(cfg.field.hidden, 48);

  {
    std::ofstream f(tmp.file("broken.json"));
    f << "{\"preset\": ";
  }
  EXPECT_THROW(load_train_config(tmp.file("broken.json")), ConfigError);
  EXPECT_THROW(load_train_config(tmp.file("absent.json")), DataError);
}

}  // namespace
}  // namespace carfield
