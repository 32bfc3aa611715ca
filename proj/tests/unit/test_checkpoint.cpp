#include "carfield/checkpoint.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "carfield/encoder.hpp"
#include "carfield/field.hpp"
#include "test_support.hpp"

namespace carfield {
namespace {

using test::TmpDir;

FieldConfig tiny_field() {
  FieldConfig c;
  c.hidden = 16;
  c.shape_depth = 2;
  c.skip_layer = 1;
  c.texture_depth = 1;
  c.l_pos = 3;
  c.l_dir = 2;
  return c;
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.resolution = 16;
  c.channels = {4, 8};
  c.latent_dim = 16;
  return c;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config_json = R"({"alpha":1,"beta":[2,3]})";
  CheckpointTensor m;
  m.dims = {2, 3};
  m.data = {1.5f, -2.0f, 0.0f, 4.25f, 1e-7f, -3.5f};
  c.tensors["layer.w"] = m;
  put_latents(c, "car7", Eigen::VectorXf::LinSpaced(4, 0.f, 3.f),
              Eigen::VectorXf::Constant(4, -1.f));
  return c;
}

TEST(Checkpoint, RoundTripIsLossless) {
  TmpDir tmp;
  const Checkpoint a = sample_checkpoint();
  save_checkpoint(tmp.file("a.ckpt"), a);
  const Checkpoint b = load_checkpoint(tmp.file("a.ckpt"));
  EXPECT_EQ(b.config_json, a.config_json);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    ASSERT_TRUE(b.tensors.count(name)) << name;
    EXPECT_EQ(b.tensors.at(name).dims, t.dims);
    EXPECT_EQ(b.tensors.at(name).data, t.data);  // bitwise for exact floats
  }
  auto [zs, zt] = get_latents(b, "car7");
  EXPECT_EQ(zs(3), 3.0f);
  EXPECT_EQ(zt(0), -1.0f);
}

TEST(Checkpoint, BytesAreDeterministic) {
  TmpDir tmp;
  const Checkpoint a = sample_checkpoint();
  save_checkpoint(tmp.file("a.ckpt"), a);
  // Same logical content assembled in a different insertion order.
  Checkpoint b;
  b.config_json = a.config_json;
  for (auto it = a.tensors.rbegin(); it != a.tensors.rend(); ++it) {
    b.tensors[it->first] = it->second;
  }
  save_checkpoint(tmp.file("b.ckpt"), b);
  EXPECT_EQ(slurp(tmp.file("a.ckpt")), slurp(tmp.file("b.ckpt")));
}

TEST(Checkpoint, FieldAndEncoderRoundTrip) {
  TmpDir tmp;
  Field<float> field(tiny_field());
  field.init(7);
  Encoder<float> enc(tiny_encoder());
  enc.init(9);
  Checkpoint c;
  c.config_json = "{}";
  put_params(c, "field.", field.params());
  put_params(c, "", enc.params());
  save_checkpoint(tmp.file("m.ckpt"), c);

  const Checkpoint loaded = load_checkpoint(tmp.file("m.ckpt"));
  Field<float> field2(tiny_field());
  field2.init(1234);  // different init seed
  Encoder<float> enc2(tiny_encoder());
  enc2.init(5678);
  take_params(loaded, "field.", field2.params());
  take_params(loaded, "", enc2.params());
  for (std::size_t i = 0; i < field.params().size(); ++i) {
    EXPECT_TRUE(field.params()[i]->value == field2.params()[i]->value)
        << field.params()[i]->name;
  }
  for (std::size_t i = 0; i < enc.params().size(); ++i) {
    EXPECT_TRUE(enc.params()[i]->value == enc2.params()[i]->value) << enc.params()[i]->name;
  }
}

TEST(Checkpoint, ShapeMismatchIsAnError) {
  TmpDir tmp;
  Field<float> field(tiny_field());
  field.init(7);
  Checkpoint c;
  c.config_json = "{}";
  put_params(c, "field.", field.params());
  save_checkpoint(tmp.file("m.ckpt"), c);
  const Checkpoint loaded = load_checkpoint(tmp.file("m.ckpt"));

  FieldConfig wide = tiny_field();
  wide.hidden = 24;
  Field<float> other(wide);
  other.init(7);
  try {
    take_params(loaded, "field.", other.params());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("mismatched shape"), std::string::npos);
  }
}

TEST(Checkpoint, MissingTensorIsAnError) {
  Checkpoint c;
  c.config_json = "{}";
  Field<float> field(tiny_field());
  field.init(7);
  try {
    take_params(c, "field.", field.params());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("missing tensor field."), std::string::npos);
  }
  EXPECT_THROW(get_latents(c, "nope"), DataError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  TmpDir tmp;
  save_checkpoint(tmp.file("m.ckpt"), sample_checkpoint());
  std::vector<char> bytes = slurp(tmp.file("m.ckpt"));

  {  // flip a byte inside the config JSON region
    std::vector<char> bad = bytes;
    bad[8 + 4 + 8 + 4 + 2] ^= 0x40;
    std::ofstream f(tmp.file("bad.ckpt"), std::ios::binary);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    f.close();
    EXPECT_THROW(load_checkpoint(tmp.file("bad.ckpt")), DataError);
  }
  {  // truncate mid-table
    std::ofstream f(tmp.file("cut.ckpt"), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    f.close();
    EXPECT_THROW(load_checkpoint(tmp.file("cut.ckpt")), DataError);
  }
  {  // bad magic
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    std::ofstream f(tmp.file("mag.ckpt"), std::ios::binary);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    f.close();
    EXPECT_THROW(load_checkpoint(tmp.file("mag.ckpt")), DataError);
  }
  {  // unsupported version
    std::vector<char> bad = bytes;
    bad[8] = 99;
    std::ofstream f(tmp.file("ver.ckpt"), std::ios::binary);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    f.close();
    EXPECT_THROW(load_checkpoint(tmp.file("ver.ckpt")), DataError);
  }
  {  // trailing junk
    std::vector<char> bad = bytes;
    bad.push_back('\0');
    std::ofstream f(tmp.file("tail.ckpt"), std::ios::binary);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    f.close();
    EXPECT_THROW(load_checkpoint(tmp.file("tail.ckpt")), DataError);
  }
  EXPECT_THROW(load_checkpoint(tmp.file("does_not_exist.ckpt")), DataError);
}

TEST(Checkpoint, ListsInstancesSorted) {
  Checkpoint c;
  put_latents(c, "zeta", Eigen::VectorXf::Zero(2), Eigen::VectorXf::Zero(2));
  put_latents(c, "alpha", Eigen::VectorXf::Zero(2), Eigen::VectorXf::Zero(2));
  put_latents(c, "mid", Eigen::VectorXf::Zero(2), Eigen::VectorXf::Zero(2));
  const std::vector<std::string> want = {"alpha", "mid", "zeta"};
  EXPECT_EQ(checkpoint_instances(c), want);
}

TEST(Checkpoint, Fnv1aMatchesReferenceVectors) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a64("", 0), 14695981039346656037ull);
  EXPECT_EQ(fnv1a64("a", 1), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar", 6), 0x85944171f73967e8ull);
}

}  // namespace
}  // namespace carfield
