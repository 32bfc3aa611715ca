#include "carfield/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace carfield {
namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint32_t kMaxNameLen = 1u << 16;
constexpr std::uint32_t kMaxTensors = 1u << 20;
constexpr std::int64_t kMaxNumel = std::int64_t(1) << 31;

void w_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void w_u8(std::ofstream& f, std::uint8_t v) { w_bytes(f, &v, 1); }
void w_u32(std::ofstream& f, std::uint32_t v) { w_bytes(f, &v, 4); }
void w_u64(std::ofstream& f, std::uint64_t v) { w_bytes(f, &v, 8); }

void r_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n) throw DataError("checkpoint: truncated file");
}
std::uint8_t r_u8(std::ifstream& f) {
  std::uint8_t v;
  r_bytes(f, &v, 1);
  return v;
}
std::uint32_t r_u32(std::ifstream& f) {
  std::uint32_t v;
  r_bytes(f, &v, 4);
  return v;
}
std::uint64_t r_u64(std::ifstream& f) {
  std::uint64_t v;
  r_bytes(f, &v, 8);
  return v;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  w_bytes(f, kMagic, 8);
  w_u32(f, kVersion);
  w_u64(f, fnv1a64(c.config_json.data(), c.config_json.size()));
  if (c.config_json.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("checkpoint: config JSON too large");
  }
  w_u32(f, static_cast<std::uint32_t>(c.config_json.size()));
  w_bytes(f, c.config_json.data(), c.config_json.size());
  w_u32(f, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {  // std::map: sorted, deterministic
    if (name.size() > kMaxNameLen) throw DataError("checkpoint: tensor name too long");
    if (t.dims.empty() || t.dims.size() > 2) {
      throw DataError("checkpoint: tensor " + name + " must have rank 1 or 2");
    }
    if (t.numel() != static_cast<std::int64_t>(t.data.size())) {
      throw DataError("checkpoint: tensor " + name + " dims disagree with payload size");
    }
    w_u32(f, static_cast<std::uint32_t>(name.size()));
    w_bytes(f, name.data(), name.size());
    w_u8(f, kDtypeF32);
    w_u8(f, static_cast<std::uint8_t>(t.dims.size()));
    for (std::int64_t d : t.dims) w_u64(f, static_cast<std::uint64_t>(d));
    w_bytes(f, t.data.data(), t.data.size() * sizeof(float));
  }
  f.flush();
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  r_bytes(f, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("checkpoint: " + path + " is not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r_u32(f);
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t stored_hash = r_u64(f);
  const std::uint32_t json_len = r_u32(f);
  Checkpoint c;
  c.config_json.resize(json_len);
  if (json_len > 0) r_bytes(f, c.config_json.data(), json_len);
  if (fnv1a64(c.config_json.data(), c.config_json.size()) != stored_hash) {
    throw DataError("checkpoint: config hash mismatch (corrupt file?)");
  }
  const std::uint32_t count = r_u32(f);
  if (count > kMaxTensors) throw DataError("checkpoint: implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r_u32(f);
    if (name_len == 0 || name_len > kMaxNameLen) {
      throw DataError("checkpoint: implausible tensor name length");
    }
    std::string name(name_len, '\0');
    r_bytes(f, name.data(), name_len);
    const std::uint8_t dtype = r_u8(f);
    if (dtype != kDtypeF32) throw DataError("checkpoint: tensor " + name + " has unknown dtype");
    const std::uint8_t rank = r_u8(f);
    if (rank < 1 || rank > 2) throw DataError("checkpoint: tensor " + name + " has unsupported rank");
    CheckpointTensor t;
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint64_t dim = r_u64(f);
      if (dim == 0 || dim > static_cast<std::uint64_t>(kMaxNumel)) {
        throw DataError("checkpoint: tensor " + name + " has implausible dimension");
      }
      t.dims.push_back(static_cast<std::int64_t>(dim));
      numel *= static_cast<std::int64_t>(dim);
      if (numel > kMaxNumel) throw DataError("checkpoint: tensor " + name + " is implausibly large");
    }
    t.data.resize(static_cast<std::size_t>(numel));
    r_bytes(f, t.data.data(), t.data.size() * sizeof(float));
    if (!c.tensors.emplace(std::move(name), std::move(t)).second) {
      throw DataError("checkpoint: duplicate tensor name");
    }
  }
  // Require exact end-of-file: trailing garbage means a damaged container.
  char extra;
  f.read(&extra, 1);
  if (f.gcount() != 0) throw DataError("checkpoint: trailing bytes after tensor table");
  return c;
}

void put_latents(Checkpoint& c, const std::string& instance, const Eigen::VectorXf& z_shape,
                 const Eigen::VectorXf& z_texture) {
  auto put = [&](const std::string& which, const Eigen::VectorXf& v) {
    CheckpointTensor t;
    t.dims = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    c.tensors["latent/" + instance + "/" + which] = std::move(t);
  };
  put("shape", z_shape);
  put("texture", z_texture);
}

std::pair<Eigen::VectorXf, Eigen::VectorXf> get_latents(const Checkpoint& c,
                                                        const std::string& instance) {
  auto get = [&](const std::string& which) {
    const std::string name = "latent/" + instance + "/" + which;
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw DataError("checkpoint: missing tensor " + name);
    if (it->second.dims.size() != 1) throw DataError("checkpoint: tensor " + name + " must be rank 1");
    return Eigen::Map<const Eigen::VectorXf>(it->second.data.data(),
                                             static_cast<Eigen::Index>(it->second.data.size()))
        .eval();
  };
  return {get("shape"), get("texture")};
}

std::vector<std::string> checkpoint_instances(const Checkpoint& c) {
  std::vector<std::string> out;
  const std::string prefix = "latent/";
  const std::string suffix = "/shape";
  for (const auto& [name, t] : c.tensors) {
    if (name.size() > prefix.size() + suffix.size() && name.compare(0, prefix.size(), prefix) == 0 &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(name.substr(prefix.size(), name.size() - prefix.size() - suffix.size()));
    }
  }
  return out;  // already sorted: map iteration order
}

}  // namespace carfield
