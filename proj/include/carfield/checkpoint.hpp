#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "carfield/errors.hpp"
#include "carfield/field.hpp"

namespace carfield {

// One stored tensor: row-major f32 payload plus its dimensions (rank 1 or 2).
struct CheckpointTensor {
  std::vector<std::int64_t> dims;
  std::vector<float> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return n;
  }
};

// In-memory image of the binary container: one canonical config JSON string
// and a name-sorted tensor table. Serialization is byte-deterministic --
// identical contents always produce identical files.
struct Checkpoint {
  std::string config_json;  // canonical form (sorted keys), hashed on disk
  std::map<std::string, CheckpointTensor> tensors;
};

std::uint64_t fnv1a64(const void* data, std::size_t n);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Bridges between the tensor table and live parameter sets. Names are
// prefix + param->name. take_params validates every shape and throws
// DataError naming the offending tensor.
template <typename T>
void put_params(Checkpoint& c, const std::string& prefix, const std::vector<Param<T>*>& params) {
  for (const Param<T>* p : params) {
    CheckpointTensor t;
    t.dims = {p->value.rows(), p->value.cols()};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index cidx = 0; cidx < p->value.cols(); ++cidx) {
        t.data[k++] = static_cast<float>(p->value(r, cidx));
      }
    }
    c.tensors[prefix + p->name] = std::move(t);
  }
}

template <typename T>
void take_params(const Checkpoint& c, const std::string& prefix, const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) {
    const std::string name = prefix + p->name;
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw DataError("checkpoint: missing tensor " + name);
    const CheckpointTensor& t = it->second;
    if (t.dims.size() != 2 || t.dims[0] != p->value.rows() || t.dims[1] != p->value.cols()) {
      throw DataError("checkpoint: tensor " + name + " has mismatched shape");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index cidx = 0; cidx < p->value.cols(); ++cidx) {
        p->value(r, cidx) = static_cast<T>(t.data[k++]);
      }
    }
  }
}

// Per-instance latent codes live in the same table as rank-1 tensors named
// latent/<instance>/shape and latent/<instance>/texture.
void put_latents(Checkpoint& c, const std::string& instance, const Eigen::VectorXf& z_shape,
                 const Eigen::VectorXf& z_texture);
std::pair<Eigen::VectorXf, Eigen::VectorXf> get_latents(const Checkpoint& c,
                                                        const std::string& instance);
std::vector<std::string> checkpoint_instances(const Checkpoint& c);

}  // namespace carfield
