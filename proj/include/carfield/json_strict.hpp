#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace carfield {

// Strict object walker: typed getters mark keys as consumed, finish()
// rejects whatever was never consumed, naming the full path. The exception
// type E and the message prefix ("config: ", "manifest.jsonl:3: ", ...)
// belong to the caller; read_* leaves the destination untouched when the
// key is absent, req_* demands it.
template <class E>
class StrictWalker {
 public:
  StrictWalker(const nlohmann::json& j, std::string prefix, std::string path)
      : j_(j), prefix_(std::move(prefix)), path_(std::move(path)) {
    if (!j_.is_object()) throw E(prefix_ + label() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void read_int(const char* key, int& dst) {
    if (!take(key)) return;
    dst = as_int(key, j_.at(key));
  }

  void read_i64(const char* key, std::int64_t& dst) {
    if (!take(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
      throw E(prefix_ + join(key) + " must be an integer");
    }
    dst = v.get<std::int64_t>();
  }

  void read_u64(const char* key, std::uint64_t& dst) {
    if (!take(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0))) {
      throw E(prefix_ + join(key) + " must be a non-negative integer");
    }
    dst = v.get<std::uint64_t>();
  }

  void read_double(const char* key, double& dst) {
    if (!take(key)) return;
    dst = as_double(key, j_.at(key));
  }

  void read_bool(const char* key, bool& dst) {
    if (!take(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_boolean()) throw E(prefix_ + join(key) + " must be a boolean");
    dst = v.get<bool>();
  }

  void read_string(const char* key, std::string& dst) {
    if (!take(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_string()) throw E(prefix_ + join(key) + " must be a string");
    dst = v.get<std::string>();
  }

  void read_int_list(const char* key, std::vector<int>& dst) {
    if (!take(key)) return;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_array()) throw E(prefix_ + join(key) + " must be an array");
    std::vector<int> out;
    for (const nlohmann::json& e : v) {
      if (!e.is_number_integer() && !e.is_number_unsigned()) {
        throw E(prefix_ + join(key) + " must hold integers only");
      }
      out.push_back(e.get<int>());
    }
    dst = std::move(out);
  }

  int req_int(const char* key) { return as_int(key, need(key)); }

  double req_double(const char* key) { return as_double(key, need(key)); }

  std::string req_string(const char* key) {
    const nlohmann::json& v = need(key);
    if (!v.is_string()) throw E(prefix_ + join(key) + " must be a string");
    return v.get<std::string>();
  }

  std::vector<double> req_double_list(const char* key, int n) {
    const nlohmann::json& v = need(key);
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      throw E(prefix_ + join(key) + " must be an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (const nlohmann::json& e : v) {
      if (!e.is_number()) {
        throw E(prefix_ + join(key) + " must be an array of " + std::to_string(n) + " numbers");
      }
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<int> req_int_list(const char* key, int n) {
    const nlohmann::json& v = need(key);
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      throw E(prefix_ + join(key) + " must be an array of " + std::to_string(n) + " integers");
    }
    std::vector<int> out;
    for (const nlohmann::json& e : v) {
      if (!e.is_number_integer() && !e.is_number_unsigned()) {
        throw E(prefix_ + join(key) + " must be an array of " + std::to_string(n) + " integers");
      }
      out.push_back(e.get<int>());
    }
    return out;
  }

  // Returns the subobject for `key` (caller walks it), or nullptr if absent.
  const nlohmann::json* child(const char* key) {
    if (!take(key)) return nullptr;
    return &j_.at(key);
  }

  const nlohmann::json& req_child(const char* key) { return need(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw E(prefix_ + "unknown key " + join(it.key().c_str()));
    }
  }

  std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string label() const { return path_.empty() ? "top level" : path_; }

  bool take(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  const nlohmann::json& need(const char* key) {
    if (!take(key)) throw E(prefix_ + "missing key " + join(key));
    return j_.at(key);
  }

  int as_int(const char* key, const nlohmann::json& v) const {
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
      throw E(prefix_ + join(key) + " must be an integer");
    }
    return v.get<int>();
  }

  double as_double(const char* key, const nlohmann::json& v) const {
    if (!v.is_number()) throw E(prefix_ + join(key) + " must be a number");
    return v.get<double>();
  }

  const nlohmann::json& j_;
  std::string prefix_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace carfield
