#pragma once

// Flat binary container of named tensors, little-endian:
//   "SGCK" | u32 version | u64 meta_len | meta (JSON text)
//   u64 count | count x { u32 name_len | name | u8 dtype | u32 ndim | i64 dims[ndim] | data }
// dtype 0 = float64, 1 = float32. Data is row-major.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "salgen/layers.hpp"

namespace salgen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  void put(const std::string& prefix, const ParamStore& ps);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

/// Writes to path via a temporary file and rename, so readers never see a partial file.
void save_checkpoint(const std::string& path, const Checkpoint& ck, bool as_float32 = false);
Checkpoint load_checkpoint(const std::string& path);

/// Copies values for every parameter of ps from ck (name = prefix + param name).
/// Missing names or shape mismatches throw CheckpointError.
void restore_params(ParamStore& ps, const Checkpoint& ck, const std::string& prefix = "");

}  // namespace salgen
