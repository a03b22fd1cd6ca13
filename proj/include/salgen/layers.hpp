#pragma once

// Parameter bookkeeping and the small stateless layer helpers the networks
// are assembled from.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "salgen/ops.hpp"
#include "salgen/rng.hpp"

namespace salgen {

/// Ordered collection of named parameter tensors. Order is insertion order,
/// which fixes checkpoint layout and optimizer-state layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return items_.size(); }
  std::vector<std::pair<std::string, Tensor>>& entries() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return items_; }
  std::vector<std::string> names() const;

  /// Total scalar count, optionally restricted to names starting with prefix.
  std::int64_t count(const std::string& prefix = "") const;
  void set_requires_grad(bool on);
  void zero_grad();
  /// Order-dependent hash of all values; used to assert partitions stay untouched.
  std::uint64_t hash(const std::string& prefix = "") const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Scoped requires_grad=false on a store; restores on exit.
class FrozenParams {
 public:
  explicit FrozenParams(ParamStore& store);
  ~FrozenParams();
  FrozenParams(const FrozenParams&) = delete;
  FrozenParams& operator=(const FrozenParams&) = delete;

 private:
  ParamStore& store_;
  std::vector<bool> saved_;
};

Tensor he_normal(Rng& rng, Shape shape, std::int64_t fan_in);
/// Normal(0, std) clipped to two standard deviations.
Tensor trunc_normal(Rng& rng, Shape shape, double stddev);

void add_conv(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, int k,
              bool bias = true, bool zero = false);
void add_linear(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                bool bias = true, bool zero = false);
void add_norm(ParamStore& ps, const std::string& name, std::int64_t dim);

Tensor conv(const ParamStore& ps, const std::string& name, const Tensor& x, Conv2dOptions opt = {});
/// x [..., in] -> [..., out]
Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x);
Tensor norm(const ParamStore& ps, const std::string& name, const Tensor& x);

/// NCHW batch normalization with the current batch statistics (no running averages).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace salgen
