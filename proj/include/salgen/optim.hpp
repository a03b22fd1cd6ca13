#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "salgen/checkpoint.hpp"
#include "salgen/layers.hpp"

namespace salgen {

struct OptimConfig {
  std::string kind = "adamw";  // adamw | sgd
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;  // decoupled for adamw, L2 for sgd
  double momentum = 0.9;
  void validate() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Optimizer() = default;

  /// Updates every parameter whose requires_grad is set. A tracked parameter
  /// without a gradient throws std::logic_error before anything changes.
  void step(ParamStore& ps);
  std::int64_t steps() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

  void save_state(Checkpoint& ck, const std::string& tag) const;
  void load_state(const Checkpoint& ck, const std::string& tag, const ParamStore& ps);

 protected:
  virtual void update(const std::string& name, std::span<double> p, std::span<const double> g) = 0;
  std::vector<double>& slot(std::unordered_map<std::string, std::vector<double>>& m, const std::string& name,
                            std::size_t n);

  OptimConfig cfg_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, std::vector<double>> m_, v_;
};

class AdamW : public Optimizer {
 public:
  using Optimizer::Optimizer;

 protected:
  void update(const std::string& name, std::span<double> p, std::span<const double> g) override;
};

class SgdMomentum : public Optimizer {
 public:
  using Optimizer::Optimizer;

 protected:
  void update(const std::string& name, std::span<double> p, std::span<const double> g) override;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimConfig& cfg);

}  // namespace salgen
