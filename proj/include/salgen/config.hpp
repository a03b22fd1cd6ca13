#pragma once

// TrainConfig and its JSON form. Keys mirror field names; nested groups
// are addressed with dots on the command line ("langevin.steps=0").

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "salgen/inference.hpp"
#include "salgen/losses.hpp"
#include "salgen/nets.hpp"
#include "salgen/optim.hpp"

namespace salgen {

struct ModelOptions {
  int image_size = 64;
  int patch_size = 4;
  int window_size = 4;
  int mlp_ratio = 1;
  std::vector<int> depths{1, 1, 2, 1};
  std::vector<int> num_heads{1, 2, 4, 8};
  std::vector<int> stage_channels{32, 64, 128, 256};
  int latent_dim = -1;  // -1: 8 for generative heads, 0 for deterministic
  int decoder_channels = 32;
  int reduce_kernel = 1;
  int disc_channels = 64;
  bool depth_head = true;  // rgbd_full only
  bool zero_init_head = false;
};

struct TrainConfig {
  std::string head = "igan";        // deterministic | gan | cvae | abp | igan
  std::string regime = "rgb_full";  // rgb_full | rgbd_full | rgb_weak
  int epochs = 1;
  int batch_size = 4;
  std::int64_t max_steps = 0;  // 0: run all epochs
  std::uint64_t seed = 0;
  std::string precision = "f64";
  int eval_samples = 10;
  OptimConfig optimizer;
  LossWeights weights;
  LangevinConfig langevin;
  GatedCrfConfig gated_crf;
  ModelOptions model;

  bool generative() const { return head != "deterministic"; }
  bool uses_langevin() const { return head == "abp" || head == "igan"; }
  bool adversarial() const { return head == "gan" || head == "igan"; }
  int latent_dim() const;
  NetConfig net_config() const;
  /// Throws ConfigError listing every problem.
  void validate() const;
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& msg, std::vector<std::string> problems = {})
      : std::invalid_argument(msg), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys and type errors throw ConfigError listing all offending keys.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);

/// Applies "a.b=value" overrides to a JSON config; values parse as JSON when
/// possible, otherwise as strings. Unknown keys are collected and rejected.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

/// Hex digest (FNV-1a 64) of the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

Precision parse_precision(const std::string& s);

}  // namespace salgen
