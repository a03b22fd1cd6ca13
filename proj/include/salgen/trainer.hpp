#pragma once

// Training loop for the five heads (deterministic, gan, cvae, abp, igan) under
// the three regimes (rgb_full, rgbd_full, rgb_weak), plus prediction.

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "salgen/config.hpp"
#include "salgen/data.hpp"
#include "salgen/inference.hpp"
#include "salgen/nets.hpp"
#include "salgen/optim.hpp"

namespace salgen {

struct Model {
  TrainConfig config;
  Generator gen;
  std::unique_ptr<Discriminator> disc;  // gan / igan only

  explicit Model(const TrainConfig& cfg);
  /// Generator input: the RGB image, or its fusion with depth under rgbd_full.
  Tensor input(const Batch& b) const;
};

/// Builds the model from a checkpoint's stored config and parameters.
std::unique_ptr<Model> load_model(const std::string& checkpoint_path);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;  // weighted; they sum to total
  bool has_dis = false;
  double dis = 0.0;
  double grad_norm = 0.0;
  bool has_train_mae = false;
  double train_mae = 0.0;
  int rotation_k = 0;
  std::vector<std::string> skipped;  // ids whose chain diverged
  bool update_skipped = false;      // the whole batch was dropped
  double seconds = 0.0;

  double component_sum() const;
  nlohmann::json to_json() const;
};

class Trainer {
 public:
  /// Validates the config and the dataset (sizes, required modalities).
  Trainer(const TrainConfig& cfg, const Dataset& ds);

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  std::int64_t global_step() const { return step_; }
  bool finished() const;

  /// Runs until all epochs or max_steps are done. Each record is written to
  /// log as one JSON line. With a checkpoint path, state is saved after every
  /// epoch and when max_steps stops the run.
  void run(std::ostream* log = nullptr, const std::string& checkpoint_path = "");
  /// One optimization step on the given dataset indices.
  StepRecord train_step(const std::vector<std::size_t>& indices);

  void save(const std::string& path) const;
  /// Restores parameters, optimizer moments and the loop position.
  void resume(const std::string& path);

  const std::vector<StepRecord>& history() const { return history_; }

 private:
  std::vector<std::size_t> epoch_order(int epoch) const;

  TrainConfig cfg_;
  const Dataset& ds_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<Optimizer> gen_opt_, disc_opt_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  std::vector<StepRecord> history_;
};

/// Predictive mean and entropy [N,1,H,W]. Generative heads average n prior
/// draws; row r draws from a stream keyed by keys[r], so results do not depend (up to
/// rounding) on batch composition. A deterministic head with a latent uses h = 0.
Uncertainty predict(const Model& m, const Batch& b, const std::vector<std::uint64_t>& keys, int n_samples,
                    std::uint64_t seed);

}  // namespace salgen
