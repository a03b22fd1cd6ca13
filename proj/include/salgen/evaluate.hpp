#pragma once

// Dataset-level evaluation: a predictor maps a batch to probability and
// entropy maps, which are scored per image and aggregated.

#include <functional>
#include <string>
#include <vector>

#include "salgen/data.hpp"
#include "salgen/inference.hpp"
#include "salgen/metrics.hpp"
#include "salgen/trainer.hpp"

namespace salgen {

/// indices are dataset positions of the batch rows.
using Predictor = std::function<Uncertainty(const Batch& b, const std::vector<std::size_t>& indices)>;

Predictor model_predictor(const Model& m, int n_samples, std::uint64_t seed);
/// Returns the ground truth itself (zero entropy); a fixture for checking the pipeline.
Predictor ground_truth_predictor();

struct EvalOptions {
  int batch_size = 8;
  /// Called with each image's id and maps, e.g. to write PNGs.
  std::function<void(const std::string& id, const Tensor& mean, const Tensor& entropy)> on_image;
};

/// Images whose prediction is not finite are reported as skipped.
MetricReport evaluate_dataset(const Predictor& predictor, const Dataset& ds, const EvalOptions& opt = {});

/// Writes a [1,H,W] or [H,W] map in [0,1] (scaled by 1/scale) as an 8-bit gray PNG.
void write_map_png(const std::string& path, const Tensor& map, double scale = 1.0);

}  // namespace salgen
