#pragma once

// Saliency evaluation measures on single maps. Inputs are tensors whose last
// two dimensions are H x W (leading dimensions must be 1); predictions lie in
// [0,1] and ground truth is binary.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "salgen/tensor.hpp"

namespace salgen {

inline constexpr int kThresholds = 256;
inline constexpr double kFBeta2 = 0.3;

double mae(const Tensor& pred, const Tensor& gt);

/// F at thresholds i/255, i = 0..255, binarizing pred > threshold.
std::vector<double> f_measure_curve(const Tensor& pred, const Tensor& gt);
double f_measure_mean(const Tensor& pred, const Tensor& gt);

/// Enhanced-alignment score of one binary foreground map.
double e_measure(const Tensor& binary_fm, const Tensor& gt);
std::vector<double> e_measure_curve(const Tensor& pred, const Tensor& gt);
double e_measure_mean(const Tensor& pred, const Tensor& gt);

/// alpha S_object + (1 - alpha) S_region.
double s_measure(const Tensor& pred, const Tensor& gt, double alpha = 0.5);

struct ImageMetrics {
  std::string id;
  double mae = 0, f = 0, e = 0, s = 0;
  double entropy = 0;  // mean predictive entropy over the image
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  double mae = 0, f = 0, e = 0, s = 0, entropy = 0;
  std::size_t count = 0;
  std::vector<std::pair<std::string, std::string>> skipped;

  nlohmann::json to_json() const;
  /// One record per image followed by a summary record.
  std::string to_jsonl() const;
};

ImageMetrics image_metrics(const std::string& id, const Tensor& pred, const Tensor& gt, double mean_entropy = 0.0);
/// Arithmetic means, summed in image order.
MetricReport aggregate(std::vector<ImageMetrics> images);

}  // namespace salgen
