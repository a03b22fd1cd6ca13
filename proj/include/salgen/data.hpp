#pragma once

// Samples, datasets on disk, the synthetic generator and the global-contrast
// analysis. Per-sample tensors are CHW; batches are NCHW.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "salgen/losses.hpp"
#include "salgen/tensor.hpp"

namespace salgen {

struct Sample {
  std::string id;
  Tensor image;  // [3,H,W] in [0,1]
  Tensor gt;     // [1,H,W] in {0,1}
  Tensor depth;  // optional [1,H,W] in [0,1]
  Tensor scribble_target;  // optional [1,H,W] in {0,1}
  Tensor scribble_mask;    // optional [1,H,W] in {0,1}

  std::int64_t height() const { return gt.dim(1); }
  std::int64_t width() const { return gt.dim(2); }
  bool has_depth() const { return depth.defined(); }
  bool has_scribble() const { return scribble_mask.defined(); }
};

struct SamplePaths {
  std::string id;
  std::string image, gt, depth, scribble;  // depth/scribble may be empty
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
  bool has_depth() const;
  bool has_scribble() const;
};

struct Batch {
  Tensor image, gt, depth;
  Scribble scribble;
  std::vector<std::string> ids;
};

/// Stacks the listed samples into NCHW tensors (optional maps only if every sample has them).
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Scribble PNG encoding: 0 unlabeled, 128 background stroke, 255 foreground stroke.
inline constexpr int kScribbleBackground = 128;
inline constexpr int kScribbleForeground = 255;

/// gt is foreground where the 8-bit value is > 127. Throws DataError naming the path.
Sample load_sample(const SamplePaths& paths);
/// Writes <dir>/images/<id>.png etc. and returns the relative paths.
SamplePaths save_sample(const Sample& s, const std::string& dir);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadReport {
  std::vector<std::pair<std::string, std::string>> skipped;  // (id, reason)
};

/// JSON manifest: {"version":1,"samples":[{"id","image","gt","depth"?,"scribble"?}]},
/// paths relative to the manifest's directory.
Dataset load_dataset(const std::string& manifest, LoadReport* report = nullptr);
void save_dataset(const Dataset& ds, const std::string& dir, const std::string& manifest_name = "manifest.json");

struct SynthSpec {
  std::uint64_t seed = 0;
  int count = 8;
  int size = 64;
  double contrast = 1.0;  // 0: fg colors drawn like bg; 1: well separated
  bool with_depth = false;
  bool with_scribble = false;
  double min_fg_ratio = 0.05;
  double max_fg_ratio = 0.6;
  double max_scribble_ratio = 0.05;
};

/// Fully determined by spec; every value is a multiple of 1/255.
Dataset synth_generate(const SynthSpec& spec);

/// 16 uniform bins per channel over [0,1], channels concatenated and the whole
/// vector normalized to sum 1. Gray images are replicated to 3 channels.
std::vector<double> region_histogram(const Tensor& image, const Tensor& region, int bins = 16);
double chi2_distance(const std::vector<double>& a, const std::vector<double>& b);
/// chi2 between foreground and background histograms of image under gt.
double global_contrast(const Tensor& image, const Tensor& gt);

struct ContrastReport {
  std::string modality;
  std::vector<std::pair<std::string, double>> per_image;
  double mean = 0.0;
};
ContrastReport dataset_contrast_report(const Dataset& ds, const std::string& modality);
/// Mean RGB contrast minus mean depth contrast; needs both modalities.
double contrast_difference(const Dataset& ds);

}  // namespace salgen
