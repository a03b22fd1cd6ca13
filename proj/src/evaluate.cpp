#include "salgen/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "salgen/image_io.hpp"
#include "salgen/ops.hpp"

namespace salgen {

Predictor model_predictor(const Model& m, int n_samples, std::uint64_t seed) {
  return [&m, n_samples, seed](const Batch& b, const std::vector<std::size_t>& idx) {
    std::vector<std::uint64_t> keys(idx.begin(), idx.end());
    return predict(m, b, keys, n_samples, seed);
  };
}

Predictor ground_truth_predictor() {
  return [](const Batch& b, const std::vector<std::size_t>&) {
    Uncertainty u;
    u.mean = b.gt;
    u.entropy = Tensor::zeros(b.gt.shape());
    return u;
  };
}

MetricReport evaluate_dataset(const Predictor& predictor, const Dataset& ds, const EvalOptions& opt) {
  if (opt.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<ImageMetrics> images;
  std::vector<std::pair<std::string, std::string>> skipped;
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  for (std::size_t lo = 0; lo < ds.size(); lo += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(lo + bs, ds.size()); ++i) idx.push_back(i);
    Batch b = make_batch(ds, idx);
    Uncertainty u = predictor(b, idx);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = static_cast<std::int64_t>(r);
      Tensor p = slice(u.mean, 0, row, row + 1);
      Tensor e = slice(u.entropy, 0, row, row + 1);
      const auto& id = ds.samples[idx[r]].id;
      auto pv = p.data();
      if (!std::all_of(pv.begin(), pv.end(), [](double v) { return std::isfinite(v); })) {
        skipped.emplace_back(id, "non-finite prediction");
        continue;
      }
      double ent = 0.0;
      for (double v : e.data()) ent += v;
      ent /= static_cast<double>(e.numel());
      images.push_back(image_metrics(id, p, ds.samples[idx[r]].gt, ent));
      if (opt.on_image) opt.on_image(id, p, e);
    }
  }
  MetricReport rep = aggregate(std::move(images));
  rep.skipped = std::move(skipped);
  return rep;
}

void write_map_png(const std::string& path, const Tensor& map, double scale) {
  const auto h = map.dim(map.ndim() - 2), w = map.dim(map.ndim() - 1);
  if (map.numel() != h * w) throw std::invalid_argument("write_map_png: expected a single map");
  Image8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.channels = 1;
  img.pixels.resize(static_cast<std::size_t>(h * w));
  auto v = map.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double x = std::clamp(v[i] / scale, 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(x * 255.0));
  }
  write_png(path, img);
}

}  // namespace salgen
