#include "salgen/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "salgen/image_io.hpp"
#include "salgen/ops.hpp"
#include "salgen/rng.hpp"

namespace fs = std::filesystem;

namespace salgen {

namespace {

double q255(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Image8 read_checked(const std::string& path, int h, int w) {
  Image8 im;
  try {
    im = read_png(path);
  } catch (const ImageIoError& e) {
    throw DataError(std::string("cannot decode ") + e.what());
  }
  if (h > 0 && (im.height != h || im.width != w)) {
    throw DataError(path + ": size " + std::to_string(im.width) + "x" + std::to_string(im.height) +
                    " does not match image " + std::to_string(w) + "x" + std::to_string(h));
  }
  return im;
}

// First channel of an 8-bit image.
std::vector<std::uint8_t> channel0(const Image8& im) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(im.width) * im.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = im.pixels[i * im.channels];
  return out;
}

Image8 gray_image(const Tensor& t) {
  Image8 im{static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), 1, {}};
  for (double v : t.data()) im.pixels.push_back(to_byte(v));
  return im;
}

Tensor stack(const Dataset& ds, const std::vector<std::size_t>& idx, Tensor Sample::*field) {
  std::vector<Tensor> parts;
  for (auto i : idx) {
    const Tensor& t = ds.samples.at(i).*field;
    if (!t.defined()) return Tensor();
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    parts.push_back(reshape(t, s));
  }
  return concat(parts, 0);
}

using Mask = std::vector<std::uint8_t>;

Mask erode(const Mask& m, int h, int w) {
  Mask out(m.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool keep = m[y * w + x] != 0;
      for (int dy = -1; dy <= 1 && keep; ++dy) {
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w || !m[yy * w + xx]) keep = false;
        }
      }
      out[y * w + x] = keep;
    }
  }
  return out;
}

Mask erode_keep_nonempty(Mask m, int h, int w, int iterations) {
  for (int i = 0; i < iterations; ++i) {
    Mask e = erode(m, h, w);
    if (std::count(e.begin(), e.end(), 1) == 0) break;
    m = std::move(e);
  }
  return m;
}

// A row segment and a column segment through the region pixel nearest its
// centroid, each at most `cap` pixels long and clipped to the region.
std::vector<int> cross_strokes(const Mask& region, int h, int w, int cap) {
  double cy = 0, cx = 0, n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (region[y * w + x]) {
        cy += y;
        cx += x;
        n += 1;
      }
    }
  }
  if (n == 0) return {};
  cy /= n;
  cx /= n;
  int by = -1, bx = -1;
  double best = 1e18;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      if (region[y * w + x] && d < best) {
        best = d;
        by = y;
        bx = x;
      }
    }
  }
  std::vector<int> px{by * w + bx};
  int half = std::max(cap / 2, 0);
  for (int dir : {-1, 1}) {
    for (int k = 1; k <= half; ++k) {
      int x = bx + dir * k;
      if (x < 0 || x >= w || !region[by * w + x]) break;
      px.push_back(by * w + x);
    }
    for (int k = 1; k <= half; ++k) {
      int y = by + dir * k;
      if (y < 0 || y >= h || !region[y * w + bx]) break;
      px.push_back(y * w + bx);
    }
  }
  return px;
}

struct Shape2D {
  bool ellipse;
  double cx, cy, rx, ry, angle;
  std::vector<std::pair<double, double>> poly;
  bool contains(double x, double y) const {
    if (ellipse) {
      double c = std::cos(angle), s = std::sin(angle);
      double u = ((x - cx) * c + (y - cy) * s) / rx;
      double v = (-(x - cx) * s + (y - cy) * c) / ry;
      return u * u + v * v <= 1.0;
    }
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      auto [xi, yi] = poly[i];
      auto [xj, yj] = poly[j];
      if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
  }
};

Shape2D random_shape(Rng& rng, int size) {
  Shape2D s{};
  s.ellipse = rng.uniform() < 0.5;
  s.cx = rng.uniform(0.25, 0.75) * size;
  s.cy = rng.uniform(0.25, 0.75) * size;
  s.rx = rng.uniform(0.1, 0.3) * size;
  s.ry = rng.uniform(0.1, 0.3) * size;
  s.angle = rng.uniform(0.0, M_PI);
  if (!s.ellipse) {
    auto n = rng.uniform_int(3, 6);
    std::vector<double> angles;
    for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0.0, 2 * M_PI));
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      double r = rng.uniform(0.6, 1.0);
      s.poly.emplace_back(s.cx + r * s.rx * std::cos(a), s.cy + r * s.ry * std::sin(a));
    }
  }
  return s;
}

Sample synth_one(const SynthSpec& spec, int index) {
  Rng rng(derive_seed(derive_seed(spec.seed, "synth"), static_cast<std::uint64_t>(index)));
  const int S = spec.size;
  const int n = S * S;

  Mask fg(n, 0);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    std::fill(fg.begin(), fg.end(), 0);
    auto count = rng.uniform_int(1, 3);
    for (int k = 0; k < count; ++k) {
      Shape2D sh = random_shape(rng, S);
      for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
          if (sh.contains(x + 0.5, y + 0.5)) fg[y * S + x] = 1;
        }
      }
    }
    double ratio = static_cast<double>(std::count(fg.begin(), fg.end(), 1)) / n;
    ok = ratio >= spec.min_fg_ratio && ratio <= spec.max_fg_ratio;
  }
  if (!ok) {
    double target = std::clamp(0.2, spec.min_fg_ratio, spec.max_fg_ratio);
    double r = std::sqrt(target * n / M_PI);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        double dx = x + 0.5 - S / 2.0, dy = y + 0.5 - S / 2.0;
        fg[y * S + x] = dx * dx + dy * dy <= r * r;
      }
    }
  }

  double bg_mean[3], fg_mean[3];
  for (int c = 0; c < 3; ++c) {
    bg_mean[c] = rng.uniform(0.2, 0.8);
    fg_mean[c] = bg_mean[c] < 0.5 ? bg_mean[c] + 0.45 * spec.contrast : bg_mean[c] - 0.45 * spec.contrast;
  }
  double fx = rng.uniform(0.1, 0.5), fy = rng.uniform(0.1, 0.5), phase = rng.uniform(0.0, 2 * M_PI);
  std::vector<double> img(static_cast<std::size_t>(3 * n));
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double tex = 0.06 * std::sin(fx * x + fy * y + phase);
      const double* mean = fg[y * S + x] ? fg_mean : bg_mean;
      for (int c = 0; c < 3; ++c) img[c * n + y * S + x] = q255(mean[c] + tex + 0.03 * rng.normal());
    }
  }

  Sample s;
  s.id = "synth_" + std::to_string(spec.seed) + "_" + std::to_string(index);
  s.image = Tensor::from({3, S, S}, std::move(img));
  std::vector<double> gt(fg.begin(), fg.end());
  s.gt = Tensor::from({1, S, S}, std::move(gt));

  if (spec.with_depth) {
    double theta = rng.uniform(0.0, 2 * M_PI);
    double c = std::cos(theta), sn = std::sin(theta);
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        double u = (x + 0.5) / S - 0.5, v = (y + 0.5) / S - 0.5;
        double ramp = 0.35 + 0.2 * (c * u + sn * v) * 1.41421356;
        d[y * S + x] = q255(ramp + (fg[y * S + x] ? 0.35 : 0.0));
      }
    }
    s.depth = Tensor::from({1, S, S}, std::move(d));
  }

  if (spec.with_scribble) {
    int budget = std::max(2, static_cast<int>(spec.max_scribble_ratio * n));
    Mask bg(n);
    for (int i = 0; i < n; ++i) bg[i] = !fg[i];
    auto fg_px = cross_strokes(erode_keep_nonempty(fg, S, S, 2), S, S, budget / 4);
    auto bg_px = cross_strokes(erode_keep_nonempty(bg, S, S, 3), S, S, budget / 4);
    std::vector<double> target(static_cast<std::size_t>(n), 0.0), mask(static_cast<std::size_t>(n), 0.0);
    for (int p : fg_px) {
      target[p] = 1.0;
      mask[p] = 1.0;
    }
    for (int p : bg_px) mask[p] = 1.0;
    s.scribble_target = Tensor::from({1, S, S}, std::move(target));
    s.scribble_mask = Tensor::from({1, S, S}, std::move(mask));
  }
  return s;
}

}  // namespace

bool Dataset::has_depth() const {
  return !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.has_depth(); });
}

bool Dataset::has_scribble() const {
  return !samples.empty() &&
         std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.has_scribble(); });
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  NoGradGuard ng;
  Batch b;
  b.image = stack(ds, indices, &Sample::image);
  b.gt = stack(ds, indices, &Sample::gt);
  b.depth = stack(ds, indices, &Sample::depth);
  b.scribble.target = stack(ds, indices, &Sample::scribble_target);
  b.scribble.mask = stack(ds, indices, &Sample::scribble_mask);
  for (auto i : indices) b.ids.push_back(ds.samples[i].id);
  return b;
}

Sample load_sample(const SamplePaths& p) {
  Sample s;
  s.id = p.id;
  Image8 im = read_checked(p.image, 0, 0);
  const int h = im.height, w = im.width, n = h * w;
  std::vector<double> rgb(static_cast<std::size_t>(3 * n));
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < n; ++i) rgb[c * n + i] = im.pixels[i * im.channels + (im.channels == 3 ? c : 0)] / 255.0;
  }
  s.image = Tensor::from({3, h, w}, std::move(rgb));

  auto gt8 = channel0(read_checked(p.gt, h, w));
  std::vector<double> gt(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) gt[i] = gt8[i] > 127 ? 1.0 : 0.0;
  s.gt = Tensor::from({1, h, w}, std::move(gt));

  if (!p.depth.empty()) {
    auto d8 = channel0(read_checked(p.depth, h, w));
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d[i] = d8[i] / 255.0;
    s.depth = Tensor::from({1, h, w}, std::move(d));
  }
  if (!p.scribble.empty()) {
    auto s8 = channel0(read_checked(p.scribble, h, w));
    std::vector<double> target(static_cast<std::size_t>(n), 0.0), mask(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      if (s8[i] >= 192) {
        target[i] = 1.0;
        mask[i] = 1.0;
      } else if (s8[i] >= 64) {
        mask[i] = 1.0;
      }
    }
    s.scribble_target = Tensor::from({1, h, w}, std::move(target));
    s.scribble_mask = Tensor::from({1, h, w}, std::move(mask));
  }
  return s;
}

SamplePaths save_sample(const Sample& s, const std::string& dir) {
  SamplePaths p;
  p.id = s.id;
  auto out = [&](const std::string& sub) {
    fs::create_directories(fs::path(dir) / sub);
    return sub + "/" + s.id + ".png";
  };
  const auto h = static_cast<int>(s.image.dim(1)), w = static_cast<int>(s.image.dim(2));
  const int n = h * w;
  Image8 rgb{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * n))};
  auto iv = s.image.data();
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + c] = to_byte(iv[c * n + i]);
  }
  p.image = out("images");
  write_png((fs::path(dir) / p.image).string(), rgb);

  p.gt = out("gt");
  write_png((fs::path(dir) / p.gt).string(), gray_image(s.gt));
  if (s.has_depth()) {
    p.depth = out("depth");
    write_png((fs::path(dir) / p.depth).string(), gray_image(s.depth));
  }
  if (s.has_scribble()) {
    Image8 sc{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0)};
    auto t = s.scribble_target.data();
    auto m = s.scribble_mask.data();
    for (int i = 0; i < n; ++i) {
      if (m[i] > 0) sc.pixels[i] = t[i] > 0.5 ? kScribbleForeground : kScribbleBackground;
    }
    p.scribble = out("scribble");
    write_png((fs::path(dir) / p.scribble).string(), sc);
  }
  return p;
}

Dataset load_dataset(const std::string& manifest, LoadReport* report) {
  std::ifstream is(manifest);
  if (!is) throw DataError("cannot open manifest " + manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest + ": " + e.what());
  }
  fs::path root = fs::path(manifest).parent_path();
  auto resolve = [&root](const nlohmann::json& e, const char* key) -> std::string {
    if (!e.contains(key) || e[key].is_null()) return "";
    fs::path p = e[key].get<std::string>();
    return p.is_absolute() ? p.string() : (root / p).string();
  };
  Dataset ds;
  for (const auto& e : j.at("samples")) {
    SamplePaths p{e.at("id").get<std::string>(), resolve(e, "image"), resolve(e, "gt"), resolve(e, "depth"),
                  resolve(e, "scribble")};
    try {
      ds.samples.push_back(load_sample(p));
    } catch (const DataError& err) {
      if (!report) throw;
      report->skipped.emplace_back(p.id, err.what());
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir, const std::string& manifest_name) {
  fs::create_directories(dir);
  nlohmann::json j{{"version", 1}, {"samples", nlohmann::json::array()}};
  for (const auto& s : ds.samples) {
    SamplePaths p = save_sample(s, dir);
    nlohmann::json e{{"id", p.id}, {"image", p.image}, {"gt", p.gt}};
    if (!p.depth.empty()) e["depth"] = p.depth;
    if (!p.scribble.empty()) e["scribble"] = p.scribble;
    j["samples"].push_back(std::move(e));
  }
  std::ofstream os(fs::path(dir) / manifest_name);
  os << j.dump(2) << '\n';
  if (!os) throw DataError("cannot write manifest in " + dir);
}

Dataset synth_generate(const SynthSpec& spec) {
  if (spec.count < 0 || spec.size < 8) throw std::invalid_argument("synth: count >= 0 and size >= 8 required");
  if (spec.contrast < 0.0 || spec.contrast > 1.0) throw std::invalid_argument("synth: contrast must lie in [0,1]");
  Dataset ds;
  for (int i = 0; i < spec.count; ++i) ds.samples.push_back(synth_one(spec, i));
  return ds;
}

std::vector<double> region_histogram(const Tensor& image, const Tensor& region, int bins) {
  if (image.ndim() != 3 || region.ndim() != 3 || image.dim(1) != region.dim(1) || image.dim(2) != region.dim(2)) {
    throw ShapeError("region_histogram", shape_str(image.shape()) + " vs " + shape_str(region.shape()));
  }
  std::int64_t c = image.dim(0), n = image.dim(1) * image.dim(2);
  if (c != 1 && c != 3) throw ShapeError("region_histogram", "expected 1 or 3 channels");
  std::vector<double> h(static_cast<std::size_t>(3 * bins), 0.0);
  auto iv = image.data();
  auto rv = region.data();
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    const double* src = iv.data() + (c == 3 ? ch : 0) * n;
    for (std::int64_t i = 0; i < n; ++i) {
      if (rv[i] <= 0.5) continue;
      int b = std::min(static_cast<int>(std::floor(std::clamp(src[i], 0.0, 1.0) * bins)), bins - 1);
      h[ch * bins + b] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw DataError("region_histogram: empty region");
  for (auto& v : h) v /= total;
  return h;
}

double chi2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("chi2_distance: histogram sizes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]) / (a[i] + b[i] + 1e-12);
  return 0.5 * d;
}

double global_contrast(const Tensor& image, const Tensor& gt) {
  NoGradGuard ng;
  Tensor bg = 1.0 - gt.detach();
  return chi2_distance(region_histogram(image, gt), region_histogram(image, bg));
}

ContrastReport dataset_contrast_report(const Dataset& ds, const std::string& modality) {
  if (modality != "rgb" && modality != "depth") throw std::invalid_argument("modality must be rgb or depth");
  if (ds.samples.empty()) throw DataError("contrast report of an empty dataset");
  ContrastReport r;
  r.modality = modality;
  for (const auto& s : ds.samples) {
    if (modality == "depth" && !s.has_depth()) throw DataError("sample " + s.id + " has no depth map");
    double v = global_contrast(modality == "rgb" ? s.image : s.depth, s.gt);
    r.per_image.emplace_back(s.id, v);
    r.mean += v;
  }
  r.mean /= static_cast<double>(r.per_image.size());
  return r;
}

double contrast_difference(const Dataset& ds) {
  return dataset_contrast_report(ds, "rgb").mean - dataset_contrast_report(ds, "depth").mean;
}

}  // namespace salgen
