#include "salgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace salgen {

namespace {

struct Map {
  std::int64_t h = 0, w = 0;
  std::span<const double> v;
  double operator()(std::int64_t r, std::int64_t c) const { return v[r * w + c]; }
};

Map view(const Tensor& t, const char* what) {
  if (t.ndim() < 2) throw ShapeError(what, "needs at least 2 dimensions");
  Map m{t.dim(t.ndim() - 2), t.dim(t.ndim() - 1), t.data()};
  if (m.h * m.w != t.numel()) throw ShapeError(what, "leading dimensions must be 1, got " + shape_str(t.shape()));
  return m;
}

std::pair<Map, Map> views(const Tensor& pred, const Tensor& gt, const char* op) {
  Map p = view(pred, op), g = view(gt, op);
  if (p.h != g.h || p.w != g.w) throw ShapeError(op, shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  for (double x : p.v) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(std::string(op) + ": prediction outside [0,1]");
  }
  return {p, g};
}

bool fg(double g) { return g > 0.5; }

// Number of thresholds i/255 that p exceeds.
int exceed_count(double p) {
  int k = std::clamp(static_cast<int>(std::floor(p * 255.0)), 0, kThresholds - 1);
  while (k > 0 && !(static_cast<double>(k - 1) / 255.0 < p)) --k;
  while (k < kThresholds && static_cast<double>(k) / 255.0 < p) ++k;
  return k;
}

// Per threshold: predicted-fg count and true positives.
struct Sweep {
  std::vector<double> pred_fg, tp;
  double gt_fg = 0, n = 0;
};

Sweep sweep(const Map& p, const Map& g) {
  std::vector<double> hist_fg(kThresholds + 1, 0.0), hist_all(kThresholds + 1, 0.0);
  Sweep s;
  s.n = static_cast<double>(p.v.size());
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    int k = exceed_count(p.v[i]);
    hist_all[k] += 1;
    if (fg(g.v[i])) {
      hist_fg[k] += 1;
      s.gt_fg += 1;
    }
  }
  // binarized at threshold i <=> exceed_count > i
  s.pred_fg.assign(kThresholds, 0.0);
  s.tp.assign(kThresholds, 0.0);
  double acc_all = 0, acc_fg = 0;
  for (int i = kThresholds - 1; i >= 0; --i) {
    acc_all += hist_all[i + 1];
    acc_fg += hist_fg[i + 1];
    s.pred_fg[i] = acc_all;
    s.tp[i] = acc_fg;
  }
  return s;
}

double f_score(double tp, double pred_fg, double gt_fg) {
  if (gt_fg == 0 && pred_fg == 0) return 1.0;
  double prec = pred_fg > 0 ? tp / pred_fg : 0.0;
  double rec = gt_fg > 0 ? tp / gt_fg : 0.0;
  double den = kFBeta2 * prec + rec;
  return den > 0 ? (1.0 + kFBeta2) * prec * rec / den : 0.0;
}

// E from the four (fm, gt) pixel-class counts.
double e_from_counts(double n11, double n10, double n01, double n00) {
  double n = n11 + n10 + n01 + n00;
  double gt_fg = n11 + n01;
  double fm_fg = n11 + n10;
  if (gt_fg == 0) return (n01 + n00) / n;
  if (gt_fg == n) return fm_fg / n;
  double mu_fm = fm_fg / n, mu_gt = gt_fg / n;
  auto enhanced = [&](double fm, double gt) {
    double a = fm - mu_fm, b = gt - mu_gt;
    double den = a * a + b * b;
    double xi = 2.0 * a * b / (den == 0.0 ? 1e-12 : den);
    return (xi + 1.0) * (xi + 1.0) / 4.0;
  };
  double sum = 0.0;
  if (n11 > 0) sum += n11 * enhanced(1, 1);
  if (n10 > 0) sum += n10 * enhanced(1, 0);
  if (n01 > 0) sum += n01 * enhanced(0, 1);
  if (n00 > 0) sum += n00 * enhanced(0, 0);
  return sum / n;
}

double object_score(const Map& p, const Map& g, bool foreground) {
  // values x = pred (fg) or 1 - pred (bg) over the region
  double s = 0, n = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    if (fg(g.v[i]) != foreground) continue;
    s += foreground ? p.v[i] : 1.0 - p.v[i];
    n += 1;
  }
  if (n == 0) return 0.0;
  double mean = s / n, ss = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    if (fg(g.v[i]) != foreground) continue;
    double x = foreground ? p.v[i] : 1.0 - p.v[i];
    ss += (x - mean) * (x - mean);
  }
  double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd);
}

double block_ssim(const Map& p, const Map& g, std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  double n = static_cast<double>((r1 - r0) * (c1 - c0));
  double sx = 0, sy = 0;
  for (auto r = r0; r < r1; ++r) {
    for (auto c = c0; c < c1; ++c) {
      sx += p(r, c);
      sy += fg(g(r, c)) ? 1.0 : 0.0;
    }
  }
  double x = sx / n, y = sy / n;
  double vx = 0, vy = 0, cxy = 0;
  for (auto r = r0; r < r1; ++r) {
    for (auto c = c0; c < c1; ++c) {
      double dx = p(r, c) - x, dy = (fg(g(r, c)) ? 1.0 : 0.0) - y;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  if (n > 1) {
    vx /= n - 1;
    vy /= n - 1;
    cxy /= n - 1;
  } else {
    vx = vy = cxy = 0;
  }
  double a = 4.0 * x * y * cxy;
  double b = (x * x + y * y) * (vx + vy);
  if (a != 0.0) return a / b;
  return b == 0.0 ? 1.0 : 0.0;
}

double region_score_at(const Map& p, const Map& g, std::int64_t sr, std::int64_t sc) {
  double acc = 0;
  const std::int64_t rows[3] = {0, sr, p.h}, cols[3] = {0, sc, p.w};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      std::int64_t area = (rows[i + 1] - rows[i]) * (cols[j + 1] - cols[j]);
      if (area == 0) continue;
      acc += static_cast<double>(area) * block_ssim(p, g, rows[i], rows[i + 1], cols[j], cols[j + 1]);
    }
  }
  return acc / static_cast<double>(p.h * p.w);
}

// Split candidates along one axis: centroid num/den rounded, both neighbours on a tie.
std::vector<std::int64_t> split_candidates(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den, r = num % den;
  if (2 * r == den) return {q, q + 1};
  return {2 * r > den ? q + 1 : q};
}

double region_score(const Map& p, const Map& g) {
  std::int64_t total = 0, row_num = 0, col_num = 0;
  for (std::int64_t r = 0; r < p.h; ++r) {
    for (std::int64_t c = 0; c < p.w; ++c) {
      if (!fg(g(r, c))) continue;
      ++total;
      row_num += 2 * r + 1;
      col_num += 2 * c + 1;
    }
  }
  auto rs = split_candidates(row_num, 2 * total);
  auto cs = split_candidates(col_num, 2 * total);
  double acc = 0;
  for (auto sr : rs) {
    for (auto sc : cs) acc += region_score_at(p, g, sr, sc);
  }
  return acc / static_cast<double>(rs.size() * cs.size());
}

}  // namespace

double mae(const Tensor& pred, const Tensor& gt) {
  auto [p, g] = views(pred, gt, "mae");
  double s = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) s += std::abs(p.v[i] - g.v[i]);
  return s / static_cast<double>(p.v.size());
}

std::vector<double> f_measure_curve(const Tensor& pred, const Tensor& gt) {
  auto [p, g] = views(pred, gt, "f_measure");
  Sweep s = sweep(p, g);
  std::vector<double> out(kThresholds);
  for (int i = 0; i < kThresholds; ++i) out[i] = f_score(s.tp[i], s.pred_fg[i], s.gt_fg);
  return out;
}

double f_measure_mean(const Tensor& pred, const Tensor& gt) {
  auto c = f_measure_curve(pred, gt);
  double s = 0;
  for (double v : c) s += v;
  return s / kThresholds;
}

double e_measure(const Tensor& binary_fm, const Tensor& gt) {
  auto [p, g] = views(binary_fm, gt, "e_measure");
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    bool f = p.v[i] > 0.5, t = fg(g.v[i]);
    (f ? (t ? n11 : n10) : (t ? n01 : n00)) += 1;
  }
  return e_from_counts(n11, n10, n01, n00);
}

std::vector<double> e_measure_curve(const Tensor& pred, const Tensor& gt) {
  auto [p, g] = views(pred, gt, "e_measure");
  Sweep s = sweep(p, g);
  std::vector<double> out(kThresholds);
  for (int i = 0; i < kThresholds; ++i) {
    double n11 = s.tp[i], n10 = s.pred_fg[i] - s.tp[i];
    double n01 = s.gt_fg - n11, n00 = s.n - n11 - n10 - n01;
    out[i] = e_from_counts(n11, n10, n01, n00);
  }
  return out;
}

double e_measure_mean(const Tensor& pred, const Tensor& gt) {
  auto c = e_measure_curve(pred, gt);
  double s = 0;
  for (double v : c) s += v;
  return s / kThresholds;
}

double s_measure(const Tensor& pred, const Tensor& gt, double alpha) {
  auto [p, g] = views(pred, gt, "s_measure");
  double n = static_cast<double>(p.v.size()), gt_fg = 0, pred_sum = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    gt_fg += fg(g.v[i]) ? 1.0 : 0.0;
    pred_sum += p.v[i];
  }
  if (gt_fg == 0) return 1.0 - pred_sum / n;
  if (gt_fg == n) return pred_sum / n;
  double u = gt_fg / n;
  double o_fg = object_score(p, g, true), o_bg = object_score(p, g, false);
  double so = o_bg + u * (o_fg - o_bg);
  double sr = region_score(p, g);
  double s = alpha * so + (1.0 - alpha) * sr;
  return std::max(s, 0.0);
}

ImageMetrics image_metrics(const std::string& id, const Tensor& pred, const Tensor& gt, double mean_entropy) {
  return {id, mae(pred, gt), f_measure_mean(pred, gt), e_measure_mean(pred, gt), s_measure(pred, gt), mean_entropy};
}

MetricReport aggregate(std::vector<ImageMetrics> images) {
  MetricReport r;
  r.images = std::move(images);
  r.count = r.images.size();
  for (const auto& m : r.images) {
    r.mae += m.mae;
    r.f += m.f;
    r.e += m.e;
    r.s += m.s;
    r.entropy += m.entropy;
  }
  if (r.count) {
    double n = static_cast<double>(r.count);
    r.mae /= n;
    r.f /= n;
    r.e /= n;
    r.s /= n;
    r.entropy /= n;
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["count"] = count;
  j["mae"] = mae;
  j["f_measure"] = f;
  j["e_measure"] = e;
  j["s_measure"] = s;
  j["mean_entropy"] = entropy;
  j["images"] = nlohmann::json::array();
  for (const auto& m : images) {
    j["images"].push_back(
        {{"id", m.id}, {"mae", m.mae}, {"f_measure", m.f}, {"e_measure", m.e}, {"s_measure", m.s}, {"mean_entropy", m.entropy}});
  }
  j["skipped"] = nlohmann::json::array();
  for (const auto& [id, why] : skipped) j["skipped"].push_back({{"id", id}, {"reason", why}});
  return j;
}

std::string MetricReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto& m : images) {
    nlohmann::json rec{{"type", "image"},     {"id", m.id},         {"mae", m.mae},
                       {"f_measure", m.f},    {"e_measure", m.e},   {"s_measure", m.s},
                       {"mean_entropy", m.entropy}};
    os << rec.dump() << '\n';
  }
  for (const auto& [id, why] : skipped) os << nlohmann::json{{"type", "skipped"}, {"id", id}, {"reason", why}}.dump() << '\n';
  nlohmann::json summary{{"type", "summary"}, {"count", count},     {"mae", mae},           {"f_measure", f},
                         {"e_measure", e},    {"s_measure", s},     {"mean_entropy", entropy}};
  os << summary.dump() << '\n';
  return os.str();
}

}  // namespace salgen
