#include "oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

namespace {

bool on(double g) { return g > 0.5; }

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z), written out by cases
double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double bce_logit(double z, double y) { return y * log1pexp(-z) + (1.0 - y) * log1pexp(z); }

}  // namespace

double mae(const Map& p, const Map& g) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - g[i]);
  return s / static_cast<double>(p.size());
}

double f_mean(const Map& p, const Map& g) {
  double total = 0;
  for (int i = 0; i < 256; ++i) {
    double t = i / 255.0;
    double tp = 0, pp = 0, gp = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      bool a = p[k] > t, b = on(g[k]);
      tp += a && b;
      pp += a;
      gp += b;
    }
    double f;
    if (pp == 0 && gp == 0) {
      f = 1;
    } else {
      double prec = pp ? tp / pp : 0, rec = gp ? tp / gp : 0;
      f = (prec + rec) > 0 ? 1.3 * prec * rec / (0.3 * prec + rec) : 0;
    }
    total += f;
  }
  return total / 256.0;
}

double e_single(const Map& fm, const Map& g) {
  const double n = static_cast<double>(fm.size());
  double sf = 0, sg = 0;
  for (std::size_t k = 0; k < fm.size(); ++k) {
    sf += fm[k] > 0.5;
    sg += on(g[k]);
  }
  double acc = 0;
  if (sg == 0) {
    for (double v : fm) acc += v > 0.5 ? 0.0 : 1.0;
    return acc / n;
  }
  if (sg == n) {
    for (double v : fm) acc += v > 0.5 ? 1.0 : 0.0;
    return acc / n;
  }
  double mf = sf / n, mg = sg / n;
  for (std::size_t k = 0; k < fm.size(); ++k) {
    double a = (fm[k] > 0.5 ? 1.0 : 0.0) - mf;
    double b = (on(g[k]) ? 1.0 : 0.0) - mg;
    double d = a * a + b * b;
    if (d == 0) d = 1e-12;
    double xi = 2 * a * b / d;
    acc += (1 + xi) * (1 + xi) / 4;
  }
  return acc / n;
}

double e_mean(const Map& p, const Map& g) {
  double total = 0;
  Map fm(p.size());
  for (int i = 0; i < 256; ++i) {
    for (std::size_t k = 0; k < p.size(); ++k) fm[k] = p[k] > i / 255.0 ? 1.0 : 0.0;
    total += e_single(fm, g);
  }
  return total / 256.0;
}

namespace {

double ssim_block(const Map& p, const Map& g, int w, int r0, int r1, int c0, int c1) {
  std::vector<double> xs, ys;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      xs.push_back(p[r * w + c]);
      ys.push_back(on(g[r * w + c]) ? 1.0 : 0.0);
    }
  }
  double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cv = 0;
  if (xs.size() > 1) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      vx += (xs[i] - mx) * (xs[i] - mx);
      vy += (ys[i] - my) * (ys[i] - my);
      cv += (xs[i] - mx) * (ys[i] - my);
    }
    vx /= n - 1;
    vy /= n - 1;
    cv /= n - 1;
  }
  double num = 4 * mx * my * cv, den = (mx * mx + my * my) * (vx + vy);
  if (num != 0) return num / den;
  return den == 0 ? 1.0 : 0.0;
}

double object(const std::vector<double>& x) {
  double n = static_cast<double>(x.size());
  if (n == 0) return 0;
  double m = 0;
  for (double v : x) m += v;
  m /= n;
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0;
  return 2 * m / (m * m + 1 + sd);
}

}  // namespace

double s_measure(const Map& p, const Map& g, int h, int w, double alpha) {
  double n = static_cast<double>(p.size());
  double fgc = 0, mean_p = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    fgc += on(g[k]);
    mean_p += p[k];
  }
  mean_p /= n;
  if (fgc == 0) return 1 - mean_p;
  if (fgc == n) return mean_p;

  std::vector<double> xf, xb;
  for (std::size_t k = 0; k < p.size(); ++k) (on(g[k]) ? xf : xb).push_back(on(g[k]) ? p[k] : 1 - p[k]);
  double u = fgc / n;
  double so = u * object(xf) + (1 - u) * object(xb);

  // foreground centroid, pixel k covering [k, k+1)
  double cy = 0, cx = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!on(g[r * w + c])) continue;
      cy += r + 0.5;
      cx += c + 0.5;
    }
  }
  cy /= fgc;
  cx /= fgc;
  auto cands = [](double v) {
    double f = std::floor(v);
    if (v - f == 0.5) return std::vector<int>{static_cast<int>(f), static_cast<int>(f) + 1};
    return std::vector<int>{static_cast<int>(std::lround(v))};
  };
  double sr = 0;
  auto ys = cands(cy), xs = cands(cx);
  for (int Y : ys) {
    for (int X : xs) {
      double acc = 0;
      int rb[3] = {0, Y, h}, cb[3] = {0, X, w};
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          int area = (rb[i + 1] - rb[i]) * (cb[j + 1] - cb[j]);
          if (area > 0) acc += area / n * ssim_block(p, g, w, rb[i], rb[i + 1], cb[j], cb[j + 1]);
        }
      }
      sr += acc;
    }
  }
  sr /= static_cast<double>(ys.size() * xs.size());
  return std::max(0.0, alpha * so + (1 - alpha) * sr);
}

Map edge_weight(const Map& y, int h, int w) {
  Map out(y.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int dr = -15; dr <= 15; ++dr) {
        for (int dc = -15; dc <= 15; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w) s += y[rr * w + cc];
        }
      }
      out[r * w + c] = 1 + 5 * std::fabs(s / 961.0 - y[r * w + c]);
    }
  }
  return out;
}

double structure_loss(const std::vector<Map>& logits, const std::vector<Map>& y, int h, int w) {
  double total = 0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    Map om = edge_weight(y[b], h, w);
    double wce = 0, ws = 0, inter = 0, uni = 0;
    for (std::size_t k = 0; k < om.size(); ++k) {
      double z = logits[b][k], t = y[b][k], p = sig(z);
      wce += om[k] * bce_logit(z, t);
      ws += om[k];
      inter += om[k] * p * t;
      uni += om[k] * (p + t);
    }
    total += wce / ws + 1 - (inter + 1) / (uni - inter + 1);
  }
  return total / static_cast<double>(logits.size());
}

double gated_crf(const std::vector<Map>& s, const std::vector<std::vector<double>>& img, int c, int h, int w, int r,
                 double sigma_p, double sigma_c) {
  double total = 0;
  for (std::size_t b = 0; b < s.size(); ++b) {
    double acc = 0, cnt = 0;
    for (int i = 0; i < h * w; ++i) {
      for (int j = 0; j < h * w; ++j) {
        int yi = i / w, xi = i % w, yj = j / w, xj = j % w;
        if (i == j || std::abs(yi - yj) > r || std::abs(xi - xj) > r) continue;
        double dp = (yi - yj) * (yi - yj) + (xi - xj) * (xi - xj);
        double dc = 0;
        for (int ch = 0; ch < c; ++ch) {
          double d = img[b][ch * h * w + i] - img[b][ch * h * w + j];
          dc += d * d;
        }
        double k = std::exp(-dp / (2 * sigma_p * sigma_p) - dc / (2 * sigma_c * sigma_c));
        acc += k * std::fabs(s[b][i] - s[b][j]);
        cnt += 1;
      }
    }
    total += cnt ? acc / cnt : 0;
  }
  return total / static_cast<double>(s.size());
}

double partial_ce(const Map& logits, const Map& target, const Map& mask) {
  double s = 0, n = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (mask[k] == 0) continue;
    s += bce_logit(logits[k], target[k]);
    n += 1;
  }
  if (n == 0) throw std::invalid_argument("partial_ce oracle: no labels");
  return s / n;
}

std::vector<double> attention(const std::vector<double>& x, int l, int c, int heads, const std::vector<double>& qkv_w,
                              const std::vector<double>& qkv_b, const std::vector<double>& proj_w,
                              const std::vector<double>& proj_b) {
  int hd = c / heads;
  std::vector<double> qkv(static_cast<std::size_t>(l * 3 * c));
  for (int t = 0; t < l; ++t) {
    for (int o = 0; o < 3 * c; ++o) {
      double s = qkv_b[o];
      for (int i = 0; i < c; ++i) s += x[t * c + i] * qkv_w[i * 3 * c + o];
      qkv[t * 3 * c + o] = s;
    }
  }
  std::vector<double> mixed(static_cast<std::size_t>(l * c), 0.0);
  for (int hh = 0; hh < heads; ++hh) {
    for (int a = 0; a < l; ++a) {
      std::vector<double> sc(l);
      double mx = -1e300;
      for (int b = 0; b < l; ++b) {
        double d = 0;
        for (int e = 0; e < hd; ++e) d += qkv[a * 3 * c + hh * hd + e] * qkv[b * 3 * c + c + hh * hd + e];
        sc[b] = d / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, sc[b]);
      }
      double z = 0;
      for (auto& v : sc) z += (v = std::exp(v - mx));
      for (int e = 0; e < hd; ++e) {
        double s = 0;
        for (int b = 0; b < l; ++b) s += sc[b] / z * qkv[b * 3 * c + 2 * c + hh * hd + e];
        mixed[a * c + hh * hd + e] = s;
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(l * c));
  for (int t = 0; t < l; ++t) {
    for (int o = 0; o < c; ++o) {
      double s = proj_b[o];
      for (int i = 0; i < c; ++i) s += mixed[t * c + i] * proj_w[i * c + o];
      out[t * c + o] = s;
    }
  }
  return out;
}

std::vector<double> histogram(const std::vector<double>& img, int c, int h, int w, const Map& region, int bins) {
  std::vector<double> hist(static_cast<std::size_t>(3 * bins), 0.0);
  double n = 0;
  for (int ch = 0; ch < 3; ++ch) {
    int src = c == 1 ? 0 : ch;
    for (int k = 0; k < h * w; ++k) {
      if (region[k] <= 0.5) continue;
      double v = img[src * h * w + k];
      int b = static_cast<int>(v * bins);
      if (b >= bins) b = bins - 1;
      if (b < 0) b = 0;
      hist[ch * bins + b] += 1;
      n += 1;
    }
  }
  for (auto& v : hist) v /= n;
  return hist;
}

double chi2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += (a[i] - b[i]) * (a[i] - b[i]) / (a[i] + b[i] + 1e-12);
  }
  return s / 2;
}

}  // namespace oracle
