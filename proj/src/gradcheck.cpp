#include "salgen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace salgen {

namespace {

double eval_scalar(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  NoGradGuard guard;
  Tensor y = f(x);
  if (y.numel() != 1) throw ShapeError("finite_diff_check", "function must return a scalar");
  double v = y.item();
  if (!std::isfinite(v)) throw GradCheckError("finite_diff_check: non-finite forward value");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  GradCheckOptions opt) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw ShapeError("finite_diff_check", "function must return a scalar");
  if (!std::isfinite(y.item())) throw GradCheckError("finite_diff_check: non-finite forward value");
  backward(y);
  std::vector<double> analytic(static_cast<std::size_t>(leaf.numel()), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  GradCheckResult result;
  if (opt.directions > 0) {
    std::mt19937_64 eng(opt.seed);
    std::normal_distribution<double> nd;
    for (int d = 0; d < opt.directions; ++d) {
      std::vector<double> v(analytic.size());
      double norm = 0.0;
      for (auto& e : v) {
        e = nd(eng);
        norm += e * e;
      }
      norm = std::sqrt(norm);
      double a = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) a += analytic[i] * (v[i] /= norm);
      if (!std::isfinite(a)) throw GradCheckError("finite_diff_check: non-finite analytic gradient");
      Tensor plus = x.detach(), minus = x.detach();
      auto pv = plus.mutable_data(), mv = minus.mutable_data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        pv[i] += opt.eps * v[i];
        mv[i] -= opt.eps * v[i];
      }
      double numeric = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * opt.eps);
      double err = std::abs(a - numeric) / (std::abs(a) + 1e-12);
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = d;
        result.analytic = a;
        result.numeric = numeric;
      }
      ++result.coords_checked;
    }
    return result;
  }

  std::vector<std::int64_t> coords(analytic.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (opt.max_coords > 0 && opt.max_coords < static_cast<std::int64_t>(coords.size())) {
    std::mt19937_64 eng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), eng);
    coords.resize(static_cast<std::size_t>(opt.max_coords));
    std::sort(coords.begin(), coords.end());
  }

  Tensor probe = x.detach();
  auto values = probe.mutable_data();
  for (auto i : coords) {
    double orig = values[i];
    values[i] = orig + opt.eps;
    double fp = eval_scalar(f, probe);
    values[i] = orig - opt.eps;
    double fm = eval_scalar(f, probe);
    values[i] = orig;
    double numeric = (fp - fm) / (2.0 * opt.eps);
    double a = analytic[static_cast<std::size_t>(i)];
    double err = std::abs(a - numeric) / (std::abs(a) + 1e-12);
    if (!std::isfinite(a)) throw GradCheckError("finite_diff_check: non-finite analytic gradient");
    if (err > result.max_rel_error || result.worst_index < 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) {
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace salgen
