#include "salgen/inference.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "salgen/ops.hpp"

namespace salgen {

namespace {

// Per-row log-joint [N] as a graph.
Tensor log_joint_rows(const LatentModel& model, const Tensor& y, const Tensor& h, double sigma2, Link link,
                      const Tensor& mask) {
  Tensor out = model(h);
  if (out.shape() != y.shape()) {
    throw ShapeError("log_joint", "model output " + shape_str(out.shape()) + " vs y " + shape_str(y.shape()));
  }
  if (out.dim(0) != h.dim(0)) throw ShapeError("log_joint", "model output rows must match latent rows");
  Tensor pred = link == Link::sigmoid ? sigmoid(out) : out;
  Tensor r2 = square(y - pred);
  if (mask.defined()) r2 = r2 * mask;
  std::vector<int> axes;
  for (int a = 1; a < r2.ndim(); ++a) axes.push_back(a);
  Tensor data = axes.empty() ? r2 : sum(r2, axes);
  return data * (-0.5 / sigma2) - sum(square(h), {1}) * 0.5;
}

double row_norm(std::span<const double> v, std::int64_t k, std::int64_t row) {
  double s = 0.0;
  for (std::int64_t j = 0; j < k; ++j) s += v[row * k + j] * v[row * k + j];
  return std::sqrt(s);
}

}  // namespace

void LangevinConfig::validate() const {
  if (!(step_size >= 0.0)) throw std::invalid_argument("langevin step_size must be >= 0");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("langevin sigma2 must be > 0");
  if (steps < 0) throw std::invalid_argument("langevin steps must be >= 0");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence threshold must be > 0");
}

bool LatentState::any_diverged() const {
  for (bool d : diverged) {
    if (d) return true;
  }
  return false;
}

std::vector<double> log_joint(const LatentModel& model, const Tensor& y, const Tensor& h, double sigma2, Link link,
                              const Tensor& mask) {
  NoGradGuard ng;
  return log_joint_rows(model, y, h.detach(), sigma2, link, mask).to_vector();
}

Tensor log_joint_grad(const LatentModel& model, const Tensor& y, const Tensor& h, double sigma2, Link link,
                      const Tensor& mask, std::vector<double>* values_out) {
  if (h.ndim() != 2) throw ShapeError("log_joint_grad", "h must be [N,K]");
  Tensor leaf = h.detach();
  leaf.set_requires_grad(true);
  Tensor rows = log_joint_rows(model, y, leaf, sigma2, link, mask);
  if (values_out) *values_out = rows.to_vector();
  backward(sum(rows));
  std::vector<double> g = leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                          : std::vector<double>(static_cast<std::size_t>(leaf.numel()), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      std::ostringstream msg;
      msg << "log_joint_grad: non-finite gradient at chain " << i / static_cast<std::size_t>(h.dim(1))
          << ", coordinate " << i % static_cast<std::size_t>(h.dim(1)) << " (h = " << h.data()[i] << ")";
      throw LangevinError(msg.str());
    }
  }
  return Tensor::from(h.shape(), std::move(g));
}

LatentState langevin_infer(const LatentModel& model, const Tensor& y, const LangevinConfig& cfg,
                           std::vector<Rng>& rngs, int latent_dim, const Tensor& h0, Link link, const Tensor& mask) {
  cfg.validate();
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  auto n = static_cast<std::int64_t>(rngs.size());
  const std::int64_t k = latent_dim;
  LatentState st;
  st.diverged.assign(static_cast<std::size_t>(n), false);
  st.trajectory.resize(cfg.record_trajectory ? static_cast<std::size_t>(n) : 0);
  for (auto& r : rngs) st.seeds.push_back(r.seed());

  std::vector<double> h(static_cast<std::size_t>(n * k));
  if (h0.defined()) {
    if (h0.shape() != Shape{n, k}) throw ShapeError("langevin_infer", "h0 must be [chains, K]");
    auto v = h0.data();
    std::copy(v.begin(), v.end(), h.begin());
  } else {
    for (std::int64_t c = 0; c < n; ++c) {
      for (std::int64_t j = 0; j < k; ++j) h[c * k + j] = rngs[c].normal();
    }
  }

  const double s = cfg.step_size;
  const double drift = 0.5 * s * s;
  std::vector<double> values;
  for (int t = 0; t < cfg.steps; ++t) {
    Tensor ht = Tensor::from({n, k}, h);
    Tensor g = log_joint_grad(model, y, ht, cfg.sigma2, link, mask, cfg.record_trajectory ? &values : nullptr);
    auto gv = g.data();
    for (std::int64_t c = 0; c < n; ++c) {
      if (st.diverged[c]) continue;
      if (cfg.record_trajectory) st.trajectory[c].push_back({t, values[c], row_norm(h, k, c)});
      for (std::int64_t j = 0; j < k; ++j) {
        double eps = rngs[c].normal();
        h[c * k + j] += drift * gv[c * k + j] + s * eps;
      }
      if (!(row_norm(h, k, c) <= cfg.divergence_threshold)) st.diverged[c] = true;
    }
  }
  st.h = Tensor::from({n, k}, std::move(h));
  if (cfg.record_trajectory) {
    auto fin = log_joint(model, y, st.h, cfg.sigma2, link, mask);
    auto hv = st.h.data();
    for (std::int64_t c = 0; c < n; ++c) st.trajectory[c].push_back({cfg.steps, fin[c], row_norm(hv, k, c)});
  }
  return st;
}

void dump_trajectory(const LatentState& state, std::ostream& os) {
  for (std::size_t c = 0; c < state.trajectory.size(); ++c) {
    for (const auto& p : state.trajectory[c]) {
      nlohmann::json rec{{"chain", c},
                         {"step", p.step},
                         {"log_joint", p.log_joint},
                         {"h_norm", p.h_norm},
                         {"diverged", c < state.diverged.size() && state.diverged[c]}};
      os << rec.dump() << '\n';
    }
  }
}

Tensor sample_prior(int latent_dim, Rng& rng, std::int64_t rows) {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  return rng.randn({rows, latent_dim});
}

Tensor binary_entropy(const Tensor& p) {
  Tensor pc = clamp(p, 1e-7, 1.0 - 1e-7);
  return -(pc * log(pc) + (1.0 - pc) * log(1.0 - pc));
}

std::vector<double> stable_mean(const std::vector<std::vector<double>>& maps) {
  if (maps.empty()) throw std::invalid_argument("stable_mean of no maps");
  std::vector<double> m = maps.front();
  std::vector<double> acc(m.size(), 0.0);
  for (std::size_t i = 1; i < maps.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) acc[j] += maps[i][j] - m[j];
  }
  double n = static_cast<double>(maps.size());
  for (std::size_t j = 0; j < m.size(); ++j) m[j] += acc[j] / n;
  return m;
}

Uncertainty predictive_uncertainty(const LatentModel& model, int latent_dim, std::int64_t rows, int n_samples,
                                   Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("predictive_uncertainty needs n_samples >= 1");
  NoGradGuard ng;
  std::vector<std::vector<double>> maps;
  Shape shape;
  for (int i = 0; i < n_samples; ++i) {
    Tensor h = latent_dim > 0 ? sample_prior(latent_dim, rng, rows) : Tensor::zeros({rows, 0});
    Tensor p = sigmoid(model(h));
    shape = p.shape();
    maps.push_back(p.to_vector());
  }
  Uncertainty u;
  u.mean = Tensor::from(shape, stable_mean(maps));
  u.entropy = binary_entropy(u.mean);
  return u;
}

}  // namespace salgen
