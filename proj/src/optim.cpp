#include "salgen/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace salgen {

void OptimConfig::validate() const {
  if (kind != "adamw" && kind != "sgd") throw std::invalid_argument("optimizer must be adamw or sgd, got " + kind);
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("adam betas must be in [0,1)");
  if (!(eps > 0.0) || !(weight_decay >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("invalid optimizer constants");
  }
}

std::vector<double>& Optimizer::slot(std::unordered_map<std::string, std::vector<double>>& m, const std::string& name,
                                     std::size_t n) {
  auto& s = m[name];
  if (s.size() != n) s.assign(n, 0.0);
  return s;
}

void Optimizer::step(ParamStore& ps) {
  for (auto& [name, t] : ps.entries()) {
    if (t.requires_grad() && !t.has_grad()) throw std::logic_error("missing gradient for parameter " + name);
  }
  ++t_;
  for (auto& [name, t] : ps.entries()) {
    if (!t.requires_grad()) continue;
    update(name, t.mutable_data(), t.grad());
  }
}

void AdamW::update(const std::string& name, std::span<double> p, std::span<const double> g) {
  auto& m = slot(m_, name, p.size());
  auto& v = slot(v_, name, p.size());
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] *= decay;
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
  }
}

void SgdMomentum::update(const std::string& name, std::span<double> p, std::span<const double> g) {
  auto& v = slot(m_, name, p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double gi = g[i] + cfg_.weight_decay * p[i];
    v[i] = cfg_.momentum * v[i] + gi;
    p[i] -= cfg_.lr * v[i];
  }
}

void Optimizer::save_state(Checkpoint& ck, const std::string& tag) const {
  ck.meta["optimizer"][tag] = {{"kind", cfg_.kind}, {"steps", t_}};
  auto dump = [&](const std::unordered_map<std::string, std::vector<double>>& m, const std::string& slot_name) {
    // sorted for a stable file layout
    std::vector<std::string> names;
    for (const auto& [n, _] : m) names.push_back(n);
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
      const auto& v = m.at(n);
      ck.put("opt." + tag + "." + slot_name + "." + n, Tensor::from({static_cast<std::int64_t>(v.size())}, v));
    }
  };
  dump(m_, "m");
  dump(v_, "v");
}

void Optimizer::load_state(const Checkpoint& ck, const std::string& tag, const ParamStore& ps) {
  const auto& meta = ck.meta.at("optimizer").at(tag);
  if (meta.at("kind").get<std::string>() != cfg_.kind) {
    throw CheckpointError("optimizer kind in checkpoint differs from config for " + tag);
  }
  t_ = meta.at("steps").get<std::int64_t>();
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : ps.entries()) {
    for (auto [slot_name, store] : {std::pair{"m", &m_}, std::pair{"v", &v_}}) {
      std::string key = "opt." + tag + "." + slot_name + "." + name;
      if (!ck.contains(key)) continue;
      auto d = ck.get(key).data();
      if (static_cast<std::int64_t>(d.size()) != t.numel()) throw CheckpointError("optimizer slot size mismatch: " + key);
      (*store)[name].assign(d.begin(), d.end());
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimConfig& cfg) {
  cfg.validate();
  if (cfg.kind == "adamw") return std::make_unique<AdamW>(cfg);
  return std::make_unique<SgdMomentum>(cfg);
}

}  // namespace salgen
