#include "salgen/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace salgen {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return items_[it->second].second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& [n, _] : items_) out.push_back(n);
  return out;
}

std::int64_t ParamStore::count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) {
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  }
  return n;
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& [_, t] : items_) t.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, t] : items_) {
    if (name.rfind(prefix, 0) != 0) continue;
    mix(name.data(), name.size());
    auto d = t.data();
    mix(d.data(), d.size() * sizeof(double));
  }
  return h;
}

FrozenParams::FrozenParams(ParamStore& store) : store_(store) {
  for (auto& [_, t] : store_.entries()) {
    saved_.push_back(t.requires_grad());
    t.set_requires_grad(false);
  }
}

FrozenParams::~FrozenParams() {
  std::size_t i = 0;
  for (auto& [_, t] : store_.entries()) t.set_requires_grad(saved_[i++]);
}

Tensor he_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
  return rng.randn(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor trunc_normal(Rng& rng, Shape shape, double stddev) {
  auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    double z;
    do z = rng.normal();
    while (std::abs(z) > 2.0);
    x = z * stddev;
  }
  return Tensor::from(std::move(shape), std::move(v));
}

void add_conv(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, int k, bool bias,
              bool zero) {
  Shape ws{out, in, k, k};
  ps.add(name + ".w", zero ? Tensor::zeros(ws) : he_normal(rng, ws, in * k * k));
  if (bias) ps.add(name + ".b", Tensor::zeros({out}));
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, bool bias,
                bool zero) {
  ps.add(name + ".w", zero ? Tensor::zeros({in, out}) : trunc_normal(rng, {in, out}, 0.02));
  if (bias) ps.add(name + ".b", Tensor::zeros({out}));
}

void add_norm(ParamStore& ps, const std::string& name, std::int64_t dim) {
  ps.add(name + ".g", Tensor::ones({dim}));
  ps.add(name + ".b", Tensor::zeros({dim}));
}

Tensor conv(const ParamStore& ps, const std::string& name, const Tensor& x, Conv2dOptions opt) {
  const std::string bn = name + ".b";
  return conv2d(x, ps.get(name + ".w"), ps.contains(bn) ? ps.get(bn) : Tensor(), opt);
}

Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x) {
  Tensor y = matmul(x, ps.get(name + ".w"));
  const std::string bn = name + ".b";
  return ps.contains(bn) ? add(y, ps.get(bn)) : y;
}

Tensor norm(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return layer_norm(x, ps.get(name + ".g"), ps.get(name + ".b"));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() != 4) throw ShapeError("batch_norm", "expected NCHW input");
  std::int64_t c = x.dim(1);
  Tensor mu = mean(x, {0, 2, 3}, true);
  Tensor xc = x - mu;
  Tensor var = mean(square(xc), {0, 2, 3}, true);
  Tensor xn = xc / sqrt(var + eps);
  return xn * reshape(gamma, {1, c, 1, 1}) + reshape(beta, {1, c, 1, 1});
}

}  // namespace salgen
