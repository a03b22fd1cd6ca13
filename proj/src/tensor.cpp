#include "salgen/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>

namespace salgen {

namespace {

std::atomic<Precision> g_precision{Precision::f64};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> values, bool rg) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("leaf", "shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = rg;
  return node;
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("shape", "negative extent in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail), op_(op) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                         requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("dim", "axis out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_ ? node_->value.size() : 0); }

std::span<const double> Tensor::data() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  if (!node_->is_leaf()) throw std::logic_error("mutable_data on non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", "tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at", "index rank mismatch for " + shape_str(s));
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[k]) throw ShapeError("at", "index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

std::vector<double> Tensor::to_vector() const { return {data().begin(), data().end()}; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw std::logic_error("use of undefined tensor");
  if (!node_->is_leaf()) throw std::logic_error("set_requires_grad on non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(new_leaf(shape(), node_->value, false)); }

Tensor Tensor::clone() const { return Tensor(new_leaf(shape(), node_->value, requires_grad())); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

void backward(const Tensor& root) {
  if (!root.defined()) throw std::logic_error("backward on undefined tensor");
  if (root.numel() != 1) {
    throw ShapeError("backward", "root must be scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
      node->requires_grad = false;
    }
  }
}

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  if (shape_numel(shape) != static_cast<std::int64_t>(value.size())) {
    throw ShapeError(op, "internal: result shape " + shape_str(shape) + " vs " +
                             std::to_string(value.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  if (t_grad_enabled) {
    for (const auto& t : inputs) tracked = tracked || t.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace salgen
