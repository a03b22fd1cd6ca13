#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace salgen {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Arithmetic precision of the dense kernels (matmul, convolution).
/// Storage and elementwise math are always double; f32 rounds GEMM operands
/// and results to single precision.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

/// Thrown when operand shapes are inconsistent for a primitive.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::string& detail);
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major tensor participating in a reverse-mode differentiation
/// graph. Copies are shallow: two Tensor handles may share one node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<const double> data() const;
  /// Writable view; only allowed on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// A new leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;
  /// Deep copy as a leaf with the same requires_grad flag.
  Tensor clone() const;
  const char* op_name() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Reverse pass from a scalar root. Every graph-tracked leaf reachable from
/// the root accumulates dRoot/dLeaf; the intermediate graph is released.
void backward(const Tensor& root);

namespace detail {

/// Builds an op result. When no input is tracked (or grad mode is off) the
/// backward closure and inputs are dropped.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace salgen
