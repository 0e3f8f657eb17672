#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace polyreg::ad {

/// Dimensions, outermost first: [batch, channels, length] or
/// [batch, channels, height, width] for feature maps, [batch, features]
/// for vectors, [] for scalars.
using Shape = std::vector<int>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value of the define-by-run graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized to value on first accumulation
  bool requires_grad = false;
  std::uint64_t sequence = 0;  // execution order within the recording thread
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;  // pushes this->grad into parents

  void accumulate(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

/// Shared handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  /// A leaf that never receives gradient.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  /// A trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  /// Gradient accumulated by backward; zeros if none arrived yet.
  std::span<const double> grad() const;
  void zero_grad();
  double item() const;

  Node& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Creates a non-leaf node produced by an op on `parents`. The node requires
/// grad whenever any parent does; `backward` is dropped otherwise.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward);

/// Reverse-mode sweep from a scalar: seeds d(root)/d(root) = 1 and visits
/// every reachable node in exact reverse execution order, accumulating (+=).
void backward(const Tensor& root);

/// While alive, ops on the calling thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables a finite-value check after every op on the calling thread.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace polyreg::ad
