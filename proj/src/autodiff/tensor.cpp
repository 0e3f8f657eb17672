#include "polyreg/autodiff/tensor.hpp"

#include "polyreg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace polyreg::ad {

namespace {

thread_local std::uint64_t g_sequence = 0;
#ifdef NDEBUG
thread_local bool g_finite_checks = false;
#else
thread_local bool g_finite_checks = true;
#endif
thread_local bool g_no_grad = false;

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidArgument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (element_count(shape) != values.size()) {
    throw InvalidArgument("tensor of shape " + shape_string(shape) + " cannot hold " + std::to_string(values.size()) +
                          " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->sequence = ++g_sequence;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = element_count(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("item() needs a single-element tensor, got " + shape_string(shape()));
  return node_->value[0];
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  if (g_finite_checks) {
    const auto bad = std::find_if(value.begin(), value.end(), [](double v) { return !std::isfinite(v); });
    if (bad != value.end()) {
      throw std::runtime_error("non-finite value produced by op with output shape " + shape_string(shape));
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->sequence = ++g_sequence;
  node->requires_grad =
      !g_no_grad && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& root) {
  if (root.numel() != 1) throw InvalidArgument("backward() starts from a scalar, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{&root.node()};
  seen.insert(&root.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->sequence > b->sequence; });

  root.node().grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward) {
      n->grad_buffer();
      n->backward(*n);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

}  // namespace polyreg::ad
