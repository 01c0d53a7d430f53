#include "ccaps/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ccaps::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, Buffer values) {
  if (values.size() != numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Buffer& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, Buffer values) { return Tensor(new_node(std::move(shape), std::move(values))); }

Tensor Tensor::constant(Shape shape, std::span<const double> values) {
  return constant(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::constant(Shape shape, std::initializer_list<double> values) {
  return constant(std::move(shape), Buffer(values));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), Buffer(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  const auto n = numel(shape);
  return constant(std::move(shape), Buffer(n, v));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::span<const double> values) {
  return parameter(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::parameter(Shape shape, Buffer values) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = true;
  return Tensor(std::move(node));
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.size() < 2) return 1;
  return numel(s) / s[0];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() {
  if (size() != 1) throw DimensionError("backward() needs a one-element root, got " + to_string(shape()));
  if (!node_->requires_grad) return;

  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{node_};
  seen.insert(node_.get());
  while (!stack.empty()) {
    std::shared_ptr<Node> n = std::move(stack.back());
    stack.pop_back();
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });

  node_->ensure_grad()[0] += 1.0;
  for (const auto& n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release the tape: interior nodes drop their links so the graph can be
  // reclaimed even while handles to intermediate results survive.
  for (const auto& n : order) {
    if (!n->parents.empty()) {
      n->parents.clear();
      n->backward_fn = nullptr;
    }
  }
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, Buffer values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = new_node(std::move(shape), std::move(values));
  if (t_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace ccaps::ad
