#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ccaps/errors.hpp"

namespace ccaps::ad {

using Shape = std::vector<std::size_t>;

/// Allocator handing out 64-byte aligned storage. Vectorized reductions peel
/// according to the address, so aligned buffers keep sums bitwise
/// reproducible regardless of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// A single vertex of the reverse-mode graph. Parents are always created
// before children, so a descending id order is a valid reverse topological
// order for backward().
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Buffer& ensure_grad();
};

/// Handle to a node of the computation graph.
///
/// Copies share the node. Values are dense, row-major doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, Buffer values);
  static Tensor constant(Shape shape, std::span<const double> values);
  static Tensor constant(Shape shape, std::initializer_list<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  /// Leaf that accumulates gradients (a learnable parameter).
  static Tensor parameter(Shape shape, Buffer values);
  static Tensor parameter(Shape shape, std::span<const double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::uint64_t id() const { return node_->id; }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  /// Empty span when no gradient has reached this node.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Backpropagates from a one-element tensor, seeding d(self)/d(self) = 1.
  /// Intermediate graph links are released afterwards; leaf gradients are
  /// accumulated (call zero_grad() between steps).
  void backward();

  /// Same tensor values, detached from the graph.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a result node. When no parent needs gradients (or recording is
/// off) the backward closure and parent links are dropped.
Tensor make_result(Shape shape, Buffer values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

/// True when every value is finite.
bool all_finite(const Tensor& t);

}  // namespace ccaps::ad
