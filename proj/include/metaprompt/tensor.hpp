#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metaprompt/errors.hpp"

namespace metaprompt::ad {

/// Every tensor in the engine is a row-major matrix. Scalars are 1x1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Node;
class Tensor;

namespace detail {

/// Byte accounting for one thread. Tensors remember the counter of the thread
/// that allocated them so frees from another thread are charged correctly.
struct MemoryCounter {
  std::atomic<std::int64_t> live{0};
  std::atomic<std::int64_t> peak{0};
};

MemoryCounter& thread_memory_counter();

enum Flags : std::uint8_t {
  kNone = 0,
  // Depends on a gradient computed with the higher-order graph retained.
  kHigherOrder = 1u << 0,
  // Depends on a gradient computed without the higher-order graph.
  kDetachedGradient = 1u << 1,
};

struct TensorImpl {
  TensorImpl(Shape s, std::vector<double> values);
  ~TensorImpl();
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint8_t flags = kNone;
  std::shared_ptr<Node> grad_fn;
  MemoryCounter* owner;
};

}  // namespace detail

/// Handle to a dense matrix that may participate in a differentiation graph.
/// Copies share storage; use clone() for an independent value.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rows() const { return impl_->shape.rows; }
  std::size_t cols() const { return impl_->shape.cols; }
  std::size_t numel() const { return impl_->shape.numel(); }

  std::span<const double> data() const { return impl_->data; }
  /// Writable storage. Only leaves may be mutated in place.
  std::span<double> mutable_data();
  double operator()(std::size_t r, std::size_t c) const {
    return impl_->data[r * impl_->shape.cols + c];
  }
  /// Value of a 1x1 tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Marks a leaf as a differentiation target.
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

  bool depends_on_retained_gradient() const {
    return (impl_->flags & detail::kHigherOrder) != 0;
  }
  bool depends_on_detached_gradient() const {
    return (impl_->flags & detail::kDetachedGradient) != 0;
  }

  /// Leaf copy of the values, cut from any graph and from gradient provenance.
  Tensor detach() const;
  /// Deep copy preserving requires_grad on leaves; the copy is a fresh leaf.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

  // Internal constructor used by primitives.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// A recorded primitive application. Backward rules are written with the
/// same differentiable primitives, so a backward pass run with the graph
/// enabled is itself recorded and can be differentiated again.
class Node {
 public:
  explicit Node(std::vector<Tensor> inputs);
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  virtual const char* name() const = 0;
  /// Gradients for each input. Entries for inputs that do not require a
  /// gradient may be left as default (0x0) tensors.
  virtual std::vector<Tensor> backward(const Tensor& grad_output) const = 0;

  const std::vector<Tensor>& inputs() const { return inputs_; }
  std::uint64_t sequence() const { return sequence_; }

 protected:
  bool needs_grad(std::size_t i) const { return inputs_[i].requires_grad(); }

 private:
  std::vector<Tensor> inputs_;
  std::uint64_t sequence_;
};

/// Thread-local switch controlling whether primitives record graph nodes.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Number of graph nodes created on this thread since it started.
std::uint64_t graph_nodes_created();

/// Tracks the high-water mark of tensor bytes allocated on this thread while
/// the scope is alive, relative to the bytes live when it was opened.
class MemoryScope {
 public:
  MemoryScope();
  ~MemoryScope();
  MemoryScope(const MemoryScope&) = delete;
  MemoryScope& operator=(const MemoryScope&) = delete;

  std::int64_t peak_bytes() const;

 private:
  std::int64_t baseline_;
  std::int64_t saved_peak_;
};

std::int64_t live_tensor_bytes();

}  // namespace metaprompt::ad
