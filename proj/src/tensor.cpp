#include "metaprompt/tensor.hpp"

#include <algorithm>

namespace metaprompt::ad {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_nodes_created = 0;

void bump_peak(detail::MemoryCounter& counter, std::int64_t live) {
  std::int64_t peak = counter.peak.load(std::memory_order_relaxed);
  while (live > peak &&
         !counter.peak.compare_exchange_weak(peak, live,
                                             std::memory_order_relaxed)) {
  }
}

}  // namespace

std::string Shape::str() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

namespace detail {

MemoryCounter& thread_memory_counter() {
  thread_local MemoryCounter counter;
  return counter;
}

TensorImpl::TensorImpl(Shape s, std::vector<double> values)
    : shape(s), data(std::move(values)), owner(&thread_memory_counter()) {
  if (data.size() != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  const auto bytes = static_cast<std::int64_t>(data.size() * sizeof(double));
  const auto live =
      owner->live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  bump_peak(*owner, live);
}

TensorImpl::~TensorImpl() {
  owner->live.fetch_sub(static_cast<std::int64_t>(data.size() * sizeof(double)),
                        std::memory_order_relaxed);
}

}  // namespace detail

Tensor::Tensor() : Tensor(0, 0, {}) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
               bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>(Shape{rows, cols},
                                                 std::move(values))) {
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) {
    throw ContractError("in-place mutation of a non-leaf tensor");
  }
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape().str());
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) {
    throw ContractError("requires_grad can only be set on a leaf tensor");
  }
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return Tensor(rows(), cols(), impl_->data); }

Tensor Tensor::clone() const {
  Tensor copy(rows(), cols(), impl_->data);
  if (is_leaf()) copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

Node::Node(std::vector<Tensor> inputs)
    : inputs_(std::move(inputs)), sequence_(++t_nodes_created) {}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t graph_nodes_created() { return t_nodes_created; }

MemoryScope::MemoryScope() {
  auto& counter = detail::thread_memory_counter();
  baseline_ = counter.live.load(std::memory_order_relaxed);
  saved_peak_ = counter.peak.exchange(baseline_, std::memory_order_relaxed);
}

MemoryScope::~MemoryScope() {
  auto& counter = detail::thread_memory_counter();
  bump_peak(counter, saved_peak_);
}

std::int64_t MemoryScope::peak_bytes() const {
  const auto peak =
      detail::thread_memory_counter().peak.load(std::memory_order_relaxed);
  return std::max<std::int64_t>(0, peak - baseline_);
}

std::int64_t live_tensor_bytes() {
  return detail::thread_memory_counter().live.load(std::memory_order_relaxed);
}

}  // namespace metaprompt::ad
