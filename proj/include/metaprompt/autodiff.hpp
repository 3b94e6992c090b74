#pragma once

#include <span>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt::ad {

struct GradResult {
  /// One gradient per requested target, shaped like the target.
  std::vector<Tensor> grads;
  /// Targets the loss does not depend on; their gradient is zero.
  std::vector<bool> unreachable;

  bool warning() const;
};

/// Reverse-mode gradients of a scalar loss. With retain_for_higher_order the
/// backward pass is itself recorded, so the returned gradients can be
/// differentiated again.
GradResult backward(const Tensor& loss, std::span<const Tensor> wrt,
                    bool retain_for_higher_order = false);

/// Gradient of a meta-objective that was built through at least one gradient
/// computed with retain_for_higher_order=true. Throws HigherOrderGraphAbsent
/// when the objective only saw detached gradients, rather than silently
/// returning the first-order approximation.
Tensor grad_of_grad(const Tensor& meta_loss, const Tensor& wrt);

}  // namespace metaprompt::ad
