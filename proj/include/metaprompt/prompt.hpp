#pragma once

#include <cstdint>
#include <string>

#include "metaprompt/tensor.hpp"

namespace metaprompt {

/// The learnable prompt matrix P (l x d), the only trainable parameters in the
/// system. During a differentiable inner loop the held tensor may be an
/// intermediate of the graph rather than a leaf.
class SoftPrompt {
 public:
  SoftPrompt() = default;
  /// Takes `values` as the prompt tensor. d must be positive.
  SoftPrompt(ad::Tensor values, std::size_t d);

  std::size_t length() const { return length_; }
  std::size_t d() const { return d_; }
  const ad::Tensor& values() const { return values_; }
  ad::Tensor& values() { return values_; }

  std::string digest() const;

 private:
  ad::Tensor values_;
  std::size_t length_ = 0;
  std::size_t d_ = 0;
};

/// Seeded Gaussian(0, 0.02^2) prompt with requires_grad set. l = 0 is allowed.
SoftPrompt init_prompt(int length, int d, std::uint64_t seed);

/// [P; X]: prompt rows first, then the token rows.
ad::Tensor compose(const SoftPrompt& prompt, const ad::Tensor& tokens);

/// Independent deep copy; the copy is a fresh leaf with requires_grad set.
SoftPrompt clone_prompt(const SoftPrompt& prompt);

}  // namespace metaprompt
