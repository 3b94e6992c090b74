#include "metaprompt/prompt.hpp"

#include <random>

#include "metaprompt/digest.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/ops.hpp"

namespace metaprompt {

SoftPrompt::SoftPrompt(ad::Tensor values, std::size_t d)
    : values_(std::move(values)), length_(values_.rows()), d_(d) {
  if (d_ == 0) throw ConfigError("prompt dimension must be positive");
  if (length_ > 0 && values_.cols() != d_) {
    throw ShapeError("prompt values " + values_.shape().str() +
                     " do not match d=" + std::to_string(d_));
  }
}

std::string SoftPrompt::digest() const {
  Digest digest;
  digest.update(static_cast<std::uint64_t>(length_));
  digest.update(static_cast<std::uint64_t>(d_));
  digest.update(values_.data());
  return digest.hex();
}

SoftPrompt init_prompt(int length, int d, std::uint64_t seed) {
  if (length < 0) throw ConfigError("prompt length must be non-negative");
  if (d <= 0) throw ConfigError("prompt dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  const auto rows = static_cast<std::size_t>(length);
  const auto cols = static_cast<std::size_t>(d);
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = dist(rng);
  return SoftPrompt(ad::Tensor(rows, cols, std::move(values), true), cols);
}

ad::Tensor compose(const SoftPrompt& prompt, const ad::Tensor& tokens) {
  if (tokens.cols() != prompt.d()) {
    throw ShapeError("compose: prompt d=" + std::to_string(prompt.d()) +
                     " but input is " + tokens.shape().str());
  }
  if (prompt.length() == 0) return tokens;
  const ad::Tensor parts[] = {prompt.values(), tokens};
  return ad::concat_rows(parts);
}

SoftPrompt clone_prompt(const SoftPrompt& prompt) {
  ad::Tensor copy = prompt.values().detach();
  copy.set_requires_grad(true);
  return SoftPrompt(std::move(copy), prompt.d());
}

}  // namespace metaprompt
