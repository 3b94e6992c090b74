#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metaprompt/autodiff.hpp"
#include "metaprompt/tensor.hpp"

namespace testing_util {

using metaprompt::ad::Tensor;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0, bool requires_grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor(rows, cols, std::move(v), requires_grad);
}

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed,
                             double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor(rows, cols, std::move(v), true);
}

inline Tensor with_values(const Tensor& like, std::vector<double> values) {
  return Tensor(like.rows(), like.cols(), std::move(values), like.requires_grad());
}

/// |a - b| relative to the larger magnitude, floored so exact zeros compare.
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Central finite differences of a scalar function, one gradient per input.
inline std::vector<std::vector<double>> numeric_gradients(const ScalarFn& f,
                                                          const std::vector<Tensor>& inputs,
                                                          double h = 1e-6) {
  std::vector<std::vector<double>> grads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto base = inputs[k].data();
    std::vector<double> g(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      std::vector<double> plus(base.begin(), base.end());
      std::vector<double> minus = plus;
      plus[i] += h;
      minus[i] -= h;
      auto args_p = inputs;
      auto args_m = inputs;
      args_p[k] = with_values(inputs[k], plus);
      args_m[k] = with_values(inputs[k], minus);
      g[i] = (f(args_p).item() - f(args_m).item()) / (2 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Largest relative error between analytic and numeric gradients, with an
/// absolute floor below which differences are not scaled up.
inline double gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                             double h = 1e-6, double floor = 1e-6) {
  const Tensor loss = f(inputs);
  const auto analytic = metaprompt::ad::backward(loss, inputs).grads;
  const auto numeric = numeric_gradients(f, inputs, h);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < numeric[k].size(); ++i) {
      worst = std::max(worst, rel_error(analytic[k].data()[i], numeric[k][i], floor));
    }
  }
  return worst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("metaprompt_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
