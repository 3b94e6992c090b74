#include "metaprompt/ops.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace metaprompt::ad {

namespace {

template <class Rule>
class RuleNode final : public Node {
 public:
  RuleNode(const char* name, std::vector<Tensor> inputs, Rule rule)
      : Node(std::move(inputs)), name_(name), rule_(std::move(rule)) {}

  const char* name() const override { return name_; }

  std::vector<Tensor> backward(const Tensor& grad_output) const override {
    return rule_(inputs(), grad_output);
  }

 private:
  const char* name_;
  Rule rule_;
};

void check_finite(const char* op, const std::vector<double>& values) {
  // NaN and Inf are exactly the values whose exponent bits are all set.
  constexpr std::uint64_t kExponent = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) {
    bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExponent) ==
                                      kExponent);
  }
  if (bad != 0) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

/// Wraps computed values into a tensor, recording a node when needed.
template <class Rule>
Tensor finish(const char* op, Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, Rule rule) {
  check_finite(op, values);
  auto impl = std::make_shared<detail::TensorImpl>(shape, std::move(values));
  bool any_grad = false;
  for (const auto& in : inputs) {
    impl->flags |= in.impl()->flags;
    any_grad = any_grad || in.requires_grad();
  }
  if (any_grad && grad_enabled()) {
    impl->requires_grad = true;
    impl->grad_fn =
        std::make_shared<RuleNode<Rule>>(op, std::move(inputs), std::move(rule));
  }
  return Tensor(std::move(impl));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

using Grads = std::vector<Tensor>;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish("add", a.shape(), std::move(out), {a, b},
                [](const Grads& in, const Tensor& g) {
                  Grads r(2);
                  if (in[0].requires_grad()) r[0] = g;
                  if (in[1].requires_grad()) r[1] = g;
                  return r;
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish("sub", a.shape(), std::move(out), {a, b},
                [](const Grads& in, const Tensor& g) {
                  Grads r(2);
                  if (in[0].requires_grad()) r[0] = g;
                  if (in[1].requires_grad()) r[1] = scale(g, -1.0);
                  return r;
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish("mul", a.shape(), std::move(out), {a, b},
                [](const Grads& in, const Tensor& g) {
                  Grads r(2);
                  if (in[0].requires_grad()) r[0] = mul(g, in[1]);
                  if (in[1].requires_grad()) r[1] = mul(g, in[0]);
                  return r;
                });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return finish("scale", a.shape(), std::move(out), {a},
                [factor](const Grads&, const Tensor& g) {
                  return Grads{scale(g, factor)};
                });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return finish("add_scalar", a.shape(), std::move(out), {a},
                [](const Grads&, const Tensor& g) { return Grads{g}; });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree for " +
                     a.shape().str() + (ta ? "^T" : "") + " x " +
                     b.shape().str() + (tb ? "^T" : ""));
  }
  std::vector<double> out(m * n);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> A(a.data().data(), static_cast<long>(a.rows()),
                                   static_cast<long>(a.cols()));
  const Eigen::Map<const RowMat> B(b.data().data(), static_cast<long>(b.rows()),
                                   static_cast<long>(b.cols()));
  Eigen::Map<RowMat> C(out.data(), static_cast<long>(m), static_cast<long>(n));
  if (m * n > 0) {
    if (k == 0) {
      C.setZero();
    } else if (!ta && !tb) {
      C.noalias() = A * B;
    } else if (!ta && tb) {
      C.noalias() = A * B.transpose();
    } else if (ta && !tb) {
      C.noalias() = A.transpose() * B;
    } else {
      C.noalias() = A.transpose() * B.transpose();
    }
  }
  return finish(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [ta, tb](const Grads& in, const Tensor& g) {
        const Tensor& A = in[0];
        const Tensor& B = in[1];
        Grads r(2);
        if (A.requires_grad()) {
          if (!ta && !tb) r[0] = matmul(g, B, false, true);
          if (!ta && tb) r[0] = matmul(g, B, false, false);
          if (ta && !tb) r[0] = matmul(B, g, false, true);
          if (ta && tb) r[0] = matmul(B, g, true, true);
        }
        if (B.requires_grad()) {
          if (!ta && !tb) r[1] = matmul(A, g, true, false);
          if (!ta && tb) r[1] = matmul(g, A, true, false);
          if (ta && !tb) r[1] = matmul(A, g, false, false);
          if (ta && tb) r[1] = matmul(g, A, true, true);
        }
        return r;
      });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return finish("transpose", Shape{c, r}, std::move(out), {a},
                [](const Grads&, const Tensor& g) {
                  return Grads{transpose(g)};
                });
}

Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  if (row.rows() != 1) {
    throw ShapeError("broadcast_rows expects a 1xC row, got " +
                     row.shape().str());
  }
  const std::size_t c = row.cols();
  std::vector<double> out(rows * c);
  const auto x = row.data();
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(x.begin(), x.end(), out.begin() + static_cast<long>(i * c));
  return finish("broadcast_rows", Shape{rows, c}, std::move(out), {row},
                [](const Grads&, const Tensor& g) {
                  return Grads{sum_rows(g)};
                });
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  std::vector<double> out(c, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  return finish("sum_rows", Shape{1, c}, std::move(out), {a},
                [r](const Grads&, const Tensor& g) {
                  return Grads{broadcast_rows(g, r)};
                });
}

Tensor broadcast_cols(const Tensor& col, std::size_t cols) {
  if (col.cols() != 1) {
    throw ShapeError("broadcast_cols expects an Rx1 column, got " +
                     col.shape().str());
  }
  const std::size_t r = col.rows();
  std::vector<double> out(r * cols);
  const auto x = col.data();
  for (std::size_t i = 0; i < r; ++i)
    std::fill_n(out.begin() + static_cast<long>(i * cols), cols, x[i]);
  return finish("broadcast_cols", Shape{r, cols}, std::move(out), {col},
                [](const Grads&, const Tensor& g) {
                  return Grads{sum_cols(g)};
                });
}

Tensor sum_cols(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  std::vector<double> out(r, 0.0);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x[i * c + j];
    out[i] = acc;
  }
  return finish("sum_cols", Shape{r, 1}, std::move(out), {a},
                [c](const Grads&, const Tensor& g) {
                  return Grads{broadcast_cols(g, c)};
                });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const Shape s = a.shape();
  return finish("sum", Shape{1, 1}, {acc}, {a},
                [s](const Grads&, const Tensor& g) {
                  return Grads{broadcast_scalar(g, s.rows, s.cols)};
                });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor broadcast_scalar(const Tensor& s, std::size_t rows, std::size_t cols) {
  const double v = s.item();
  return finish("broadcast_scalar", Shape{rows, cols},
                std::vector<double>(rows * cols, v), {s},
                [](const Grads&, const Tensor& g) { return Grads{sum(g)}; });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return finish("exp", a.shape(), std::move(out), {a},
                [](const Grads& in, const Tensor& g) {
                  return Grads{mul(g, exp(in[0]))};
                });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return finish("log", a.shape(), std::move(out), {a},
                [](const Grads& in, const Tensor& g) {
                  return Grads{mul(g, pow(in[0], -1.0))};
                });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return finish("tanh", a.shape(), std::move(out), {a},
                [](const Grads& in, const Tensor& g) {
                  const Tensor t = tanh(in[0]);
                  return Grads{sub(g, mul(g, mul(t, t)))};
                });
}

Tensor pow(const Tensor& a, double exponent) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  auto apply = [&](auto f) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  };
  if (exponent == 1.0) {
    apply([](double v) { return v; });
  } else if (exponent == 2.0) {
    apply([](double v) { return v * v; });
  } else if (exponent == 3.0) {
    apply([](double v) { return v * v * v; });
  } else if (exponent == -1.0) {
    apply([](double v) { return 1.0 / v; });
  } else if (exponent == -0.5) {
    apply([](double v) { return 1.0 / std::sqrt(v); });
  } else if (exponent == -1.5) {
    apply([](double v) { return 1.0 / (v * std::sqrt(v)); });
  } else {
    apply([exponent](double v) { return std::pow(v, exponent); });
  }
  return finish("pow", a.shape(), std::move(out), {a},
                [exponent](const Grads& in, const Tensor& g) {
                  if (exponent == 1.0) return Grads{g};
                  return Grads{
                      mul(g, scale(pow(in[0], exponent - 1.0), exponent))};
                });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  const auto x = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) +
                       " out of range for " + std::to_string(table.rows()) +
                       " rows");
    }
    std::copy_n(x.begin() + static_cast<long>(ids[i] * c), c,
                out.begin() + static_cast<long>(i * c));
  }
  const std::size_t rows = table.rows();
  return finish("gather_rows", Shape{ids.size(), c}, std::move(out), {table},
                [idx = std::vector<int>(ids.begin(), ids.end()), rows](
                    const Grads&, const Tensor& g) {
                  return Grads{scatter_rows(g, idx, rows)};
                });
}

Tensor scatter_rows(const Tensor& src, std::span<const int> ids,
                    std::size_t rows) {
  if (src.rows() != ids.size()) {
    throw ShapeError("scatter_rows: " + std::to_string(ids.size()) +
                     " ids for source " + src.shape().str());
  }
  const std::size_t c = src.cols();
  std::vector<double> out(rows * c, 0.0);
  const auto x = src.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError("scatter_rows: id " + std::to_string(ids[i]) +
                       " out of range");
    }
    for (std::size_t j = 0; j < c; ++j) out[ids[i] * c + j] += x[i * c + j];
  }
  return finish("scatter_rows", Shape{rows, c}, std::move(out), {src},
                [idx = std::vector<int>(ids.begin(), ids.end())](
                    const Grads&, const Tensor& g) {
                  return Grads{gather_rows(g, idx)};
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceed " +
                     a.shape().str());
  }
  const std::size_t c = a.cols();
  const auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<long>(begin * c),
                          x.begin() + static_cast<long>((begin + count) * c));
  const std::size_t total = a.rows();
  return finish("slice_rows", Shape{count, c}, std::move(out), {a},
                [begin, total](const Grads&, const Tensor& g) {
                  return Grads{pad_rows(g, begin, total)};
                });
}

Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows) {
  if (begin + a.rows() > total_rows) {
    throw ShapeError("pad_rows: " + a.shape().str() + " at row " +
                     std::to_string(begin) + " exceeds " +
                     std::to_string(total_rows) + " rows");
  }
  const std::size_t c = a.cols();
  std::vector<double> out(total_rows * c, 0.0);
  std::copy(a.data().begin(), a.data().end(),
            out.begin() + static_cast<long>(begin * c));
  const std::size_t count = a.rows();
  return finish("pad_rows", Shape{total_rows, c}, std::move(out), {a},
                [begin, count](const Grads&, const Tensor& g) {
                  return Grads{slice_rows(g, begin, count)};
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceed " +
                     a.shape().str());
  }
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const auto x = a.data();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.begin() + static_cast<long>(i * c + begin), count,
                out.begin() + static_cast<long>(i * count));
  return finish("slice_cols", Shape{r, count}, std::move(out), {a},
                [begin, c](const Grads&, const Tensor& g) {
                  return Grads{pad_cols(g, begin, c)};
                });
}

Tensor pad_cols(const Tensor& a, std::size_t begin, std::size_t total_cols) {
  if (begin + a.cols() > total_cols) {
    throw ShapeError("pad_cols: " + a.shape().str() + " at col " +
                     std::to_string(begin) + " exceeds " +
                     std::to_string(total_cols) + " cols");
  }
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const auto x = a.data();
  std::vector<double> out(r * total_cols, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.begin() + static_cast<long>(i * c), c,
                out.begin() + static_cast<long>(i * total_cols + begin));
  return finish("pad_cols", Shape{r, total_cols}, std::move(out), {a},
                [begin, c](const Grads&, const Tensor& g) {
                  return Grads{slice_cols(g, begin, c)};
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero parts");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " +
                       parts.front().shape().str() + " vs " + p.shape().str());
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return finish("concat_rows", Shape{total, c}, std::move(out),
                std::vector<Tensor>(parts.begin(), parts.end()),
                [](const Grads& in, const Tensor& g) {
                  Grads r(in.size());
                  std::size_t offset = 0;
                  for (std::size_t i = 0; i < in.size(); ++i) {
                    if (in[i].requires_grad())
                      r[i] = slice_rows(g, offset, in[i].rows());
                    offset += in[i].rows();
                  }
                  return r;
                });
}

Tensor pick(const Tensor& a, std::span<const int> index) {
  if (index.size() != a.rows()) {
    throw ShapeError("pick: " + std::to_string(index.size()) +
                     " indices for " + a.shape().str());
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.rows());
  const auto x = a.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) {
      throw IndexError("target index " + std::to_string(index[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    out[i] = x[i * c + static_cast<std::size_t>(index[i])];
  }
  return finish("pick", Shape{a.rows(), 1}, std::move(out), {a},
                [idx = std::vector<int>(index.begin(), index.end()), c](
                    const Grads&, const Tensor& g) {
                  return Grads{place(g, idx, c)};
                });
}

Tensor place(const Tensor& col, std::span<const int> index, std::size_t cols) {
  if (col.cols() != 1 || col.rows() != index.size()) {
    throw ShapeError("place: column " + col.shape().str() + " with " +
                     std::to_string(index.size()) + " indices");
  }
  std::vector<double> out(col.rows() * cols, 0.0);
  const auto x = col.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= cols) {
      throw IndexError("place: index " + std::to_string(index[i]) +
                       " out of range");
    }
    out[i * cols + static_cast<std::size_t>(index[i])] = x[i];
  }
  return finish("place", Shape{col.rows(), cols}, std::move(out), {col},
                [idx = std::vector<int>(index.begin(), index.end())](
                    const Grads&, const Tensor& g) {
                  return Grads{pick(g, idx)};
                });
}

Tensor row_max(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (c == 0) throw ShapeError("row_max of a tensor with no columns");
  std::vector<double> out(r);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = *std::max_element(x.begin() + static_cast<long>(i * c),
                               x.begin() + static_cast<long>((i + 1) * c));
  }
  return Tensor(r, 1, std::move(out));
}

namespace {

bool is_constant_fill(const Tensor& t, double value) {
  if (t.requires_grad()) return false;
  return std::all_of(t.data().begin(), t.data().end(),
                     [value](double v) { return v == value; });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::size_t r = x.rows();
  const std::size_t n = x.cols();
  if (gain.shape() != Shape{1, n} || bias.shape() != Shape{1, n}) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const Tensor mu = scale(sum_cols(x), inv_n);
  const Tensor centered = sub(x, broadcast_cols(mu, n));
  const Tensor var = scale(sum_cols(mul(centered, centered)), inv_n);
  const Tensor inv_std = pow(add_scalar(var, eps), -0.5);
  Tensor y = mul(centered, broadcast_cols(inv_std, n));
  // Multiplying by exact ones or adding exact zeros is the identity; skipping
  // those steps leaves results bit-identical.
  if (!is_constant_fill(gain, 1.0)) y = mul(y, broadcast_rows(gain, r));
  if (!is_constant_fill(bias, 0.0)) y = add(y, broadcast_rows(bias, r));
  return y;
}

namespace {

constexpr int kMaxGeluOrder = 3;

/// n-th derivative of the tanh-approximated GELU, n in [0, 3].
double gelu_derivative(double x, int order) {
  constexpr double a = 0.044715;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double u1 = c * (1.0 + 3.0 * a * x * x);
  const double t = std::tanh(c * (x + a * x * x * x));
  const double s = 1.0 - t * t;
  const double t1 = s * u1;
  if (order == 0) return 0.5 * x * (1.0 + t);
  if (order == 1) return 0.5 * (1.0 + t) + 0.5 * x * t1;
  const double u2 = 6.0 * a * c * x;
  const double t2 = -2.0 * t * s * u1 * u1 + s * u2;
  if (order == 2) return t1 + 0.5 * x * t2;
  const double u3 = 6.0 * a * c;
  const double t3 = -2.0 * s * s * u1 * u1 * u1 + 4.0 * t * t * s * u1 * u1 * u1 -
                    6.0 * t * s * u1 * u2 + s * u3;
  return 1.5 * t2 + 0.5 * x * t3;
}

Tensor gelu_order(const Tensor& x, int order) {
  if (order > kMaxGeluOrder) {
    throw ContractError("gelu: derivative order " + std::to_string(order) +
                        " is not supported");
  }
  std::vector<double> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_derivative(v[i], order);
  return finish(order == 0 ? "gelu" : "gelu_derivative", x.shape(), std::move(out),
                {x}, [order](const Grads& in, const Tensor& g) {
                  return Grads{mul(g, gelu_order(in[0], order + 1))};
                });
}

}  // namespace

Tensor gelu(const Tensor& x) { return gelu_order(x, 0); }

Tensor softmax_rows(const Tensor& x) {
  const std::size_t c = x.cols();
  const Tensor shifted = sub(x, broadcast_cols(row_max(x), c));
  const Tensor e = exp(shifted);
  const Tensor inv_total = pow(sum_cols(e), -1.0);
  return mul(e, broadcast_cols(inv_total, c));
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const std::uint8_t> visible) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention: q " + q.shape().str() + ", k " +
                     k.shape().str() + ", v " + v.shape().str());
  }
  const std::size_t tq = q.rows();
  const std::size_t tk = k.rows();
  if (visible.size() != tq * tk) {
    throw ShapeError("attention: visibility mask has " +
                     std::to_string(visible.size()) + " entries, expected " +
                     std::to_string(tq * tk));
  }
  constexpr double kMasked = -1e30;
  std::vector<double> mask(tq * tk, 0.0);
  bool any = false;
  for (std::size_t i = 0; i < tq; ++i) {
    bool row_visible = false;
    for (std::size_t j = 0; j < tk; ++j) {
      if (visible[i * tk + j]) {
        row_visible = true;
      } else {
        mask[i * tk + j] = kMasked;
        any = true;
      }
    }
    if (!row_visible) {
      throw ContractError("attention: query row " + std::to_string(i) +
                          " sees no keys");
    }
  }
  Tensor scores =
      scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (any) scores = add(scores, Tensor(tq, tk, std::move(mask)));
  return matmul(softmax_rows(scores), v);
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t query_offset) {
  if (query_offset + q.rows() > k.rows()) {
    throw ShapeError("causal_attention: query positions exceed key length");
  }
  const std::size_t tq = q.rows();
  const std::size_t tk = k.rows();
  std::vector<std::uint8_t> visible(tq * tk, 0);
  for (std::size_t i = 0; i < tq; ++i) {
    for (std::size_t j = 0; j <= query_offset + i && j < tk; ++j) visible[i * tk + j] = 1;
  }
  return masked_attention(q, k, v, visible);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rows() == 0) {
    throw ContractError("softmax_cross_entropy over zero rows");
  }
  if (targets.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + logits.shape().str());
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw IndexError("target index " + std::to_string(t) +
                       " out of range for " + std::to_string(logits.cols()) +
                       " classes");
    }
  }
  const std::size_t c = logits.cols();
  const Tensor shifted = sub(logits, broadcast_cols(row_max(logits), c));
  const Tensor lse = log(sum_cols(exp(shifted)));
  return mean(sub(lse, pick(shifted, targets)));
}

}  // namespace metaprompt::ad
