#include <gtest/gtest.h>

#include <cmath>

#include "metaprompt/autodiff.hpp"
#include "metaprompt/backbone.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/ops.hpp"
#include "metaprompt/prompt.hpp"
#include "test_util.hpp"

namespace {

using namespace metaprompt;
using ad::Tensor;

TEST(Prompt, InitShapeAndDistribution) {
  const SoftPrompt p = init_prompt(20, 32, 1);
  EXPECT_EQ(p.length(), 20u);
  EXPECT_EQ(p.d(), 32u);
  EXPECT_EQ(p.values().rows(), 20u);
  EXPECT_TRUE(p.values().requires_grad());
  double m = 0, s = 0;
  for (double v : p.values().data()) m += v;
  m /= 640;
  for (double v : p.values().data()) s += (v - m) * (v - m);
  s = std::sqrt(s / 639);
  // 640 draws: standard error of the mean 0.0008, of the std about 3%.
  EXPECT_LT(std::abs(m), 0.004);
  EXPECT_NEAR(s, 0.02, 0.002);
}

TEST(Prompt, InitIsSeeded) {
  EXPECT_EQ(init_prompt(5, 8, 9).digest(), init_prompt(5, 8, 9).digest());
  EXPECT_NE(init_prompt(5, 8, 9).digest(), init_prompt(5, 8, 10).digest());
}

TEST(Prompt, InitValidatesArguments) {
  EXPECT_THROW(init_prompt(-1, 8, 0), ConfigError);
  EXPECT_THROW(init_prompt(4, 0, 0), ConfigError);
  EXPECT_EQ(init_prompt(0, 8, 0).length(), 0u);
}

TEST(Prompt, ComposeStacksPromptAboveInput) {
  const SoftPrompt p = init_prompt(20, 32, 2);
  const Tensor x = testing_util::random_tensor(5, 32, 3, 1.0, false);
  const Tensor c = compose(p, x);
  ASSERT_EQ(c.rows(), 25u);
  ASSERT_EQ(c.cols(), 32u);
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_EQ(c(0, j), p.values()(0, j));
    EXPECT_EQ(c(19, j), p.values()(19, j));
    EXPECT_EQ(c(20, j), x(0, j));
    EXPECT_EQ(c(24, j), x(4, j));
  }
}

TEST(Prompt, EmptyPromptComposesToInput) {
  const SoftPrompt p = init_prompt(0, 8, 2);
  const Tensor x = testing_util::random_tensor(3, 8, 3, 1.0, false);
  const Tensor c = compose(p, x);
  ASSERT_EQ(c.rows(), 3u);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(c.data()[i], x.data()[i]);
}

TEST(Prompt, ComposeRejectsWidthMismatch) {
  EXPECT_THROW(compose(init_prompt(2, 8, 0), Tensor::zeros(3, 4)), ShapeError);
}

TEST(Prompt, GradientThroughComposeReachesOnlyThePrompt) {
  BackboneConfig cfg;
  cfg.d_model = 16;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 16;
  const Backbone b(cfg);
  const SoftPrompt p = init_prompt(3, 16, 4);
  const std::vector<int> tokens = {5, 6, 1};
  const std::vector<int> target = {40};
  const auto f = [&](const std::vector<Tensor>& in) {
    const SoftPrompt q(in[0], 16);
    const Tensor logits = b.forward(compose(q, b.embed_tokens(tokens)));
    return ad::softmax_cross_entropy(ad::slice_rows(logits, 5, 1), target);
  };
  EXPECT_LE(testing_util::gradient_check(f, {p.values()}), 1e-6);

  // The backbone is read, never written.
  const std::string digest = b.digest();
  const auto r = ad::backward(f({p.values()}), std::vector<Tensor>{p.values()});
  EXPECT_FALSE(r.unreachable[0]);
  EXPECT_EQ(b.digest(), digest);
}

TEST(Prompt, LossBlindToPromptHasZeroPromptGradient) {
  // Query row 2 of [P; X] is masked from the prompt rows.
  const SoftPrompt p = init_prompt(2, 4, 5);
  const Tensor x = testing_util::random_tensor(2, 4, 6, 1.0, false);
  const Tensor h = compose(p, x);
  const std::vector<std::uint8_t> visible = {1, 0, 0, 0,  //
                                             1, 1, 0, 0,  //
                                             0, 0, 1, 0,  //
                                             1, 1, 1, 1};
  const Tensor att = ad::masked_attention(h, h, h, visible);
  const Tensor g = ad::backward(ad::sum(ad::slice_rows(att, 2, 1)),
                                std::vector<Tensor>{p.values()})
                       .grads[0];
  for (double v : g.data()) EXPECT_EQ(v, 0.0);

  const Tensor g_all = ad::backward(ad::sum(ad::slice_rows(att, 3, 1)),
                                    std::vector<Tensor>{p.values()})
                           .grads[0];
  double norm = 0;
  for (double v : g_all.data()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Prompt, CloneIsIndependent) {
  SoftPrompt original = init_prompt(4, 8, 6);
  const std::string before = original.digest();
  SoftPrompt copy = clone_prompt(original);
  EXPECT_EQ(copy.digest(), before);
  EXPECT_FALSE(copy.values().same_storage(original.values()));
  for (double& v : copy.values().mutable_data()) v += 1.0;
  EXPECT_EQ(original.digest(), before);
  EXPECT_NE(copy.digest(), before);
  EXPECT_TRUE(copy.values().requires_grad());
  EXPECT_EQ(clone_prompt(init_prompt(0, 8, 1)).length(), 0u);
}

}  // namespace
