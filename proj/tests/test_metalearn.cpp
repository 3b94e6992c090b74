#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "metaprompt/autodiff.hpp"
#include "metaprompt/backbone.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/metalearn.hpp"
#include "metaprompt/ops.hpp"
#include "test_util.hpp"

namespace {

using namespace metaprompt;
using ad::Tensor;
using testing_util::rel_error;

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_model = 16;
  c.vocab_size = 64;
  c.max_seq_len = 32;
  c.seed = 3;
  return c;
}

UserTask make_task(const std::string& id, std::uint64_t seed, int n_support = 3,
                   int n_query = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(3, 63);
  const auto example = [&] {
    Example e;
    const int len = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < len; ++i) e.tokens.push_back(tok(rng));
    e.tokens.push_back(vocab::kSep);
    e.target = tok(rng);
    return e;
  };
  UserTask t{id, "d", {}, {}};
  for (int i = 0; i < n_support; ++i) t.support.push_back(example());
  for (int i = 0; i < n_query; ++i) t.query.push_back(example());
  return t;
}

EpisodeBatch batch_of(std::vector<UserTask> tasks) {
  EpisodeBatch b;
  for (std::size_t i = 0; i < tasks.size(); ++i) b.task_indices.push_back(i);
  b.tasks = std::move(tasks);
  return b;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// sum_i L_query(theta - alpha * grad L_support(theta)) with S plain steps.
double meta_objective(const std::vector<double>& theta, std::size_t l, std::size_t d,
                      const EpisodeBatch& batch, double alpha, int steps,
                      const TaskLoss& loss) {
  const SoftPrompt p(Tensor(l, d, theta, true), d);
  double total = 0.0;
  for (const auto& task : batch.tasks) {
    const AdaptationResult r = inner_adapt(p, task, alpha, steps, false, loss);
    total += loss.loss(r.adapted_prompt.values(), task.query).item();
  }
  return total;
}

std::vector<double> fd_meta_gradient(const SoftPrompt& theta, const EpisodeBatch& batch,
                                     double alpha, int steps, const TaskLoss& loss,
                                     double h = 1e-6) {
  const std::vector<double> base = values(theta.values());
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (meta_objective(plus, theta.length(), theta.d(), batch, alpha, steps, loss) -
            meta_objective(minus, theta.length(), theta.d(), batch, alpha, steps, loss)) /
           (2 * h);
  }
  return g;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b,
               double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i], floor));
  return worst;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

class MetaLearnTest : public ::testing::Test {
 protected:
  Backbone backbone{tiny_backbone()};
  BackboneLoss loss{backbone};
  SoftPrompt theta = init_prompt(4, 16, 7);
  EpisodeBatch batch = batch_of({make_task("a", 1), make_task("b", 2)});
};

TEST_F(MetaLearnTest, MamlGradientMatchesFiniteDifferences) {
  MetaConfig cfg;
  cfg.inner_lr = 1e-3;
  cfg.inner_steps = 1;
  const auto analytic = values(meta_gradient(theta, batch, cfg, loss).gradient);
  const auto numeric = fd_meta_gradient(theta, batch, cfg.inner_lr, 1, loss);
  EXPECT_LE(max_rel(analytic, numeric), 1e-5);
}

TEST_F(MetaLearnTest, MamlTracksOracleWhereFomamlDoesNot) {
  // A large step makes the alpha * Hessian term visible.
  MetaConfig cfg;
  cfg.inner_lr = 0.1;
  cfg.inner_steps = 2;
  const auto numeric = fd_meta_gradient(theta, batch, cfg.inner_lr, 2, loss);
  const auto maml = values(meta_gradient(theta, batch, cfg, loss).gradient);
  cfg.mode = MetaMode::kFomaml;
  const auto fomaml = values(meta_gradient(theta, batch, cfg, loss).gradient);
  const double maml_err = max_abs_diff(maml, numeric);
  const double fomaml_err = max_abs_diff(fomaml, numeric);
  EXPECT_GE(fomaml_err, 10 * maml_err) << maml_err << " vs " << fomaml_err;
}

TEST_F(MetaLearnTest, ZeroStepSizeCollapsesToPlainGradient) {
  MetaConfig cfg;
  cfg.inner_lr = 0.0;  // below the validated band, allowed for direct calls
  cfg.inner_steps = 2;
  const auto maml = values(meta_gradient(theta, batch, cfg, loss).gradient);
  cfg.mode = MetaMode::kFomaml;
  const auto fomaml = values(meta_gradient(theta, batch, cfg, loss).gradient);
  std::vector<double> plain(maml.size(), 0.0);
  for (const auto& task : batch.tasks) {
    const SoftPrompt p = clone_prompt(theta);
    const Tensor wrt[] = {p.values()};
    const auto g = ad::backward(loss.loss(p.values(), task.query), wrt).grads[0];
    for (std::size_t i = 0; i < plain.size(); ++i) plain[i] += g.data()[i];
  }
  EXPECT_LE(max_abs_diff(maml, plain), 1e-12);
  EXPECT_LE(max_abs_diff(fomaml, plain), 1e-12);
}

TEST_F(MetaLearnTest, ReptileEndpoints) {
  MetaConfig cfg;
  cfg.mode = MetaMode::kReptile;
  cfg.inner_lr = 0.05;
  cfg.inner_steps = 2;
  cfg.reptile_step = 1.0;
  const auto full = values(reptile_outer_step(theta, batch, cfg, loss).prompt.values());
  // epsilon = 1 lands on the mean of the adapted prompts.
  std::vector<double> mean(full.size(), 0.0);
  for (const auto& task : batch.tasks) {
    const auto a = values(inner_adapt(theta, task, cfg.inner_lr, 2, false, loss)
                              .adapted_prompt.values());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += a[i] / 2.0;
  }
  EXPECT_LE(max_abs_diff(full, mean), 1e-12);

  // epsilon -> 0 leaves theta in place; 0 itself is rejected by validate().
  cfg.reptile_step = 1e-300;
  const auto none = values(reptile_outer_step(theta, batch, cfg, loss).prompt.values());
  EXPECT_EQ(none, values(theta.values()));
  cfg.reptile_step = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST_F(MetaLearnTest, ReptileSingleStepDelta) {
  MetaConfig cfg;
  cfg.mode = MetaMode::kReptile;
  cfg.inner_lr = 0.05;
  cfg.inner_steps = 1;
  cfg.reptile_step = 0.5;
  const EpisodeBatch one = batch_of({make_task("a", 1)});
  const auto next = values(reptile_outer_step(theta, one, cfg, loss).prompt.values());
  const SoftPrompt p = clone_prompt(theta);
  const Tensor wrt[] = {p.values()};
  const auto g = ad::backward(loss.loss(p.values(), one.tasks[0].support), wrt).grads[0];
  const auto base = values(theta.values());
  for (std::size_t i = 0; i < next.size(); ++i) {
    EXPECT_NEAR(next[i] - base[i], -cfg.inner_lr * cfg.reptile_step * g.data()[i], 1e-10);
  }
}

TEST_F(MetaLearnTest, InnerAdaptTraceAndPurity) {
  const std::string before = theta.digest();
  for (int steps : {0, 1, 3}) {
    const AdaptationResult r = inner_adapt(theta, batch.tasks[0], 0.05, steps, false, loss);
    EXPECT_EQ(r.support_loss_trace.size(), static_cast<std::size_t>(steps + 1));
    EXPECT_EQ(r.steps_executed, steps);
    EXPECT_GT(r.peak_mem_bytes, 0);
  }
  EXPECT_EQ(theta.digest(), before);
  const AdaptationResult r = inner_adapt(theta, batch.tasks[0], 0.05, 5, false, loss);
  EXPECT_LT(r.support_loss_trace.back(), r.support_loss_trace.front());
}

TEST_F(MetaLearnTest, InnerAdaptContracts) {
  UserTask empty{"e", "d", {}, {}};
  EXPECT_THROW(inner_adapt(theta, empty, 0.1, 1, false, loss), ContractError);
  EXPECT_THROW(inner_adapt(theta, batch.tasks[0], 0.1, -1, false, loss), ContractError);
  EXPECT_THROW(inner_adapt(theta, batch.tasks[0], -0.1, 1, false, loss), ContractError);
}

TEST_F(MetaLearnTest, DivergenceNamesStepTaskAndTrace) {
  try {
    inner_adapt(theta, batch.tasks[0], 1e300, 3, false, loss);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("task 'a'"), std::string::npos) << what;
    EXPECT_NE(what.find("inner step"), std::string::npos) << what;
    EXPECT_NE(what.find("loss trace ["), std::string::npos) << what;
  }
}

TEST_F(MetaLearnTest, AdaptUserAcceptsOneToFiveShots) {
  MetaConfig cfg;
  cfg.inner_lr = 0.05;
  const UserTask t = make_task("u", 9, 6, 1);
  for (std::size_t k = 1; k <= 5; ++k) {
    const std::span<const Example> s(t.support.data(), k);
    EXPECT_EQ(adapt_user(theta, s, cfg, loss).support_loss_trace.size(), 4u);
  }
  EXPECT_THROW(adapt_user(theta, std::span<const Example>(t.support.data(), 6), cfg, loss),
               ContractError);
  EXPECT_THROW(adapt_user(theta, std::span<const Example>(), cfg, loss), ContractError);
}

TEST_F(MetaLearnTest, OuterStepModeChecks) {
  MetaConfig cfg;
  cfg.mode = MetaMode::kReptile;
  EXPECT_THROW(meta_gradient(theta, batch, cfg, loss), ContractError);
  cfg.mode = MetaMode::kMaml;
  EXPECT_THROW(reptile_outer_step(theta, batch, cfg, loss), ContractError);
  EXPECT_THROW(meta_gradient(theta, EpisodeBatch{}, cfg, loss), ContractError);
}

TEST_F(MetaLearnTest, MetaGradientIndependentOfWorkerCount) {
  std::vector<UserTask> tasks;
  for (int i = 0; i < 6; ++i) tasks.push_back(make_task("t" + std::to_string(i), 20 + i));
  const EpisodeBatch b = batch_of(tasks);
  MetaConfig cfg;
  cfg.inner_lr = 0.05;
  cfg.workers = 1;
  const auto serial = values(meta_gradient(theta, b, cfg, loss).gradient);
  cfg.workers = 4;
  const auto parallel = values(meta_gradient(theta, b, cfg, loss).gradient);
  ASSERT_EQ(serial.size(), parallel.size());
  EXPECT_EQ(0, std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(double)));
}

TEST_F(MetaLearnTest, TrainingIsDeterministicAndLeavesBackboneAlone) {
  std::vector<UserTask> tasks;
  for (int i = 0; i < 10; ++i) tasks.push_back(make_task("t" + std::to_string(i), 40 + i));
  const std::string digest = backbone.digest();
  for (MetaMode mode : {MetaMode::kMaml, MetaMode::kFomaml, MetaMode::kReptile}) {
    MetaConfig cfg;
    cfg.mode = mode;
    cfg.inner_lr = 0.05;
    cfg.outer_lr = 0.05;
    cfg.inner_steps = 1;
    cfg.meta_batch_size = 4;
    cfg.meta_iterations = 5;
    cfg.seed = 8;
    cfg.workers = 1;
    const TrainResult a = meta_train(tasks, cfg, theta, loss);
    cfg.workers = 4;
    const TrainResult b = meta_train(tasks, cfg, theta, loss);
    EXPECT_EQ(a.prompt.digest(), b.prompt.digest()) << to_string(mode);
    EXPECT_NE(a.prompt.digest(), theta.digest());
    EXPECT_EQ(a.log.rows.size(), 5u);
  }
  EXPECT_EQ(backbone.digest(), digest);
}

TEST_F(MetaLearnTest, EvaluationCallbackCadence) {
  std::vector<UserTask> tasks;
  for (int i = 0; i < 4; ++i) tasks.push_back(make_task("t" + std::to_string(i), 60 + i));
  MetaConfig cfg;
  cfg.inner_lr = 0.05;
  cfg.inner_steps = 1;
  cfg.meta_batch_size = 2;
  cfg.meta_iterations = 7;
  TrainCallbacks cb;
  cb.eval_every = 3;
  std::vector<int> seen;
  cb.evaluate = [&](int episode, const SoftPrompt&) -> std::optional<double> {
    seen.push_back(episode);
    return 0.5;
  };
  const TrainResult r = meta_train(tasks, cfg, theta, loss, cb);
  EXPECT_EQ(seen, (std::vector<int>{2, 5, 6}));
  EXPECT_TRUE(r.log.rows[2].eval_hit10.has_value());
  EXPECT_FALSE(r.log.rows[3].eval_hit10.has_value());
}

TEST(MetaConfigTest, ValidationBounds) {
  MetaConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.inner_lr = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.inner_steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.meta_batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.outer_momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_meta_mode("fomaml"), MetaMode::kFomaml);
  EXPECT_THROW(parse_meta_mode("sgd"), ConfigError);
}

TEST(MetaConfigTest, TooFewTasksForBatch) {
  const Backbone b(tiny_backbone());
  const BackboneLoss loss(b);
  MetaConfig cfg;
  cfg.meta_batch_size = 3;
  std::vector<UserTask> tasks = {make_task("a", 1), make_task("b", 2)};
  EXPECT_THROW(meta_train(tasks, cfg, init_prompt(2, 16, 0), loss), ContractError);
}

}  // namespace
