#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/prompt.hpp"
#include "metaprompt/tasks.hpp"

namespace metaprompt {

/// Per-task objective L(prompt; examples). The backbone loss is the default;
/// tests substitute analytic surrogates.
class TaskLoss {
 public:
  virtual ~TaskLoss() = default;
  virtual ad::Tensor loss(const ad::Tensor& prompt,
                          std::span<const Example> examples) const = 0;
};

/// Mean cross-entropy of each example's target item at its final position,
/// with the prompt prepended to the frozen backbone's input.
class BackboneLoss final : public TaskLoss {
 public:
  explicit BackboneLoss(const Backbone& backbone) : backbone_(backbone) {}
  ad::Tensor loss(const ad::Tensor& prompt,
                  std::span<const Example> examples) const override;
  const Backbone& backbone() const { return backbone_; }

 private:
  const Backbone& backbone_;
};

enum class MetaMode { kMaml, kFomaml, kReptile };

std::string to_string(MetaMode mode);
MetaMode parse_meta_mode(const std::string& name);

struct MetaConfig {
  /// Inner-loop step size. Stable band for large backbones is [3e-5, 5e-4].
  double inner_lr = 1e-4;
  /// Outer SGD step size.
  double outer_lr = 1e-3;
  /// Inner gradient steps; gains plateau after 3.
  int inner_steps = 3;
  MetaMode mode = MetaMode::kMaml;
  /// Reptile interpolation factor.
  double reptile_step = 0.5;
  int meta_batch_size = 8;
  int meta_iterations = 2000;
  std::uint64_t seed = 0;
  /// Heavy-ball momentum on the MAML/FOMAML outer step; 0 disables it.
  double outer_momentum = 0.0;
  /// Task-level worker threads. Results do not depend on this value.
  int workers = 1;

  /// Checks every field against its sanity bounds (ConfigError).
  void validate() const;
};

struct AdaptationResult {
  SoftPrompt adapted_prompt;
  /// Support loss before the first step and after each step (steps + 1).
  std::vector<double> support_loss_trace;
  double wall_clock_ms = 0.0;
  std::int64_t peak_mem_bytes = 0;
  int steps_executed = 0;
};

/// `steps` plain gradient-descent steps on the mean support loss. theta is
/// never modified. With record_higher_order the returned prompt remains a
/// differentiable function of theta.
AdaptationResult inner_adapt(const SoftPrompt& theta, const UserTask& task,
                             double alpha, int steps, bool record_higher_order,
                             const TaskLoss& loss);

struct MetaGradient {
  ad::Tensor gradient;  // l x d
  /// Sum over tasks of the mean query loss after adaptation.
  double meta_loss = 0.0;
};

/// Outer gradient of sum_i L_query(theta_i') for MAML (exact, through the
/// inner updates) or FOMAML (theta_i' treated as constant). Per-task terms
/// are computed on up to cfg.workers threads and summed in batch order.
MetaGradient meta_gradient(const SoftPrompt& theta, const EpisodeBatch& batch,
                           const MetaConfig& cfg, const TaskLoss& loss);

struct OuterStep {
  SoftPrompt prompt;
  /// MAML/FOMAML: summed query loss. Reptile: mean support loss at theta.
  double loss = 0.0;
};

/// One SGD step theta - outer_lr * meta_gradient. Requires MAML or FOMAML.
OuterStep maml_outer_step(const SoftPrompt& theta, const EpisodeBatch& batch,
                          const MetaConfig& cfg, const TaskLoss& loss);

/// theta + reptile_step * mean_i(theta_i' - theta). Requires REPTILE.
OuterStep reptile_outer_step(const SoftPrompt& theta, const EpisodeBatch& batch,
                             const MetaConfig& cfg, const TaskLoss& loss);

struct TrainLogRow {
  int episode = 0;
  double meta_loss = 0.0;
  double wall_ms = 0.0;
  std::optional<double> eval_hit10;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  /// CSV with columns episode,meta_loss,wall_ms,eval_hit10, preceded by a
  /// "# config_digest=..." provenance line.
  void write_csv(const std::filesystem::path& path,
                 const std::string& config_digest) const;
};

struct TrainCallbacks {
  /// Held-out evaluation, called every `eval_every` episodes and after the
  /// last one when set.
  std::function<std::optional<double>(int episode, const SoftPrompt&)> evaluate;
  int eval_every = 0;
  std::function<void(const TrainLogRow&)> on_episode;
  const DomainWeights* domain_weights = nullptr;
};

struct TrainResult {
  SoftPrompt prompt;
  TrainLog log;
};

/// Runs cfg.meta_iterations episodes of sample_episode followed by the outer
/// step selected by cfg.mode, starting from `initial`.
TrainResult meta_train(const std::vector<UserTask>& tasks, const MetaConfig& cfg,
                       const SoftPrompt& initial, const TaskLoss& loss,
                       const TrainCallbacks& callbacks = {});

/// Deploy-time adaptation to a new user's 1..5 support interactions; the
/// same math as inner_adapt without higher-order recording.
AdaptationResult adapt_user(const SoftPrompt& trained_theta,
                            std::span<const Example> support,
                            const MetaConfig& cfg, const TaskLoss& loss);

}  // namespace metaprompt
