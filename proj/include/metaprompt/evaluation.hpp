#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/metalearn.hpp"
#include "metaprompt/prompt.hpp"
#include "metaprompt/tasks.hpp"
#include "metaprompt/vocabulary.hpp"

namespace metaprompt {

/// 1-based rank, or nullopt when the target was not ranked.
using Rank = std::optional<int>;

struct RankingResult {
  std::vector<int> item_tokens;  // best first
  std::vector<double> scores;    // aligned with item_tokens, non-increasing
  Rank rank_of_target;
};

/// Orders candidate tokens by logits[token], descending, ties by ascending
/// token id. With a target, the target must be among the candidates.
RankingResult rank_scores(std::span<const double> logits,
                          std::span<const int> candidates,
                          std::optional<int> target = std::nullopt);

/// Scores candidates with the final-position logits of [prompt; context].
RankingResult rank_items(const SoftPrompt& prompt, const Backbone& backbone,
                         const std::vector<int>& context_tokens,
                         std::span<const int> candidates,
                         std::optional<int> target = std::nullopt);

/// The target plus n_negatives distinct other items drawn uniformly.
std::vector<int> sample_candidates(const ItemVocabulary& items, int target,
                                   int n_negatives, std::mt19937_64& rng);

double hit_at_k(Rank rank, int k);
/// Single relevant item, binary gain: 1 / log2(rank + 1) within the cutoff.
double ndcg_at_k(Rank rank, int k);
/// Mean reciprocal rank; absent ranks contribute 0.
double mrr(std::span<const Rank> ranks);

enum class CandidateMode { kAllItems, kSampledNegatives };
enum class BaselineMode { kMeta, kZeroShot, kStaticPrompt };

std::string to_string(CandidateMode mode);
CandidateMode parse_candidate_mode(const std::string& name);
std::string to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(const std::string& name);

struct EvalConfig {
  int k = 10;
  CandidateMode candidates = CandidateMode::kAllItems;
  int n_negatives = 99;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

struct QueryOutcome {
  std::size_t task = 0;  // index into the evaluated task list
  int target = 0;
  Rank rank;
};

struct MetricsReport {
  std::string mode;
  int k = 10;
  double hit = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
  std::size_t n_queries = 0;
  double mean_adapt_ms = 0.0;
  double p95_adapt_ms = 0.0;
  /// Scoring and ranking the query set, per task; excluded from adapt time.
  double mean_rank_ms = 0.0;
  std::int64_t peak_mem_bytes = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string candidates = "all";
  long inner_steps_executed = 0;
  std::vector<QueryOutcome> queries;

  static std::string csv_header();
  std::string csv_row() const;
  void write_csv(const std::filesystem::path& path) const;
  std::string table() const;
};

/// Nearest-rank percentile of a non-empty sample, p in (0, 100].
double percentile(std::vector<double> samples, double p);

/// Evaluates every query interaction of every task. kMeta adapts `prompt` to
/// each task's support set with adapt_user first; the baselines rank with
/// `prompt` as given (the untrained prompt for zero-shot, the pooled-data
/// prompt for static prompt-tuning).
MetricsReport evaluate_suite(const SoftPrompt& prompt,
                             const std::vector<UserTask>& tasks,
                             const MetaConfig& cfg, BaselineMode mode,
                             const Backbone& backbone, const ItemVocabulary& items,
                             const EvalConfig& eval,
                             const std::string& config_digest = "");

struct StaticConfig {
  double lr = 0.1;
  int iterations = 200;
  int batch_size = 40;
  std::uint64_t seed = 0;
};

/// Conventional prompt tuning: minibatch SGD on all training interactions
/// pooled across users, no per-user adaptation.
SoftPrompt train_static_prompt(const SoftPrompt& initial,
                               const std::vector<UserTask>& tasks,
                               const StaticConfig& cfg, const TaskLoss& loss);

struct ExperimentConfig {
  BackboneConfig backbone;
  MetaConfig meta;
  int prompt_length = 20;
  std::uint64_t prompt_seed = 0;
  EvalConfig eval;
  /// Restricts meta-training to these domains; empty means all.
  std::vector<std::string> train_domains;
  /// Restricts evaluation to these domains; empty means all.
  std::vector<std::string> eval_domains;
};

struct ExperimentResult {
  MetricsReport report;
  SoftPrompt prompt;
  TrainLog log;
  std::string backbone_digest;
  double train_ms_per_episode = 0.0;
};

/// One meta-train then evaluate (mode kMeta) cycle.
ExperimentResult run_meta_experiment(const ExperimentConfig& cfg,
                                     const std::vector<UserTask>& train,
                                     const std::vector<UserTask>& test,
                                     const ItemVocabulary& items,
                                     const std::string& config_digest = "");

enum class AblationAxis { kInnerSteps, kPromptLength, kAlpha, kTaskDiversity };

std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& name);

struct AblationRow {
  std::string axis;
  double value = 0.0;
  std::optional<MetricsReport> report;
  std::string backbone_digest;
  std::string error;
};

/// One full train + evaluate cycle per value, everything else from `base`.
/// For task_diversity the value n trains on the first n domains (sorted) and
/// every row evaluates on the test users of all domains but the first, so
/// rows share one held-out population. Failures are recorded per row.
std::vector<AblationRow> ablation_sweep(AblationAxis axis,
                                        const std::vector<double>& values,
                                        const ExperimentConfig& base,
                                        const std::vector<UserTask>& train,
                                        const std::vector<UserTask>& test,
                                        const ItemVocabulary& items,
                                        const std::string& config_digest = "");

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

struct BenchRow {
  std::string mode;
  int inner_steps = 0;
  std::vector<double> samples_ms;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  std::int64_t peak_mem_bytes = 0;
};

struct BenchPrompt {
  std::string mode;
  SoftPrompt prompt;
};

/// Times adapt_user `repetitions` times per task for each prompt on a
/// single worker. Memory is the high-water mark of live tensor bytes.
std::vector<BenchRow> bench_adaptation(const std::vector<BenchPrompt>& prompts,
                                       const std::vector<UserTask>& tasks,
                                       const MetaConfig& cfg, int repetitions,
                                       const TaskLoss& loss);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

/// Domains present in `tasks`, sorted.
std::vector<std::string> task_domains(const std::vector<UserTask>& tasks);
std::vector<UserTask> filter_domains(const std::vector<UserTask>& tasks,
                                     const std::vector<std::string>& domains);

}  // namespace metaprompt
