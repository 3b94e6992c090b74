#include "metaprompt/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "metaprompt/autodiff.hpp"
#include "metaprompt/digest.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/format.hpp"
#include "metaprompt/ops.hpp"
#include "metaprompt/parallel.hpp"

namespace metaprompt {

RankingResult rank_scores(std::span<const double> logits,
                          std::span<const int> candidates,
                          std::optional<int> target) {
  if (candidates.empty()) throw ContractError("empty candidate set");
  for (int c : candidates) {
    if (c < 0 || static_cast<std::size_t>(c) >= logits.size()) {
      throw IndexError("candidate token " + std::to_string(c) +
                       " outside a vocabulary of " + std::to_string(logits.size()));
    }
  }
  if (target && std::find(candidates.begin(), candidates.end(), *target) ==
                    candidates.end()) {
    throw ContractError("target token " + std::to_string(*target) +
                        " is not in the candidate set");
  }
  RankingResult result;
  result.item_tokens.assign(candidates.begin(), candidates.end());
  std::sort(result.item_tokens.begin(), result.item_tokens.end(), [&](int a, int b) {
    const double sa = logits[static_cast<std::size_t>(a)];
    const double sb = logits[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  result.scores.reserve(result.item_tokens.size());
  for (std::size_t i = 0; i < result.item_tokens.size(); ++i) {
    const int token = result.item_tokens[i];
    result.scores.push_back(logits[static_cast<std::size_t>(token)]);
    if (target && token == *target && !result.rank_of_target) {
      result.rank_of_target = static_cast<int>(i) + 1;
    }
  }
  return result;
}

RankingResult rank_items(const SoftPrompt& prompt, const Backbone& backbone,
                         const std::vector<int>& context_tokens,
                         std::span<const int> candidates, std::optional<int> target) {
  ad::NoGradGuard no_grad;
  const std::vector<int> sequences[] = {context_tokens};
  const ad::Tensor logits = backbone.final_logits(prompt.values(), sequences);
  return rank_scores(logits.data(), candidates, target);
}

std::vector<int> sample_candidates(const ItemVocabulary& items, int target,
                                   int n_negatives, std::mt19937_64& rng) {
  if (target < items.first_token() || target >= items.end_token()) {
    throw ContractError("target token " + std::to_string(target) + " is not an item");
  }
  const auto available = static_cast<int>(items.size()) - 1;
  if (n_negatives < 0 || n_negatives > available) {
    throw ConfigError("cannot sample " + std::to_string(n_negatives) +
                      " negatives from " + std::to_string(available) + " items");
  }
  std::vector<int> others;
  others.reserve(static_cast<std::size_t>(available));
  for (int t = items.first_token(); t < items.end_token(); ++t) {
    if (t != target) others.push_back(t);
  }
  std::vector<int> out{target};
  for (int i = 0; i < n_negatives; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                    others.size() - 1);
    std::swap(others[static_cast<std::size_t>(i)], others[pick(rng)]);
    out.push_back(others[static_cast<std::size_t>(i)]);
  }
  return out;
}

double hit_at_k(Rank rank, int k) {
  if (k < 1) throw ContractError("k must be at least 1");
  return rank && *rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(Rank rank, int k) {
  if (k < 1) throw ContractError("k must be at least 1");
  if (!rank || *rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(*rank) + 1.0);
}

double mrr(std::span<const Rank> ranks) {
  if (ranks.empty()) throw ContractError("mrr of an empty rank list");
  double total = 0.0;
  for (const Rank& r : ranks) {
    if (r) total += 1.0 / static_cast<double>(*r);
  }
  return total / static_cast<double>(ranks.size());
}

std::string to_string(CandidateMode mode) {
  return mode == CandidateMode::kAllItems ? "all" : "sampled";
}

CandidateMode parse_candidate_mode(const std::string& name) {
  if (name == "all") return CandidateMode::kAllItems;
  if (name == "sampled") return CandidateMode::kSampledNegatives;
  throw ConfigError("unknown candidate mode '" + name + "'");
}

std::string to_string(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::kMeta: return "meta";
    case BaselineMode::kZeroShot: return "zero_shot";
    case BaselineMode::kStaticPrompt: return "static_prompt";
  }
  return "unknown";
}

BaselineMode parse_baseline_mode(const std::string& name) {
  if (name == "meta") return BaselineMode::kMeta;
  if (name == "zero_shot") return BaselineMode::kZeroShot;
  if (name == "static_prompt") return BaselineMode::kStaticPrompt;
  throw ConfigError("unknown evaluation mode '" + name + "'");
}

void EvalConfig::validate() const {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (n_negatives < 1) throw ConfigError("n_negatives must be positive");
  if (workers < 1) throw ConfigError("workers must be positive");
}

std::string MetricsReport::csv_header() {
  return "mode,k,hit,ndcg,mrr,n_queries,mean_adapt_ms,p95_adapt_ms,mean_rank_ms,"
         "peak_mem_bytes,seed,config_digest";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream out;
  out << mode << (candidates == "all" ? "" : "@" + candidates) << ',' << k << ','
      << format_double(hit) << ',' << format_double(ndcg) << ','
      << format_double(mrr) << ',' << n_queries << ','
      << format_double(mean_adapt_ms, 6) << ',' << format_double(p95_adapt_ms, 6)
      << ',' << format_double(mean_rank_ms, 6) << ',' << peak_mem_bytes << ','
      << seed << ',' << config_digest;
  return out.str();
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << csv_header() << '\n' << csv_row() << '\n';
}

std::string MetricsReport::table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "mode            %s (candidates: %s)\n"
                "queries         %zu\n"
                "Hit@%-2d          %.4f\n"
                "nDCG@%-2d         %.4f\n"
                "MRR             %.4f\n"
                "adapt ms        mean %.3f, p95 %.3f\n"
                "rank ms         mean %.3f\n"
                "peak tensor MB  %.3f\n"
                "config digest   %s\n",
                mode.c_str(), candidates.c_str(), n_queries, k, hit, k, ndcg, mrr,
                mean_adapt_ms, p95_adapt_ms, mean_rank_ms,
                static_cast<double>(peak_mem_bytes) / (1024.0 * 1024.0),
                config_digest.c_str());
  return buf;
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw ContractError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ContractError("percentile outside (0, 100]");
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  return samples[std::max<std::size_t>(rank, 1) - 1];
}

MetricsReport evaluate_suite(const SoftPrompt& prompt,
                             const std::vector<UserTask>& tasks,
                             const MetaConfig& cfg, BaselineMode mode,
                             const Backbone& backbone, const ItemVocabulary& items,
                             const EvalConfig& eval,
                             const std::string& config_digest) {
  eval.validate();
  if (tasks.empty()) throw ContractError("evaluate_suite: no tasks");
  const BackboneLoss loss(backbone);
  const std::vector<int> all_items = items.all_tokens();

  struct TaskOutcome {
    std::vector<Rank> ranks;
    std::vector<int> targets;
    double adapt_ms = 0.0;
    double rank_ms = 0.0;
    std::int64_t peak = 0;
    int steps = 0;
  };
  std::vector<TaskOutcome> outcomes(tasks.size());

  parallel_for(tasks.size(), eval.workers, [&](std::size_t i) {
    const UserTask& task = tasks[i];
    if (task.query.empty()) {
      throw ContractError("task '" + task.user_id + "' has no query interactions");
    }
    TaskOutcome& out = outcomes[i];
    SoftPrompt used = prompt;
    if (mode == BaselineMode::kMeta) {
      try {
        AdaptationResult adapted = adapt_user(prompt, task.support, cfg, loss);
        out.adapt_ms = adapted.wall_clock_ms;
        out.peak = adapted.peak_mem_bytes;
        out.steps = adapted.steps_executed;
        used = std::move(adapted.adapted_prompt);
      } catch (const Error& e) {
        throw Error("task '" + task.user_id + "': " + e.what());
      }
    }
    const auto rank_start = std::chrono::steady_clock::now();
    ad::NoGradGuard no_grad;
    std::vector<std::vector<int>> contexts;
    for (const auto& q : task.query) contexts.push_back(q.tokens);
    const ad::Tensor logits = backbone.final_logits(used.values(), contexts);
    const std::size_t vocab = logits.cols();
    for (std::size_t j = 0; j < task.query.size(); ++j) {
      const int target = task.query[j].target;
      const std::span<const double> row = logits.data().subspan(j * vocab, vocab);
      RankingResult ranked;
      if (eval.candidates == CandidateMode::kAllItems) {
        ranked = rank_scores(row, all_items, target);
      } else {
        Digest seed;
        seed.update(eval.seed).update(task.user_id).update(static_cast<std::uint64_t>(j));
        std::mt19937_64 rng(seed.value());
        ranked = rank_scores(row, sample_candidates(items, target, eval.n_negatives, rng),
                             target);
      }
      out.ranks.push_back(ranked.rank_of_target);
      out.targets.push_back(target);
    }
    out.rank_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - rank_start)
                      .count();
  });

  MetricsReport report;
  report.mode = to_string(mode);
  report.k = eval.k;
  report.seed = eval.seed;
  report.config_digest = config_digest;
  report.candidates = to_string(eval.candidates);
  std::vector<Rank> ranks;
  std::vector<double> adapt_ms;
  double rank_ms = 0.0;
  double hit = 0.0;
  double ndcg = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const TaskOutcome& out = outcomes[i];
    for (std::size_t j = 0; j < out.ranks.size(); ++j) {
      hit += hit_at_k(out.ranks[j], eval.k);
      ndcg += ndcg_at_k(out.ranks[j], eval.k);
      ranks.push_back(out.ranks[j]);
      report.queries.push_back({i, out.targets[j], out.ranks[j]});
    }
    if (mode == BaselineMode::kMeta) adapt_ms.push_back(out.adapt_ms);
    rank_ms += out.rank_ms;
    report.peak_mem_bytes = std::max(report.peak_mem_bytes, out.peak);
    report.inner_steps_executed += out.steps;
  }
  report.n_queries = ranks.size();
  const auto n = static_cast<double>(ranks.size());
  report.hit = hit / n;
  report.ndcg = ndcg / n;
  report.mrr = mrr(ranks);
  report.mean_rank_ms = rank_ms / static_cast<double>(outcomes.size());
  if (!adapt_ms.empty()) {
    report.mean_adapt_ms = std::accumulate(adapt_ms.begin(), adapt_ms.end(), 0.0) /
                           static_cast<double>(adapt_ms.size());
    report.p95_adapt_ms = percentile(adapt_ms, 95.0);
  }
  return report;
}

SoftPrompt train_static_prompt(const SoftPrompt& initial,
                               const std::vector<UserTask>& tasks,
                               const StaticConfig& cfg, const TaskLoss& loss) {
  if (cfg.iterations < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw ConfigError("static prompt training needs lr > 0, batch_size >= 1, "
                      "iterations >= 0");
  }
  std::vector<Example> pool;
  for (const auto& task : tasks) {
    pool.insert(pool.end(), task.support.begin(), task.support.end());
    pool.insert(pool.end(), task.query.begin(), task.query.end());
  }
  if (pool.empty()) throw ContractError("static prompt training on no examples");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(pool.size(), static_cast<std::size_t>(cfg.batch_size));

  SoftPrompt theta = clone_prompt(initial);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Example> examples;
    while (examples.size() < batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      examples.push_back(pool[order[cursor++]]);
    }
    const ad::Tensor value = loss.loss(theta.values(), examples);
    const ad::Tensor wrt[] = {theta.values()};
    const ad::Tensor g = ad::backward(value, wrt).grads[0];
    std::vector<double> next(theta.values().data().begin(), theta.values().data().end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= cfg.lr * g.data()[i];
    theta = SoftPrompt(ad::Tensor(theta.length(), theta.d(), std::move(next), true),
                       theta.d());
  }
  return theta;
}

std::vector<std::string> task_domains(const std::vector<UserTask>& tasks) {
  std::set<std::string> domains;
  for (const auto& t : tasks) domains.insert(t.domain);
  return {domains.begin(), domains.end()};
}

std::vector<UserTask> filter_domains(const std::vector<UserTask>& tasks,
                                     const std::vector<std::string>& domains) {
  if (domains.empty()) return tasks;
  const std::set<std::string> keep(domains.begin(), domains.end());
  std::vector<UserTask> out;
  for (const auto& t : tasks) {
    if (keep.contains(t.domain)) out.push_back(t);
  }
  return out;
}

ExperimentResult run_meta_experiment(const ExperimentConfig& cfg,
                                     const std::vector<UserTask>& train,
                                     const std::vector<UserTask>& test,
                                     const ItemVocabulary& items,
                                     const std::string& config_digest) {
  const Backbone backbone(cfg.backbone);
  const BackboneLoss loss(backbone);
  const SoftPrompt initial =
      init_prompt(cfg.prompt_length, cfg.backbone.d_model, cfg.prompt_seed);
  const std::vector<UserTask> train_tasks = filter_domains(train, cfg.train_domains);
  const std::vector<UserTask> test_tasks = filter_domains(test, cfg.eval_domains);

  TrainResult trained = meta_train(train_tasks, cfg.meta, initial, loss);
  ExperimentResult result;
  result.report = evaluate_suite(trained.prompt, test_tasks, cfg.meta,
                                 BaselineMode::kMeta, backbone, items, cfg.eval,
                                 config_digest);
  double total_ms = 0.0;
  for (const auto& row : trained.log.rows) total_ms += row.wall_ms;
  if (!trained.log.rows.empty()) {
    result.train_ms_per_episode = total_ms / static_cast<double>(trained.log.rows.size());
  }
  result.prompt = std::move(trained.prompt);
  result.log = std::move(trained.log);
  result.backbone_digest = backbone.digest();
  return result;
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kInnerSteps: return "inner_steps";
    case AblationAxis::kPromptLength: return "prompt_length";
    case AblationAxis::kAlpha: return "alpha";
    case AblationAxis::kTaskDiversity: return "task_diversity";
  }
  return "unknown";
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "inner_steps") return AblationAxis::kInnerSteps;
  if (name == "prompt_length") return AblationAxis::kPromptLength;
  if (name == "alpha") return AblationAxis::kAlpha;
  if (name == "task_diversity") return AblationAxis::kTaskDiversity;
  throw ConfigError("unknown ablation axis '" + name + "'");
}

namespace {

int integral_value(double value, const char* what) {
  if (value != std::floor(value) || value < 1.0) {
    throw ConfigError(std::string(what) + " must be a positive integer, got " +
                      format_double(value));
  }
  return static_cast<int>(value);
}

}  // namespace

std::vector<AblationRow> ablation_sweep(AblationAxis axis,
                                        const std::vector<double>& values,
                                        const ExperimentConfig& base,
                                        const std::vector<UserTask>& train,
                                        const std::vector<UserTask>& test,
                                        const ItemVocabulary& items,
                                        const std::string& config_digest) {
  const std::vector<std::string> domains = task_domains(train);
  std::vector<AblationRow> rows;
  for (double value : values) {
    AblationRow row;
    row.axis = to_string(axis);
    row.value = value;
    try {
      ExperimentConfig cfg = base;
      switch (axis) {
        case AblationAxis::kInnerSteps:
          cfg.meta.inner_steps = integral_value(value, "inner_steps");
          break;
        case AblationAxis::kPromptLength:
          cfg.prompt_length = integral_value(value, "prompt_length");
          break;
        case AblationAxis::kAlpha:
          cfg.meta.inner_lr = value;
          break;
        case AblationAxis::kTaskDiversity: {
          const int n = integral_value(value, "task_diversity");
          if (n > static_cast<int>(domains.size())) {
            throw ConfigError("task_diversity " + std::to_string(n) + " exceeds " +
                              std::to_string(domains.size()) + " domains");
          }
          if (domains.size() < 2) {
            throw ConfigError("task_diversity needs at least two domains");
          }
          cfg.train_domains.assign(domains.begin(), domains.begin() + n);
          cfg.eval_domains.assign(domains.begin() + 1, domains.end());
          break;
        }
      }
      cfg.meta.validate();
      ExperimentResult result = run_meta_experiment(cfg, train, test, items, config_digest);
      row.report = std::move(result.report);
      row.backbone_digest = result.backbone_digest;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv_header() {
  return "axis,value," + MetricsReport::csv_header() + ",backbone_digest,error";
}

std::string ablation_csv_row(const AblationRow& row) {
  std::string out = row.axis + "," + format_double(row.value) + ",";
  if (row.report) {
    out += row.report->csv_row();
  } else {
    out += ",,,,,,,,,,,";
  }
  std::string error = row.error;
  std::replace(error.begin(), error.end(), ',', ';');
  std::replace(error.begin(), error.end(), '\n', ' ');
  return out + "," + row.backbone_digest + "," + error;
}

std::vector<BenchRow> bench_adaptation(const std::vector<BenchPrompt>& prompts,
                                       const std::vector<UserTask>& tasks,
                                       const MetaConfig& cfg, int repetitions,
                                       const TaskLoss& loss) {
  if (repetitions < 3) throw ContractError("bench_adaptation needs repetitions >= 3");
  if (tasks.empty()) throw ContractError("bench_adaptation: no tasks");
  std::vector<BenchRow> rows;
  for (const auto& entry : prompts) {
    BenchRow row;
    row.mode = entry.mode;
    row.inner_steps = cfg.inner_steps;
    for (const auto& task : tasks) {
      for (int r = 0; r < repetitions; ++r) {
        const AdaptationResult adapted = adapt_user(entry.prompt, task.support, cfg, loss);
        row.samples_ms.push_back(adapted.wall_clock_ms);
        row.peak_mem_bytes = std::max(row.peak_mem_bytes, adapted.peak_mem_bytes);
      }
    }
    row.mean_ms = std::accumulate(row.samples_ms.begin(), row.samples_ms.end(), 0.0) /
                  static_cast<double>(row.samples_ms.size());
    row.p95_ms = percentile(row.samples_ms, 95.0);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bench_csv_header() {
  return "mode,inner_steps,samples,mean_ms,p95_ms,peak_mem_bytes";
}

std::string bench_csv_row(const BenchRow& row) {
  return row.mode + "," + std::to_string(row.inner_steps) + "," +
         std::to_string(row.samples_ms.size()) + "," + format_double(row.mean_ms, 6) +
         "," + format_double(row.p95_ms, 6) + "," + std::to_string(row.peak_mem_bytes);
}

}  // namespace metaprompt
