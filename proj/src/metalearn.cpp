#include "metaprompt/metalearn.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "metaprompt/autodiff.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/format.hpp"
#include "metaprompt/ops.hpp"
#include "metaprompt/parallel.hpp"

namespace metaprompt {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string trace_text(const std::vector<double>& trace) {
  std::string out = "[";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i > 0) out += ", ";
    out += format_double(trace[i]);
  }
  return out + "]";
}

ad::Tensor fresh_leaf(std::vector<double> values, std::size_t rows,
                      std::size_t cols) {
  return ad::Tensor(rows, cols, std::move(values), true);
}

void check_batch(const EpisodeBatch& batch) {
  if (batch.tasks.empty()) throw ContractError("empty episode batch");
}

}  // namespace

ad::Tensor BackboneLoss::loss(const ad::Tensor& prompt,
                              std::span<const Example> examples) const {
  if (examples.empty()) throw ContractError("loss over an empty example set");
  std::vector<std::vector<int>> sequences;
  std::vector<int> targets;
  sequences.reserve(examples.size());
  targets.reserve(examples.size());
  for (const auto& ex : examples) {
    sequences.push_back(ex.tokens);
    targets.push_back(ex.target);
  }
  return ad::softmax_cross_entropy(backbone_.final_logits(prompt, sequences),
                                   targets);
}

std::string to_string(MetaMode mode) {
  switch (mode) {
    case MetaMode::kMaml: return "maml";
    case MetaMode::kFomaml: return "fomaml";
    case MetaMode::kReptile: return "reptile";
  }
  return "unknown";
}

MetaMode parse_meta_mode(const std::string& name) {
  if (name == "maml") return MetaMode::kMaml;
  if (name == "fomaml") return MetaMode::kFomaml;
  if (name == "reptile") return MetaMode::kReptile;
  throw ConfigError("unknown meta mode '" + name + "'");
}

void MetaConfig::validate() const {
  if (!(inner_lr >= 1e-6 && inner_lr <= 1e-1)) {
    throw ConfigError("inner_lr " + format_double(inner_lr) +
                      " outside [1e-6, 1e-1]");
  }
  if (!(outer_lr > 0.0) || !std::isfinite(outer_lr)) {
    throw ConfigError("outer_lr must be positive");
  }
  if (inner_steps < 1) throw ConfigError("inner_steps must be positive");
  if (!(reptile_step > 0.0 && reptile_step <= 1.0)) {
    throw ConfigError("reptile_step must lie in (0, 1]");
  }
  if (meta_batch_size < 1) throw ConfigError("meta_batch_size must be positive");
  if (meta_iterations < 0) throw ConfigError("meta_iterations must be non-negative");
  if (!(outer_momentum >= 0.0 && outer_momentum < 1.0)) {
    throw ConfigError("outer_momentum must lie in [0, 1)");
  }
  if (workers < 1) throw ConfigError("workers must be positive");
}

AdaptationResult inner_adapt(const SoftPrompt& theta, const UserTask& task,
                             double alpha, int steps, bool record_higher_order,
                             const TaskLoss& loss) {
  if (task.support.empty()) {
    throw ContractError("task '" + task.user_id + "' has an empty support set");
  }
  if (steps < 0) throw ContractError("negative inner step count");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ContractError("inner learning rate must be finite and non-negative");
  }

  ad::MemoryScope memory;
  const auto start = Clock::now();
  AdaptationResult result;
  const std::size_t rows = theta.length();
  const std::size_t cols = theta.d();

  ad::Tensor p = theta.values();
  if (!record_higher_order) {
    p = fresh_leaf(std::vector<double>(p.data().begin(), p.data().end()), rows, cols);
  }
  int step = 0;
  try {
    for (; step < steps; ++step) {
      const ad::Tensor support_loss = loss.loss(p, task.support);
      result.support_loss_trace.push_back(support_loss.item());
      const ad::Tensor wrt[] = {p};
      const ad::Tensor g = ad::backward(support_loss, wrt, record_higher_order).grads[0];
      if (record_higher_order) {
        p = ad::sub(p, ad::scale(g, alpha));
      } else {
        std::vector<double> next(p.data().begin(), p.data().end());
        const auto gd = g.data();
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= alpha * gd[i];
        for (double v : next) {
          if (!std::isfinite(v)) throw NumericError("inner update produced a non-finite value");
        }
        p = fresh_leaf(std::move(next), rows, cols);
      }
    }
    ad::NoGradGuard no_grad;
    result.support_loss_trace.push_back(loss.loss(p, task.support).item());
  } catch (const NumericError& e) {
    throw NumericError("inner step " + std::to_string(step) + " of task '" +
                       task.user_id + "': " + e.what() + "; loss trace " +
                       trace_text(result.support_loss_trace));
  }

  result.adapted_prompt = SoftPrompt(p, cols);
  result.steps_executed = steps;
  result.wall_clock_ms = elapsed_ms(start);
  result.peak_mem_bytes = memory.peak_bytes();
  return result;
}

MetaGradient meta_gradient(const SoftPrompt& theta, const EpisodeBatch& batch,
                           const MetaConfig& cfg, const TaskLoss& loss) {
  check_batch(batch);
  if (cfg.mode == MetaMode::kReptile) {
    throw ContractError("meta_gradient requires MAML or FOMAML mode");
  }
  const bool second_order = cfg.mode == MetaMode::kMaml;
  const std::size_t n = batch.tasks.size();
  std::vector<std::vector<double>> grads(n);
  std::vector<double> losses(n);

  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const UserTask& task = batch.tasks[i];
    if (task.query.empty()) {
      throw ContractError("task '" + task.user_id + "' has an empty query set");
    }
    const SoftPrompt local = clone_prompt(theta);
    const AdaptationResult adapted = inner_adapt(
        local, task, cfg.inner_lr, cfg.inner_steps, second_order, loss);
    const ad::Tensor& p = adapted.adapted_prompt.values();
    const ad::Tensor query_loss = loss.loss(p, task.query);
    ad::Tensor g;
    if (second_order && cfg.inner_steps > 0) {
      g = ad::grad_of_grad(query_loss, local.values());
    } else {
      // FOMAML: theta' is a fresh leaf, so this is the stop-gradient term.
      const ad::Tensor wrt[] = {p};
      g = ad::backward(query_loss, wrt).grads[0];
    }
    grads[i].assign(g.data().begin(), g.data().end());
    losses[i] = query_loss.item();
  });

  std::vector<double> total(theta.length() * theta.d(), 0.0);
  MetaGradient out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += grads[i][j];
    out.meta_loss += losses[i];
  }
  out.gradient = ad::Tensor(theta.length(), theta.d(), std::move(total));
  return out;
}

OuterStep maml_outer_step(const SoftPrompt& theta, const EpisodeBatch& batch,
                          const MetaConfig& cfg, const TaskLoss& loss) {
  const MetaGradient mg = meta_gradient(theta, batch, cfg, loss);
  std::vector<double> next(theta.values().data().begin(), theta.values().data().end());
  const auto g = mg.gradient.data();
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= cfg.outer_lr * g[i];
  return {SoftPrompt(fresh_leaf(std::move(next), theta.length(), theta.d()), theta.d()),
          mg.meta_loss};
}

OuterStep reptile_outer_step(const SoftPrompt& theta, const EpisodeBatch& batch,
                             const MetaConfig& cfg, const TaskLoss& loss) {
  check_batch(batch);
  if (cfg.mode != MetaMode::kReptile) {
    throw ContractError("reptile_outer_step requires REPTILE mode");
  }
  const std::size_t n = batch.tasks.size();
  std::vector<std::vector<double>> adapted(n);
  std::vector<double> support_loss(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const AdaptationResult r = inner_adapt(theta, batch.tasks[i], cfg.inner_lr,
                                           cfg.inner_steps, false, loss);
    const auto v = r.adapted_prompt.values().data();
    adapted[i].assign(v.begin(), v.end());
    support_loss[i] = r.support_loss_trace.front();
  });

  const auto base = theta.values().data();
  std::vector<double> delta(base.size(), 0.0);
  double mean_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] += adapted[i][j] - base[j];
    mean_loss += support_loss[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> next(base.begin(), base.end());
  for (std::size_t j = 0; j < next.size(); ++j) {
    next[j] += cfg.reptile_step * (delta[j] * inv_n);
  }
  return {SoftPrompt(fresh_leaf(std::move(next), theta.length(), theta.d()), theta.d()),
          mean_loss * inv_n};
}

void TrainLog::write_csv(const std::filesystem::path& path,
                         const std::string& config_digest) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "# config_digest=" << config_digest << "\n";
  out << "episode,meta_loss,wall_ms,eval_hit10\n";
  for (const auto& row : rows) {
    out << row.episode << ',' << format_double(row.meta_loss) << ','
        << format_double(row.wall_ms, 6) << ',';
    if (row.eval_hit10) out << format_double(*row.eval_hit10);
    out << '\n';
  }
}

TrainResult meta_train(const std::vector<UserTask>& tasks, const MetaConfig& cfg,
                       const SoftPrompt& initial, const TaskLoss& loss,
                       const TrainCallbacks& callbacks) {
  cfg.validate();
  const auto batch_size = static_cast<std::size_t>(cfg.meta_batch_size);
  if (tasks.size() < batch_size) {
    throw ContractError("meta_train needs at least " + std::to_string(batch_size) +
                        " tasks, got " + std::to_string(tasks.size()));
  }
  std::mt19937_64 rng(cfg.seed);
  TrainResult result{clone_prompt(initial), {}};
  std::vector<double> velocity(initial.length() * initial.d(), 0.0);

  for (int episode = 0; episode < cfg.meta_iterations; ++episode) {
    const auto start = Clock::now();
    const EpisodeBatch batch =
        sample_episode(tasks, batch_size, rng, callbacks.domain_weights);
    TrainLogRow row;
    row.episode = episode;
    try {
      if (cfg.mode == MetaMode::kReptile) {
        OuterStep step = reptile_outer_step(result.prompt, batch, cfg, loss);
        result.prompt = std::move(step.prompt);
        row.meta_loss = step.loss;
      } else if (cfg.outer_momentum == 0.0) {
        OuterStep step = maml_outer_step(result.prompt, batch, cfg, loss);
        result.prompt = std::move(step.prompt);
        row.meta_loss = step.loss;
      } else {
        const MetaGradient mg = meta_gradient(result.prompt, batch, cfg, loss);
        const auto g = mg.gradient.data();
        const auto cur = result.prompt.values().data();
        std::vector<double> next(cur.begin(), cur.end());
        for (std::size_t i = 0; i < next.size(); ++i) {
          velocity[i] = cfg.outer_momentum * velocity[i] + g[i];
          next[i] -= cfg.outer_lr * velocity[i];
        }
        result.prompt = SoftPrompt(
            fresh_leaf(std::move(next), initial.length(), initial.d()), initial.d());
        row.meta_loss = mg.meta_loss;
      }
    } catch (const NumericError& e) {
      throw NumericError("episode " + std::to_string(episode) + ": " + e.what());
    }
    if (!std::isfinite(row.meta_loss)) {
      throw NumericError("episode " + std::to_string(episode) +
                         ": non-finite meta loss");
    }
    row.wall_ms = elapsed_ms(start);
    const bool last = episode + 1 == cfg.meta_iterations;
    if (callbacks.evaluate &&
        ((callbacks.eval_every > 0 && (episode + 1) % callbacks.eval_every == 0) ||
         last)) {
      row.eval_hit10 = callbacks.evaluate(episode, result.prompt);
    }
    if (callbacks.on_episode) callbacks.on_episode(row);
    result.log.rows.push_back(row);
  }
  return result;
}

AdaptationResult adapt_user(const SoftPrompt& trained_theta,
                            std::span<const Example> support,
                            const MetaConfig& cfg, const TaskLoss& loss) {
  if (support.empty() || support.size() > static_cast<std::size_t>(kMaxShots)) {
    throw ContractError("adapt_user needs 1 to 5 support interactions, got " +
                        std::to_string(support.size()));
  }
  UserTask task;
  task.support.assign(support.begin(), support.end());
  return inner_adapt(trained_theta, task, cfg.inner_lr, cfg.inner_steps, false, loss);
}

}  // namespace metaprompt
