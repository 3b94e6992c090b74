#include "metaprompt/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "metaprompt/checkpoint.hpp"
#include "metaprompt/errors.hpp"
#include "metaprompt/evaluation.hpp"
#include "metaprompt/format.hpp"
#include "metaprompt/metalearn.hpp"
#include "metaprompt/run_config.hpp"

namespace metaprompt {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "Run configuration (JSON)");
  cmd->add_option("--seed", common.seed, "Seed for every source of randomness");
  cmd->add_option("--workers", common.workers, "Task-level worker threads")
      ->check(CLI::PositiveNumber);
}

void apply_overrides(RunConfig& cfg, const CommonOptions& common) {
  if (common.seed) cfg.seed = *common.seed;
  if (common.workers) cfg.workers = *common.workers;
  cfg.propagate();
  cfg.validate();
}

RunConfig resolve_config(const CommonOptions& common) {
  RunConfig cfg = common.config_path.empty() ? RunConfig{} : load_run_config(common.config_path);
  apply_overrides(cfg, common);
  return cfg;
}

InteractionFormat data_format(const RunConfig& cfg) {
  return parse_interaction_format(cfg.data.format);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Partitions records by the user-level holdout used throughout the pipeline.
std::pair<std::vector<InteractionRecord>, std::vector<InteractionRecord>> split_records(
    const std::vector<InteractionRecord>& records, const ItemVocabulary& items,
    const RunConfig& cfg) {
  const TaskSet ts = build_tasks(records, items, cfg.data.k_support, cfg.data.k_query,
                                 cfg.seed, cfg.data.temporal);
  const UserSplit split = split_users(ts.tasks, cfg.data.holdout_fraction, cfg.seed);
  std::set<std::string> test_users;
  for (const auto& t : split.test) test_users.insert(t.user_id);
  std::pair<std::vector<InteractionRecord>, std::vector<InteractionRecord>> out;
  for (const auto& r : records) {
    (test_users.contains(r.user_id) ? out.second : out.first).push_back(r);
  }
  return out;
}

std::vector<UserTask> tasks_from(const std::vector<InteractionRecord>& records,
                                 const ItemVocabulary& items, const RunConfig& cfg,
                                 std::ostream& err) {
  TaskSet ts = build_tasks(records, items, cfg.data.k_support, cfg.data.k_query, cfg.seed,
                           cfg.data.temporal);
  if (!ts.skipped_users.empty()) {
    err << "warning: skipped " << ts.skipped_users.size() << " of " << ts.distinct_users
        << " users with fewer than " << cfg.data.k_support + cfg.data.k_query
        << " interactions\n";
  }
  if (ts.tasks.empty()) throw Error("no user has enough interactions to form a task");
  return std::move(ts.tasks);
}

// Support from one file, queries from another, paired by user.
std::vector<UserTask> paired_tasks(const std::vector<InteractionRecord>& support,
                                   const std::vector<InteractionRecord>& query,
                                   const ItemVocabulary& items, std::ostream& err) {
  std::map<std::string, UserTask> by_user;
  for (const auto& r : support) {
    UserTask& t = by_user[r.user_id];
    t.user_id = r.user_id;
    t.domain = r.domain;
    t.support.push_back(make_example(r, items));
  }
  std::size_t unmatched = 0;
  for (const auto& r : query) {
    auto it = by_user.find(r.user_id);
    if (it == by_user.end()) {
      ++unmatched;
      continue;
    }
    it->second.query.push_back(make_example(r, items));
  }
  if (unmatched > 0) {
    err << "warning: ignored " << unmatched << " query interactions of users without support\n";
  }
  std::vector<UserTask> tasks;
  for (auto& [user, task] : by_user) {
    if (!task.query.empty()) tasks.push_back(std::move(task));
  }
  if (tasks.empty()) throw Error("no user has both support and query interactions");
  return tasks;
}

void check_vocabulary_fits(const ItemVocabulary& items, const BackboneConfig& backbone) {
  if (items.end_token() > backbone.vocab_size) {
    throw ConfigError(std::to_string(items.size()) + " items need vocab_size >= " +
                      std::to_string(items.end_token()) + ", config has " +
                      std::to_string(backbone.vocab_size));
  }
}

json prompt_metadata(const std::string& trainer, const ItemVocabulary& items,
                     const RunConfig& cfg, const Backbone& backbone) {
  json meta;
  meta["trainer"] = trainer;
  meta["items"] = items.items();
  meta["config"] = json::parse(cfg.to_json());
  meta["backbone_digest"] = backbone.digest();
  return meta;
}

// A prompt checkpoint with everything needed to use it.
struct PromptArtifact {
  Checkpoint checkpoint;
  json metadata;
  RunConfig config;
  ItemVocabulary items;
  SoftPrompt prompt;
  std::string trainer;
};

PromptArtifact load_prompt_artifact(const fs::path& path, const CommonOptions& common) {
  PromptArtifact a;
  a.checkpoint = load_checkpoint(path);
  if (a.checkpoint.header.kind != CheckpointKind::kPrompt) {
    throw CheckpointError(path.string() + " is a " + to_string(a.checkpoint.header.kind) +
                          " checkpoint, expected prompt");
  }
  a.metadata = json::parse(a.checkpoint.header.metadata);
  if (!a.metadata.contains("config") || !a.metadata.contains("items")) {
    throw CheckpointError(path.string() + " lacks the embedded config or item list");
  }
  a.config = common.config_path.empty()
                 ? RunConfig::from_json(a.metadata.at("config").dump())
                 : load_run_config(common.config_path);
  apply_overrides(a.config, common);
  if (a.config.digest() != a.checkpoint.header.config_digest) {
    throw ConfigError("config digest " + a.config.digest() + " does not match " +
                      path.string() + " (" + a.checkpoint.header.config_digest +
                      "); refusing to mix artifacts from different configs");
  }
  a.items = ItemVocabulary(a.metadata.at("items").get<std::vector<std::string>>());
  a.trainer = a.metadata.value("trainer", "");
  a.prompt = prompt_from_checkpoint(a.checkpoint,
                                    static_cast<std::size_t>(a.config.backbone.d_model));
  return a;
}

void verify_backbone(const PromptArtifact& a, const Backbone& backbone) {
  const std::string recorded = a.metadata.value("backbone_digest", "");
  if (recorded != backbone.digest()) {
    throw Error("backbone digest " + backbone.digest() + " differs from the one the prompt "
                "was trained with (" + recorded + ")");
  }
}

// ---- gen-synth ---------------------------------------------------------

int run_gen_synth(const CommonOptions& common, const std::string& out_dir,
                  std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const auto records = synth_generate(cfg.data.synth);
  const ItemVocabulary items = build_item_vocabulary(records);
  const auto [train, test] = split_records(records, items, cfg);
  const std::string digest = cfg.digest();
  ensure_dir(out_dir);
  save_interactions(fs::path(out_dir) / "interactions.tsv", records, digest);
  save_interactions(fs::path(out_dir) / "train.tsv", train, digest);
  save_interactions(fs::path(out_dir) / "test.tsv", test, digest);
  write_text(fs::path(out_dir) / "config.json", cfg.to_json() + "\n");
  out << "wrote " << records.size() << " interactions (" << train.size() << " train, "
      << test.size() << " test) over " << items.size() << " items to " << out_dir
      << "\nconfig_digest " << digest << "\n";
  return kExitOk;
}

// ---- train-meta --------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string items;
  std::string eval_data;
  std::string out_dir;
  bool static_prompt = false;
};

int run_train_meta(const CommonOptions& common, const TrainOptions& opt, std::ostream& out,
                   std::ostream& err) {
  const RunConfig cfg = resolve_config(common);
  const std::string digest = cfg.digest();

  std::vector<InteractionRecord> train_records;
  std::vector<InteractionRecord> eval_records;
  ItemVocabulary items;
  if (opt.data.empty()) {
    const auto records = synth_generate(cfg.data.synth);
    items = build_item_vocabulary(records);
    std::tie(train_records, eval_records) = split_records(records, items, cfg);
  } else {
    train_records = load_interactions(opt.data, data_format(cfg));
    items = build_item_vocabulary(train_records);
  }
  if (!opt.items.empty()) {
    items = build_item_vocabulary(load_interactions(opt.items, data_format(cfg)));
  }
  if (!opt.eval_data.empty()) eval_records = load_interactions(opt.eval_data, data_format(cfg));
  check_vocabulary_fits(items, cfg.backbone);

  const std::vector<UserTask> tasks = tasks_from(train_records, items, cfg, err);
  const Backbone backbone(cfg.backbone);
  const std::string backbone_before = backbone.digest();
  const BackboneLoss loss(backbone);
  const SoftPrompt initial = init_prompt(cfg.prompt_length, cfg.backbone.d_model, cfg.seed);

  const fs::path dir = opt.out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(opt.out_dir);
  ensure_dir(dir);

  SoftPrompt trained;
  std::string trainer;
  if (opt.static_prompt) {
    trained = train_static_prompt(initial, tasks, cfg.static_prompt, loss);
    trainer = "static";
  } else {
    std::vector<UserTask> eval_tasks;
    TrainCallbacks callbacks;
    if (!cfg.domain_weights.empty()) callbacks.domain_weights = &cfg.domain_weights;
    if (cfg.eval_every > 0 && !eval_records.empty()) {
      eval_tasks = tasks_from(eval_records, items, cfg, err);
      callbacks.eval_every = cfg.eval_every;
      callbacks.evaluate = [&](int, const SoftPrompt& p) -> std::optional<double> {
        return evaluate_suite(p, eval_tasks, cfg.meta, BaselineMode::kMeta, backbone, items,
                              cfg.eval, digest)
            .hit;
      };
    }
    TrainResult result = meta_train(tasks, cfg.meta, initial, loss, callbacks);
    result.log.write_csv(dir / "train_log.csv", digest);
    trained = std::move(result.prompt);
    trainer = to_string(cfg.meta.mode);
  }
  if (backbone.digest() != backbone_before) {
    throw Error("backbone weights changed during training");
  }

  const json meta = prompt_metadata(trainer, items, cfg, backbone);
  save_checkpoint(dir / "prompt.ckpt",
                  make_prompt_checkpoint(trained, digest, cfg.seed, meta.dump()));
  write_text(dir / "config.json", cfg.to_json() + "\n");
  out << "trained " << trainer << " prompt " << trained.length() << "x" << trained.d()
      << " on " << tasks.size() << " tasks -> " << (dir / "prompt.ckpt").string()
      << "\nprompt_digest " << trained.digest() << "\nbackbone_digest " << backbone.digest()
      << "\nconfig_digest " << digest << "\n";
  return kExitOk;
}

// ---- adapt ---------------------------------------------------------------

struct AdaptOptions {
  std::string prompt;
  std::string support;
  std::string user;
  std::string export_path;
};

int run_adapt(const CommonOptions& common, const AdaptOptions& opt, std::ostream& out) {
  PromptArtifact a = load_prompt_artifact(opt.prompt, common);
  if (a.trainer == "adapted" || a.trainer == "static") {
    throw ContractError("adapt needs a meta-trained prompt, " + opt.prompt + " was produced by '" +
                        a.trainer + "'");
  }
  const auto records = load_interactions(opt.support, data_format(a.config));
  std::set<std::string> users;
  for (const auto& r : records) users.insert(r.user_id);
  std::string user = opt.user;
  if (user.empty()) {
    if (users.size() != 1) {
      throw ContractError(opt.support + " holds " + std::to_string(users.size()) +
                          " users; choose one with --user");
    }
    user = *users.begin();
  }
  std::vector<Example> support;
  for (const auto& r : records) {
    if (r.user_id == user) support.push_back(make_example(r, a.items));
  }
  if (support.empty()) throw ContractError("no support interactions for user '" + user + "'");

  const Backbone backbone(a.config.backbone);
  verify_backbone(a, backbone);
  const BackboneLoss loss(backbone);
  const AdaptationResult adapted = adapt_user(a.prompt, support, a.config.meta, loss);

  json meta = a.metadata;
  meta["trainer"] = "adapted";
  meta["adapted_user"] = user;
  meta["source_prompt_digest"] = a.prompt.digest();
  meta["adapt_ms"] = adapted.wall_clock_ms;
  meta["adapt_peak_mem_bytes"] = adapted.peak_mem_bytes;
  meta["adapt_steps"] = adapted.steps_executed;
  json trace = json::array();
  for (double v : adapted.support_loss_trace) trace.push_back(v);
  meta["support_loss_trace"] = trace;
  save_checkpoint(opt.export_path,
                  make_prompt_checkpoint(adapted.adapted_prompt, a.checkpoint.header.config_digest,
                                         a.checkpoint.header.seed, meta.dump()));
  out << "adapted prompt for user " << user << " with " << support.size()
      << " support interactions in " << adapted.steps_executed << " steps ("
      << format_double(adapted.wall_clock_ms, 4) << " ms), support loss "
      << format_double(adapted.support_loss_trace.front(), 6) << " -> "
      << format_double(adapted.support_loss_trace.back(), 6) << "\nexported "
      << opt.export_path << "\n";
  return kExitOk;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateOptions {
  std::string prompt;
  std::string data;
  std::string support;
  std::string mode = "meta";
  std::string out;
};

int run_evaluate(const CommonOptions& common, const EvaluateOptions& opt, std::ostream& out,
                 std::ostream& err) {
  PromptArtifact a = load_prompt_artifact(opt.prompt, common);
  const BaselineMode mode = parse_baseline_mode(opt.mode);
  const RunConfig& cfg = a.config;
  const Backbone backbone(cfg.backbone);
  verify_backbone(a, backbone);

  const auto data = load_interactions(opt.data, data_format(cfg));
  std::vector<UserTask> tasks;
  const bool adapted = a.trainer == "adapted";
  if (adapted) {
    if (mode != BaselineMode::kMeta) {
      throw ContractError("an adapted prompt can only be evaluated in meta mode");
    }
    const std::string user = a.metadata.at("adapted_user").get<std::string>();
    UserTask task;
    task.user_id = user;
    for (const auto& r : data) {
      if (r.user_id != user) continue;
      task.domain = r.domain;
      task.query.push_back(make_example(r, a.items));
    }
    if (task.query.empty()) {
      throw ContractError(opt.data + " has no interactions for user '" + user + "'");
    }
    tasks.push_back(std::move(task));
  } else if (!opt.support.empty()) {
    tasks = paired_tasks(load_interactions(opt.support, data_format(cfg)), data, a.items, err);
  } else {
    tasks = tasks_from(data, a.items, cfg, err);
  }

  if (mode == BaselineMode::kStaticPrompt && a.trainer != "static") {
    throw ContractError("static_prompt mode needs a prompt trained with --static, " +
                        opt.prompt + " was produced by '" + a.trainer + "'");
  }
  if (mode == BaselineMode::kMeta && a.trainer == "static") {
    throw ContractError("meta mode needs a meta-trained prompt, " + opt.prompt +
                        " was trained with --static");
  }

  MetricsReport report;
  if (adapted) {
    // Already adapted: rank with it as is and carry over the recorded
    // adaptation cost.
    report = evaluate_suite(a.prompt, tasks, cfg.meta, BaselineMode::kStaticPrompt, backbone,
                            a.items, cfg.eval, cfg.digest());
    report.mode = to_string(BaselineMode::kMeta);
    report.mean_adapt_ms = a.metadata.value("adapt_ms", 0.0);
    report.p95_adapt_ms = report.mean_adapt_ms;
    report.peak_mem_bytes = a.metadata.value("adapt_peak_mem_bytes", std::int64_t{0});
    report.inner_steps_executed = a.metadata.value("adapt_steps", 0L);
  } else {
    const SoftPrompt used =
        mode == BaselineMode::kZeroShot
            ? init_prompt(cfg.prompt_length, cfg.backbone.d_model, cfg.seed)
            : a.prompt;
    report = evaluate_suite(used, tasks, cfg.meta, mode, backbone, a.items, cfg.eval,
                            cfg.digest());
  }

  const std::string path = opt.out.empty() ? "metrics_" + opt.mode + ".csv" : opt.out;
  if (fs::path(path).has_parent_path()) ensure_dir(fs::path(path).parent_path());
  report.write_csv(path);
  out << report.table() << "wrote " << path << "\n";
  return kExitOk;
}

// ---- bench ---------------------------------------------------------------

struct BenchOptions {
  std::vector<std::string> prompts;
  std::string data;
  std::vector<int> inner_steps;
  std::optional<int> repetitions;
  std::string out = "bench.csv";
};

int run_bench(const CommonOptions& common, const BenchOptions& opt, std::ostream& out,
              std::ostream& err) {
  std::vector<PromptArtifact> artifacts;
  for (const auto& p : opt.prompts) artifacts.push_back(load_prompt_artifact(p, common));
  const RunConfig& cfg = artifacts.front().config;
  for (const auto& a : artifacts) {
    if (a.checkpoint.header.config_digest != artifacts.front().checkpoint.header.config_digest) {
      throw ConfigError("bench prompts come from different configs");
    }
  }
  const Backbone backbone(cfg.backbone);
  for (const auto& a : artifacts) verify_backbone(a, backbone);
  const BackboneLoss loss(backbone);
  const auto records = load_interactions(opt.data, data_format(cfg));
  const std::vector<UserTask> tasks = tasks_from(records, artifacts.front().items, cfg, err);

  std::vector<BenchPrompt> prompts;
  for (const auto& a : artifacts) prompts.push_back({a.trainer, a.prompt});
  const int reps = opt.repetitions.value_or(cfg.bench_repetitions);
  std::vector<int> steps = opt.inner_steps;
  if (steps.empty()) steps.push_back(cfg.meta.inner_steps);

  std::ostringstream csv;
  csv << "# config_digest=" << cfg.digest() << "\n" << bench_csv_header() << "\n";
  for (int s : steps) {
    MetaConfig mc = cfg.meta;
    mc.inner_steps = s;
    mc.workers = 1;
    for (const auto& row : bench_adaptation(prompts, tasks, mc, reps, loss)) {
      csv << bench_csv_row(row) << "\n";
      out << row.mode << " S=" << row.inner_steps << ": mean " << format_double(row.mean_ms, 4)
          << " ms, p95 " << format_double(row.p95_ms, 4) << " ms, peak "
          << row.peak_mem_bytes << " bytes\n";
    }
  }
  write_text(opt.out, csv.str());
  out << "wrote " << opt.out << "\n";
  return kExitOk;
}

// ---- ablate --------------------------------------------------------------

struct AblateOptions {
  std::string axis;
  std::vector<double> values;
  std::string train;
  std::string test;
  std::string out = "ablation.csv";
};

int run_ablate(const CommonOptions& common, const AblateOptions& opt, std::ostream& out,
               std::ostream& err) {
  RunConfig cfg = resolve_config(common);
  if (!opt.axis.empty()) cfg.ablation_axis = opt.axis;
  if (!opt.values.empty()) cfg.ablation_values = opt.values;
  cfg.validate();
  const AblationAxis axis = parse_ablation_axis(cfg.ablation_axis);

  std::vector<InteractionRecord> train_records;
  std::vector<InteractionRecord> test_records;
  ItemVocabulary items;
  if (opt.train.empty() != opt.test.empty()) {
    throw ContractError("--train and --test go together");
  }
  if (opt.train.empty()) {
    const auto records = synth_generate(cfg.data.synth);
    items = build_item_vocabulary(records);
    std::tie(train_records, test_records) = split_records(records, items, cfg);
  } else {
    train_records = load_interactions(opt.train, data_format(cfg));
    test_records = load_interactions(opt.test, data_format(cfg));
    auto all = train_records;
    all.insert(all.end(), test_records.begin(), test_records.end());
    items = build_item_vocabulary(all);
  }
  check_vocabulary_fits(items, cfg.backbone);
  const auto train = tasks_from(train_records, items, cfg, err);
  const auto test = tasks_from(test_records, items, cfg, err);

  const std::string digest = cfg.digest();
  const auto rows =
      ablation_sweep(axis, cfg.ablation_values, cfg.experiment(), train, test, items, digest);
  std::ostringstream csv;
  csv << "# config_digest=" << digest << "\n" << ablation_csv_header() << "\n";
  int failures = 0;
  for (const auto& row : rows) {
    csv << ablation_csv_row(row) << "\n";
    out << row.axis << "=" << format_double(row.value) << ": ";
    if (row.report) {
      out << "Hit@" << row.report->k << " " << format_double(row.report->hit, 4) << ", nDCG "
          << format_double(row.report->ndcg, 4) << ", MRR "
          << format_double(row.report->mrr, 4) << "\n";
    } else {
      ++failures;
      out << "failed: " << row.error << "\n";
    }
  }
  write_text(opt.out, csv.str());
  out << "wrote " << opt.out << "\n";
  return failures == static_cast<int>(rows.size()) ? kExitFailure : kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-learned soft prompts for cold-start recommendation", "metaprompt"};
  app.require_subcommand(1);

  CommonOptions common;

  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Generate the clustered synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", synth_out, "Output directory")->required();

  TrainOptions train;
  auto* tr = app.add_subcommand("train-meta", "Meta-train a soft prompt");
  add_common(tr, common);
  tr->add_option("--data", train.data, "Training interactions (default: synthetic train split)")
      ->check(CLI::ExistingFile);
  tr->add_option("--items", train.items, "Interactions whose items define the vocabulary")
      ->check(CLI::ExistingFile);
  tr->add_option("--eval-data", train.eval_data, "Held-out interactions for periodic evaluation")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", train.out_dir, "Output directory (default: config output_dir)");
  tr->add_flag("--static", train.static_prompt,
               "Train one prompt on pooled data instead (static prompt-tuning baseline)");

  AdaptOptions adapt;
  auto* ad = app.add_subcommand("adapt", "Adapt a trained prompt to one user's support set");
  add_common(ad, common);
  ad->add_option("--prompt", adapt.prompt, "Trained prompt checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ad->add_option("--support", adapt.support, "Support interactions of the user")
      ->required()
      ->check(CLI::ExistingFile);
  ad->add_option("--user", adapt.user, "User id when the support file holds several");
  ad->add_option("--export", adapt.export_path, "Adapted prompt checkpoint to write")
      ->required();

  EvaluateOptions evaluate;
  auto* ev = app.add_subcommand("evaluate", "Rank held-out interactions and report metrics");
  add_common(ev, common);
  ev->add_option("--prompt", evaluate.prompt, "Prompt checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", evaluate.data, "Evaluation interactions")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--support", evaluate.support,
                 "Support interactions; --data then holds only queries")
      ->check(CLI::ExistingFile);
  ev->add_option("--mode", evaluate.mode, "meta, zero_shot or static_prompt")
      ->check(CLI::IsMember({"meta", "zero_shot", "static_prompt"}));
  ev->add_option("--out", evaluate.out, "Metrics CSV (default: metrics_<mode>.csv)");

  BenchOptions bench;
  auto* be = app.add_subcommand("bench", "Time per-user adaptation");
  add_common(be, common);
  be->add_option("--prompt", bench.prompts, "Prompt checkpoints, one row set each")
      ->required()
      ->check(CLI::ExistingFile);
  be->add_option("--data", bench.data, "Interactions to build tasks from")
      ->required()
      ->check(CLI::ExistingFile);
  be->add_option("--inner-steps", bench.inner_steps, "Inner step counts to time")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  be->add_option("--repetitions", bench.repetitions, "Timing repetitions per task (>= 3)");
  be->add_option("--out", bench.out, "Benchmark CSV");

  AblateOptions ablate;
  auto* ab = app.add_subcommand("ablate", "Sweep one hyperparameter");
  add_common(ab, common);
  ab->add_option("--axis", ablate.axis, "inner_steps, prompt_length, alpha or task_diversity")
      ->check(CLI::IsMember({"inner_steps", "prompt_length", "alpha", "task_diversity"}));
  ab->add_option("--values", ablate.values, "Comma-separated values")->delimiter(',');
  ab->add_option("--train", ablate.train, "Training interactions")->check(CLI::ExistingFile);
  ab->add_option("--test", ablate.test, "Held-out interactions")->check(CLI::ExistingFile);
  ab->add_option("--out", ablate.out, "Ablation CSV");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_synth(common, synth_out, out);
    if (tr->parsed()) return run_train_meta(common, train, out, err);
    if (ad->parsed()) return run_adapt(common, adapt, out);
    if (ev->parsed()) return run_evaluate(common, evaluate, out, err);
    if (be->parsed()) return run_bench(common, bench, out, err);
    if (ab->parsed()) return run_ablate(common, ablate, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace metaprompt
