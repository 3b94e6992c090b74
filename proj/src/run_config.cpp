#include "metaprompt/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metaprompt/digest.hpp"
#include "metaprompt/errors.hpp"

namespace metaprompt {

using json = nlohmann::json;

namespace {

// Reads fields out of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string where)
      : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw ConfigError(label("") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    try {
      out = object_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(label(key) + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return object_.contains(key) ? &object_.at(key) : nullptr;
  }

  std::string label(const std::string& key) const {
    if (where_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? where_ : where_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + label(key) + "'");
    }
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

json to_object(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  const auto& b = c.backbone;
  j["backbone"] = {{"n_layers", b.n_layers},
                   {"n_heads", b.n_heads},
                   {"d_model", b.d_model},
                   {"vocab_size", b.vocab_size},
                   {"max_seq_len", b.max_seq_len},
                   {"semantic_groups", b.semantic_groups},
                   {"semantic_group_size", b.semantic_group_size},
                   {"semantic_share", b.semantic_share},
                   {"semantic_item_base", b.semantic_item_base}};
  j["prompt"] = {{"length", c.prompt_length}};
  const auto& m = c.meta;
  j["meta"] = {{"mode", to_string(m.mode)},
               {"inner_lr", m.inner_lr},
               {"outer_lr", m.outer_lr},
               {"inner_steps", m.inner_steps},
               {"reptile_step", m.reptile_step},
               {"meta_batch_size", m.meta_batch_size},
               {"meta_iterations", m.meta_iterations},
               {"outer_momentum", m.outer_momentum},
               {"eval_every", c.eval_every},
               {"domain_weights", c.domain_weights}};
  const auto& d = c.data;
  j["data"] = {{"format", d.format},
               {"k_support", d.k_support},
               {"k_query", d.k_query},
               {"holdout_fraction", d.holdout_fraction},
               {"temporal", d.temporal},
               {"synth",
                {{"n_clusters", d.synth.n_clusters},
                 {"users_per_cluster", d.synth.users_per_cluster},
                 {"items_per_cluster", d.synth.items_per_cluster},
                 {"interactions_per_user", d.synth.interactions_per_user},
                 {"noise", d.synth.noise}}}};
  j["eval"] = {{"k", c.eval.k},
               {"candidates", to_string(c.eval.candidates)},
               {"n_negatives", c.eval.n_negatives},
               {"baselines", c.baselines}};
  j["static_prompt"] = {{"lr", c.static_prompt.lr},
                        {"iterations", c.static_prompt.iterations},
                        {"batch_size", c.static_prompt.batch_size}};
  j["bench"] = {{"repetitions", c.bench_repetitions}};
  j["ablation"] = {{"axis", c.ablation_axis}, {"values", c.ablation_values}};
  return j;
}

}  // namespace

void RunConfig::propagate() {
  backbone.seed = seed;
  meta.seed = seed;
  meta.workers = workers;
  data.synth.seed = seed;
  eval.seed = seed;
  eval.workers = workers;
  static_prompt.seed = seed;
}

void RunConfig::validate() const {
  require(workers >= 1, "workers must be at least 1");
  require(!output_dir.empty(), "output_dir must not be empty");
  backbone.validate();
  require(backbone.vocab_size > vocab::kItemBase,
          "backbone.vocab_size must exceed " + std::to_string(vocab::kItemBase) +
              " to hold item tokens");
  require(prompt_length >= 1, "prompt.length must be positive");
  require(prompt_length + static_cast<int>(kMaxContextTokens) + 1 <= backbone.max_seq_len,
          "prompt.length " + std::to_string(prompt_length) +
              " leaves no room for inputs within max_seq_len " +
              std::to_string(backbone.max_seq_len));
  meta.validate();
  require(eval_every >= 0, "meta.eval_every must be non-negative");
  for (const auto& [domain, weight] : domain_weights) {
    require(weight >= 0.0, "domain weight for '" + domain + "' must be non-negative");
  }
  parse_interaction_format(data.format);
  require(data.k_support >= 1 && data.k_support <= kMaxShots,
          "data.k_support must lie in [1, 5]");
  require(data.k_query >= 1 && data.k_query <= kMaxShots,
          "data.k_query must lie in [1, 5]");
  require(data.holdout_fraction >= 0.0 && data.holdout_fraction < 1.0,
          "data.holdout_fraction must lie in [0, 1)");
  data.synth.validate();
  eval.validate();
  require(!baselines.empty(), "eval.baselines must not be empty");
  for (const auto& b : baselines) parse_baseline_mode(b);
  require(static_prompt.lr > 0.0, "static_prompt.lr must be positive");
  require(static_prompt.iterations >= 0, "static_prompt.iterations must be non-negative");
  require(static_prompt.batch_size >= 1, "static_prompt.batch_size must be positive");
  require(bench_repetitions >= 3, "bench.repetitions must be at least 3");
  parse_ablation_axis(ablation_axis);
  require(!ablation_values.empty(), "ablation.values must not be empty");
}

std::string RunConfig::to_json() const { return to_object(*this).dump(2); }

RunConfig RunConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig c;
  ObjectReader top(root, "");
  top.get("seed", c.seed);
  top.get("workers", c.workers);
  top.get("output_dir", c.output_dir);

  if (const json* node = top.child("backbone")) {
    ObjectReader r(*node, "backbone");
    r.get("n_layers", c.backbone.n_layers);
    r.get("n_heads", c.backbone.n_heads);
    r.get("d_model", c.backbone.d_model);
    r.get("vocab_size", c.backbone.vocab_size);
    r.get("max_seq_len", c.backbone.max_seq_len);
    r.get("semantic_groups", c.backbone.semantic_groups);
    r.get("semantic_group_size", c.backbone.semantic_group_size);
    r.get("semantic_share", c.backbone.semantic_share);
    r.get("semantic_item_base", c.backbone.semantic_item_base);
    r.finish();
  }
  if (const json* node = top.child("prompt")) {
    ObjectReader r(*node, "prompt");
    r.get("length", c.prompt_length);
    r.finish();
  }
  if (const json* node = top.child("meta")) {
    ObjectReader r(*node, "meta");
    std::string mode = to_string(c.meta.mode);
    r.get("mode", mode);
    c.meta.mode = parse_meta_mode(mode);
    r.get("inner_lr", c.meta.inner_lr);
    r.get("outer_lr", c.meta.outer_lr);
    r.get("inner_steps", c.meta.inner_steps);
    r.get("reptile_step", c.meta.reptile_step);
    r.get("meta_batch_size", c.meta.meta_batch_size);
    r.get("meta_iterations", c.meta.meta_iterations);
    r.get("outer_momentum", c.meta.outer_momentum);
    r.get("eval_every", c.eval_every);
    r.get("domain_weights", c.domain_weights);
    r.finish();
  }
  if (const json* node = top.child("data")) {
    ObjectReader r(*node, "data");
    r.get("format", c.data.format);
    r.get("k_support", c.data.k_support);
    r.get("k_query", c.data.k_query);
    r.get("holdout_fraction", c.data.holdout_fraction);
    r.get("temporal", c.data.temporal);
    if (const json* synth = r.child("synth")) {
      ObjectReader s(*synth, "data.synth");
      s.get("n_clusters", c.data.synth.n_clusters);
      s.get("users_per_cluster", c.data.synth.users_per_cluster);
      s.get("items_per_cluster", c.data.synth.items_per_cluster);
      s.get("interactions_per_user", c.data.synth.interactions_per_user);
      s.get("noise", c.data.synth.noise);
      s.finish();
    }
    r.finish();
  }
  if (const json* node = top.child("eval")) {
    ObjectReader r(*node, "eval");
    r.get("k", c.eval.k);
    std::string candidates = to_string(c.eval.candidates);
    r.get("candidates", candidates);
    c.eval.candidates = parse_candidate_mode(candidates);
    r.get("n_negatives", c.eval.n_negatives);
    r.get("baselines", c.baselines);
    r.finish();
  }
  if (const json* node = top.child("static_prompt")) {
    ObjectReader r(*node, "static_prompt");
    r.get("lr", c.static_prompt.lr);
    r.get("iterations", c.static_prompt.iterations);
    r.get("batch_size", c.static_prompt.batch_size);
    r.finish();
  }
  if (const json* node = top.child("bench")) {
    ObjectReader r(*node, "bench");
    r.get("repetitions", c.bench_repetitions);
    r.finish();
  }
  if (const json* node = top.child("ablation")) {
    ObjectReader r(*node, "ablation");
    r.get("axis", c.ablation_axis);
    r.get("values", c.ablation_values);
    r.finish();
  }
  top.finish();
  c.propagate();
  return c;
}

std::string RunConfig::digest() const {
  json j = to_object(*this);
  j.erase("workers");
  j.erase("output_dir");
  return Digest().update(std::string_view(j.dump())).hex();
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.backbone = backbone;
  e.meta = meta;
  e.prompt_length = prompt_length;
  e.prompt_seed = seed;
  e.eval = eval;
  return e;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c = RunConfig::from_json(buf.str());
  c.validate();
  return c;
}

}  // namespace metaprompt
