#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/evaluation.hpp"
#include "metaprompt/metalearn.hpp"
#include "metaprompt/tasks.hpp"

namespace metaprompt {

struct DataConfig {
  std::string format = "tsv";
  int k_support = 5;
  int k_query = 5;
  /// Fraction of each domain's users held out by gen-synth and ablate.
  double holdout_fraction = 0.5;
  bool temporal = false;
  SynthConfig synth;
};

struct RunConfig {
  /// The single source of randomness; copied into every component seed.
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output_dir = "run";

  BackboneConfig backbone;
  int prompt_length = 20;
  MetaConfig meta;
  DomainWeights domain_weights;
  int eval_every = 0;
  DataConfig data;
  EvalConfig eval;
  std::vector<std::string> baselines = {"meta", "zero_shot", "static_prompt"};
  StaticConfig static_prompt;
  int bench_repetitions = 3;
  std::string ablation_axis = "inner_steps";
  std::vector<double> ablation_values = {1, 3, 5};

  /// Pushes `seed` and `workers` into the component configs.
  void propagate();
  /// Every field against its bounds; ConfigError names the first offender.
  void validate() const;

  /// Canonical JSON with every field.
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const std::string& text);

  /// Digest of the canonical JSON without `workers` and `output_dir`, which
  /// do not influence results.
  std::string digest() const;

  ExperimentConfig experiment() const;
};

/// Reads, applies propagate(), validates.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace metaprompt
