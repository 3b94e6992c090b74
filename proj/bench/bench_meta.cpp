// Task-level parallel paths against their serial reference (workers = 1),
// plus per-user adaptation cost by inner step count.

#include <benchmark/benchmark.h>

#include "metaprompt/evaluation.hpp"
#include "metaprompt/parallel.hpp"

namespace {

using namespace metaprompt;

struct Fixture {
  Fixture() {
    SynthConfig sc;
    sc.seed = 1;
    const auto records = synth_generate(sc);
    items = build_item_vocabulary(records);
    tasks = build_tasks(records, items, 5, 5, 1).tasks;
    cfg.vocab_size = 192;
    cfg.semantic_groups = 4;
    cfg.semantic_group_size = 32;
    cfg.seed = 1;
    backbone = std::make_unique<Backbone>(cfg);
    loss = std::make_unique<BackboneLoss>(*backbone);
    meta.inner_lr = 0.1;
    meta.inner_steps = 3;
  }

  EpisodeBatch batch(std::size_t size) const {
    EpisodeBatch b;
    for (std::size_t i = 0; i < size; ++i) {
      b.tasks.push_back(tasks[i]);
      b.task_indices.push_back(i);
    }
    return b;
  }

  ItemVocabulary items;
  std::vector<UserTask> tasks;
  BackboneConfig cfg;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<BackboneLoss> loss;
  MetaConfig meta;
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_MetaGradient(benchmark::State& state) {
  const Fixture& f = fixture();
  MetaConfig cfg = f.meta;
  cfg.workers = static_cast<int>(state.range(0));
  const EpisodeBatch b = f.batch(8);
  const SoftPrompt theta = init_prompt(20, 32, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(meta_gradient(theta, b, cfg, *f.loss).meta_loss);
  }
  state.SetLabel(cfg.workers == 1 ? "serial" : "parallel");
}
BENCHMARK(BM_MetaGradient)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_ReptileStep(benchmark::State& state) {
  const Fixture& f = fixture();
  MetaConfig cfg = f.meta;
  cfg.mode = MetaMode::kReptile;
  cfg.workers = static_cast<int>(state.range(0));
  const EpisodeBatch b = f.batch(8);
  const SoftPrompt theta = init_prompt(20, 32, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reptile_outer_step(theta, b, cfg, *f.loss).loss);
  }
  state.SetLabel(cfg.workers == 1 ? "serial" : "parallel");
}
BENCHMARK(BM_ReptileStep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_EvaluateSuite(benchmark::State& state) {
  const Fixture& f = fixture();
  EvalConfig eval;
  eval.workers = static_cast<int>(state.range(0));
  const std::vector<UserTask> subset(f.tasks.begin(), f.tasks.begin() + 32);
  const SoftPrompt theta = init_prompt(20, 32, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        evaluate_suite(theta, subset, f.meta, BaselineMode::kMeta, *f.backbone, f.items, eval)
            .hit);
  }
  state.SetLabel(eval.workers == 1 ? "serial" : "parallel");
}
BENCHMARK(BM_EvaluateSuite)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_AdaptUser(benchmark::State& state) {
  const Fixture& f = fixture();
  MetaConfig cfg = f.meta;
  cfg.inner_steps = static_cast<int>(state.range(0));
  const SoftPrompt theta = init_prompt(20, 32, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(adapt_user(theta, f.tasks[0].support, cfg, *f.loss).steps_executed);
  }
}
BENCHMARK(BM_AdaptUser)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
