#include <benchmark/benchmark.h>

#include <random>

#include "inmemo/eval.hpp"

using namespace inmemo;

namespace {

ToyBackbone make_backbone() {
  BackboneConfig cfg;
  TokenizerNet tok(cfg);
  tok.init(1);
  PredictorNet pred(cfg);
  pred.init(2);
  return ToyBackbone(std::move(tok), std::move(pred));
}

Image noise(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0, 1);
  Image img(h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

Dataset make_pool(int per_class) {
  DatasetSpec s;
  s.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  s.per_class_count = per_class;
  s.seed = 3;
  return generate_dataset(s);
}

void BM_ComposeCanvas(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const Image x = noise(rng, 64, 64), y = noise(rng, 64, 64), q = noise(rng, 64, 64);
  for (auto _ : state) benchmark::DoNotOptimize(compose_canvas(x, y, q, 32));
}
BENCHMARK(BM_ComposeCanvas);

void BM_Retrieve(benchmark::State& state) {
  const Dataset pool = make_pool(static_cast<int>(state.range(0)));
  const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
  std::mt19937_64 rng(2);
  const Image q = noise(rng, 64, 64);
  for (auto _ : state) benchmark::DoNotOptimize(retrieve(idx, q));
}
BENCHMARK(BM_Retrieve)->Arg(8)->Arg(32)->Arg(64);

void BM_PredictLogits(benchmark::State& state) {
  const ToyBackbone bb = make_backbone();
  std::mt19937_64 rng(3);
  const Canvas cv{noise(rng, 64, 64), 32};
  const QuadrantMaskSpec mask = backbone_mask(bb);
  for (auto _ : state) benchmark::DoNotOptimize(bb.predict_logits(cv, mask));
}
BENCHMARK(BM_PredictLogits)->Unit(benchmark::kMillisecond);

void BM_PromptLossGrad(benchmark::State& state) {
  const ToyBackbone bb = make_backbone();
  const Dataset pool = make_pool(4);
  const DownsampleExtractor ex;
  const RetrievalIndex idx = build_index(pool, ex);
  const PromptTask task{bb, pool, idx, ex};
  std::vector<PreparedQuery> qs;
  for (int i = 0; i < 8; ++i) qs.push_back(prepare_query(task, pool.pairs[static_cast<std::size_t>(i) * 5], 64, true));
  const PromptParams p = init_prompt(64, 8, InitScheme::gaussian, 0.02, 1);
  Image grad;
  for (auto _ : state) benchmark::DoNotOptimize(prompt_loss(task, qs, p, Placement::canonical(), &grad, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(qs.size()));
}
BENCHMARK(BM_PromptLossGrad)->Unit(benchmark::kMillisecond);

void BM_PredictLabel(benchmark::State& state) {
  const ToyBackbone bb = make_backbone();
  const Dataset pool = make_pool(8);
  const DownsampleExtractor ex;
  const RetrievalIndex idx = build_index(pool, ex);
  const PromptTask task{bb, pool, idx, ex};
  const TaskPair& q = pool.pairs[3];
  for (auto _ : state) benchmark::DoNotOptimize(predict_label(task, q, nullptr, Placement::canonical(), 64, q.id));
}
BENCHMARK(BM_PredictLabel)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
