#include <benchmark/benchmark.h>

#include "sgml/evaluator.hpp"
#include "sgml/losses.hpp"
#include "sgml/network.hpp"
#include "sgml/rng.hpp"
#include "sgml/sampling.hpp"

using namespace sgml;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Batch of 164 records (41 classes x 4) through the full-width network.
void BM_ForwardBackward(benchmark::State& state) {
  Rng rng(1);
  NetworkShape shape;
  shape.input_dim = 32;
  shape.attr_dim = 64;
  const NetworkParams params = init_params(shape, rng);
  const Matrix x = gaussian(rng, 164, 32);
  const Matrix d_emb = gaussian(rng, 164, static_cast<Eigen::Index>(shape.emb_dim));
  const Matrix d_attr = gaussian(rng, 164, 64);
  for (auto _ : state) {
    const ForwardOutput out = forward(params, x);
    benchmark::DoNotOptimize(backward(params, out.cache, d_emb, d_attr));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_RecallAtK(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(2);
  const Matrix q = gaussian(rng, n, 512), g = gaussian(rng, n, 512);
  std::vector<int> ql, gl;
  for (Eigen::Index i = 0; i < n; ++i) {
    ql.push_back(static_cast<int>(i % 100));
    gl.push_back(static_cast<int>((i * 7) % 100));
  }
  const std::vector<std::size_t> ks{1, 2, 4, 8};
  for (auto _ : state) benchmark::DoNotOptimize(recall_at_k(q, g, ql, gl, ks, RetrievalMode::separate));
}
BENCHMARK(BM_RecallAtK)->Arg(200)->Arg(1000)->Arg(2000)->Unit(benchmark::kMillisecond);

// All in-batch pairs of a 41 x 4 batch.
void BM_SbdlBatch(benchmark::State& state) {
  Rng rng(3);
  std::vector<int> labels;
  for (int c = 0; c < 41; ++c) labels.insert(labels.end(), 4, c);
  const PairList pl = enumerate_pairs(labels);
  std::vector<PairSample> pairs;
  auto add = [&](std::size_t count, Polarity polarity) {
    for (std::size_t i = 0; i < count; ++i) pairs.push_back({rng.uniform(-1, 1), rng.uniform(0, 1), polarity});
  };
  add(pl.positives.size(), Polarity::positive);
  add(pl.negatives.size(), Polarity::negative);
  const LossParams params;
  for (auto _ : state) benchmark::DoNotOptimize(sbdl_batch(pairs, params));
}
BENCHMARK(BM_SbdlBatch);

void BM_EnumeratePairs(benchmark::State& state) {
  std::vector<int> labels;
  for (int c = 0; c < state.range(0); ++c) labels.insert(labels.end(), 4, c);
  for (auto _ : state) benchmark::DoNotOptimize(enumerate_pairs(labels));
}
BENCHMARK(BM_EnumeratePairs)->Arg(41)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
