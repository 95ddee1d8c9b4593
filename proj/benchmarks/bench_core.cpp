// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "ctcadapt/adapters.hpp"
#include "ctcadapt/ctc.hpp"
#include "ctcadapt/nn.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/tensor.hpp"

using namespace ctcadapt;

static void BM_MatmulFwd(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = Tensor::uniform({n, n}, -1.0, 1.0, rng);
  Tensor b = Tensor::uniform({n, n}, -1.0, 1.0, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_MatmulFwd)->Arg(16)->Arg(64);

static void BM_MatmulFwdBwd(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(2);
  Tensor a = Tensor::uniform({n, n}, -1.0, 1.0, rng, true);
  Tensor b = Tensor::uniform({n, n}, -1.0, 1.0, rng, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulFwdBwd)->Arg(16)->Arg(64);

static void BM_SoftmaxBwd(benchmark::State& state) {
  Rng rng(3);
  Tensor x = Tensor::uniform({64, 32}, -2.0, 2.0, rng, true);
  for (auto _ : state) {
    x.zero_grad();
    Tensor loss = sum(mul(softmax(x), x));
    backward(loss);
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_SoftmaxBwd);

// CTC loss over a t x 28 lattice with a 12-label target, forward + backward.
static void BM_CtcFwdBwd(benchmark::State& state) {
  int64_t t = state.range(0);
  Rng rng(4);
  Tensor logits = Tensor::uniform({t, 28}, -1.0, 1.0, rng, true);
  std::vector<int> y;
  for (int i = 0; i < 12; ++i) y.push_back(2 + (i * 5) % 26);
  for (auto _ : state) {
    logits.zero_grad();
    Tensor loss = ctc_loss(log_softmax_rows(logits), y);
    backward(loss);
    benchmark::DoNotOptimize(logits.grad().data());
  }
}
BENCHMARK(BM_CtcFwdBwd)->Arg(24)->Arg(48);

// One utterance-scale training step of the biased model: encoder forward,
// catalog encoding, attention, combined loss, and the full backward sweep.
static void BM_BiasedStepFwdBwd(benchmark::State& state) {
  EncoderConfig enc_cfg;  // library defaults: h=16, 2 blocks, 2 heads
  AdapterConfig ada_cfg;
  Rng init(5);
  Encoder encoder = Encoder::init(enc_cfg, init);
  Adapters adapters = Adapters::init(ada_cfg, init);

  Rng rng(6);
  Tensor frames = Tensor::uniform({30, enc_cfg.input_dim}, -1.0, 1.0, rng);
  Catalog catalog;
  for (int w = 0; w < 8; ++w) {
    std::vector<int> word;
    for (int c = 0; c < 5; ++c) word.push_back(2 + static_cast<int>(rng.uniform_int(0, 25)));
    catalog.entries.push_back(word);
  }
  std::vector<int> y;
  for (int i = 0; i < 12; ++i) y.push_back(2 + static_cast<int>(rng.uniform_int(0, 25)));

  ParamMap params;
  encoder.collect("encoder", params);
  adapters.collect("adapters", params);

  for (auto _ : state) {
    for (auto& [name, p] : params) p.zero_grad();
    BiasedForward bf = biased_forward(encoder, adapters, frames, catalog);
    Tensor loss = combined_loss(log_softmax_rows(bf.logits), y, bf.attn, 0, 25.0);
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_BiasedStepFwdBwd);

// Greedy decoding of a long lattice, the evaluation-time hot path.
static void BM_GreedyDecode(benchmark::State& state) {
  Rng rng(7);
  Tensor logits = Tensor::uniform({200, 28}, -2.0, 2.0, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    auto ids = greedy_decode(logits);
    benchmark::DoNotOptimize(ids.data());
  }
}
BENCHMARK(BM_GreedyDecode);

BENCHMARK_MAIN();
