// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "dlm/inference.h"
#include "dlm/model.h"
#include "dlm/rng.h"
#include "dlm/train_sft.h"

namespace {

dlm::ModelConfig bench_config() {
  dlm::ModelConfig c;
  c.vocab_size = 160;
  return c;
}

std::vector<int> random_ids(int n, int vocab, std::uint64_t seed) {
  dlm::Rng rng(seed);
  std::vector<int> ids(n);
  for (int& id : ids) id = static_cast<int>(rng.below(vocab));
  return ids;
}

void BM_ForwardFullWindow(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto params = dlm::init_parameters(cfg, 1);
  const auto ids = random_ids(static_cast<int>(state.range(0)), cfg.vocab_size, 2);
  const auto layout = dlm::AttentionLayout::causal(static_cast<int>(ids.size()));
  for (auto _ : state) benchmark::DoNotOptimize(dlm::forward(params, ids, layout));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ids.size()));
}
BENCHMARK(BM_ForwardFullWindow)->Arg(128)->Arg(384);

void BM_ForwardBackwardPackedRow(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto params = dlm::init_parameters(cfg, 1);
  dlm::PackedRow row;
  row.ids = random_ids(cfg.max_len, cfg.vocab_size, 3);
  row.label_mask.assign(row.ids.size(), false);
  for (std::size_t i = 0; i < row.ids.size(); i += 10) row.label_mask[i] = true;
  row.label_mask[0] = false;
  for (int i = 0; i < cfg.max_len; ++i) row.segment_ids.push_back(i / 128);
  const std::vector<const dlm::PackedRow*> batch = {&row};
  for (auto _ : state) benchmark::DoNotOptimize(dlm::batch_gradients(params, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(row.ids.size()));
}
BENCHMARK(BM_ForwardBackwardPackedRow);

void BM_IncrementalDecode(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto params = dlm::init_parameters(cfg, 1);
  const auto prompt = random_ids(static_cast<int>(state.range(0)), cfg.vocab_size, 4);
  dlm::InferenceSession session(params);
  for (auto _ : state) {
    session.clear();
    session.append(prompt);
    for (int t = 0; t < 8; ++t) session.append(std::vector<int>{t + 6});
  }
}
BENCHMARK(BM_IncrementalDecode)->Arg(64)->Arg(300);

}  // namespace

BENCHMARK_MAIN();
