// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Supervised fine-tuning on dialogue trajectories: tokenize, window, pack,
// then minibatch Adam on the masked next-token loss of assistant replies.

#ifndef DLM_TRAIN_SFT_H_
#define DLM_TRAIN_SFT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/dialogue.h"
#include "dlm/model.h"
#include "dlm/tokenizer.h"

namespace dlm {

// Reference values at paper scale for a 1B backbone: lr 2e-5, batch 8,
// gradient accumulation 8, max length 1024, 2 epochs, packing on. The
// defaults below are scaled for the small from-scratch model.
struct SftConfig {
  double lr = 1e-3;
  int batch_size = 16;  // packed rows per minibatch
  int grad_accum_steps = 1;
  int epochs = 6;
  int max_len = 384;
  double eval_fraction = 0.1;
  std::uint64_t seed = 11;
  int warmup_steps = 50;
  double grad_clip = 1.0;  // global-norm clip, <= 0 disables
  int eval_every = 50;     // optimizer steps between held-out evaluations
  int stop_after_steps = 0;  // > 0 stops early (used to produce resumable checkpoints)

  void validate() const;
};

void to_json(nlohmann::json& j, const SftConfig& c);
void from_json(const nlohmann::json& j, SftConfig& c);

struct TrainLogRow {
  std::int64_t step = 0;
  std::optional<double> loss;      // training rows
  std::optional<double> accuracy;  // evaluation rows
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  // step,loss,accuracy,seconds with empty cells for absent values.
  std::string to_csv() const;
  std::vector<double> losses() const;
  std::optional<double> last_accuracy() const;
};

enum class SampleMode {
  kHistory,     // multi-turn windows of the dialogue
  kSingleTurn,  // system + one user/assistant turn (history-free baseline)
};

// Tokenized samples for a set of dialogues. In history mode, dialogues
// longer than max_len are cut into consecutive turn windows so every turn is
// supervised exactly once.
std::vector<TokenizedSample> prepare_samples(const std::vector<DialogueTrajectory>& dialogues,
                                             const Vocabulary& vocab, int max_len, SampleMode mode);

struct HeldOutSplit {
  std::vector<DialogueTrajectory> train;
  std::vector<DialogueTrajectory> heldout;
};

// Holds out floor(eval_fraction * #episodes) whole episodes (at least one
// when there are two or more).
HeldOutSplit split_heldout(const std::vector<DialogueTrajectory>& dialogues, double eval_fraction,
                           std::uint64_t seed);

struct BatchGradients {
  double loss = 0.0;  // mean over all masked targets of the batch
  std::size_t n_targets = 0;
  Gradients grads;
};

// Exactly zero gradients when no position of the batch is masked.
BatchGradients batch_gradients(const Parameters& params, const std::vector<const PackedRow*>& rows);

// Fraction of masked positions whose argmax prediction equals the target.
// ArgumentError if the samples contain no masked position.
double eval_token_accuracy(const Parameters& params, const std::vector<TokenizedSample>& heldout);

struct SftResult {
  Parameters params;
  OptimizerState optimizer;
  TrainLog log;
  std::optional<double> heldout_accuracy;
  std::int64_t steps = 0;
  bool finished = true;  // false when stop_after_steps cut the run short
};

struct ResumeState {
  Parameters params;
  OptimizerState optimizer;
};

SftResult train_sft(const std::vector<DialogueTrajectory>& d_sft, const Vocabulary& vocab,
                    const ModelConfig& model_cfg, const SftConfig& cfg,
                    SampleMode mode = SampleMode::kHistory,
                    const std::optional<ResumeState>& resume = std::nullopt);

// History-free behavior cloning: train_sft on single-turn samples.
SftResult bc_train(const std::vector<DialogueTrajectory>& d_sft, const Vocabulary& vocab,
                   const ModelConfig& model_cfg, const SftConfig& cfg);

}  // namespace dlm

#endif  // DLM_TRAIN_SFT_H_
