// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Alignment stage: filter the turns where the fine-tuned policy deviates
// from the dataset or picks an unavailable action, score sampled candidate
// replies with the executability/return preference reward, and optimize the
// clipped group-relative surrogate with a KL anchor.

#ifndef DLM_ALIGN_H_
#define DLM_ALIGN_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/dialogue.h"
#include "dlm/inference.h"
#include "dlm/model.h"
#include "dlm/policy.h"
#include "dlm/tokenizer.h"

namespace dlm {

enum class FilterReason { kMismatch, kUnavailable };

std::string_view filter_reason_name(FilterReason r);

struct SampleOrigin {
  std::int64_t episode_id = 0;
  int agent_id = 0;
  int t = 0;
  friend bool operator==(const SampleOrigin&, const SampleOrigin&) = default;
  friend auto operator<=>(const SampleOrigin&, const SampleOrigin&) = default;
};

struct FilteredSample {
  std::vector<ChatMessage> context;  // ends with the user message of turn t
  Action dataset_action = Action::kStay;
  AvailMask avail{};
  double rtg_norm = 0.0;
  SampleOrigin source;
  FilterReason reason = FilterReason::kMismatch;
};

void to_json(nlohmann::json& j, const FilteredSample& s);
void from_json(const nlohmann::json& j, FilteredSample& s);

// The filter predicate on one turn: nullopt when the prediction equals the
// dataset action and is available.
std::optional<FilterReason> classify_prediction(const std::optional<Action>& predicted, Action dataset_action,
                                                const AvailMask& avail);

struct FilterSummary {
  std::size_t total_turns = 0;
  std::size_t retained = 0;
  std::size_t mismatch = 0;
  std::size_t unavailable = 0;
  double retention_rate() const {
    return total_turns == 0 ? 0.0 : static_cast<double>(retained) / static_cast<double>(total_turns);
  }
};

void to_json(nlohmann::json& j, const FilterSummary& s);

// Greedy prediction on every turn under teacher forcing. The context of turn
// t is the dataset history up to its user message, truncated the same way
// as during rollouts.
std::vector<FilteredSample> filter_ood(TextPolicy& policy, const std::vector<DialogueTrajectory>& d_grpo,
                                       FilterSummary* summary = nullptr);

// Rollout-normalized return for the dataset action, 0 for another available
// action, -1 for an unavailable or unparseable reply.
double preference_reward(std::string_view candidate_text, const FilteredSample& sample);

// (R - mean) / population std; all zeros when std < 1e-8. Requires >= 2 rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards);

// exp(ref - lp) - (ref - lp) - 1, the per-token KL estimator.
double kl_estimator(double ref_logprob, double logprob);

struct Candidate {
  std::vector<int> ids;  // generated reply tokens, eot included when produced
  std::string text;
  std::vector<double> old_logprobs;  // per token under the sampling snapshot
  std::vector<double> ref_logprobs;  // per token under the reference snapshot
};

struct PreferenceGroup {
  FilteredSample sample;
  std::vector<int> prompt;  // generation prompt token ids
  std::vector<Candidate> candidates;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

// Per-token log-probabilities of each candidate continuation of `prompt`,
// computed in one shared-prefix forward pass.
std::vector<std::vector<double>> candidate_logprobs(const Parameters& params, const std::vector<int>& prompt,
                                                    const std::vector<std::vector<int>>& candidates);

struct GrpoLossOutput {
  double loss = 0.0;
  double surrogate = 0.0;  // (1/G) sum_j surrogate_j
  double kl_mean = 0.0;    // (1/G) sum_j mean_tau KL
  std::size_t clipped_tokens = 0;
};

// Minimization loss -(1/G) sum_j (1/|a_j|) sum_tau min(r A, clip(r) A) + beta * KL,
// with per-token ratios r = exp(lp - old_lp) and the KL averaged per
// candidate. Adds d(loss)/d(params) * grad_scale to `grads` when non-null.
// StateError if stored log-probs are missing.
GrpoLossOutput grpo_loss(const Parameters& params, const PreferenceGroup& group, double epsilon, double beta,
                         Gradients* grads = nullptr, double grad_scale = 1.0);

// Full-parameter updates; no low-rank adapters.
struct GrpoConfig {
  int group_size = 4;
  double epsilon = 0.2;
  double beta = 0.1;
  double lr = 1e-4;
  int epochs = 2;
  int batch_size = 8;  // filtered samples per optimizer step
  SamplingConfig sampling;
  int max_new = 16;
  double grad_clip = 1.0;
  std::uint64_t seed = 13;

  void validate() const;
};

void to_json(nlohmann::json& j, const GrpoConfig& c);
void from_json(const nlohmann::json& j, GrpoConfig& c);

struct GrpoLogRow {
  std::int64_t step = 0;
  double reward_mean = 0.0;
  double exact_match_rate = 0.0;
  double penalty_rate = 0.0;
  double kl_mean = 0.0;
  double loss = 0.0;
};

struct GrpoLog {
  std::vector<GrpoLogRow> rows;
  std::string to_csv() const;
};

// Samples G candidates for `sample` from `old_params` and scores them.
PreferenceGroup build_group(ModelPolicy& old_policy, const Parameters& ref_params, const FilteredSample& sample,
                            const GrpoConfig& cfg, std::uint64_t seed);

struct GrpoResult {
  Parameters params;
  GrpoLog log;
};

// ArgumentError when d_ood is empty.
GrpoResult train_grpo(const Parameters& theta_sft, const Vocabulary& vocab, const std::vector<FilteredSample>& d_ood,
                      const GrpoConfig& cfg);

}  // namespace dlm

#endif  // DLM_ALIGN_H_
