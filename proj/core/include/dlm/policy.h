// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Decentralized execution: each agent keeps its own chat history, asks the
// language policy for a greedy action, and falls back to seeded resampling
// when the reply is unparseable or unavailable.

#ifndef DLM_POLICY_H_
#define DLM_POLICY_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/dialogue.h"
#include "dlm/env.h"
#include "dlm/inference.h"
#include "dlm/model.h"
#include "dlm/tokenizer.h"

namespace dlm {

// Answers a chat history that ends in a user message.
class TextPolicy {
 public:
  virtual ~TextPolicy() = default;
  virtual std::string greedy_reply(const std::vector<ChatMessage>& history) = 0;
  virtual std::string sample_reply(const std::vector<ChatMessage>& history, const SamplingConfig& cfg,
                                   std::uint64_t seed) = 0;
  // Drops oldest turns of a history that no longer fits the context window.
  // The default keeps everything.
  virtual void truncate_history(std::vector<ChatMessage>& history) const { (void)history; }
};

// Transformer-backed policy. Keeps a few KV-cached sessions and reuses the
// one sharing the longest token prefix with each new prompt, so growing
// histories only pay for their new tokens.
class ModelPolicy : public TextPolicy {
 public:
  ModelPolicy(const Parameters& params, const Vocabulary& vocab, int max_new = 16, int n_sessions = 8);

  std::string greedy_reply(const std::vector<ChatMessage>& history) override;
  std::string sample_reply(const std::vector<ChatMessage>& history, const SamplingConfig& cfg,
                           std::uint64_t seed) override;

  // Once the prompt exceeds the window, oldest turns are removed until it
  // fits in half of it, so later turns extend a stable cached prefix.
  void truncate_history(std::vector<ChatMessage>& history) const override;

  // Generated ids (eot included when produced).
  std::vector<int> generate(const std::vector<ChatMessage>& history, const DecodeMode& mode);
  // Generation prompt, keep-recent truncated to leave room for max_new tokens.
  std::vector<int> prompt_ids(const std::vector<ChatMessage>& history) const;
  std::string reply_text(const std::vector<int>& generated) const;

  const Parameters& params() const { return *params_; }
  const Vocabulary& vocab() const { return *vocab_; }
  int max_new() const { return max_new_; }

 private:
  const Parameters* params_;
  const Vocabulary* vocab_;
  int max_new_;
  std::vector<std::unique_ptr<InferenceSession>> sessions_;
  std::vector<std::uint64_t> last_used_;
  std::uint64_t clock_ = 0;
};

struct GreedyResult {
  std::optional<Action> action;  // nullopt = unparseable
  std::string raw;
};

// Greedy decode (until eot or the policy's generation budget) and parse.
GreedyResult greedy_action(TextPolicy& policy, const std::vector<ChatMessage>& history);

enum class OodKind { kNone, kUnparseable, kUnavailable };

struct Decision {
  Action action = Action::kStay;
  bool ood = false;
  OodKind kind = OodKind::kNone;  // classification of the greedy attempt
  int resamples = 0;
};

// Greedy first; on failure up to `max_retries` seeded samples, the first
// parsed-and-available one wins; stay if all fail. Any greedy failure is OOD.
Decision constrained_resample(TextPolicy& policy, const std::vector<ChatMessage>& history,
                              const AvailMask& avail, const SamplingConfig& sampling, int max_retries,
                              std::uint64_t seed);

// Chooses an executable action from an agent's history.
class ActionSelector {
 public:
  virtual ~ActionSelector() = default;
  virtual Decision decide(const std::vector<ChatMessage>& history, const AvailMask& avail,
                          std::uint64_t seed) = 0;
  virtual void truncate_history(std::vector<ChatMessage>& history) const { (void)history; }
};

class LanguageSelector : public ActionSelector {
 public:
  LanguageSelector(TextPolicy& policy, SamplingConfig sampling, int max_retries)
      : policy_(&policy), sampling_(sampling), max_retries_(max_retries) {}
  Decision decide(const std::vector<ChatMessage>& history, const AvailMask& avail,
                  std::uint64_t seed) override;
  void truncate_history(std::vector<ChatMessage>& history) const override {
    policy_->truncate_history(history);
  }

 private:
  TextPolicy* policy_;
  SamplingConfig sampling_;
  int max_retries_;
};

// Uniform over available actions; never OOD.
class RandomSelector : public ActionSelector {
 public:
  Decision decide(const std::vector<ChatMessage>& history, const AvailMask& avail,
                  std::uint64_t seed) override;
};

struct EvalConfig {
  std::vector<EnvConfig> env_cfgs;
  int episodes_per_cfg = 50;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SamplingConfig sampling;
  int max_retries = 10;
  bool bc_mode = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EpisodeOutcome {
  bool success = false;
  int length = 0;  // environment steps
  int decisions = 0;
  int ood_events = 0;
  int unparseable = 0;
  int unavailable = 0;
  std::vector<bool> ood_flags;  // per decision, step-major then agent
};

// Histories hold the system prompt and the agent's own turns only; in
// bc_mode they are reset to the system prompt before every turn. The
// assistant message recorded is the executed action.
EpisodeOutcome rollout_episode(ActionSelector& selector, const EnvConfig& env_cfg,
                               std::uint64_t episode_seed, bool bc_mode,
                               std::vector<std::vector<std::vector<ChatMessage>>>* prompts = nullptr);

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t config_index, std::size_t episode);

struct SeedResult {
  std::uint64_t seed = 0;
  double win_rate = 0.0;
  double ood_rate = 0.0;
  double mean_length = 0.0;
  int decisions = 0;
  int ood_events = 0;
  int unparseable = 0;
  int unavailable = 0;
};

struct ConfigResult {
  std::string env_id;
  std::vector<SeedResult> seeds;
  double win_rate_mean = 0.0;
  double win_rate_ci = 0.0;  // 1.96 * population std / sqrt(n_seeds)
  double ood_rate = 0.0;     // mean over seeds
  double mean_length = 0.0;
  int unparseable = 0;
  int unavailable = 0;
};

struct EvalReport {
  std::vector<ConfigResult> configs;

  double mean_win_rate() const;
  // config,seed,win_rate,ood_rate,mean_length
  std::string to_csv() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

MeanCi mean_ci95(const std::vector<double>& values);

EvalReport evaluate(ActionSelector& selector, const EvalConfig& cfg);

}  // namespace dlm

#endif  // DLM_POLICY_H_
