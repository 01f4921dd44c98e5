// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Fixtures and reference implementations shared by the unit tests and the
// acceptance binary.

#ifndef DLM_TESTS_SUPPORT_TEST_SUPPORT_H_
#define DLM_TESTS_SUPPORT_TEST_SUPPORT_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dlm/align.h"
#include "dlm/dialogue.h"
#include "dlm/model.h"
#include "dlm/policy.h"

namespace dlm::testing {

// V=11, d_model=8, 2 heads, 1 layer, d_ff=16, max_len=12.
ModelConfig tiny_config(int n_layers = 1);

// Parameters with every tensor (gains and biases included) randomized, so
// no gradient is trivially zero.
Parameters random_parameters(const ModelConfig& config, std::uint64_t seed, double scale = 0.5);

// Straight-line forward over one causal sequence written with plain loops.
std::vector<std::vector<double>> reference_forward(const Parameters& params, const std::vector<int>& ids);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_params = 0;
  std::string worst_tensor;
};

// Central differences of `loss` against the analytic gradient over every
// parameter. Relative error |a - n| / max(|a| + |n|, floor).
GradCheckResult gradient_check(Parameters params, const std::function<double(const Parameters&)>& loss,
                               const Gradients& analytic, double step = 1e-4, double floor = 1e-6);

// Random causal / segmented fixture checks: logits at unaffected positions
// must be bitwise equal after a perturbation. Returns the number of fixtures
// with any difference.
int causality_violations(int n_fixtures, std::uint64_t seed);

// TextPolicy answering from a lookup keyed on the last user message; falls
// back to `default_reply`. Counts calls.
class ScriptedPolicy : public TextPolicy {
 public:
  explicit ScriptedPolicy(std::string default_reply = "stay") : default_reply_(std::move(default_reply)) {}

  void set(const std::string& last_user, std::string greedy, std::vector<std::string> samples = {});
  std::string greedy_reply(const std::vector<ChatMessage>& history) override;
  std::string sample_reply(const std::vector<ChatMessage>& history, const SamplingConfig& cfg,
                           std::uint64_t seed) override;

  int greedy_calls = 0;
  int sample_calls = 0;

 private:
  struct Entry {
    std::string greedy;
    std::vector<std::string> samples;
  };
  std::map<std::string, Entry> table_;
  std::map<std::string, std::size_t> next_sample_;
  std::string default_reply_;
};

// Strings that are not a canonical action string even after trimming:
// random text and single-character edits of real action strings.
std::vector<std::string> fuzzed_non_actions(int n, std::uint64_t seed);

// Verbalized observations from random-action rollouts over the default
// training and holdout configs.
std::vector<std::string> random_observation_texts(int n, std::uint64_t seed);

// Training plus holdout configs.
std::vector<EnvConfig> all_default_envs();

// A small gated expert dataset over the default training configs.
std::vector<TrajectoryRecord> small_dataset(int episodes_per_cfg, std::uint64_t seed = 5);

}  // namespace dlm::testing

#endif  // DLM_TESTS_SUPPORT_TEST_SUPPORT_H_
