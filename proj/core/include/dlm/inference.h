// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Incremental decoding with a key/value cache, plus greedy and top-k/top-p
// token selection.

#ifndef DLM_INFERENCE_H_
#define DLM_INFERENCE_H_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dlm/model.h"
#include "dlm/rng.h"

namespace dlm {

struct SamplingConfig {
  int top_k = 50;
  double top_p = 0.95;
  double temperature = 1.0;  // <= 0 selects greedy decoding
};

void to_json(nlohmann::json& j, const SamplingConfig& c);
void from_json(const nlohmann::json& j, SamplingConfig& c);

struct DecodeMode {
  bool greedy = true;
  SamplingConfig sampling;
  std::uint64_t seed = 0;

  static DecodeMode make_greedy() { return {}; }
  static DecodeMode make_sample(const SamplingConfig& cfg, std::uint64_t seed) {
    return {false, cfg, seed};
  }
};

// Argmax with ties broken by the lowest token id.
int greedy_token(const Eigen::RowVectorXd& logits);

// Temperature-scaled softmax restricted to the k most likely tokens, then to
// the smallest prefix of those whose cumulative (renormalized) mass reaches
// top_p; renormalized. Entries outside the support are zero.
std::vector<double> truncated_distribution(const Eigen::RowVectorXd& logits, const SamplingConfig& cfg);

int sample_token(const Eigen::RowVectorXd& logits, const SamplingConfig& cfg, Rng& rng);

// Causal single-sequence decoder state. Appending tokens reuses cached keys
// and values of earlier positions; outputs match `forward` on the full
// sequence up to floating-point reassociation.
class InferenceSession {
 public:
  explicit InferenceSession(const Parameters& params);

  // Returns the logits of the last appended token. ArgumentError when the
  // sequence would exceed max_len or `ids` is empty.
  const Eigen::RowVectorXd& append(std::span<const int> ids);
  // Drops cached positions >= length.
  void truncate(std::size_t length);
  void clear() { truncate(0); }

  std::size_t length() const { return tokens_.size(); }
  const std::vector<int>& tokens() const { return tokens_; }
  const Eigen::RowVectorXd& last_logits() const { return last_logits_; }
  const Parameters& params() const { return *params_; }

 private:
  const Parameters* params_;
  std::vector<int> tokens_;
  std::vector<Mat> keys_;    // per block, max_len x d_model
  std::vector<Mat> values_;  // per block, max_len x d_model
  Eigen::RowVectorXd last_logits_;
};

// Generates from the session's current end, starting with `first_logits`.
// Generated tokens are appended to the session (the final one only when
// more tokens are needed). Stops after eot or `max_new` tokens; eot is
// included in the result.
std::vector<int> continue_generation(InferenceSession& session, Eigen::RowVectorXd first_logits,
                                     const DecodeMode& mode, int max_new);

std::vector<int> generate_tokens(const Parameters& params, std::span<const int> prefix_ids,
                                 const DecodeMode& mode, int max_new);

}  // namespace dlm

#endif  // DLM_INFERENCE_H_
