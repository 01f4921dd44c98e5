// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Decoder-only causal transformer with hand-written forward and backward
// passes: learned token and absolute position embeddings, pre-norm blocks
// (LayerNorm -> multi-head attention -> residual, LayerNorm -> GELU MLP ->
// residual), a final LayerNorm and an untied output projection.
//
// All parameters live in one flat row-major buffer; `ParamLayout` names the
// tensors inside it. Gradients and optimizer moments share that layout.

#ifndef DLM_MODEL_H_
#define DLM_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace dlm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

// Flat parameter storage. The SIMD-width alignment keeps Eigen's
// vectorized reductions on the same code path in every run, so results are
// bitwise reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 256;
  int max_len = 384;
  std::uint64_t init_seed = 1;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;  // ConfigError
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Indices into ParamLayout::tensors for one transformer block.
struct BlockTensors {
  int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamLayout {
  std::vector<TensorSpec> tensors;
  int tok_emb = 0;
  int pos_emb = 0;
  std::vector<BlockTensors> blocks;
  int lnf_g = 0;
  int lnf_b = 0;
  int w_out = 0;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& config);
};

// Parameter (or gradient) tensors of one model.
class Parameters {
 public:
  Parameters() = default;
  // All-zero tensors shaped by `config`.
  explicit Parameters(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  ParamVector& data() { return data_; }
  const ParamVector& data() const { return data_; }

  MatMap tensor(int index);
  ConstMatMap tensor(int index) const;
  MatMap tensor(const std::string& name);
  ConstMatMap tensor(const std::string& name) const;

  void set_zero();
  bool all_finite() const;

  friend bool operator==(const Parameters& a, const Parameters& b) {
    return a.config_ == b.config_ && a.data_ == b.data_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  ParamVector data_;
};

using Gradients = Parameters;

// Seeded N(0, 1/fan_in) weights, zero biases, unit LayerNorm gains. The
// output projection is additionally scaled by 0.1 so initial logits are
// close to uniform.
Parameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// Which keys each query position may attend to: the contiguous own range
// [key_begin[i], i] plus an optional shared prefix [prefix_begin[i], prefix_end[i]).
struct AttentionLayout {
  std::vector<int> positions;  // positional-embedding row of each token
  std::vector<int> key_begin;
  std::vector<int> prefix_begin;
  std::vector<int> prefix_end;

  std::size_t size() const { return positions.size(); }

  // Plain causal attention over one sequence.
  static AttentionLayout causal(int length);
  // Causal within runs of equal segment id; positions restart per run.
  static AttentionLayout from_segments(std::span<const int> segment_ids);
  // A prefix of `prefix_len` tokens followed by branches that each attend to
  // the whole prefix and causally to themselves. Branch positions continue
  // from prefix_len.
  static AttentionLayout shared_prefix(int prefix_len, const std::vector<int>& branch_lengths);
};

struct BlockCache {
  Mat xhat1, h1, q, k, v, attn, xhat2, h2, u, g;
  Eigen::VectorXd rstd1, rstd2;
  std::vector<Mat> probs;  // per head, query x key
};

struct ForwardCache {
  std::vector<int> ids;
  AttentionLayout layout;
  std::vector<BlockCache> blocks;
  Mat xhat_f, hf;
  Eigen::VectorXd rstd_f;
};

// Logits [T x V]. ArgumentError on ids outside the vocabulary, a sequence
// longer than max_len or a malformed layout. Fills `cache` when non-null.
Mat forward(const Parameters& params, std::span<const int> ids, const AttentionLayout& layout,
            ForwardCache* cache = nullptr);
Mat forward(const Parameters& params, std::span<const int> ids, std::span<const int> segment_ids);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
void backward_accumulate(const Parameters& params, const ForwardCache& cache, const Mat& dlogits,
                         Gradients& grads);

struct LossCache {
  ForwardCache forward;
  Mat dlogits;
};

struct LossOutput {
  double loss = 0.0;
  std::size_t n_targets = 0;
  LossCache cache;
};

// Mean next-token cross-entropy over positions p with label_mask[p]
// (predicted from logits[p - 1]). ArgumentError when nothing is masked or
// the sequence has fewer than two tokens.
LossOutput sequence_loss(const Parameters& params, std::span<const int> ids,
                         const std::vector<bool>& label_mask, const AttentionLayout& layout);

Gradients backward(const Parameters& params, const LossCache& cache);

// Row-wise log-softmax.
Mat log_softmax_rows(const Mat& logits);

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

OptimizerState make_optimizer_state(const Parameters& params);

// Bias-corrected Adam. TrainingError on a non-finite gradient.
void adam_step(Parameters& params, const Gradients& grads, OptimizerState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

double global_norm(const Gradients& grads);

}  // namespace dlm

#endif  // DLM_MODEL_H_
