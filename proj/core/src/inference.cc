// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/inference.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dlm/errors.h"
#include "dlm/tokenizer.h"
#include "gelu.h"

namespace dlm {

void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = nlohmann::json{{"top_k", c.top_k}, {"top_p", c.top_p}, {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, SamplingConfig& c) {
  c.top_k = j.value("top_k", c.top_k);
  c.top_p = j.value("top_p", c.top_p);
  c.temperature = j.value("temperature", c.temperature);
}

int greedy_token(const Eigen::RowVectorXd& logits) {
  int best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> truncated_distribution(const Eigen::RowVectorXd& logits, const SamplingConfig& cfg) {
  const int v = static_cast<int>(logits.size());
  std::vector<double> probs(static_cast<std::size_t>(v), 0.0);
  if (cfg.temperature <= 0.0) {
    probs[static_cast<std::size_t>(greedy_token(logits))] = 1.0;
    return probs;
  }
  const double mx = logits.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(v));
  for (int i = 0; i < v; ++i) p[i] = std::exp((logits(i) - mx) / cfg.temperature);

  std::vector<int> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&p](int a, int b) { return p[a] > p[b]; });
  const int k = std::clamp(cfg.top_k <= 0 ? v : cfg.top_k, 1, v);
  double mass = 0.0;
  for (int r = 0; r < k; ++r) mass += p[order[r]];

  double cum = 0.0;
  int keep = 0;
  while (keep < k) {
    cum += p[order[keep]] / mass;
    ++keep;
    if (cum >= cfg.top_p) break;
  }
  double kept = 0.0;
  for (int r = 0; r < keep; ++r) kept += p[order[r]];
  for (int r = 0; r < keep; ++r) probs[order[r]] = p[order[r]] / kept;
  return probs;
}

int sample_token(const Eigen::RowVectorXd& logits, const SamplingConfig& cfg, Rng& rng) {
  if (cfg.temperature <= 0.0) return greedy_token(logits);
  const std::vector<double> probs = truncated_distribution(logits, cfg);
  const double u = rng.uniform();
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = static_cast<int>(i);
    cum += probs[i];
    if (u < cum) return last;
  }
  return last;
}

namespace {

constexpr double kLnEps = 1e-5;

void layer_norm_rows(Mat& x, const ConstMatMap& gain, const ConstMatMap& bias, Mat& y) {
  y.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    y.row(i) = ((x.row(i).array() - mean) * r) * gain.row(0).array() + bias.row(0).array();
  }
}

}  // namespace

InferenceSession::InferenceSession(const Parameters& params) : params_(&params) {
  const ModelConfig& c = params.config();
  keys_.assign(static_cast<std::size_t>(c.n_layers), Mat(c.max_len, c.d_model));
  values_.assign(static_cast<std::size_t>(c.n_layers), Mat(c.max_len, c.d_model));
}

void InferenceSession::truncate(std::size_t length) {
  if (length < tokens_.size()) tokens_.resize(length);
}

const Eigen::RowVectorXd& InferenceSession::append(std::span<const int> ids) {
  const ModelConfig& cfg = params_->config();
  const ParamLayout& pl = params_->layout();
  if (ids.empty()) throw ArgumentError("append needs at least one token");
  const int start = static_cast<int>(tokens_.size());
  const int n = static_cast<int>(ids.size());
  if (start + n > cfg.max_len) throw ArgumentError("sequence exceeds max_len");
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw ArgumentError("token id outside the vocabulary");
  }

  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const ConstMatMap tok = params_->tensor(pl.tok_emb);
  const ConstMatMap pos = params_->tensor(pl.pos_emb);
  Mat x(n, d);
  for (int r = 0; r < n; ++r) x.row(r) = tok.row(ids[r]) + pos.row(start + r);

  Mat h, q, k, v, attn, o, u, g, scores;
  for (int b = 0; b < cfg.n_layers; ++b) {
    const BlockTensors& t = pl.blocks[b];
    layer_norm_rows(x, params_->tensor(t.ln1_g), params_->tensor(t.ln1_b), h);
    q.noalias() = h * params_->tensor(t.wq);
    q.rowwise() += params_->tensor(t.bq).row(0);
    k.noalias() = h * params_->tensor(t.wk);
    k.rowwise() += params_->tensor(t.bk).row(0);
    v.noalias() = h * params_->tensor(t.wv);
    v.rowwise() += params_->tensor(t.bv).row(0);
    Mat& kc = keys_[b];
    Mat& vc = values_[b];
    kc.middleRows(start, n) = k;
    vc.middleRows(start, n) = v;

    const int len = start + n;
    attn.resize(n, d);
    for (int hh = 0; hh < heads; ++hh) {
      scores.noalias() = q.middleCols(hh * dh, dh) * kc.block(0, hh * dh, len, dh).transpose();
      for (int r = 0; r < n; ++r) {
        // Query start + r sees keys [0, start + r].
        auto row = scores.row(r).head(start + r + 1);
        row *= scale;
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
        scores.row(r).tail(n - r - 1).setZero();
      }
      attn.middleCols(hh * dh, dh).noalias() = scores * vc.block(0, hh * dh, len, dh);
    }
    o.noalias() = attn * params_->tensor(t.wo);
    o.rowwise() += params_->tensor(t.bo).row(0);
    x += o;

    layer_norm_rows(x, params_->tensor(t.ln2_g), params_->tensor(t.ln2_b), h);
    u.noalias() = h * params_->tensor(t.w1);
    u.rowwise() += params_->tensor(t.b1).row(0);
    internal::gelu(u, g);
    o.noalias() = g * params_->tensor(t.w2);
    o.rowwise() += params_->tensor(t.b2).row(0);
    x += o;
  }
  Mat last = x.bottomRows(1);
  Mat hf;
  layer_norm_rows(last, params_->tensor(pl.lnf_g), params_->tensor(pl.lnf_b), hf);
  last_logits_ = hf.row(0) * params_->tensor(pl.w_out);
  tokens_.insert(tokens_.end(), ids.begin(), ids.end());
  return last_logits_;
}

std::vector<int> continue_generation(InferenceSession& session, Eigen::RowVectorXd logits,
                                     const DecodeMode& mode, int max_new) {
  std::vector<int> out;
  Rng rng(mode.seed);
  const int max_len = session.params().config().max_len;
  while (static_cast<int>(out.size()) < max_new) {
    const int tok = mode.greedy ? greedy_token(logits) : sample_token(logits, mode.sampling, rng);
    out.push_back(tok);
    if (tok == kEotId || static_cast<int>(out.size()) >= max_new) break;
    if (static_cast<int>(session.length()) >= max_len) break;
    const int one[] = {tok};
    logits = session.append(one);
  }
  return out;
}

std::vector<int> generate_tokens(const Parameters& params, std::span<const int> prefix_ids,
                                 const DecodeMode& mode, int max_new) {
  if (max_new < 1) throw ArgumentError("max_new must be >= 1");
  InferenceSession session(params);
  const Eigen::RowVectorXd first = session.append(prefix_ids);
  return continue_generation(session, first, mode, max_new);
}

}  // namespace dlm
