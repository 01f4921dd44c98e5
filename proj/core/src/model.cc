// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/model.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dlm/errors.h"
#include "dlm/rng.h"
#include "gelu.h"

namespace dlm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kOutputInitScale = 0.1;

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

void layer_norm(const Mat& x, const ConstMatMap& gain, const ConstMatMap& bias, Mat& xhat,
                Eigen::VectorXd& rstd, Mat& y) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd(i) = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).array() * gain.row(0).array() + bias.row(0).array();
  }
}

// dx for y = gain * xhat + bias; accumulates dgain / dbias.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& rstd,
                        const ConstMatMap& gain, MatMap dgain, MatMap dbias) {
  const Eigen::Index n = dy.rows();
  const double d = static_cast<double>(dy.cols());
  Mat dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    dgain.row(0).array() += dy.row(i).array() * xhat.row(i).array();
    dbias.row(0) += dy.row(i);
    const RowVec dxhat = (dy.row(i).array() * gain.row(0).array()).matrix();
    const double mean_d = dxhat.sum() / d;
    const double mean_dx = dxhat.dot(xhat.row(i)) / d;
    dx.row(i) = rstd(i) * (dxhat.array() - mean_d - xhat.row(i).array() * mean_dx);
  }
  return dx;
}

void check_layout(const AttentionLayout& layout, std::size_t n, int max_len) {
  if (layout.positions.size() != n || layout.key_begin.size() != n ||
      layout.prefix_begin.size() != n || layout.prefix_end.size() != n) {
    throw ArgumentError("attention layout does not match the sequence length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int p = layout.positions[i];
    if (p < 0 || p >= max_len) throw ArgumentError("position exceeds max_len");
    const int kb = layout.key_begin[i];
    if (kb < 0 || kb > static_cast<int>(i)) throw ArgumentError("bad key_begin in layout");
    if (layout.prefix_begin[i] < 0 || layout.prefix_end[i] < layout.prefix_begin[i] ||
        (layout.prefix_end[i] > kb)) {
      throw ArgumentError("bad prefix range in layout");
    }
  }
}

// Attention over the per-position key sets, computed densely per head.
// Row i of each probability matrix is nonzero only on the allowed keys
// [prefix_begin, prefix_end) and [key_begin, i]; other entries are exact
// zeros, so disallowed keys cannot influence the output.
void attention_forward(const Mat& q, const Mat& k, const Mat& v, const AttentionLayout& layout,
                       int n_heads, Mat& out, std::vector<Mat>& probs) {
  const int n = static_cast<int>(q.rows());
  const int d = static_cast<int>(q.cols());
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  out.resize(n, d);
  probs.resize(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Mat& p = probs[h];
    p.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    for (int i = 0; i < n; ++i) {
      auto row = p.row(i);
      const int pb = layout.prefix_begin[i];
      const int pe = layout.prefix_end[i];
      const int kb = layout.key_begin[i];
      auto pre = row.segment(pb, pe - pb);
      auto own = row.segment(kb, i - kb + 1);
      double mx = own.maxCoeff();
      if (pe > pb) mx = std::max(mx, pre.maxCoeff());
      mx *= scale;
      pre = (pre.array() * scale - mx).exp().matrix();
      own = (own.array() * scale - mx).exp().matrix();
      const double inv = 1.0 / (pre.sum() + own.sum());
      pre *= inv;
      own *= inv;
      row.segment(0, pb).setZero();
      row.segment(pe, kb - pe).setZero();
      row.segment(i + 1, n - i - 1).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
  }
}

void attention_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v, int n_heads,
                        const std::vector<Mat>& probs, Mat& dq, Mat& dk, Mat& dv) {
  const int n = static_cast<int>(q.rows());
  const int d = static_cast<int>(q.cols());
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq.resize(n, d);
  dk.resize(n, d);
  dv.resize(n, d);
  Mat ds;
  for (int h = 0; h < n_heads; ++h) {
    const Mat& p = probs[h];
    const auto doh = dout.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
    ds.noalias() = doh * v.middleCols(h * dh, dh).transpose();  // dP
    const Eigen::VectorXd weighted = (ds.array() * p.array()).rowwise().sum();
    ds = (p.array() * (ds.colwise() - weighted).array()) * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * q.middleCols(h * dh, dh);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("model.vocab_size must be positive");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_len < 2) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by n_heads");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_heads", c.n_heads},
                     {"n_layers", c.n_layers},     {"d_ff", c.d_ff},       {"max_len", c.max_len},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_len = j.value("max_len", c.max_len);
  c.init_seed = j.value("init_seed", c.init_seed);
}

ParamLayout ParamLayout::build(const ModelConfig& c) {
  ParamLayout l;
  auto add = [&l](std::string name, int rows, int cols) {
    TensorSpec t{std::move(name), rows, cols, l.total};
    l.total += t.size();
    l.tensors.push_back(std::move(t));
    return static_cast<int>(l.tensors.size()) - 1;
  };
  const int d = c.d_model;
  l.tok_emb = add("tok_emb", c.vocab_size, d);
  l.pos_emb = add("pos_emb", c.max_len, d);
  for (int b = 0; b < c.n_layers; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockTensors t{};
    t.ln1_g = add(p + "ln1.gain", 1, d);
    t.ln1_b = add(p + "ln1.bias", 1, d);
    t.wq = add(p + "attn.wq", d, d);
    t.bq = add(p + "attn.bq", 1, d);
    t.wk = add(p + "attn.wk", d, d);
    t.bk = add(p + "attn.bk", 1, d);
    t.wv = add(p + "attn.wv", d, d);
    t.bv = add(p + "attn.bv", 1, d);
    t.wo = add(p + "attn.wo", d, d);
    t.bo = add(p + "attn.bo", 1, d);
    t.ln2_g = add(p + "ln2.gain", 1, d);
    t.ln2_b = add(p + "ln2.bias", 1, d);
    t.w1 = add(p + "mlp.w1", d, c.d_ff);
    t.b1 = add(p + "mlp.b1", 1, c.d_ff);
    t.w2 = add(p + "mlp.w2", c.d_ff, d);
    t.b2 = add(p + "mlp.b2", 1, d);
    l.blocks.push_back(t);
  }
  l.lnf_g = add("lnf.gain", 1, d);
  l.lnf_b = add("lnf.bias", 1, d);
  l.w_out = add("w_out", d, c.vocab_size);
  return l;
}

Parameters::Parameters(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::build(config)), data_(layout_.total, 0.0) {
  config_.validate();
}

MatMap Parameters::tensor(int index) {
  const TensorSpec& t = layout_.tensors.at(static_cast<std::size_t>(index));
  return MatMap(data_.data() + t.offset, t.rows, t.cols);
}

ConstMatMap Parameters::tensor(int index) const {
  const TensorSpec& t = layout_.tensors.at(static_cast<std::size_t>(index));
  return ConstMatMap(data_.data() + t.offset, t.rows, t.cols);
}

namespace {
int find_tensor(const ParamLayout& l, const std::string& name) {
  for (std::size_t i = 0; i < l.tensors.size(); ++i) {
    if (l.tensors[i].name == name) return static_cast<int>(i);
  }
  throw ArgumentError("no tensor named " + name);
}
}  // namespace

MatMap Parameters::tensor(const std::string& name) { return tensor(find_tensor(layout_, name)); }
ConstMatMap Parameters::tensor(const std::string& name) const {
  return tensor(find_tensor(layout_, name));
}

void Parameters::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

bool Parameters::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  Parameters p(config);
  Rng rng(seed);
  const ParamLayout& l = p.layout();
  auto fill_normal = [&](int idx, double stddev) {
    MatMap m = p.tensor(idx);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = stddev * rng.normal();
    }
  };
  const double d = config.d_model;
  fill_normal(l.tok_emb, 1.0 / std::sqrt(d));
  fill_normal(l.pos_emb, 1.0 / std::sqrt(d));
  for (const BlockTensors& b : l.blocks) {
    p.tensor(b.ln1_g).setOnes();
    p.tensor(b.ln2_g).setOnes();
    fill_normal(b.wq, 1.0 / std::sqrt(d));
    fill_normal(b.wk, 1.0 / std::sqrt(d));
    fill_normal(b.wv, 1.0 / std::sqrt(d));
    fill_normal(b.wo, 1.0 / std::sqrt(d));
    fill_normal(b.w1, 1.0 / std::sqrt(d));
    fill_normal(b.w2, 1.0 / std::sqrt(static_cast<double>(config.d_ff)));
  }
  p.tensor(l.lnf_g).setOnes();
  fill_normal(l.w_out, kOutputInitScale / std::sqrt(d));
  return p;
}

AttentionLayout AttentionLayout::causal(int length) {
  AttentionLayout l;
  for (int i = 0; i < length; ++i) {
    l.positions.push_back(i);
    l.key_begin.push_back(0);
    l.prefix_begin.push_back(0);
    l.prefix_end.push_back(0);
  }
  return l;
}

AttentionLayout AttentionLayout::from_segments(std::span<const int> segment_ids) {
  AttentionLayout l;
  int start = 0;
  for (int i = 0; i < static_cast<int>(segment_ids.size()); ++i) {
    if (i > 0 && segment_ids[i] != segment_ids[i - 1]) start = i;
    l.positions.push_back(i - start);
    l.key_begin.push_back(start);
    l.prefix_begin.push_back(0);
    l.prefix_end.push_back(0);
  }
  return l;
}

AttentionLayout AttentionLayout::shared_prefix(int prefix_len, const std::vector<int>& branch_lengths) {
  AttentionLayout l = causal(prefix_len);
  int start = prefix_len;
  for (int len : branch_lengths) {
    for (int k = 0; k < len; ++k) {
      l.positions.push_back(prefix_len + k);
      l.key_begin.push_back(start);
      l.prefix_begin.push_back(0);
      l.prefix_end.push_back(prefix_len);
    }
    start += len;
  }
  return l;
}

Mat forward(const Parameters& params, std::span<const int> ids, const AttentionLayout& layout,
            ForwardCache* cache) {
  const ModelConfig& cfg = params.config();
  const ParamLayout& pl = params.layout();
  const int n = static_cast<int>(ids.size());
  check_layout(layout, ids.size(), cfg.max_len);
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw ArgumentError("token id outside the vocabulary");
  }

  const ConstMatMap tok = params.tensor(pl.tok_emb);
  const ConstMatMap pos = params.tensor(pl.pos_emb);
  Mat x(n, cfg.d_model);
  for (int i = 0; i < n; ++i) x.row(i) = tok.row(ids[i]) + pos.row(layout.positions[i]);

  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  c.ids.assign(ids.begin(), ids.end());
  c.layout = layout;
  c.blocks.resize(static_cast<std::size_t>(cfg.n_layers));

  Mat o;
  for (int b = 0; b < cfg.n_layers; ++b) {
    const BlockTensors& t = pl.blocks[b];
    BlockCache& bc = c.blocks[b];
    layer_norm(x, params.tensor(t.ln1_g), params.tensor(t.ln1_b), bc.xhat1, bc.rstd1, bc.h1);
    bc.q.noalias() = bc.h1 * params.tensor(t.wq);
    bc.q.rowwise() += params.tensor(t.bq).row(0);
    bc.k.noalias() = bc.h1 * params.tensor(t.wk);
    bc.k.rowwise() += params.tensor(t.bk).row(0);
    bc.v.noalias() = bc.h1 * params.tensor(t.wv);
    bc.v.rowwise() += params.tensor(t.bv).row(0);
    attention_forward(bc.q, bc.k, bc.v, layout, cfg.n_heads, bc.attn, bc.probs);
    o.noalias() = bc.attn * params.tensor(t.wo);
    o.rowwise() += params.tensor(t.bo).row(0);
    x += o;

    layer_norm(x, params.tensor(t.ln2_g), params.tensor(t.ln2_b), bc.xhat2, bc.rstd2, bc.h2);
    bc.u.noalias() = bc.h2 * params.tensor(t.w1);
    bc.u.rowwise() += params.tensor(t.b1).row(0);
    internal::gelu(bc.u, bc.g);
    o.noalias() = bc.g * params.tensor(t.w2);
    o.rowwise() += params.tensor(t.b2).row(0);
    x += o;
  }
  layer_norm(x, params.tensor(pl.lnf_g), params.tensor(pl.lnf_b), c.xhat_f, c.rstd_f, c.hf);
  Mat logits = c.hf * params.tensor(pl.w_out);
  return logits;
}

Mat forward(const Parameters& params, std::span<const int> ids, std::span<const int> segment_ids) {
  if (segment_ids.size() != ids.size()) throw ArgumentError("segment_ids length mismatch");
  return forward(params, ids, AttentionLayout::from_segments(segment_ids));
}

void backward_accumulate(const Parameters& params, const ForwardCache& c, const Mat& dlogits,
                         Gradients& grads) {
  const ModelConfig& cfg = params.config();
  const ParamLayout& pl = params.layout();
  const int n = static_cast<int>(c.ids.size());

  grads.tensor(pl.w_out).noalias() += c.hf.transpose() * dlogits;
  Mat dhf = dlogits * params.tensor(pl.w_out).transpose();
  Mat dx = layer_norm_backward(dhf, c.xhat_f, c.rstd_f, params.tensor(pl.lnf_g),
                               grads.tensor(pl.lnf_g), grads.tensor(pl.lnf_b));

  Mat dh, du, da, dq, dk, dv;
  for (int b = cfg.n_layers - 1; b >= 0; --b) {
    const BlockTensors& t = pl.blocks[b];
    const BlockCache& bc = c.blocks[b];

    // MLP branch.
    grads.tensor(t.w2).noalias() += bc.g.transpose() * dx;
    grads.tensor(t.b2).row(0) += dx.colwise().sum();
    du.noalias() = dx * params.tensor(t.w2).transpose();
    du.array() *= internal::gelu_grad(bc.u).array();
    grads.tensor(t.w1).noalias() += bc.h2.transpose() * du;
    grads.tensor(t.b1).row(0) += du.colwise().sum();
    dh.noalias() = du * params.tensor(t.w1).transpose();
    dx += layer_norm_backward(dh, bc.xhat2, bc.rstd2, params.tensor(t.ln2_g),
                              grads.tensor(t.ln2_g), grads.tensor(t.ln2_b));

    // Attention branch.
    grads.tensor(t.wo).noalias() += bc.attn.transpose() * dx;
    grads.tensor(t.bo).row(0) += dx.colwise().sum();
    da.noalias() = dx * params.tensor(t.wo).transpose();
    attention_backward(da, bc.q, bc.k, bc.v, cfg.n_heads, bc.probs, dq, dk, dv);
    grads.tensor(t.wq).noalias() += bc.h1.transpose() * dq;
    grads.tensor(t.bq).row(0) += dq.colwise().sum();
    grads.tensor(t.wk).noalias() += bc.h1.transpose() * dk;
    grads.tensor(t.bk).row(0) += dk.colwise().sum();
    grads.tensor(t.wv).noalias() += bc.h1.transpose() * dv;
    grads.tensor(t.bv).row(0) += dv.colwise().sum();
    dh.noalias() = dq * params.tensor(t.wq).transpose();
    dh.noalias() += dk * params.tensor(t.wk).transpose();
    dh.noalias() += dv * params.tensor(t.wv).transpose();
    dx += layer_norm_backward(dh, bc.xhat1, bc.rstd1, params.tensor(t.ln1_g),
                              grads.tensor(t.ln1_g), grads.tensor(t.ln1_b));
  }

  MatMap dtok = grads.tensor(pl.tok_emb);
  MatMap dpos = grads.tensor(pl.pos_emb);
  for (int i = 0; i < n; ++i) {
    dtok.row(c.ids[i]) += dx.row(i);
    dpos.row(c.layout.positions[i]) += dx.row(i);
  }
}

Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

LossOutput sequence_loss(const Parameters& params, std::span<const int> ids,
                         const std::vector<bool>& label_mask, const AttentionLayout& layout) {
  if (ids.size() < 2) throw ArgumentError("sequence_loss needs at least two tokens");
  if (label_mask.size() != ids.size()) throw ArgumentError("label_mask length mismatch");
  LossOutput out;
  const Mat logits = forward(params, ids, layout, &out.cache.forward);
  out.cache.dlogits.setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t p = 1; p < ids.size(); ++p) {
    if (!label_mask[p]) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(p - 1));
    const double mx = row.maxCoeff();
    const double sum = (row.array() - mx).exp().sum();
    total += -(row(ids[p]) - mx - std::log(sum));
    auto drow = out.cache.dlogits.row(static_cast<Eigen::Index>(p - 1));
    drow = (row.array() - mx).exp() / sum;
    drow(ids[p]) -= 1.0;
    ++out.n_targets;
  }
  if (out.n_targets == 0) throw ArgumentError("sequence_loss: no masked target positions");
  out.loss = total / static_cast<double>(out.n_targets);
  out.cache.dlogits /= static_cast<double>(out.n_targets);
  return out;
}

Gradients backward(const Parameters& params, const LossCache& cache) {
  Gradients g(params.config());
  backward_accumulate(params, cache.forward, cache.dlogits, g);
  return g;
}

OptimizerState make_optimizer_state(const Parameters& params) {
  OptimizerState s;
  s.m.assign(params.data().size(), 0.0);
  s.v.assign(params.data().size(), 0.0);
  return s;
}

void adam_step(Parameters& params, const Gradients& grads, OptimizerState& state, double lr,
               double beta1, double beta2, double eps) {
  auto& w = params.data();
  const auto& g = grads.data();
  if (g.size() != w.size() || state.m.size() != w.size() || state.v.size() != w.size()) {
    throw ArgumentError("adam_step: shape mismatch");
  }
  for (double x : g) {
    if (!std::isfinite(x)) throw TrainingError("non-finite gradient");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double global_norm(const Gradients& grads) {
  double ss = 0.0;
  for (double x : grads.data()) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace dlm
