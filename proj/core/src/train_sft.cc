// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/train_sft.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "dlm/errors.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"

namespace dlm {

void SftConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("sft.lr must be positive");
  if (batch_size <= 0) throw ConfigError("sft.batch_size must be positive");
  if (grad_accum_steps <= 0) throw ConfigError("sft.grad_accum_steps must be positive");
  if (epochs <= 0) throw ConfigError("sft.epochs must be positive");
  if (max_len < 8) throw ConfigError("sft.max_len must be at least 8");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("sft.eval_fraction must lie in [0, 1)");
  }
  if (warmup_steps < 0) throw ConfigError("sft.warmup_steps must be non-negative");
  if (eval_every <= 0) throw ConfigError("sft.eval_every must be positive");
  if (stop_after_steps < 0) throw ConfigError("sft.stop_after_steps must be non-negative");
}

void to_json(nlohmann::json& j, const SftConfig& c) {
  j = {{"lr", c.lr},
       {"batch_size", c.batch_size},
       {"grad_accum_steps", c.grad_accum_steps},
       {"epochs", c.epochs},
       {"max_len", c.max_len},
       {"eval_fraction", c.eval_fraction},
       {"seed", c.seed},
       {"warmup_steps", c.warmup_steps},
       {"grad_clip", c.grad_clip},
       {"eval_every", c.eval_every},
       {"stop_after_steps", c.stop_after_steps}};
}

void from_json(const nlohmann::json& j, SftConfig& c) {
  SftConfig d;
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.grad_accum_steps = j.value("grad_accum_steps", d.grad_accum_steps);
  c.epochs = j.value("epochs", d.epochs);
  c.max_len = j.value("max_len", d.max_len);
  c.eval_fraction = j.value("eval_fraction", d.eval_fraction);
  c.seed = j.value("seed", d.seed);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.stop_after_steps = j.value("stop_after_steps", d.stop_after_steps);
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,loss,accuracy,seconds\n";
  for (const auto& r : rows) {
    os << r.step << ',' << (r.loss ? format_double(*r.loss) : "") << ','
       << (r.accuracy ? format_double(*r.accuracy) : "") << ',' << format_double(r.seconds) << '\n';
  }
  return os.str();
}

std::vector<double> TrainLog::losses() const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.loss) out.push_back(*r.loss);
  }
  return out;
}

std::optional<double> TrainLog::last_accuracy() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->accuracy) return it->accuracy;
  }
  return std::nullopt;
}

std::vector<TokenizedSample> prepare_samples(const std::vector<DialogueTrajectory>& dialogues,
                                             const Vocabulary& vocab, int max_len, SampleMode mode) {
  std::vector<TokenizedSample> out;
  for (const auto& d : dialogues) {
    if (mode == SampleMode::kSingleTurn) {
      for (std::size_t t = 0; t < d.num_turns(); ++t) {
        out.push_back(encode_dialogue(single_turn_dialogue(d, t), vocab, max_len));
      }
    } else {
      for (const auto& w : split_into_windows(d, vocab, max_len)) {
        out.push_back(encode_dialogue(w, vocab, max_len));
      }
    }
  }
  return out;
}

HeldOutSplit split_heldout(const std::vector<DialogueTrajectory>& dialogues, double eval_fraction,
                           std::uint64_t seed) {
  std::set<std::int64_t> unique;
  for (const auto& d : dialogues) unique.insert(d.episode_id);
  std::vector<std::int64_t> episodes(unique.begin(), unique.end());
  std::size_t n_eval = static_cast<std::size_t>(std::floor(eval_fraction * episodes.size()));
  if (eval_fraction > 0.0 && n_eval == 0 && episodes.size() >= 2) n_eval = 1;
  Rng rng(derive_seed({seed, 0x48454c44ULL}));
  rng.shuffle(std::span<std::int64_t>(episodes));
  const std::set<std::int64_t> held(episodes.begin(), episodes.begin() + n_eval);
  HeldOutSplit out;
  for (const auto& d : dialogues) {
    (held.count(d.episode_id) ? out.heldout : out.train).push_back(d);
  }
  return out;
}

namespace {

// Length of a packed row without its trailing padding.
std::size_t used_length(const PackedRow& row) {
  std::size_t n = row.segment_ids.size();
  while (n > 0 && row.segment_ids[n - 1] < 0) --n;
  return n;
}

std::size_t count_targets(const PackedRow& row, std::size_t len) {
  std::size_t n = 0;
  for (std::size_t p = 1; p < len; ++p) n += row.label_mask[p] ? 1 : 0;
  return n;
}

double learning_rate(const SftConfig& cfg, std::int64_t step) {
  // step is 1-based. Linear warmup, then constant.
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  return cfg.lr;
}

}  // namespace

BatchGradients batch_gradients(const Parameters& params, const std::vector<const PackedRow*>& rows) {
  BatchGradients out{0.0, 0, Gradients(params.config())};
  std::vector<std::size_t> lengths;
  for (const PackedRow* row : rows) {
    lengths.push_back(used_length(*row));
    out.n_targets += count_targets(*row, lengths.back());
  }
  if (out.n_targets == 0) return out;
  const double total = static_cast<double>(out.n_targets);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const PackedRow& row = *rows[r];
    const std::size_t len = lengths[r];
    if (count_targets(row, len) == 0) continue;
    const std::span<const int> ids(row.ids.data(), len);
    const std::vector<bool> mask(row.label_mask.begin(), row.label_mask.begin() + len);
    const auto layout = AttentionLayout::from_segments(std::span<const int>(row.segment_ids.data(), len));
    LossOutput lo = sequence_loss(params, ids, mask, layout);
    const double weight = static_cast<double>(lo.n_targets) / total;
    out.loss += lo.loss * weight;
    lo.cache.dlogits *= weight;
    backward_accumulate(params, lo.cache.forward, lo.cache.dlogits, out.grads);
  }
  return out;
}

double eval_token_accuracy(const Parameters& params, const std::vector<TokenizedSample>& heldout) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& s : heldout) {
    bool any = false;
    for (std::size_t p = 1; p < s.ids.size(); ++p) any = any || s.label_mask[p];
    if (!any) continue;
    const Mat logits = forward(params, s.ids, AttentionLayout::causal(static_cast<int>(s.ids.size())));
    for (std::size_t p = 1; p < s.ids.size(); ++p) {
      if (!s.label_mask[p]) continue;
      Eigen::Index arg = 0;
      logits.row(static_cast<Eigen::Index>(p - 1)).maxCoeff(&arg);
      correct += static_cast<int>(arg) == s.ids[p] ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw ArgumentError("eval_token_accuracy: no masked positions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

SftResult train_sft(const std::vector<DialogueTrajectory>& d_sft, const Vocabulary& vocab,
                    const ModelConfig& model_cfg, const SftConfig& cfg, SampleMode mode,
                    const std::optional<ResumeState>& resume) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.vocab_size != vocab.size()) throw ConfigError("model vocab_size does not match vocabulary");
  if (cfg.max_len > model_cfg.max_len) throw ConfigError("sft.max_len exceeds model max_len");
  if (d_sft.empty()) throw ArgumentError("train_sft: empty dataset");

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const HeldOutSplit split = split_heldout(d_sft, cfg.eval_fraction, cfg.seed);
  const auto train_samples = prepare_samples(split.train, vocab, cfg.max_len, mode);
  const auto eval_samples = prepare_samples(split.heldout, vocab, cfg.max_len, mode);
  const std::vector<PackedRow> rows = pack(train_samples, cfg.max_len);

  const std::size_t per_step = static_cast<std::size_t>(cfg.batch_size) * cfg.grad_accum_steps;
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((rows.size() + per_step - 1) / per_step);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  SftResult res;
  if (resume) {
    if (!(resume->params.config() == model_cfg)) throw ConfigError("resume checkpoint model config differs");
    res.params = resume->params;
    res.optimizer = resume->optimizer;
  } else {
    res.params = init_parameters(model_cfg, model_cfg.init_seed);
    res.optimizer = make_optimizer_state(res.params);
  }
  std::int64_t step = 0;
  const std::int64_t start_step = res.optimizer.step;
  const std::int64_t stop_step = cfg.stop_after_steps > 0 ? cfg.stop_after_steps : total_steps;

  const auto evaluate = [&](std::int64_t at) {
    if (eval_samples.empty()) return;
    const double acc = eval_token_accuracy(res.params, eval_samples);
    res.heldout_accuracy = acc;
    res.log.rows.push_back({at, std::nullopt, acc, elapsed()});
  };

  for (int epoch = 0; epoch < cfg.epochs && step < stop_step; ++epoch) {
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < order.size() && step < stop_step; begin += per_step) {
      ++step;
      if (step <= start_step) continue;  // already applied before the checkpoint
      std::vector<const PackedRow*> batch;
      for (std::size_t i = begin; i < std::min(order.size(), begin + per_step); ++i) {
        batch.push_back(&rows[order[i]]);
      }
      BatchGradients bg = batch_gradients(res.params, batch);
      if (!std::isfinite(bg.loss)) {
        throw TrainingError("non-finite training loss at step " + std::to_string(step));
      }
      if (bg.n_targets > 0) {
        if (cfg.grad_clip > 0.0) {
          const double norm = global_norm(bg.grads);
          if (norm > cfg.grad_clip) {
            for (double& g : bg.grads.data()) g *= cfg.grad_clip / norm;
          }
        }
        adam_step(res.params, bg.grads, res.optimizer, learning_rate(cfg, step));
        if (!res.params.all_finite()) {
          throw TrainingError("non-finite parameters after step " + std::to_string(step));
        }
      }
      res.optimizer.step = step;
      res.log.rows.push_back({step, bg.loss, std::nullopt, elapsed()});
      if (step % cfg.eval_every == 0) evaluate(step);
    }
  }
  res.steps = step;
  res.finished = step >= total_steps;
  if (res.log.rows.empty() || !res.log.rows.back().accuracy) evaluate(step);
  return res;
}

SftResult bc_train(const std::vector<DialogueTrajectory>& d_sft, const Vocabulary& vocab,
                   const ModelConfig& model_cfg, const SftConfig& cfg) {
  return train_sft(d_sft, vocab, model_cfg, cfg, SampleMode::kSingleTurn);
}

}  // namespace dlm
