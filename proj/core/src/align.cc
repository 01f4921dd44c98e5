// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/align.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dlm/errors.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"

namespace dlm {

std::string_view filter_reason_name(FilterReason r) {
  return r == FilterReason::kMismatch ? "mismatch" : "unavailable";
}

void to_json(nlohmann::json& j, const FilteredSample& s) {
  j = {{"context", s.context},
       {"dataset_action", to_index(s.dataset_action)},
       {"avail", s.avail},
       {"rtg_norm", s.rtg_norm},
       {"source", {{"episode_id", s.source.episode_id}, {"agent_id", s.source.agent_id}, {"t", s.source.t}}},
       {"filter_reason", std::string(filter_reason_name(s.reason))}};
}

void from_json(const nlohmann::json& j, FilteredSample& s) {
  s.context = j.at("context").get<std::vector<ChatMessage>>();
  s.dataset_action = action_from_index(j.at("dataset_action").get<int>());
  s.avail = j.at("avail").get<AvailMask>();
  s.rtg_norm = j.at("rtg_norm").get<double>();
  const auto& src = j.at("source");
  s.source = {src.at("episode_id").get<std::int64_t>(), src.at("agent_id").get<int>(), src.at("t").get<int>()};
  const std::string reason = j.at("filter_reason").get<std::string>();
  if (reason == "mismatch") {
    s.reason = FilterReason::kMismatch;
  } else if (reason == "unavailable") {
    s.reason = FilterReason::kUnavailable;
  } else {
    throw FormatError("unknown filter_reason '" + reason + "'");
  }
  check_message_order(s.context, true);
}

std::optional<FilterReason> classify_prediction(const std::optional<Action>& predicted, Action dataset_action,
                                                const AvailMask& avail) {
  if (!predicted || !avail[to_index(*predicted)]) return FilterReason::kUnavailable;
  if (*predicted != dataset_action) return FilterReason::kMismatch;
  return std::nullopt;
}

void to_json(nlohmann::json& j, const FilterSummary& s) {
  j = {{"total_turns", s.total_turns},
       {"retained", s.retained},
       {"mismatch", s.mismatch},
       {"unavailable", s.unavailable},
       {"retention_rate", s.retention_rate()}};
}

std::vector<FilteredSample> filter_ood(TextPolicy& policy, const std::vector<DialogueTrajectory>& d_grpo,
                                       FilterSummary* summary) {
  std::vector<FilteredSample> out;
  FilterSummary sum;
  for (const auto& d : d_grpo) {
    check_message_order(d.messages);
    if (d.messages.size() != 1 + 2 * d.num_turns()) throw FormatError("dialogue turns and turn_meta disagree");
    std::vector<ChatMessage> history = {d.messages[0]};
    for (std::size_t t = 0; t < d.num_turns(); ++t) {
      history.push_back(d.messages[1 + 2 * t]);
      policy.truncate_history(history);
      const TurnMeta& meta = d.turn_meta[t];
      ++sum.total_turns;
      const GreedyResult g = greedy_action(policy, history);
      if (const auto reason = classify_prediction(g.action, meta.action, meta.avail)) {
        FilteredSample s;
        s.context = history;
        s.dataset_action = meta.action;
        s.avail = meta.avail;
        s.rtg_norm = meta.rtg_norm;
        s.source = {d.episode_id, d.agent_id, static_cast<int>(t)};
        s.reason = *reason;
        ++sum.retained;
        ++(*reason == FilterReason::kMismatch ? sum.mismatch : sum.unavailable);
        out.push_back(std::move(s));
      }
      history.push_back(d.messages[2 + 2 * t]);
    }
  }
  if (summary) *summary = sum;
  return out;
}

double preference_reward(std::string_view candidate_text, const FilteredSample& sample) {
  const auto a = parse_action(candidate_text);
  if (!a || !sample.avail[to_index(*a)]) return -1.0;
  return *a == sample.dataset_action ? sample.rtg_norm : 0.0;
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw ArgumentError("group_advantages needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < 1e-8) return adv;
  for (std::size_t j = 0; j < rewards.size(); ++j) adv[j] = (rewards[j] - mean) / sd;
  return adv;
}

double kl_estimator(double ref_logprob, double logprob) {
  const double x = ref_logprob - logprob;
  return std::exp(x) - x - 1.0;
}

namespace {

struct GroupLayout {
  std::vector<int> ids;
  AttentionLayout layout;
  std::vector<std::size_t> offsets;  // first position of each candidate
};

GroupLayout make_group_layout(const std::vector<int>& prompt, const std::vector<std::vector<int>>& candidates) {
  if (prompt.empty()) throw ArgumentError("empty prompt");
  GroupLayout g;
  g.ids = prompt;
  std::vector<int> lengths;
  for (const auto& c : candidates) {
    if (c.empty()) throw ArgumentError("empty candidate");
    g.offsets.push_back(g.ids.size());
    g.ids.insert(g.ids.end(), c.begin(), c.end());
    lengths.push_back(static_cast<int>(c.size()));
  }
  g.layout = AttentionLayout::shared_prefix(static_cast<int>(prompt.size()), lengths);
  return g;
}

// Row of the logits that predicts token k of the candidate starting at `offset`.
Eigen::Index predicting_row(std::size_t prompt_len, std::size_t offset, std::size_t k) {
  return static_cast<Eigen::Index>(k == 0 ? prompt_len - 1 : offset + k - 1);
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

}  // namespace

std::vector<std::vector<double>> candidate_logprobs(const Parameters& params, const std::vector<int>& prompt,
                                                    const std::vector<std::vector<int>>& candidates) {
  const GroupLayout g = make_group_layout(prompt, candidates);
  const Mat logits = forward(params, g.ids, g.layout);
  std::vector<std::vector<double>> out;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    std::vector<double> lps;
    for (std::size_t k = 0; k < candidates[j].size(); ++k) {
      const auto row = logits.row(predicting_row(prompt.size(), g.offsets[j], k));
      lps.push_back(row(candidates[j][k]) - log_sum_exp(row));
    }
    out.push_back(std::move(lps));
  }
  return out;
}

GrpoLossOutput grpo_loss(const Parameters& params, const PreferenceGroup& group, double epsilon, double beta,
                         Gradients* grads, double grad_scale) {
  const std::size_t G = group.candidates.size();
  if (G == 0) throw ArgumentError("grpo_loss: empty group");
  if (group.advantages.size() != G) throw StateError("grpo_loss: advantages missing");
  std::vector<std::vector<int>> ids;
  for (const auto& c : group.candidates) {
    if (c.old_logprobs.size() != c.ids.size() || c.ref_logprobs.size() != c.ids.size()) {
      throw StateError("grpo_loss: stored log-probs missing for a candidate");
    }
    ids.push_back(c.ids);
  }
  const GroupLayout g = make_group_layout(group.prompt, ids);
  ForwardCache cache;
  const Mat logits = forward(params, g.ids, g.layout, grads ? &cache : nullptr);
  Mat dlogits;
  if (grads) dlogits.setZero(logits.rows(), logits.cols());

  GrpoLossOutput out;
  for (std::size_t j = 0; j < G; ++j) {
    const Candidate& c = group.candidates[j];
    const double adv = group.advantages[j];
    const double inv_len = 1.0 / static_cast<double>(c.ids.size());
    double surrogate = 0.0;
    double kl = 0.0;
    for (std::size_t k = 0; k < c.ids.size(); ++k) {
      const Eigen::Index r = predicting_row(group.prompt.size(), g.offsets[j], k);
      const auto row = logits.row(r);
      const double lse = log_sum_exp(row);
      const double lp = row(c.ids[k]) - lse;
      const double ratio = std::exp(lp - c.old_logprobs[k]);
      const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped * adv;
      const bool use_unclipped = unclipped_term <= clipped_term;
      surrogate += use_unclipped ? unclipped_term : clipped_term;
      if (ratio != clipped) ++out.clipped_tokens;
      kl += kl_estimator(c.ref_logprobs[k], lp);
      if (grads) {
        // d(term)/d(lp): ratio * A on the unclipped branch; the clipped branch
        // is constant in lp outside the trust region.
        const double dterm = (use_unclipped || ratio == clipped) ? unclipped_term : 0.0;
        const double dkl = 1.0 - std::exp(c.ref_logprobs[k] - lp);
        const double dlp = grad_scale * inv_len / static_cast<double>(G) * (-dterm + beta * dkl);
        auto drow = dlogits.row(r);
        drow.array() -= dlp * (row.array() - lse).exp();
        drow(c.ids[k]) += dlp;
      }
    }
    out.surrogate += surrogate * inv_len;
    out.kl_mean += kl * inv_len;
  }
  out.surrogate /= static_cast<double>(G);
  out.kl_mean /= static_cast<double>(G);
  out.loss = -out.surrogate + beta * out.kl_mean;
  if (grads) backward_accumulate(params, cache, dlogits, *grads);
  return out;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("grpo.epsilon must lie in (0, 1)");
  if (!(beta >= 0.0)) throw ConfigError("grpo.beta must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("grpo.lr must be positive");
  if (epochs < 1) throw ConfigError("grpo.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("grpo.batch_size must be >= 1");
  if (max_new < 1) throw ConfigError("grpo.max_new must be >= 1");
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) throw ConfigError("grpo.top_p must lie in (0, 1]");
  if (sampling.top_k < 1) throw ConfigError("grpo.top_k must be >= 1");
}

void to_json(nlohmann::json& j, const GrpoConfig& c) {
  j = {{"group_size", c.group_size},
       {"epsilon", c.epsilon},
       {"beta", c.beta},
       {"lr", c.lr},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"top_k", c.sampling.top_k},
       {"top_p", c.sampling.top_p},
       {"temperature", c.sampling.temperature},
       {"max_new", c.max_new},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GrpoConfig& c) {
  GrpoConfig d;
  c.group_size = j.value("group_size", d.group_size);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.beta = j.value("beta", d.beta);
  c.lr = j.value("lr", d.lr);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.sampling.top_k = j.value("top_k", d.sampling.top_k);
  c.sampling.top_p = j.value("top_p", d.sampling.top_p);
  c.sampling.temperature = j.value("temperature", d.sampling.temperature);
  c.max_new = j.value("max_new", d.max_new);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.seed = j.value("seed", d.seed);
}

std::string GrpoLog::to_csv() const {
  std::ostringstream os;
  os << "step,reward_mean,exact_match_rate,penalty_rate,kl_mean,loss\n";
  for (const auto& r : rows) {
    os << r.step << ',' << format_double(r.reward_mean) << ',' << format_double(r.exact_match_rate) << ','
       << format_double(r.penalty_rate) << ',' << format_double(r.kl_mean) << ',' << format_double(r.loss) << '\n';
  }
  return os.str();
}

PreferenceGroup build_group(ModelPolicy& old_policy, const Parameters& ref_params, const FilteredSample& sample,
                            const GrpoConfig& cfg, std::uint64_t seed) {
  PreferenceGroup g;
  g.sample = sample;
  g.prompt = old_policy.prompt_ids(sample.context);
  std::vector<std::vector<int>> ids;
  for (int j = 0; j < cfg.group_size; ++j) {
    Candidate c;
    c.ids = old_policy.generate(sample.context,
                                DecodeMode::make_sample(cfg.sampling, derive_seed({seed, static_cast<std::uint64_t>(j)})));
    c.text = old_policy.reply_text(c.ids);
    g.rewards.push_back(preference_reward(c.text, sample));
    ids.push_back(c.ids);
    g.candidates.push_back(std::move(c));
  }
  const auto old_lps = candidate_logprobs(old_policy.params(), g.prompt, ids);
  const auto ref_lps =
      &ref_params == &old_policy.params() ? old_lps : candidate_logprobs(ref_params, g.prompt, ids);
  for (std::size_t j = 0; j < g.candidates.size(); ++j) {
    g.candidates[j].old_logprobs = old_lps[j];
    g.candidates[j].ref_logprobs = ref_lps[j];
  }
  g.advantages = group_advantages(g.rewards);
  return g;
}

GrpoResult train_grpo(const Parameters& theta_sft, const Vocabulary& vocab, const std::vector<FilteredSample>& d_ood,
                      const GrpoConfig& cfg) {
  cfg.validate();
  if (d_ood.empty()) throw ArgumentError("train_grpo: empty D_OOD");
  // The sampling snapshot doubles as the KL reference.
  const Parameters snapshot = theta_sft;
  ModelPolicy old_policy(snapshot, vocab, cfg.max_new);

  GrpoResult res{theta_sft, {}};
  OptimizerState opt = make_optimizer_state(res.params);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(d_ood.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      Gradients grads(res.params.config());
      GrpoLogRow row;
      row.step = ++step;
      std::size_t n_candidates = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        const PreferenceGroup g = build_group(
            old_policy, snapshot, d_ood[idx], cfg,
            derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)}));
        const GrpoLossOutput lo = grpo_loss(res.params, g, cfg.epsilon, cfg.beta, &grads, scale);
        if (!std::isfinite(lo.loss)) {
          std::ostringstream msg;
          msg << "non-finite GRPO loss at step " << step << " (episode " << g.sample.source.episode_id << ", agent "
              << g.sample.source.agent_id << ", t " << g.sample.source.t << ", kl " << lo.kl_mean << ")";
          throw TrainingError(msg.str());
        }
        row.loss += lo.loss * scale;
        row.kl_mean += lo.kl_mean * scale;
        for (std::size_t j = 0; j < g.candidates.size(); ++j) {
          const auto a = parse_action(g.candidates[j].text);
          const bool available = a && g.sample.avail[to_index(*a)];
          row.reward_mean += g.rewards[j];
          row.exact_match_rate += (available && *a == g.sample.dataset_action) ? 1.0 : 0.0;
          row.penalty_rate += available ? 0.0 : 1.0;
          ++n_candidates;
        }
      }
      row.reward_mean /= static_cast<double>(n_candidates);
      row.exact_match_rate /= static_cast<double>(n_candidates);
      row.penalty_rate /= static_cast<double>(n_candidates);
      if (cfg.grad_clip > 0.0) {
        const double norm = global_norm(grads);
        if (norm > cfg.grad_clip) {
          for (double& x : grads.data()) x *= cfg.grad_clip / norm;
        }
      }
      adam_step(res.params, grads, opt, cfg.lr);
      res.log.rows.push_back(row);
    }
  }
  return res;
}

}  // namespace dlm
