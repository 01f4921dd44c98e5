// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/policy.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dlm/errors.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"

namespace dlm {

ModelPolicy::ModelPolicy(const Parameters& params, const Vocabulary& vocab, int max_new, int n_sessions)
    : params_(&params), vocab_(&vocab), max_new_(max_new) {
  if (params.config().vocab_size != vocab.size()) throw ArgumentError("model and vocabulary sizes differ");
  if (max_new < 1 || max_new >= params.config().max_len) throw ArgumentError("invalid max_new");
  if (n_sessions < 1) throw ArgumentError("n_sessions must be positive");
  sessions_.reserve(n_sessions);
  last_used_.assign(n_sessions, 0);
  for (int i = 0; i < n_sessions; ++i) sessions_.push_back(nullptr);
}

std::vector<int> ModelPolicy::prompt_ids(const std::vector<ChatMessage>& history) const {
  return encode_prompt(history, *vocab_, params_->config().max_len - max_new_);
}

void ModelPolicy::truncate_history(std::vector<ChatMessage>& history) const {
  check_message_order(history, true);
  const int budget = params_->config().max_len - max_new_;
  // begin + messages + "<|assistant|>\n"
  std::vector<int> sizes;
  int total = 3;
  for (const auto& m : history) {
    sizes.push_back(static_cast<int>(encode_message(m, *vocab_).size()));
    total += sizes.back();
  }
  if (total <= budget) return;
  // Remove the oldest user/assistant pairs until the prompt fits in half the window.
  std::size_t drop = 0;
  while (1 + 2 * drop + 1 < history.size() && total > budget / 2) {
    total -= sizes[1 + 2 * drop] + sizes[2 + 2 * drop];
    ++drop;
  }
  history.erase(history.begin() + 1, history.begin() + 1 + 2 * drop);
}

std::vector<int> ModelPolicy::generate(const std::vector<ChatMessage>& history, const DecodeMode& mode) {
  const std::vector<int> prompt = prompt_ids(history);
  // Pick the cached session sharing the longest prefix; open a fresh one
  // rather than rewinding a session that holds another history.
  int best = -1;
  std::size_t best_common = 0;
  int free_slot = -1;
  for (int s = 0; s < static_cast<int>(sessions_.size()); ++s) {
    if (!sessions_[s]) {
      if (free_slot < 0) free_slot = s;
      continue;
    }
    const auto& toks = sessions_[s]->tokens();
    std::size_t c = 0;
    while (c < toks.size() && c < prompt.size() && toks[c] == prompt[c]) ++c;
    if (best < 0 || c > best_common || (c == best_common && last_used_[s] < last_used_[best])) {
      best = s;
      best_common = c;
    }
  }
  if (best < 0 || (free_slot >= 0 && best_common < sessions_[best]->length() &&
                   best_common < prompt.size())) {
    if (free_slot >= 0) {
      sessions_[free_slot] = std::make_unique<InferenceSession>(*params_);
      best = free_slot;
      best_common = 0;
    }
  }
  if (best < 0) {
    // No session yet and no free slot cannot happen; kept for clarity.
    throw StateError("no inference session available");
  }
  last_used_[best] = ++clock_;
  InferenceSession& session = *sessions_[best];
  const std::size_t keep = std::min(best_common, prompt.size() - 1);
  session.truncate(keep);
  const Eigen::RowVectorXd logits =
      session.append(std::span<const int>(prompt.data() + keep, prompt.size() - keep));
  return continue_generation(session, logits, mode, max_new_);
}

std::string ModelPolicy::reply_text(const std::vector<int>& generated) const {
  std::vector<int> body = generated;
  if (!body.empty() && body.back() == kEotId) body.pop_back();
  return decode(body, *vocab_);
}

std::string ModelPolicy::greedy_reply(const std::vector<ChatMessage>& history) {
  return reply_text(generate(history, DecodeMode::make_greedy()));
}

std::string ModelPolicy::sample_reply(const std::vector<ChatMessage>& history, const SamplingConfig& cfg,
                                      std::uint64_t seed) {
  return reply_text(generate(history, DecodeMode::make_sample(cfg, seed)));
}

GreedyResult greedy_action(TextPolicy& policy, const std::vector<ChatMessage>& history) {
  GreedyResult r;
  r.raw = policy.greedy_reply(history);
  r.action = parse_action(r.raw);
  return r;
}

Decision constrained_resample(TextPolicy& policy, const std::vector<ChatMessage>& history,
                              const AvailMask& avail, const SamplingConfig& sampling, int max_retries,
                              std::uint64_t seed) {
  Decision d;
  const GreedyResult g = greedy_action(policy, history);
  if (g.action && avail[to_index(*g.action)]) {
    d.action = *g.action;
    return d;
  }
  d.ood = true;
  d.kind = g.action ? OodKind::kUnavailable : OodKind::kUnparseable;
  for (int r = 0; r < max_retries; ++r) {
    d.resamples = r + 1;
    const auto a = parse_action(policy.sample_reply(history, sampling, derive_seed({seed, static_cast<std::uint64_t>(r)})));
    if (a && avail[to_index(*a)]) {
      d.action = *a;
      return d;
    }
  }
  d.action = Action::kStay;
  return d;
}

Decision LanguageSelector::decide(const std::vector<ChatMessage>& history, const AvailMask& avail,
                                  std::uint64_t seed) {
  return constrained_resample(*policy_, history, avail, sampling_, max_retries_, seed);
}

Decision RandomSelector::decide(const std::vector<ChatMessage>&, const AvailMask& avail, std::uint64_t seed) {
  std::vector<int> options;
  for (int a = 0; a < kNumActions; ++a) {
    if (avail[a]) options.push_back(a);
  }
  if (options.empty()) throw StateError("no available action");
  Rng rng(seed);
  Decision d;
  d.action = action_from_index(options[rng.below(options.size())]);
  return d;
}

void EvalConfig::validate() const {
  if (env_cfgs.empty()) throw ConfigError("eval needs at least one env config");
  if (episodes_per_cfg < 1) throw ConfigError("eval.episodes_per_cfg must be >= 1");
  if (seeds.empty()) throw ConfigError("eval.seeds must be non-empty");
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) throw ConfigError("eval.top_p must lie in (0, 1]");
  if (sampling.top_k < 1) throw ConfigError("eval.top_k must be >= 1");
  if (max_retries < 0) throw ConfigError("eval.max_retries must be >= 0");
  for (const auto& c : env_cfgs) c.validate();
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"env_cfgs", c.env_cfgs},       {"episodes_per_cfg", c.episodes_per_cfg},
       {"seeds", c.seeds},             {"top_k", c.sampling.top_k},
       {"top_p", c.sampling.top_p},    {"temperature", c.sampling.temperature},
       {"max_retries", c.max_retries}, {"bc_mode", c.bc_mode}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  c.env_cfgs = j.value("env_cfgs", d.env_cfgs);
  c.episodes_per_cfg = j.value("episodes_per_cfg", d.episodes_per_cfg);
  c.seeds = j.value("seeds", d.seeds);
  c.sampling.top_k = j.value("top_k", d.sampling.top_k);
  c.sampling.top_p = j.value("top_p", d.sampling.top_p);
  c.sampling.temperature = j.value("temperature", d.sampling.temperature);
  c.max_retries = j.value("max_retries", d.max_retries);
  c.bc_mode = j.value("bc_mode", d.bc_mode);
}

EpisodeOutcome rollout_episode(ActionSelector& selector, const EnvConfig& env_cfg, std::uint64_t episode_seed,
                               bool bc_mode, std::vector<std::vector<std::vector<ChatMessage>>>* prompts) {
  const ForageEnv env(env_cfg);
  GridState state = env.reset(episode_seed);
  const ChatMessage system{Role::kSystem, verbalize_system(env_cfg.env_id)};
  std::vector<std::vector<ChatMessage>> histories(env_cfg.n_agents, std::vector<ChatMessage>{system});
  EpisodeOutcome out;
  while (true) {
    std::vector<Action> joint(env_cfg.n_agents);
    if (prompts) prompts->emplace_back();
    for (int i = 0; i < env_cfg.n_agents; ++i) {
      auto& h = histories[i];
      if (bc_mode) h.resize(1);
      h.push_back({Role::kUser, verbalize_observation(env.observe(state, i))});
      selector.truncate_history(h);
      const AvailMask avail = env.available_actions(state, i);
      const Decision d = selector.decide(
          h, avail, derive_seed({episode_seed, static_cast<std::uint64_t>(state.step), static_cast<std::uint64_t>(i)}));
      if (!avail[to_index(d.action)]) throw StateError("selector returned an unavailable action");
      if (prompts) prompts->back().push_back(h);
      h.push_back({Role::kAssistant, verbalize_action(d.action)});
      joint[i] = d.action;
      ++out.decisions;
      out.ood_flags.push_back(d.ood);
      if (d.ood) ++out.ood_events;
      if (d.kind == OodKind::kUnparseable) ++out.unparseable;
      if (d.kind == OodKind::kUnavailable) ++out.unavailable;
    }
    const StepOutcome so = env.step(state, joint);
    state = so.state;
    ++out.length;
    if (so.terminated) {
      out.success = so.success;
      break;
    }
  }
  return out;
}

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t config_index, std::size_t episode) {
  return derive_seed({0x4556414cULL, seed, config_index, episode});
}

MeanCi mean_ci95(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("mean_ci95 of an empty list");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  return {mean, 1.96 * std::sqrt(var) / std::sqrt(n)};
}

double EvalReport::mean_win_rate() const {
  if (configs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : configs) s += c.win_rate_mean;
  return s / static_cast<double>(configs.size());
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "config,seed,win_rate,ood_rate,mean_length\n";
  for (const auto& c : configs) {
    for (const auto& s : c.seeds) {
      os << c.env_id << ',' << s.seed << ',' << format_double(s.win_rate) << ',' << format_double(s.ood_rate)
         << ',' << format_double(s.mean_length) << '\n';
    }
  }
  return os.str();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["configs"] = nlohmann::json::array();
  for (const auto& c : r.configs) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : c.seeds) {
      seeds.push_back({{"seed", s.seed},
                       {"win_rate", s.win_rate},
                       {"ood_rate", s.ood_rate},
                       {"mean_length", s.mean_length},
                       {"decisions", s.decisions},
                       {"ood_events", s.ood_events},
                       {"unparseable", s.unparseable},
                       {"unavailable", s.unavailable}});
    }
    j["configs"].push_back({{"env_id", c.env_id},
                            {"seeds", seeds},
                            {"win_rate_mean", c.win_rate_mean},
                            {"win_rate_ci95", c.win_rate_ci},
                            {"ood_rate", c.ood_rate},
                            {"mean_length", c.mean_length},
                            {"unparseable", c.unparseable},
                            {"unavailable", c.unavailable}});
  }
  j["mean_win_rate"] = r.mean_win_rate();
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.configs.clear();
  for (const auto& cj : j.at("configs")) {
    ConfigResult c;
    c.env_id = cj.at("env_id").get<std::string>();
    for (const auto& sj : cj.at("seeds")) {
      SeedResult s;
      s.seed = sj.at("seed").get<std::uint64_t>();
      s.win_rate = sj.at("win_rate").get<double>();
      s.ood_rate = sj.at("ood_rate").get<double>();
      s.mean_length = sj.at("mean_length").get<double>();
      s.decisions = sj.at("decisions").get<int>();
      s.ood_events = sj.at("ood_events").get<int>();
      s.unparseable = sj.at("unparseable").get<int>();
      s.unavailable = sj.at("unavailable").get<int>();
      c.seeds.push_back(s);
    }
    c.win_rate_mean = cj.at("win_rate_mean").get<double>();
    c.win_rate_ci = cj.at("win_rate_ci95").get<double>();
    c.ood_rate = cj.at("ood_rate").get<double>();
    c.mean_length = cj.at("mean_length").get<double>();
    c.unparseable = cj.at("unparseable").get<int>();
    c.unavailable = cj.at("unavailable").get<int>();
    r.configs.push_back(std::move(c));
  }
}

EvalReport evaluate(ActionSelector& selector, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport report;
  for (std::size_t ci = 0; ci < cfg.env_cfgs.size(); ++ci) {
    const EnvConfig& ec = cfg.env_cfgs[ci];
    ConfigResult cr;
    cr.env_id = ec.env_id;
    std::vector<double> wins, oods, lengths;
    for (std::uint64_t seed : cfg.seeds) {
      SeedResult sr;
      sr.seed = seed;
      int successes = 0;
      long total_length = 0;
      for (int e = 0; e < cfg.episodes_per_cfg; ++e) {
        const EpisodeOutcome o = rollout_episode(selector, ec, eval_episode_seed(seed, ci, e), cfg.bc_mode);
        successes += o.success ? 1 : 0;
        total_length += o.length;
        sr.decisions += o.decisions;
        sr.ood_events += o.ood_events;
        sr.unparseable += o.unparseable;
        sr.unavailable += o.unavailable;
      }
      sr.win_rate = static_cast<double>(successes) / cfg.episodes_per_cfg;
      sr.ood_rate = sr.decisions > 0 ? static_cast<double>(sr.ood_events) / sr.decisions : 0.0;
      sr.mean_length = static_cast<double>(total_length) / cfg.episodes_per_cfg;
      wins.push_back(sr.win_rate);
      oods.push_back(sr.ood_rate);
      lengths.push_back(sr.mean_length);
      cr.unparseable += sr.unparseable;
      cr.unavailable += sr.unavailable;
      cr.seeds.push_back(sr);
    }
    const MeanCi w = mean_ci95(wins);
    cr.win_rate_mean = w.mean;
    cr.win_rate_ci = w.half_width;
    cr.ood_rate = mean_ci95(oods).mean;
    cr.mean_length = mean_ci95(lengths).mean;
    report.configs.push_back(std::move(cr));
  }
  return report;
}

}  // namespace dlm
