// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/collect.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>

#include "dlm/errors.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"

namespace dlm {

void CollectConfig::validate() const {
  if (n_episodes < 2) throw ConfigError("collect.n_episodes must be >= 2");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("collect.gamma must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const CollectConfig& c) {
  j = nlohmann::json{{"n_episodes", c.n_episodes},
                     {"gamma", c.gamma},
                     {"quality_gate", c.quality_gate},
                     {"split_seed", c.split_seed}};
}

void from_json(const nlohmann::json& j, CollectConfig& c) {
  c.n_episodes = j.value("n_episodes", c.n_episodes);
  c.gamma = j.value("gamma", c.gamma);
  c.quality_gate = j.value("quality_gate", c.quality_gate);
  c.split_seed = j.value("split_seed", c.split_seed);
}

void to_json(nlohmann::json& j, const TrajectoryRecord& r) {
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    std::vector<int> actions;
    for (Action a : s.actions) actions.push_back(to_index(a));
    steps.push_back({{"t", s.t},
                     {"observations", s.observations},
                     {"avail", s.avail},
                     {"actions", actions},
                     {"reward", s.reward},
                     {"terminated", s.terminated}});
  }
  j = nlohmann::json{{"episode_id", r.episode_id},   {"env_config", r.env_config},
                     {"steps", steps},               {"episode_return", r.episode_return},
                     {"success", r.success},         {"rtg", r.rtg},
                     {"rtg_norm", r.rtg_norm}};
}

void from_json(const nlohmann::json& j, TrajectoryRecord& r) {
  r.episode_id = j.at("episode_id").get<std::int64_t>();
  r.env_config = j.at("env_config").get<EnvConfig>();
  r.steps.clear();
  for (const auto& s : j.at("steps")) {
    StepRecord step;
    step.t = s.at("t").get<int>();
    step.observations = s.at("observations").get<std::vector<LocalObservation>>();
    step.avail = s.at("avail").get<std::vector<AvailMask>>();
    for (int a : s.at("actions").get<std::vector<int>>()) step.actions.push_back(action_from_index(a));
    step.reward = s.at("reward").get<double>();
    step.terminated = s.at("terminated").get<bool>();
    r.steps.push_back(std::move(step));
  }
  r.episode_return = j.at("episode_return").get<double>();
  r.success = j.at("success").get<bool>();
  r.rtg = j.at("rtg").get<std::vector<double>>();
  r.rtg_norm = j.at("rtg_norm").get<std::vector<double>>();
}

void to_json(nlohmann::json& j, const RtgScale& s) {
  j = nlohmann::json{{"g_min", s.g_min}, {"g_max", s.g_max}};
}

void from_json(const nlohmann::json& j, RtgScale& s) {
  s.g_min = j.at("g_min").get<double>();
  s.g_max = j.at("g_max").get<double>();
}

int assigned_food(const EnvConfig& config, const GridState& state, int agent) {
  std::vector<int> assigned(static_cast<std::size_t>(config.n_foods), 0);
  int lowest = -1;
  for (int f = 0; f < config.n_foods; ++f) {
    if (!state.food_collected[f]) {
      lowest = f;
      break;
    }
  }
  if (lowest < 0) return -1;
  for (int a = 0; a < config.n_agents; ++a) {
    int target = lowest;
    for (int f = 0; f < config.n_foods; ++f) {
      if (!state.food_collected[f] && assigned[f] < config.food_levels[f]) {
        target = f;
        break;
      }
    }
    assigned[target] += config.agent_levels[a];
    if (a == agent) return target;
  }
  return -1;
}

Action expert_action(const ForageEnv& env, const GridState& state, int agent) {
  const EnvConfig& cfg = env.config();
  const int food = assigned_food(cfg, state, agent);
  if (food < 0) return Action::kStay;
  const Cell me = state.agent_positions[agent];
  const Cell target = state.food_positions[food];
  if (four_adjacent(me, target)) return Action::kLoad;

  constexpr Action kMoves[] = {Action::kNorth, Action::kSouth, Action::kEast, Action::kWest};
  const int w = cfg.width;
  auto idx = [w](Cell c) { return c.y * w + c.x; };
  auto free = [&](Cell c) { return env.in_bounds(c) && (c == me || !env.occupied(state, c)); };

  // Multi-source BFS from the free cells next to the target.
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<int> dist(static_cast<std::size_t>(cfg.width * cfg.height), kInf);
  std::deque<Cell> queue;
  for (Action a : kMoves) {
    const Cell c = apply_move(target, a);
    if (free(c) && dist[idx(c)] == kInf) {
      dist[idx(c)] = 0;
      queue.push_back(c);
    }
  }
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (Action a : kMoves) {
      const Cell n = apply_move(c, a);
      if (free(n) && dist[idx(n)] == kInf) {
        dist[idx(n)] = dist[idx(c)] + 1;
        queue.push_back(n);
      }
    }
  }
  if (dist[idx(me)] == kInf) return Action::kStay;
  for (Action a : kMoves) {
    const Cell n = apply_move(me, a);
    if (env.in_bounds(n) && !env.occupied(state, n) && dist[idx(n)] == dist[idx(me)] - 1) {
      return a;
    }
  }
  return Action::kStay;
}

std::vector<double> compute_returns(const TrajectoryRecord& traj, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ArgumentError("gamma must lie in (0, 1)");
  if (traj.steps.empty()) throw ArgumentError("trajectory has no steps");
  std::vector<double> g(traj.steps.size());
  double next = 0.0;
  for (std::size_t t = traj.steps.size(); t-- > 0;) {
    g[t] = (t + 1 == traj.steps.size()) ? traj.steps[t].reward
                                        : traj.steps[t].reward + gamma * next;
    next = g[t];
  }
  return g;
}

TrajectoryRecord rollout_expert(const ForageEnv& env, std::uint64_t episode_seed,
                                std::int64_t episode_id, double gamma) {
  const EnvConfig& cfg = env.config();
  TrajectoryRecord rec;
  rec.episode_id = episode_id;
  rec.env_config = cfg;
  GridState state = env.reset(episode_seed);
  int collected_level = 0;
  for (int t = 0;; ++t) {
    StepRecord step;
    step.t = t;
    for (int i = 0; i < cfg.n_agents; ++i) {
      step.observations.push_back(env.observe(state, i));
      step.avail.push_back(env.available_actions(state, i));
      step.actions.push_back(expert_action(env, state, i));
    }
    StepOutcome out = env.step(state, step.actions);
    for (int f = 0; f < cfg.n_foods; ++f) {
      if (out.state.food_collected[f] && !state.food_collected[f]) collected_level += cfg.food_levels[f];
    }
    step.reward = out.reward;
    step.terminated = out.terminated;
    rec.steps.push_back(std::move(step));
    state = std::move(out.state);
    if (out.terminated) {
      rec.success = out.success;
      break;
    }
  }
  // Ratio of integers so a successful episode returns exactly 1.
  rec.episode_return = static_cast<double>(collected_level) / cfg.total_food_level();
  rec.rtg = compute_returns(rec, gamma);
  return rec;
}

std::vector<TrajectoryRecord> collect_dataset(const std::vector<EnvConfig>& env_cfgs,
                                              const CollectConfig& cfg) {
  if (env_cfgs.empty()) throw ArgumentError("collect_dataset needs at least one env config");
  cfg.validate();
  std::vector<TrajectoryRecord> out;
  std::int64_t next_id = 0;
  for (const EnvConfig& ec : env_cfgs) {
    const ForageEnv env(ec);
    const long long max_attempts = 50LL * cfg.n_episodes;
    int accepted = 0;
    for (long long attempt = 0; attempt < max_attempts && accepted < cfg.n_episodes; ++attempt) {
      const std::uint64_t seed = derive_seed({ec.seed, static_cast<std::uint64_t>(attempt)});
      TrajectoryRecord rec = rollout_expert(env, seed, next_id, cfg.gamma);
      if (cfg.quality_gate && !rec.success) continue;
      ++next_id;
      ++accepted;
      out.push_back(std::move(rec));
    }
    if (accepted < cfg.n_episodes) {
      throw CollectionError("expert success rate too low on '" + ec.env_id + "': " +
                            std::to_string(accepted) + " of " + std::to_string(cfg.n_episodes) +
                            " episodes within " + std::to_string(max_attempts) + " attempts");
    }
  }
  return out;
}

RtgScale fit_rtg_scale(const std::vector<TrajectoryRecord>& dataset) {
  if (dataset.empty()) throw ArgumentError("cannot normalize an empty dataset");
  RtgScale s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& tr : dataset) {
    for (double g : tr.rtg) {
      s.g_min = std::min(s.g_min, g);
      s.g_max = std::max(s.g_max, g);
    }
  }
  if (!(s.g_max > s.g_min)) {
    throw DegenerateDatasetError("return-to-go is constant over the dataset; normalization undefined");
  }
  return s;
}

std::vector<TrajectoryRecord> normalize_rtg(std::vector<TrajectoryRecord> dataset,
                                            const RtgScale& scale) {
  if (!(scale.g_max > scale.g_min)) throw DegenerateDatasetError("degenerate rtg scale");
  for (auto& tr : dataset) {
    tr.rtg_norm.resize(tr.rtg.size());
    for (std::size_t t = 0; t < tr.rtg.size(); ++t) {
      tr.rtg_norm[t] = std::clamp(scale.normalize(tr.rtg[t]), -1.0, 1.0);
    }
  }
  return dataset;
}

std::vector<TrajectoryRecord> normalize_rtg(std::vector<TrajectoryRecord> dataset) {
  const RtgScale scale = fit_rtg_scale(dataset);
  return normalize_rtg(std::move(dataset), scale);
}

DatasetSplit split_dataset(const std::vector<TrajectoryRecord>& dataset, std::uint64_t split_seed) {
  if (dataset.empty()) throw ArgumentError("cannot split an empty dataset");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(split_seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_sft = (dataset.size() + 1) / 2;
  DatasetSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_sft ? split.sft : split.grpo).push_back(dataset[order[i]]);
  }
  return split;
}

ReturnStats return_stats(const std::vector<TrajectoryRecord>& dataset) {
  if (dataset.empty()) throw ArgumentError("return_stats on an empty dataset");
  double sum = 0.0;
  for (const auto& t : dataset) sum += t.episode_return;
  const double mean = sum / static_cast<double>(dataset.size());
  double ss = 0.0;
  for (const auto& t : dataset) ss += (t.episode_return - mean) * (t.episode_return - mean);
  return {mean, std::sqrt(ss / static_cast<double>(dataset.size()))};
}

StatsReport dataset_stats(const DatasetSplit& split) {
  std::vector<std::string> env_ids;
  auto note = [&env_ids](const std::vector<TrajectoryRecord>& d) {
    for (const auto& t : d) {
      if (std::find(env_ids.begin(), env_ids.end(), t.env_config.env_id) == env_ids.end()) {
        env_ids.push_back(t.env_config.env_id);
      }
    }
  };
  note(split.sft);
  note(split.grpo);

  auto filter = [](const std::vector<TrajectoryRecord>& d, const std::string& id) {
    std::vector<TrajectoryRecord> out;
    for (const auto& t : d) {
      if (id.empty() || t.env_config.env_id == id) out.push_back(t);
    }
    return out;
  };

  StatsReport report;
  auto add = [&report](const std::string& env, const std::string& name,
                       const std::vector<TrajectoryRecord>& d) {
    StatsRow row{env, name, d.size(), 0.0, 0.0};
    if (!d.empty()) {
      const ReturnStats s = return_stats(d);
      row.mean_return = s.mean;
      row.std_return = s.std;
    }
    report.rows.push_back(row);
  };
  for (const std::string& id : env_ids) {
    const auto sft = filter(split.sft, id);
    const auto grpo = filter(split.grpo, id);
    auto all = sft;
    all.insert(all.end(), grpo.begin(), grpo.end());
    add(id, "sft", sft);
    add(id, "grpo", grpo);
    add(id, "all", all);
  }
  auto all = split.sft;
  all.insert(all.end(), split.grpo.begin(), split.grpo.end());
  add("ALL", "sft", split.sft);
  add("ALL", "grpo", split.grpo);
  add("ALL", "all", all);
  return report;
}

std::string StatsReport::to_csv() const {
  std::ostringstream out;
  out << "env_id,split,n,mean_return,std_return\n";
  for (const auto& r : rows) {
    out << r.env_id << ',' << r.split << ',' << r.n << ',' << format_double(r.mean_return) << ','
        << format_double(r.std_return) << '\n';
  }
  return out.str();
}

}  // namespace dlm
