// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Offline dataset construction: a scripted cooperative expert, quality-gated
// episode collection, discounted return-to-go and its dataset-wide [-1, 1]
// normalization, and the SFT / GRPO split.

#ifndef DLM_COLLECT_H_
#define DLM_COLLECT_H_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/env.h"

namespace dlm {

struct CollectConfig {
  int n_episodes = 300;  // per env config, after the quality gate
  double gamma = 0.95;
  bool quality_gate = true;  // keep successful episodes only
  std::uint64_t split_seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const CollectConfig& c);
void from_json(const nlohmann::json& j, CollectConfig& c);

struct StepRecord {
  int t = 0;
  std::vector<LocalObservation> observations;
  std::vector<AvailMask> avail;
  std::vector<Action> actions;
  double reward = 0.0;
  bool terminated = false;
};

struct TrajectoryRecord {
  std::int64_t episode_id = 0;
  EnvConfig env_config;
  std::vector<StepRecord> steps;
  double episode_return = 0.0;
  bool success = false;
  std::vector<double> rtg;
  std::vector<double> rtg_norm;  // empty until normalize_rtg
};

void to_json(nlohmann::json& j, const TrajectoryRecord& r);
void from_json(const nlohmann::json& j, TrajectoryRecord& r);

// Greedy assignment in agent-index order: each agent joins the lowest-id
// uncollected food whose assigned level sum is still below its level; once
// every food is covered, remaining agents join the lowest-id uncollected food.
// Returns -1 when no food remains.
int assigned_food(const EnvConfig& config, const GridState& state, int agent);

// Load when adjacent to the assigned food, else the first step of a BFS
// shortest path to a free cell next to it (ties by action index), else stay.
Action expert_action(const ForageEnv& env, const GridState& state, int agent);

// Throws CollectionError if a config cannot reach n_episodes accepted
// episodes within 50 * n_episodes attempts.
std::vector<TrajectoryRecord> collect_dataset(const std::vector<EnvConfig>& env_cfgs,
                                              const CollectConfig& cfg);

// Rolls one expert episode (no gate, rtg filled, rtg_norm empty).
TrajectoryRecord rollout_expert(const ForageEnv& env, std::uint64_t episode_seed,
                                std::int64_t episode_id, double gamma);

// G_t = r_t + gamma * G_{t+1}, G_{T-1} = r_{T-1}.
std::vector<double> compute_returns(const TrajectoryRecord& traj, double gamma);

struct RtgScale {
  double g_min = 0.0;
  double g_max = 0.0;

  double normalize(double g) const { return 2.0 * (g - g_min) / (g_max - g_min) - 1.0; }
};

void to_json(nlohmann::json& j, const RtgScale& s);
void from_json(const nlohmann::json& j, RtgScale& s);

// Min / max of rtg over every step of every trajectory.
// Throws DegenerateDatasetError when they coincide.
RtgScale fit_rtg_scale(const std::vector<TrajectoryRecord>& dataset);

// Fills rtg_norm on every trajectory using `scale`.
std::vector<TrajectoryRecord> normalize_rtg(std::vector<TrajectoryRecord> dataset,
                                            const RtgScale& scale);
// Fits the scale on `dataset` itself.
std::vector<TrajectoryRecord> normalize_rtg(std::vector<TrajectoryRecord> dataset);

struct DatasetSplit {
  std::vector<TrajectoryRecord> sft;
  std::vector<TrajectoryRecord> grpo;
};

// Seeded shuffle, then the first ceil(M/2) trajectories go to the SFT half.
DatasetSplit split_dataset(const std::vector<TrajectoryRecord>& dataset, std::uint64_t split_seed);

struct StatsRow {
  std::string env_id;  // "ALL" for totals
  std::string split;   // "sft", "grpo" or "all"
  std::size_t n = 0;
  double mean_return = 0.0;
  double std_return = 0.0;  // population
};

struct StatsReport {
  std::vector<StatsRow> rows;
  std::string to_csv() const;
};

struct ReturnStats {
  double mean = 0.0;
  double std = 0.0;
};

// Population mean / standard deviation of episode_return. Requires non-empty.
ReturnStats return_stats(const std::vector<TrajectoryRecord>& dataset);

StatsReport dataset_stats(const DatasetSplit& split);

}  // namespace dlm

#endif  // DLM_COLLECT_H_
