// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/collect.h"

#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <set>

#include "dlm/errors.h"
#include "dlm/json_io.h"

namespace dlm {
namespace {

EnvConfig make_config(int w, int h, std::vector<int> agents, std::vector<int> foods, int max_steps = 40) {
  EnvConfig c;
  c.env_id = "forage-test";
  c.width = w;
  c.height = h;
  c.n_agents = static_cast<int>(agents.size());
  c.agent_levels = std::move(agents);
  c.n_foods = static_cast<int>(foods.size());
  c.food_levels = std::move(foods);
  c.sight_radius = 2;
  c.max_steps = max_steps;
  c.seed = 77;
  return c;
}

GridState make_state(std::vector<Cell> agents, std::vector<Cell> foods) {
  GridState s;
  s.agent_positions = std::move(agents);
  s.food_positions = std::move(foods);
  s.food_collected.assign(s.food_positions.size(), false);
  return s;
}

TrajectoryRecord with_rewards(const std::vector<double>& rewards) {
  TrajectoryRecord t;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    StepRecord s;
    s.t = static_cast<int>(i);
    s.reward = rewards[i];
    t.steps.push_back(s);
  }
  return t;
}

TEST(ExpertTest, LoadsWhenAdjacentToAssignedFood) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = make_state({{2, 2}}, {{2, 1}});
  EXPECT_EQ(expert_action(env, s, 0), Action::kLoad);
}

TEST(ExpertTest, StaysWhenNothingLeft) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  GridState s = make_state({{2, 2}}, {{2, 1}});
  s.food_collected[0] = true;
  EXPECT_EQ(assigned_food(env.config(), s, 0), -1);
  EXPECT_EQ(expert_action(env, s, 0), Action::kStay);
}

TEST(ExpertTest, FoodTwoCellsEastMovesEast) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = make_state({{1, 2}}, {{3, 2}});
  EXPECT_EQ(expert_action(env, s, 0), Action::kEast);
}

// Independent BFS: distance from each cell to the nearest free cell
// 4-adjacent to `food`, with entities other than `self` as obstacles.
int bfs_distance(const ForageEnv& env, const GridState& s, int self, Cell from, Cell food) {
  const EnvConfig& c = env.config();
  auto blocked = [&](Cell x) {
    for (int a = 0; a < c.n_agents; ++a) {
      if (a != self && s.agent_positions[a] == x) return true;
    }
    for (int f = 0; f < c.n_foods; ++f) {
      if (!s.food_collected[f] && s.food_positions[f] == x) return true;
    }
    return false;
  };
  std::vector<int> dist(static_cast<std::size_t>(c.width * c.height), -1);
  std::deque<Cell> q;
  dist[from.y * c.width + from.x] = 0;
  q.push_back(from);
  while (!q.empty()) {
    const Cell x = q.front();
    q.pop_front();
    if (four_adjacent(x, food)) return dist[x.y * c.width + x.x];
    for (Action a : {Action::kNorth, Action::kSouth, Action::kEast, Action::kWest}) {
      const Cell n = apply_move(x, a);
      if (!env.in_bounds(n) || blocked(n) || dist[n.y * c.width + n.x] >= 0) continue;
      dist[n.y * c.width + n.x] = dist[x.y * c.width + x.x] + 1;
      q.push_back(n);
    }
  }
  return -1;
}

TEST(ExpertTest, FirstStepShortensBfsPath) {
  const ForageEnv env(make_config(7, 7, {1, 2}, {2, 3}));
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const GridState s = env.reset(seed);
    for (int a = 0; a < 2; ++a) {
      const int f = assigned_food(env.config(), s, a);
      ASSERT_GE(f, 0);
      const Cell food = s.food_positions[f];
      const Cell me = s.agent_positions[a];
      const Action act = expert_action(env, s, a);
      if (four_adjacent(me, food)) {
        EXPECT_EQ(act, Action::kLoad);
        continue;
      }
      const int d = bfs_distance(env, s, a, me, food);
      if (d < 0) {
        EXPECT_EQ(act, Action::kStay);
        continue;
      }
      // The chosen move is the lowest-index move that lies on a shortest path.
      Action expect = Action::kStay;
      for (Action m : {Action::kNorth, Action::kSouth, Action::kEast, Action::kWest}) {
        const Cell n = apply_move(me, m);
        if (!env.available_actions(s, a)[to_index(m)]) continue;
        if (bfs_distance(env, s, a, n, food) == d - 1) {
          expect = m;
          break;
        }
      }
      EXPECT_EQ(act, expect) << "seed " << seed << " agent " << a;
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(ExpertTest, GreedyAssignmentCoversFoodsInOrder) {
  const EnvConfig c = make_config(7, 7, {1, 1, 2}, {2, 3});
  const GridState s = make_state({{0, 0}, {6, 6}, {3, 3}}, {{1, 5}, {5, 1}});
  EXPECT_EQ(assigned_food(c, s, 0), 0);
  EXPECT_EQ(assigned_food(c, s, 1), 0);
  EXPECT_EQ(assigned_food(c, s, 2), 1);
}

TEST(ComputeReturnsTest, DiscountedSum) {
  const std::vector<double> g = compute_returns(with_rewards({0, 0, 1}), 0.9);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_NEAR(g[0], 0.81, 1e-15);
  EXPECT_NEAR(g[1], 0.9, 1e-15);
  EXPECT_EQ(g[2], 1.0);
}

TEST(ComputeReturnsTest, ZeroAndSingleStep) {
  for (double g : compute_returns(with_rewards({0, 0, 0, 0}), 0.5)) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(compute_returns(with_rewards({0.25}), 0.5), std::vector<double>({0.25}));
}

TEST(ComputeReturnsTest, RejectsBadGamma) {
  EXPECT_THROW(compute_returns(with_rewards({1}), 1.0), ArgumentError);
  EXPECT_THROW(compute_returns(with_rewards({1}), 0.0), ArgumentError);
}

TEST(CollectTest, GatedDatasetHasUnitReturns) {
  CollectConfig cfg;
  cfg.n_episodes = 100;
  cfg.gamma = 0.95;
  const auto data = collect_dataset({make_config(7, 7, {1, 2}, {2, 3})}, cfg);
  ASSERT_EQ(data.size(), 100u);
  double sum = 0.0;
  for (const auto& t : data) {
    EXPECT_TRUE(t.success);
    EXPECT_NEAR(t.episode_return, 1.0, 1e-9);
    sum += t.episode_return;
    // Recursion holds exactly.
    const auto& g = t.rtg;
    ASSERT_EQ(g.size(), t.steps.size());
    EXPECT_EQ(g.back(), t.steps.back().reward);
    for (std::size_t k = 0; k + 1 < g.size(); ++k) EXPECT_EQ(g[k], t.steps[k].reward + 0.95 * g[k + 1]);
  }
  const ReturnStats st = return_stats(data);
  EXPECT_NEAR(st.mean, 1.0, 1e-12);
  EXPECT_NEAR(st.std, 0.0, 1e-9);
  EXPECT_NEAR(sum / 100.0, 1.0, 1e-12);
}

TEST(CollectTest, ByteIdenticalAcrossRuns) {
  CollectConfig cfg;
  cfg.n_episodes = 2;
  auto dump = [&] {
    std::string out;
    for (const auto& t : collect_dataset({make_config(7, 7, {1, 2}, {2, 3})}, cfg)) {
      out += dump_json(nlohmann::json(t)) + "\n";
    }
    return out;
  };
  EXPECT_EQ(dump(), dump());
}

TEST(CollectTest, ImpossibleConfigRaises) {
  CollectConfig cfg;
  cfg.n_episodes = 2;
  // One step is never enough to reach and load a food that is not adjacent at reset.
  EnvConfig c = make_config(9, 9, {1}, {1, 1, 1}, 1);
  EXPECT_THROW(collect_dataset({c}, cfg), CollectionError);
}

TEST(CollectTest, TrajectoryJsonRoundTrip) {
  CollectConfig cfg;
  cfg.n_episodes = 2;
  auto data = normalize_rtg(collect_dataset({make_config(7, 7, {1, 2}, {2, 3})}, cfg));
  const nlohmann::json j = data[0];
  for (const char* key : {"episode_id", "env_config", "steps", "episode_return", "success", "rtg", "rtg_norm"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.size(), 7u);
  const TrajectoryRecord back = nlohmann::json::parse(dump_json(j)).get<TrajectoryRecord>();
  EXPECT_EQ(back.rtg, data[0].rtg);
  EXPECT_EQ(back.rtg_norm, data[0].rtg_norm);
  EXPECT_EQ(back.steps.size(), data[0].steps.size());
  EXPECT_EQ(back.steps[0].observations, data[0].steps[0].observations);
}

TEST(NormalizeTest, EndpointsAndMidpoint) {
  auto a = with_rewards({0.0, 1.0});
  a.rtg = {0.5, 1.0};
  auto b = with_rewards({0.0});
  b.rtg = {0.0};
  const auto out = normalize_rtg({a, b});
  EXPECT_EQ(out[0].rtg_norm[0], 0.0);
  EXPECT_EQ(out[0].rtg_norm[1], 1.0);
  EXPECT_EQ(out[1].rtg_norm[0], -1.0);
}

TEST(NormalizeTest, OrderPreservingAndBounded) {
  CollectConfig cfg;
  cfg.n_episodes = 20;
  const auto data = normalize_rtg(collect_dataset({make_config(7, 7, {1, 2}, {2, 3})}, cfg));
  std::vector<std::pair<double, double>> pairs;
  for (const auto& t : data) {
    for (std::size_t k = 0; k < t.rtg.size(); ++k) pairs.emplace_back(t.rtg[k], t.rtg_norm[k]);
  }
  for (const auto& [g, n] : pairs) {
    EXPECT_GE(n, -1.0);
    EXPECT_LE(n, 1.0);
  }
  for (std::size_t i = 0; i < pairs.size(); i += 7) {
    for (std::size_t j = 0; j < pairs.size(); j += 11) {
      const double dg = pairs[i].first - pairs[j].first;
      const double dn = pairs[i].second - pairs[j].second;
      EXPECT_EQ(dg > 0, dn > 0);
      EXPECT_EQ(dg < 0, dn < 0);
    }
  }
}

TEST(NormalizeTest, DegenerateRaises) {
  auto a = with_rewards({1.0});
  a.rtg = {1.0};
  EXPECT_THROW(normalize_rtg({a, a}), DegenerateDatasetError);
}

TEST(SplitTest, CeilingHalfAndPartition) {
  std::vector<TrajectoryRecord> data;
  for (int i = 0; i < 5; ++i) {
    data.push_back(with_rewards({1.0}));
    data.back().episode_id = i;
  }
  const DatasetSplit s = split_dataset(data, 3);
  EXPECT_EQ(s.sft.size(), 3u);
  EXPECT_EQ(s.grpo.size(), 2u);
  std::set<std::int64_t> ids;
  for (const auto& t : s.sft) ids.insert(t.episode_id);
  for (const auto& t : s.grpo) ids.insert(t.episode_id);
  EXPECT_EQ(ids.size(), 5u);

  const DatasetSplit again = split_dataset(data, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again.sft[i].episode_id, s.sft[i].episode_id);

  data.pop_back();
  const DatasetSplit even = split_dataset(data, 3);
  EXPECT_EQ(even.sft.size(), 2u);
  EXPECT_EQ(even.grpo.size(), 2u);
  EXPECT_THROW(split_dataset({}, 1), ArgumentError);
}

TEST(StatsTest, TwoPointPopulationStd) {
  auto a = with_rewards({0.0});
  a.episode_return = 0.0;
  auto b = with_rewards({1.0});
  b.episode_return = 1.0;
  const ReturnStats s = return_stats({a, b});
  EXPECT_EQ(s.mean, 0.5);
  EXPECT_EQ(s.std, 0.5);
}

TEST(StatsTest, RowsPerConfigPerSplitPlusTotals) {
  CollectConfig cfg;
  cfg.n_episodes = 4;
  EnvConfig c1 = make_config(7, 7, {1, 2}, {2, 3});
  EnvConfig c2 = c1;
  c2.env_id = "forage-other";
  const auto data = normalize_rtg(collect_dataset({c1, c2}, cfg));
  const StatsReport r = dataset_stats(split_dataset(data, 5));
  EXPECT_EQ(r.rows.size(), 9u);
  for (const auto& row : r.rows) {
    if (row.n > 0) EXPECT_NEAR(row.mean_return, 1.0, 1e-12);
  }
  EXPECT_EQ(r.rows.back().env_id, "ALL");
  EXPECT_EQ(r.rows.back().n, 8u);
  EXPECT_EQ(r.to_csv().substr(0, r.to_csv().find('\n')), "env_id,split,n,mean_return,std_return");
}

}  // namespace
}  // namespace dlm
