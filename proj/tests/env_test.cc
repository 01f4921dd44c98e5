// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/env.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "dlm/errors.h"
#include "dlm/rng.h"

namespace dlm {
namespace {

EnvConfig make_config(int w, int h, std::vector<int> agents, std::vector<int> foods, int sight = 2,
                      int max_steps = 40) {
  EnvConfig c;
  c.env_id = "test-env";
  c.width = w;
  c.height = h;
  c.n_agents = static_cast<int>(agents.size());
  c.agent_levels = std::move(agents);
  c.n_foods = static_cast<int>(foods.size());
  c.food_levels = std::move(foods);
  c.sight_radius = sight;
  c.max_steps = max_steps;
  return c;
}

GridState make_state(std::vector<Cell> agents, std::vector<Cell> foods) {
  GridState s;
  s.agent_positions = std::move(agents);
  s.food_positions = std::move(foods);
  s.food_collected.assign(s.food_positions.size(), false);
  return s;
}

TEST(EnvConfigTest, RejectsUncollectableFood) {
  EXPECT_THROW(ForageEnv(make_config(5, 5, {1}, {2})), ConfigError);
}

TEST(EnvConfigTest, RejectsOvercrowdedBoard) {
  EXPECT_THROW(ForageEnv(make_config(2, 1, {1, 1}, {1})), ConfigError);
}

TEST(EnvConfigTest, RejectsLevelListLengthMismatch) {
  EnvConfig c = make_config(5, 5, {1, 1}, {1});
  c.n_agents = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EnvConfigTest, JsonRoundTrip) {
  EnvConfig c = make_config(7, 9, {1, 2}, {2, 3}, 3, 55);
  c.seed = 0xfedcba9876543210ULL;
  const nlohmann::json j = c;
  EXPECT_EQ(j.size(), 10u);
  EXPECT_EQ(j.get<EnvConfig>(), c);
}

TEST(ResetTest, Deterministic) {
  const ForageEnv env(make_config(7, 7, {1, 2}, {2, 3}));
  EXPECT_EQ(env.reset(42), env.reset(42));
  EXPECT_NE(env.reset(42).agent_positions, env.reset(43).agent_positions);
}

TEST(ResetTest, MatchesIndependentShuffle) {
  const ForageEnv env(make_config(7, 7, {1, 2}, {2, 3}));
  const GridState s = env.reset(0);

  // Fisher-Yates from the last index with rejection-sampled indices.
  std::mt19937_64 engine(0);
  std::vector<int> cells(49);
  for (int i = 0; i < 49; ++i) cells[i] = i;
  for (std::uint64_t i = cells.size(); i > 1; --i) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % i;
    std::uint64_t x = engine();
    while (x >= limit) x = engine();
    std::swap(cells[i - 1], cells[x % i]);
  }
  const std::vector<Cell> agents = {{cells[0] % 7, cells[0] / 7}, {cells[1] % 7, cells[1] / 7}};
  const std::vector<Cell> foods = {{cells[2] % 7, cells[2] / 7}, {cells[3] % 7, cells[3] / 7}};
  EXPECT_EQ(s.agent_positions, agents);
  EXPECT_EQ(s.food_positions, foods);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.food_collected, std::vector<bool>({false, false}));
}

TEST(ResetTest, FullOneRowBoardOccupiesEveryCell) {
  const ForageEnv env(make_config(5, 1, {1, 1, 1}, {1, 2}));
  const GridState s = env.reset(9);
  std::set<Cell> seen(s.agent_positions.begin(), s.agent_positions.end());
  seen.insert(s.food_positions.begin(), s.food_positions.end());
  EXPECT_EQ(seen.size(), 5u);
}

TEST(ObserveTest, DiagonalFoodAtRadiusOne) {
  const ForageEnv env(make_config(3, 3, {1}, {1}, 1));
  const GridState s = make_state({{1, 1}}, {{0, 0}});
  const LocalObservation o = env.observe(s, 0);
  ASSERT_EQ(o.visible_foods.size(), 1u);
  EXPECT_EQ(o.visible_foods[0], (VisibleEntity{0, 1, -1, -1}));
  EXPECT_TRUE(o.visible_allies.empty());
  EXPECT_EQ(o.self_pos, (Cell{1, 1}));
}

TEST(ObserveTest, AllyJustOutsideSightIsHidden) {
  const ForageEnv env(make_config(9, 9, {1, 1}, {1}, 2));
  const GridState s = make_state({{0, 0}, {3, 1}}, {{8, 8}});
  EXPECT_TRUE(env.observe(s, 0).visible_allies.empty());
  const GridState near = make_state({{0, 0}, {2, 1}}, {{8, 8}});
  ASSERT_EQ(env.observe(near, 0).visible_allies.size(), 1u);
  EXPECT_EQ(env.observe(near, 0).visible_allies[0], (VisibleEntity{1, 1, 2, 1}));
}

TEST(ObserveTest, FullSightSeesEverythingLiving) {
  const ForageEnv env(make_config(5, 5, {1, 1, 1}, {1, 1, 1}, 5));
  GridState s = env.reset(3);
  s.food_collected[1] = true;
  const LocalObservation o = env.observe(s, 1);
  EXPECT_EQ(o.visible_allies.size(), 2u);
  ASSERT_EQ(o.visible_foods.size(), 2u);
  EXPECT_EQ(o.visible_foods[0].id, 0);
  EXPECT_EQ(o.visible_foods[1].id, 2);
  EXPECT_EQ(o.visible_allies[0].id, 0);
  EXPECT_EQ(o.visible_allies[1].id, 2);
}

TEST(ObserveTest, AgentOutOfRange) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = env.reset(1);
  EXPECT_THROW(env.observe(s, 1), ArgumentError);
  EXPECT_THROW(env.available_actions(s, -1), ArgumentError);
}

TEST(AvailableActionsTest, InteriorUnobstructed) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = make_state({{2, 2}}, {{4, 4}});
  EXPECT_EQ(env.available_actions(s, 0), (AvailMask{true, true, true, true, true, false}));
}

TEST(AvailableActionsTest, CornerBlocksNorthAndWest) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = make_state({{0, 0}}, {{4, 4}});
  const AvailMask m = env.available_actions(s, 0);
  EXPECT_FALSE(m[to_index(Action::kNorth)]);
  EXPECT_FALSE(m[to_index(Action::kWest)]);
  EXPECT_TRUE(m[to_index(Action::kSouth)]);
  EXPECT_TRUE(m[to_index(Action::kEast)]);
}

TEST(AvailableActionsTest, MatchesBruteForceNeighborScan) {
  const ForageEnv env(make_config(6, 6, {1, 1, 2}, {1, 2, 3}, 2));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    GridState s = env.reset(seed);
    s.food_collected[seed % 3] = (seed % 2) == 0;
    for (int a = 0; a < 3; ++a) {
      const Cell me = s.agent_positions[a];
      AvailMask expect{};
      expect[0] = true;
      const int dx[] = {0, 0, 0, 1, -1};
      const int dy[] = {0, -1, 1, 0, 0};
      for (int m = 1; m <= 4; ++m) {
        const Cell t{me.x + dx[m], me.y + dy[m]};
        bool free = t.x >= 0 && t.y >= 0 && t.x < 6 && t.y < 6;
        for (const Cell& o : s.agent_positions) free = free && !(o == t);
        for (int f = 0; f < 3; ++f) free = free && (s.food_collected[f] || !(s.food_positions[f] == t));
        expect[m] = free;
      }
      for (int f = 0; f < 3; ++f) {
        const Cell c = s.food_positions[f];
        if (!s.food_collected[f] && std::abs(c.x - me.x) + std::abs(c.y - me.y) == 1) expect[5] = true;
      }
      EXPECT_EQ(env.available_actions(s, a), expect) << "seed " << seed << " agent " << a;
    }
  }
}

TEST(StepTest, AllStayOnlyAdvancesTime) {
  const ForageEnv env(make_config(7, 7, {1, 2}, {2, 3}));
  const GridState s = env.reset(5);
  const StepOutcome o = env.step(s, {Action::kStay, Action::kStay});
  GridState expect = s;
  expect.step = 1;
  EXPECT_EQ(o.state, expect);
  EXPECT_EQ(o.reward, 0.0);
  EXPECT_FALSE(o.terminated);
}

TEST(StepTest, LoadCollectsFoodAndPaysShare) {
  const ForageEnv env(make_config(5, 5, {2}, {1, 2}));
  const GridState s = make_state({{2, 2}}, {{3, 2}, {0, 0}});
  const StepOutcome o = env.step(s, {Action::kLoad});
  EXPECT_TRUE(o.state.food_collected[0]);
  EXPECT_FALSE(o.state.food_collected[1]);
  EXPECT_DOUBLE_EQ(o.reward, 1.0 / 3.0);
  EXPECT_FALSE(o.terminated);
}

TEST(StepTest, CooperativeLoadNeedsEnoughLevel) {
  const ForageEnv env(make_config(5, 5, {1, 1}, {2}));
  const GridState s = make_state({{1, 2}, {3, 2}}, {{2, 2}});
  const StepOutcome alone = env.step(s, {Action::kLoad, Action::kStay});
  EXPECT_FALSE(alone.state.food_collected[0]);
  const StepOutcome both = env.step(s, {Action::kLoad, Action::kLoad});
  EXPECT_TRUE(both.state.food_collected[0]);
  EXPECT_DOUBLE_EQ(both.reward, 1.0);
  EXPECT_TRUE(both.terminated);
  EXPECT_TRUE(both.success);
}

TEST(StepTest, ContestedCellGoesToLowerIndex) {
  const ForageEnv env(make_config(5, 5, {1, 1}, {1}));
  const GridState s = make_state({{1, 2}, {3, 2}}, {{4, 4}});
  const StepOutcome o = env.step(s, {Action::kEast, Action::kWest});
  EXPECT_EQ(o.state.agent_positions[0], (Cell{2, 2}));
  EXPECT_EQ(o.state.agent_positions[1], (Cell{3, 2}));
  // Order of the claim does not depend on which agent is listed first.
  const GridState swapped = make_state({{3, 2}, {1, 2}}, {{4, 4}});
  const StepOutcome o2 = env.step(swapped, {Action::kWest, Action::kEast});
  EXPECT_EQ(o2.state.agent_positions[0], (Cell{2, 2}));
  EXPECT_EQ(o2.state.agent_positions[1], (Cell{1, 2}));
}

TEST(StepTest, UnavailableActionActsAsStay) {
  const ForageEnv env(make_config(5, 5, {1}, {1}));
  const GridState s = make_state({{0, 0}}, {{4, 4}});
  const StepOutcome o = env.step(s, {Action::kWest});
  EXPECT_EQ(o.state.agent_positions[0], (Cell{0, 0}));
  const StepOutcome l = env.step(s, {Action::kLoad});
  EXPECT_EQ(l.reward, 0.0);
}

TEST(StepTest, TimeoutTerminatesWithoutSuccess) {
  const ForageEnv env(make_config(5, 5, {1}, {1}, 2, 2));
  GridState s = make_state({{0, 0}}, {{4, 4}});
  s = env.step(s, {Action::kStay}).state;
  const StepOutcome o = env.step(s, {Action::kStay});
  EXPECT_TRUE(o.terminated);
  EXPECT_FALSE(o.success);
  EXPECT_THROW(env.step(o.state, {Action::kStay}), StateError);
}

TEST(StepTest, WrongJointActionLength) {
  const ForageEnv env(make_config(5, 5, {1, 1}, {1}));
  EXPECT_THROW(env.step(env.reset(0), {Action::kStay}), ArgumentError);
}

TEST(EnvPropertyTest, RandomRolloutsKeepInvariants) {
  const ForageEnv env(make_config(6, 6, {1, 1, 2}, {1, 2, 3}, 2, 80));
  for (std::uint64_t ep = 0; ep < 100; ++ep) {
    Rng rng(ep + 1000);
    GridState s = env.reset(ep);
    double total = 0.0;
    std::vector<bool> collected = s.food_collected;
    while (true) {
      std::vector<Action> joint;
      for (int a = 0; a < 3; ++a) {
        const AvailMask m = env.available_actions(s, a);
        ASSERT_TRUE(m[0]);
        std::vector<int> options;
        for (int k = 0; k < kNumActions; ++k) {
          if (m[k]) options.push_back(k);
        }
        joint.push_back(action_from_index(options[rng.below(options.size())]));
      }
      const StepOutcome o = env.step(s, joint);
      ASSERT_GE(o.reward, 0.0);
      total += o.reward;
      // No two living entities share a cell.
      std::set<Cell> cells;
      std::size_t living = 0;
      for (const Cell& c : o.state.agent_positions) {
        cells.insert(c);
        ++living;
      }
      for (int f = 0; f < 3; ++f) {
        ASSERT_TRUE(!collected[f] || o.state.food_collected[f]);
        if (!o.state.food_collected[f]) {
          cells.insert(o.state.food_positions[f]);
          ++living;
        }
      }
      ASSERT_EQ(cells.size(), living);
      for (const Cell& c : o.state.agent_positions) ASSERT_TRUE(env.in_bounds(c));
      collected = o.state.food_collected;
      s = o.state;
      if (o.terminated) {
        ASSERT_LE(total, 1.0 + 1e-12);
        EXPECT_EQ(o.success, std::abs(total - 1.0) < 1e-12);
        break;
      }
    }
  }
}

TEST(ActionTest, IndexBounds) {
  for (int i = 0; i < kNumActions; ++i) EXPECT_EQ(to_index(action_from_index(i)), i);
  EXPECT_THROW(action_from_index(6), ArgumentError);
  EXPECT_THROW(action_from_index(-1), ArgumentError);
}

}  // namespace
}  // namespace dlm
