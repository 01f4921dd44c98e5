// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Cooperative level-based foraging grid. Agents move on a bounded board and
// collect food by loading it together: a food is collected when the summed
// levels of the adjacent agents that chose `load` reach the food's level.

#ifndef DLM_ENV_H_
#define DLM_ENV_H_

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dlm {

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

enum class Action : int {
  kStay = 0,
  kNorth = 1,  // y - 1
  kSouth = 2,  // y + 1
  kEast = 3,   // x + 1
  kWest = 4,   // x - 1
  kLoad = 5,
};

inline constexpr int kNumActions = 6;

// Throws ArgumentError outside [0, 5].
Action action_from_index(int index);
inline int to_index(Action a) { return static_cast<int>(a); }

// Cell reached by a move action; `from` itself for stay and load.
Cell apply_move(Cell from, Action a);

using AvailMask = std::array<bool, kNumActions>;

struct EnvConfig {
  std::string env_id;
  int width = 0;
  int height = 0;
  int n_agents = 0;
  std::vector<int> agent_levels;
  int n_foods = 0;
  std::vector<int> food_levels;
  int sight_radius = 1;
  int max_steps = 1;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the violated invariant.
  void validate() const;
  int total_food_level() const;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

struct GridState {
  std::vector<Cell> agent_positions;
  std::vector<Cell> food_positions;
  std::vector<bool> food_collected;
  int step = 0;
  std::uint64_t rng_state = 0;

  bool all_collected() const;
  friend bool operator==(const GridState&, const GridState&) = default;
};

struct VisibleEntity {
  int id = 0;
  int level = 0;
  int dx = 0;
  int dy = 0;
  friend bool operator==(const VisibleEntity&, const VisibleEntity&) = default;
};

struct LocalObservation {
  int self_id = 0;
  int self_level = 0;
  Cell self_pos;
  std::vector<VisibleEntity> visible_foods;   // ascending id
  std::vector<VisibleEntity> visible_allies;  // ascending id, self excluded
  friend bool operator==(const LocalObservation&, const LocalObservation&) = default;
};

void to_json(nlohmann::json& j, const LocalObservation& o);
void from_json(const nlohmann::json& j, LocalObservation& o);

struct StepOutcome {
  GridState state;
  double reward = 0.0;
  bool terminated = false;
  bool success = false;
};

// Pure transition functions over an immutable configuration. All methods are
// const and safe to call concurrently on distinct states.
class ForageEnv {
 public:
  // Validates the configuration (ConfigError on violation).
  explicit ForageEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }

  // Places agents then foods on the first cells of a seeded Fisher-Yates
  // shuffle of the row-major cell list.
  GridState reset(std::uint64_t seed) const;

  LocalObservation observe(const GridState& state, int agent) const;
  AvailMask available_actions(const GridState& state, int agent) const;

  // Simultaneous moves; on a contested cell the lowest agent index wins.
  // Unavailable actions are executed as stay.
  StepOutcome step(const GridState& state, const std::vector<Action>& joint_action) const;

  bool in_bounds(Cell c) const;
  // True if an agent or an uncollected food is at `c`.
  bool occupied(const GridState& state, Cell c) const;

 private:
  void check_agent(int agent) const;

  EnvConfig config_;
};

inline int chebyshev(Cell a, Cell b) {
  const int dx = a.x > b.x ? a.x - b.x : b.x - a.x;
  const int dy = a.y > b.y ? a.y - b.y : b.y - a.y;
  return dx > dy ? dx : dy;
}

inline bool four_adjacent(Cell a, Cell b) {
  const int dx = a.x > b.x ? a.x - b.x : b.x - a.x;
  const int dy = a.y > b.y ? a.y - b.y : b.y - a.y;
  return dx + dy == 1;
}

}  // namespace dlm

#endif  // DLM_ENV_H_
