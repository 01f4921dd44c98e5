// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/env.h"

#include <numeric>
#include <string>

#include "dlm/errors.h"
#include "dlm/rng.h"

namespace dlm {

Action action_from_index(int index) {
  if (index < 0 || index >= kNumActions) {
    throw ArgumentError("action index out of range: " + std::to_string(index));
  }
  return static_cast<Action>(index);
}

Cell apply_move(Cell from, Action a) {
  switch (a) {
    case Action::kNorth: return {from.x, from.y - 1};
    case Action::kSouth: return {from.x, from.y + 1};
    case Action::kEast: return {from.x + 1, from.y};
    case Action::kWest: return {from.x - 1, from.y};
    case Action::kStay:
    case Action::kLoad: break;
  }
  return from;
}

void EnvConfig::validate() const {
  auto fail = [this](const std::string& what) {
    throw ConfigError("env config '" + env_id + "': " + what);
  };
  if (env_id.empty()) fail("env_id must be non-empty");
  if (width < 1 || height < 1) fail("width and height must be positive");
  if (n_agents < 1) fail("n_agents must be >= 1");
  if (n_foods < 1) fail("n_foods must be >= 1");
  if (static_cast<int>(agent_levels.size()) != n_agents) fail("agent_levels length != n_agents");
  if (static_cast<int>(food_levels.size()) != n_foods) fail("food_levels length != n_foods");
  if (sight_radius < 1) fail("sight_radius must be >= 1");
  if (max_steps < 1) fail("max_steps must be >= 1");
  for (int l : agent_levels) {
    if (l < 1) fail("agent levels must be >= 1");
  }
  const int team = std::accumulate(agent_levels.begin(), agent_levels.end(), 0);
  for (int l : food_levels) {
    if (l < 1) fail("food levels must be >= 1");
    if (l > team) fail("food level " + std::to_string(l) + " exceeds total agent level");
  }
  if (static_cast<long long>(width) * height < n_agents + n_foods) {
    fail("board too small to place all agents and foods");
  }
}

int EnvConfig::total_food_level() const {
  return std::accumulate(food_levels.begin(), food_levels.end(), 0);
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"env_id", c.env_id},
                     {"width", c.width},
                     {"height", c.height},
                     {"n_agents", c.n_agents},
                     {"agent_levels", c.agent_levels},
                     {"n_foods", c.n_foods},
                     {"food_levels", c.food_levels},
                     {"sight_radius", c.sight_radius},
                     {"max_steps", c.max_steps},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  j.at("env_id").get_to(c.env_id);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  j.at("n_agents").get_to(c.n_agents);
  j.at("agent_levels").get_to(c.agent_levels);
  j.at("n_foods").get_to(c.n_foods);
  j.at("food_levels").get_to(c.food_levels);
  j.at("sight_radius").get_to(c.sight_radius);
  j.at("max_steps").get_to(c.max_steps);
  j.at("seed").get_to(c.seed);
}

namespace {

nlohmann::json entity_json(const VisibleEntity& e) {
  return {{"id", e.id}, {"level", e.level}, {"dx", e.dx}, {"dy", e.dy}};
}

VisibleEntity entity_from(const nlohmann::json& j) {
  return {j.at("id").get<int>(), j.at("level").get<int>(), j.at("dx").get<int>(),
          j.at("dy").get<int>()};
}

}  // namespace

void to_json(nlohmann::json& j, const LocalObservation& o) {
  auto foods = nlohmann::json::array();
  for (const auto& e : o.visible_foods) foods.push_back(entity_json(e));
  auto allies = nlohmann::json::array();
  for (const auto& e : o.visible_allies) allies.push_back(entity_json(e));
  j = nlohmann::json{{"self_id", o.self_id},
                     {"self_level", o.self_level},
                     {"self_pos", {o.self_pos.x, o.self_pos.y}},
                     {"visible_foods", foods},
                     {"visible_allies", allies}};
}

void from_json(const nlohmann::json& j, LocalObservation& o) {
  o.self_id = j.at("self_id").get<int>();
  o.self_level = j.at("self_level").get<int>();
  o.self_pos = {j.at("self_pos").at(0).get<int>(), j.at("self_pos").at(1).get<int>()};
  o.visible_foods.clear();
  for (const auto& e : j.at("visible_foods")) o.visible_foods.push_back(entity_from(e));
  o.visible_allies.clear();
  for (const auto& e : j.at("visible_allies")) o.visible_allies.push_back(entity_from(e));
}

bool GridState::all_collected() const {
  for (bool c : food_collected) {
    if (!c) return false;
  }
  return true;
}

ForageEnv::ForageEnv(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

bool ForageEnv::in_bounds(Cell c) const {
  return c.x >= 0 && c.y >= 0 && c.x < config_.width && c.y < config_.height;
}

bool ForageEnv::occupied(const GridState& state, Cell c) const {
  for (const Cell& a : state.agent_positions) {
    if (a == c) return true;
  }
  for (std::size_t f = 0; f < state.food_positions.size(); ++f) {
    if (!state.food_collected[f] && state.food_positions[f] == c) return true;
  }
  return false;
}

void ForageEnv::check_agent(int agent) const {
  if (agent < 0 || agent >= config_.n_agents) {
    throw ArgumentError("agent index out of range: " + std::to_string(agent));
  }
}

GridState ForageEnv::reset(std::uint64_t seed) const {
  const int n_cells = config_.width * config_.height;
  if (n_cells < config_.n_agents + config_.n_foods) {
    throw ConfigError("placement infeasible for '" + config_.env_id + "'");
  }
  std::vector<int> cells(static_cast<std::size_t>(n_cells));
  std::iota(cells.begin(), cells.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<int>(cells));

  GridState s;
  s.rng_state = seed;
  auto cell_at = [this](int idx) { return Cell{idx % config_.width, idx / config_.width}; };
  for (int i = 0; i < config_.n_agents; ++i) s.agent_positions.push_back(cell_at(cells[i]));
  for (int f = 0; f < config_.n_foods; ++f) {
    s.food_positions.push_back(cell_at(cells[config_.n_agents + f]));
  }
  s.food_collected.assign(static_cast<std::size_t>(config_.n_foods), false);
  return s;
}

LocalObservation ForageEnv::observe(const GridState& state, int agent) const {
  check_agent(agent);
  LocalObservation obs;
  obs.self_id = agent;
  obs.self_level = config_.agent_levels[agent];
  obs.self_pos = state.agent_positions[agent];
  const Cell me = obs.self_pos;
  for (int f = 0; f < config_.n_foods; ++f) {
    if (state.food_collected[f]) continue;
    const Cell c = state.food_positions[f];
    if (chebyshev(me, c) <= config_.sight_radius) {
      obs.visible_foods.push_back({f, config_.food_levels[f], c.x - me.x, c.y - me.y});
    }
  }
  for (int a = 0; a < config_.n_agents; ++a) {
    if (a == agent) continue;
    const Cell c = state.agent_positions[a];
    if (chebyshev(me, c) <= config_.sight_radius) {
      obs.visible_allies.push_back({a, config_.agent_levels[a], c.x - me.x, c.y - me.y});
    }
  }
  return obs;
}

AvailMask ForageEnv::available_actions(const GridState& state, int agent) const {
  check_agent(agent);
  AvailMask mask{};
  mask[to_index(Action::kStay)] = true;
  const Cell me = state.agent_positions[agent];
  for (Action a : {Action::kNorth, Action::kSouth, Action::kEast, Action::kWest}) {
    const Cell target = apply_move(me, a);
    mask[to_index(a)] = in_bounds(target) && !occupied(state, target);
  }
  for (int f = 0; f < config_.n_foods; ++f) {
    if (!state.food_collected[f] && four_adjacent(me, state.food_positions[f])) {
      mask[to_index(Action::kLoad)] = true;
      break;
    }
  }
  return mask;
}

StepOutcome ForageEnv::step(const GridState& state,
                            const std::vector<Action>& joint_action) const {
  if (static_cast<int>(joint_action.size()) != config_.n_agents) {
    throw ArgumentError("joint action has " + std::to_string(joint_action.size()) +
                        " entries, expected " + std::to_string(config_.n_agents));
  }
  if (state.step >= config_.max_steps || state.all_collected()) {
    throw StateError("step called on a terminated state");
  }

  std::vector<Action> effective(joint_action.size(), Action::kStay);
  for (int i = 0; i < config_.n_agents; ++i) {
    if (available_actions(state, i)[to_index(joint_action[i])]) effective[i] = joint_action[i];
  }

  StepOutcome out;
  out.state = state;
  GridState& next = out.state;

  // Available moves target cells that are currently empty, so the only
  // conflict is several agents claiming the same empty cell.
  std::vector<Cell> claimed;
  for (int i = 0; i < config_.n_agents; ++i) {
    const Action a = effective[i];
    if (a == Action::kStay || a == Action::kLoad) continue;
    const Cell target = apply_move(state.agent_positions[i], a);
    bool taken = false;
    for (const Cell& c : claimed) taken = taken || c == target;
    if (taken) continue;
    claimed.push_back(target);
    next.agent_positions[i] = target;
  }

  int collected_level = 0;
  for (int f = 0; f < config_.n_foods; ++f) {
    if (state.food_collected[f]) continue;
    int load_level = 0;
    for (int i = 0; i < config_.n_agents; ++i) {
      if (effective[i] == Action::kLoad &&
          four_adjacent(next.agent_positions[i], state.food_positions[f])) {
        load_level += config_.agent_levels[i];
      }
    }
    if (load_level >= config_.food_levels[f]) {
      next.food_collected[f] = true;
      collected_level += config_.food_levels[f];
    }
  }

  next.step = state.step + 1;
  out.reward = static_cast<double>(collected_level) / config_.total_food_level();
  if (next.all_collected()) {
    out.terminated = true;
    out.success = true;
  } else if (next.step >= config_.max_steps) {
    out.terminated = true;
  }
  return out;
}

}  // namespace dlm
