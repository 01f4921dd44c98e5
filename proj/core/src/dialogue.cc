// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/dialogue.h"

#include <algorithm>

#include "dlm/errors.h"

namespace dlm {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionText = {
    "stay",
    "move north one step",
    "move south one step",
    "move east one step",
    "move west one step",
    "load adjacent food",
};

std::string entity_text(std::string_view kind, const VisibleEntity& e) {
  std::string s(kind);
  s += ' ';
  s += std::to_string(e.id);
  s += " level ";
  s += std::to_string(e.level);
  s += " at relative (";
  s += std::to_string(e.dx);
  s += ',';
  s += std::to_string(e.dy);
  s += ')';
  return s;
}

std::string entity_list(std::string_view kind, std::vector<VisibleEntity> entities) {
  if (entities.empty()) return "none";
  std::sort(entities.begin(), entities.end(),
            [](const VisibleEntity& a, const VisibleEntity& b) { return a.id < b.id; });
  std::string s;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i > 0) s += "; ";
    s += entity_text(kind, entities[i]);
  }
  return s;
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role role_from_name(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw FormatError("unknown chat role: " + std::string(name));
}

void to_json(nlohmann::json& j, const ChatMessage& m) {
  j = nlohmann::json{{"role", std::string(role_name(m.role))}, {"content", m.content}};
}

void from_json(const nlohmann::json& j, ChatMessage& m) {
  m.role = role_from_name(j.at("role").get<std::string>());
  m.content = j.at("content").get<std::string>();
}

bool contains_reserved_marker(std::string_view text) {
  return std::any_of(kReservedMarkers.begin(), kReservedMarkers.end(),
                     [text](std::string_view m) { return text.find(m) != std::string_view::npos; });
}

void check_message_order(const std::vector<ChatMessage>& messages, bool generation_prompt) {
  for (std::size_t i = 0; i < messages.size(); ++i) {
    Role expected = Role::kSystem;
    if (i > 0) expected = (i % 2 == 1) ? Role::kUser : Role::kAssistant;
    if (messages[i].role != expected) {
      throw FormatError("message " + std::to_string(i) + " has role '" +
                        std::string(role_name(messages[i].role)) + "', expected '" +
                        std::string(role_name(expected)) + "'");
    }
  }
  if (generation_prompt && (messages.empty() || messages.back().role != Role::kUser)) {
    throw FormatError("generation prompt must end with a user message");
  }
}

void to_json(nlohmann::json& j, const DialogueTrajectory& d) {
  auto meta = nlohmann::json::array();
  for (const auto& m : d.turn_meta) {
    meta.push_back({{"action_idx", to_index(m.action)}, {"avail", m.avail}, {"rtg_norm", m.rtg_norm}});
  }
  j = nlohmann::json{{"episode_id", d.episode_id},
                     {"agent_id", d.agent_id},
                     {"messages", d.messages},
                     {"turn_meta", meta}};
}

void from_json(const nlohmann::json& j, DialogueTrajectory& d) {
  d.episode_id = j.at("episode_id").get<std::int64_t>();
  d.agent_id = j.at("agent_id").get<int>();
  d.messages = j.at("messages").get<std::vector<ChatMessage>>();
  d.turn_meta.clear();
  for (const auto& m : j.at("turn_meta")) {
    d.turn_meta.push_back({action_from_index(m.at("action_idx").get<int>()),
                           m.at("avail").get<AvailMask>(), m.at("rtg_norm").get<double>()});
  }
}

std::string verbalize_system(std::string_view env_id) {
  if (env_id.empty()) throw ArgumentError("env_id must be non-empty");
  if (contains_reserved_marker(env_id)) throw ArgumentError("env_id contains a reserved marker");
  std::string s = "You are a cooperative foraging agent on the ";
  s += env_id;
  s += " map. Work with your team to collect all food.";
  return s;
}

std::string verbalize_observation(const LocalObservation& obs) {
  std::string s = "You are agent " + std::to_string(obs.self_id) + " (level " +
                  std::to_string(obs.self_level) + ") at (" + std::to_string(obs.self_pos.x) + ',' +
                  std::to_string(obs.self_pos.y) + "). Visible food: ";
  s += entity_list("food", obs.visible_foods);
  s += ". Visible allies: ";
  s += entity_list("agent", obs.visible_allies);
  s += '.';
  return s;
}

std::string verbalize_action(Action a) {
  const int i = to_index(a);
  if (i < 0 || i >= kNumActions) throw ArgumentError("action index out of range");
  return std::string(kActionText[static_cast<std::size_t>(i)]);
}

std::optional<Action> parse_action(std::string_view text) {
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  for (int i = 0; i < kNumActions; ++i) {
    if (text == kActionText[static_cast<std::size_t>(i)]) return static_cast<Action>(i);
  }
  return std::nullopt;
}

std::string render_chat(const std::vector<ChatMessage>& messages, bool generation_prompt) {
  check_message_order(messages, generation_prompt);
  std::string out(kBeginMarker);
  for (const auto& m : messages) {
    if (contains_reserved_marker(m.content)) {
      throw FormatError("message content contains a reserved marker");
    }
    out += "<|";
    out += role_name(m.role);
    out += "|>\n";
    out += m.content;
    out += kEotMarker;
    out += '\n';
  }
  if (generation_prompt) {
    out += kAssistantMarker;
    out += '\n';
  }
  return out;
}

DialogueTrajectory build_dialogue_trajectory(const TrajectoryRecord& traj, int agent) {
  if (agent < 0 || agent >= traj.env_config.n_agents) {
    throw ArgumentError("agent index out of range: " + std::to_string(agent));
  }
  if (traj.rtg_norm.size() != traj.steps.size()) {
    throw StateError("trajectory " + std::to_string(traj.episode_id) + " has no rtg_norm");
  }
  DialogueTrajectory d;
  d.episode_id = traj.episode_id;
  d.agent_id = agent;
  d.messages.push_back({Role::kSystem, verbalize_system(traj.env_config.env_id)});
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const StepRecord& s = traj.steps[t];
    d.messages.push_back({Role::kUser, verbalize_observation(s.observations[agent])});
    d.messages.push_back({Role::kAssistant, verbalize_action(s.actions[agent])});
    d.turn_meta.push_back({s.actions[agent], s.avail[agent], traj.rtg_norm[t]});
  }
  return d;
}

std::vector<DialogueTrajectory> build_dialogues(const std::vector<TrajectoryRecord>& dataset) {
  std::vector<DialogueTrajectory> out;
  for (const auto& tr : dataset) {
    for (int a = 0; a < tr.env_config.n_agents; ++a) out.push_back(build_dialogue_trajectory(tr, a));
  }
  return out;
}

DialogueTrajectory single_turn_dialogue(const DialogueTrajectory& d, std::size_t turn) {
  if (turn >= d.num_turns()) throw ArgumentError("turn index out of range");
  DialogueTrajectory out;
  out.episode_id = d.episode_id;
  out.agent_id = d.agent_id;
  out.messages = {d.messages[0], d.messages[1 + 2 * turn], d.messages[2 + 2 * turn]};
  out.turn_meta = {d.turn_meta[turn]};
  return out;
}

DialogueTrajectory turn_prefix(const DialogueTrajectory& d, std::size_t turns) {
  if (turns > d.num_turns()) throw ArgumentError("turn count out of range");
  DialogueTrajectory out;
  out.episode_id = d.episode_id;
  out.agent_id = d.agent_id;
  out.messages.assign(d.messages.begin(), d.messages.begin() + static_cast<long>(1 + 2 * turns));
  out.turn_meta.assign(d.turn_meta.begin(), d.turn_meta.begin() + static_cast<long>(turns));
  return out;
}

}  // namespace dlm
