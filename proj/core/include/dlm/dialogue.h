// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Verbalization of observations and actions into role-tagged chat messages,
// and the byte-exact chat template used by both training and execution.
//
// Template:
//   <|begin|>
//   <|system|>\n{content}<|eot|>\n
//   <|user|>\n{content}<|eot|>\n
//   <|assistant|>\n{content}<|eot|>\n
//   ...
// A generation prompt ends with a trailing "<|assistant|>\n".

#ifndef DLM_DIALOGUE_H_
#define DLM_DIALOGUE_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dlm/collect.h"
#include "dlm/env.h"

namespace dlm {

inline constexpr std::string_view kBeginMarker = "<|begin|>";
inline constexpr std::string_view kSystemMarker = "<|system|>";
inline constexpr std::string_view kUserMarker = "<|user|>";
inline constexpr std::string_view kAssistantMarker = "<|assistant|>";
inline constexpr std::string_view kEotMarker = "<|eot|>";

inline constexpr std::array<std::string_view, 5> kReservedMarkers = {
    kBeginMarker, kSystemMarker, kUserMarker, kAssistantMarker, kEotMarker};

enum class Role { kSystem, kUser, kAssistant };

std::string_view role_name(Role r);
Role role_from_name(std::string_view name);  // FormatError if unknown

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);

bool contains_reserved_marker(std::string_view text);

// Throws FormatError unless messages are [system, user, assistant, user, ...].
// With `generation_prompt` the last message must be a user message.
void check_message_order(const std::vector<ChatMessage>& messages, bool generation_prompt = false);

struct TurnMeta {
  Action action = Action::kStay;
  AvailMask avail{};
  double rtg_norm = 0.0;
};

struct DialogueTrajectory {
  std::int64_t episode_id = 0;
  int agent_id = 0;
  std::vector<ChatMessage> messages;
  std::vector<TurnMeta> turn_meta;  // one per assistant message

  std::size_t num_turns() const { return turn_meta.size(); }
};

void to_json(nlohmann::json& j, const DialogueTrajectory& d);
void from_json(const nlohmann::json& j, DialogueTrajectory& d);

// ArgumentError for an empty id or one containing a reserved marker.
std::string verbalize_system(std::string_view env_id);
std::string verbalize_observation(const LocalObservation& obs);
std::string verbalize_action(Action a);

// Exact match against the six action strings after trimming ASCII whitespace.
std::optional<Action> parse_action(std::string_view text);

// Throws FormatError on role-order violations or reserved markers in content.
std::string render_chat(const std::vector<ChatMessage>& messages, bool generation_prompt = false);

// StateError if the trajectory has no rtg_norm; ArgumentError for a bad agent.
DialogueTrajectory build_dialogue_trajectory(const TrajectoryRecord& traj, int agent);

// One dialogue per (trajectory, agent), trajectory-major.
std::vector<DialogueTrajectory> build_dialogues(const std::vector<TrajectoryRecord>& dataset);

// The single-turn dialogue (system, user_t, assistant_t) used by the
// history-free behavior-cloning baseline.
DialogueTrajectory single_turn_dialogue(const DialogueTrajectory& d, std::size_t turn);

// The first `turns` turns of `d` (system message included).
DialogueTrajectory turn_prefix(const DialogueTrajectory& d, std::size_t turns);

}  // namespace dlm

#endif  // DLM_DIALOGUE_H_
