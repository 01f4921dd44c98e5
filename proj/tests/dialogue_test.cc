// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/dialogue.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include "dlm/errors.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"
#include "support/test_support.h"

namespace dlm {
namespace {

const std::array<std::string, 6> kActionStrings = {
    "stay", "move north one step", "move south one step", "move east one step", "move west one step",
    "load adjacent food"};

// Splits a rendering back into messages using only the marker grammar.
std::vector<ChatMessage> resegment(std::string s, bool* generation_prompt) {
  std::vector<ChatMessage> out;
  EXPECT_EQ(s.rfind(kBeginMarker, 0), 0u);
  s.erase(0, kBeginMarker.size());
  *generation_prompt = false;
  while (!s.empty()) {
    std::optional<Role> role;
    for (Role r : {Role::kSystem, Role::kUser, Role::kAssistant}) {
      const std::string marker = "<|" + std::string(role_name(r)) + "|>\n";
      if (s.rfind(marker, 0) == 0) {
        role = r;
        s.erase(0, marker.size());
      }
    }
    if (!role) {
      ADD_FAILURE() << "unexpected text: " << s;
      return out;
    }
    const std::size_t eot = s.find(kEotMarker);
    if (eot == std::string::npos) {
      EXPECT_EQ(*role, Role::kAssistant);
      EXPECT_TRUE(s.empty());
      *generation_prompt = true;
      return out;
    }
    out.push_back({*role, s.substr(0, eot)});
    s.erase(0, eot + kEotMarker.size());
    EXPECT_EQ(s.front(), '\n');
    s.erase(0, 1);
  }
  return out;
}

TEST(VerbalizeTest, SystemPrompt) {
  EXPECT_EQ(verbalize_system("forage-7x7-2p2f"),
            "You are a cooperative foraging agent on the forage-7x7-2p2f map. Work with your team to collect "
            "all food.");
  EXPECT_THROW(verbalize_system(""), ArgumentError);
  EXPECT_THROW(verbalize_system("bad<|eot|>id"), ArgumentError);
}

TEST(VerbalizeTest, EmptyObservation) {
  LocalObservation o;
  o.self_id = 1;
  o.self_level = 2;
  o.self_pos = {3, 4};
  EXPECT_EQ(verbalize_observation(o),
            "You are agent 1 (level 2) at (3,4). Visible food: none. Visible allies: none.");
}

TEST(VerbalizeTest, DiagonalFoodSegment) {
  LocalObservation o;
  o.self_pos = {1, 1};
  o.self_level = 1;
  o.visible_foods = {{0, 1, -1, -1}};
  const std::string s = verbalize_observation(o);
  EXPECT_NE(s.find("Visible food: food 0 level 1 at relative (-1,-1)."), std::string::npos) << s;
}

TEST(VerbalizeTest, ListsSortedById) {
  LocalObservation o;
  o.self_id = 0;
  o.self_level = 1;
  o.visible_foods = {{2, 3, 1, 0}, {0, 1, -2, 2}};
  o.visible_allies = {{2, 1, 0, -1}, {1, 2, 1, 1}};
  LocalObservation sorted = o;
  std::reverse(sorted.visible_foods.begin(), sorted.visible_foods.end());
  std::reverse(sorted.visible_allies.begin(), sorted.visible_allies.end());
  EXPECT_EQ(verbalize_observation(o), verbalize_observation(sorted));
  EXPECT_EQ(verbalize_observation(o),
            "You are agent 0 (level 1) at (0,0). Visible food: food 0 level 1 at relative (-2,2); food 2 level 3 "
            "at relative (1,0). Visible allies: agent 1 level 2 at relative (1,1); agent 2 level 1 at relative "
            "(0,-1).");
}

TEST(ActionCodecTest, TableAndBijection) {
  for (int i = 0; i < kNumActions; ++i) {
    EXPECT_EQ(verbalize_action(action_from_index(i)), kActionStrings[i]);
    EXPECT_EQ(parse_action(verbalize_action(action_from_index(i))), action_from_index(i));
  }
  EXPECT_EQ(parse_action("  stay "), Action::kStay);
  EXPECT_EQ(parse_action("\tload adjacent food\n"), Action::kLoad);
  EXPECT_FALSE(parse_action("move north").has_value());
  EXPECT_FALSE(parse_action("Stay").has_value());
  EXPECT_FALSE(parse_action("move  north one step").has_value());
  EXPECT_FALSE(parse_action("").has_value());
}

TEST(ActionCodecTest, FuzzedStringsAreUnparseable) {
  for (const std::string& s : testing::fuzzed_non_actions(1000, 2024)) {
    EXPECT_FALSE(parse_action(s).has_value()) << "'" << s << "'";
  }
}

TEST(RenderTest, TemplateExpansion) {
  EXPECT_EQ(render_chat({}), "<|begin|>");
  EXPECT_EQ(render_chat({{Role::kSystem, "S"}}), "<|begin|><|system|>\nS<|eot|>\n");
  EXPECT_EQ(render_chat({{Role::kSystem, "S"}, {Role::kUser, "U"}}, true),
            "<|begin|><|system|>\nS<|eot|>\n<|user|>\nU<|eot|>\n<|assistant|>\n");
}

TEST(RenderTest, OrderAndMarkerViolations) {
  EXPECT_THROW(render_chat({{Role::kUser, "U"}}), FormatError);
  EXPECT_THROW(render_chat({{Role::kSystem, "S"}, {Role::kAssistant, "A"}}), FormatError);
  EXPECT_THROW(render_chat({{Role::kSystem, "S"}, {Role::kUser, "U"}, {Role::kUser, "U"}}), FormatError);
  EXPECT_THROW(render_chat({{Role::kSystem, "S<|user|>"}}), FormatError);
  EXPECT_THROW(render_chat({{Role::kSystem, "S"}, {Role::kUser, "U"}, {Role::kAssistant, "A"}}, true),
               FormatError);
}

TEST(RenderTest, ResegmentationRecoversMessages) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ChatMessage> m = {{Role::kSystem, verbalize_system("forage-7x7-2p2f")}};
    const int turns = static_cast<int>(rng.below(6));
    for (int t = 0; t < turns; ++t) {
      LocalObservation o;
      o.self_id = static_cast<int>(rng.below(3));
      o.self_pos = {static_cast<int>(rng.below(7)), static_cast<int>(rng.below(7))};
      m.push_back({Role::kUser, verbalize_observation(o)});
      m.push_back({Role::kAssistant, verbalize_action(action_from_index(static_cast<int>(rng.below(6))))});
    }
    const bool gen = rng.below(2) == 1;
    if (gen) m.push_back({Role::kUser, "You are agent 0 (level 1) at (0,0). Visible food: none. Visible allies: none."});
    bool saw_gen = false;
    EXPECT_EQ(resegment(render_chat(m, gen), &saw_gen), m);
    EXPECT_EQ(saw_gen, gen);
  }
}

TrajectoryRecord fixture_trajectory() {
  TrajectoryRecord t;
  t.episode_id = 7;
  t.env_config.env_id = "forage-3x3-1p1f";
  t.env_config.n_agents = 1;
  StepRecord s0;
  s0.t = 0;
  LocalObservation o0;
  o0.self_level = 1;
  o0.self_pos = {0, 1};
  o0.visible_foods = {{0, 1, 2, 0}};
  s0.observations = {o0};
  s0.avail = {AvailMask{true, true, true, true, false, false}};
  s0.actions = {Action::kEast};
  StepRecord s1;
  s1.t = 1;
  LocalObservation o1 = o0;
  o1.self_pos = {1, 1};
  o1.visible_foods = {{0, 1, 1, 0}};
  s1.observations = {o1};
  s1.avail = {AvailMask{true, true, true, false, true, true}};
  s1.actions = {Action::kLoad};
  s1.reward = 1.0;
  s1.terminated = true;
  t.steps = {s0, s1};
  t.rtg = {0.95, 1.0};
  t.rtg_norm = {0.9, 1.0};
  return t;
}

TEST(DialogueTrajectoryTest, GoldenRendering) {
  const DialogueTrajectory d = build_dialogue_trajectory(fixture_trajectory(), 0);
  ASSERT_EQ(d.messages.size(), 5u);
  ASSERT_EQ(d.turn_meta.size(), 2u);
  EXPECT_EQ(d.turn_meta[0].rtg_norm, 0.9);
  EXPECT_EQ(d.turn_meta[1].rtg_norm, 1.0);
  EXPECT_EQ(d.turn_meta[1].action, Action::kLoad);
  EXPECT_EQ(d.turn_meta[0].avail, (AvailMask{true, true, true, true, false, false}));
  const std::string golden = read_file(std::filesystem::path(DLM_TEST_DATA_DIR) / "golden_dialogue.txt");
  EXPECT_EQ(render_chat(d.messages), golden);
}

TEST(DialogueTrajectoryTest, MessageCountLawAndErrors) {
  TrajectoryRecord t = fixture_trajectory();
  EXPECT_THROW(build_dialogue_trajectory(t, 1), ArgumentError);
  t.rtg_norm.clear();
  EXPECT_THROW(build_dialogue_trajectory(t, 0), StateError);
}

TEST(DialogueTrajectoryTest, SingleTurnAndPrefix) {
  const DialogueTrajectory d = build_dialogue_trajectory(fixture_trajectory(), 0);
  const DialogueTrajectory s = single_turn_dialogue(d, 1);
  ASSERT_EQ(s.messages.size(), 3u);
  EXPECT_EQ(s.messages[1], d.messages[3]);
  EXPECT_EQ(s.messages[2], d.messages[4]);
  EXPECT_EQ(s.turn_meta[0].action, Action::kLoad);
  EXPECT_EQ(turn_prefix(d, 1).messages.size(), 3u);
  EXPECT_THROW(single_turn_dialogue(d, 2), ArgumentError);
}

TEST(DialogueTrajectoryTest, JsonRoundTrip) {
  const DialogueTrajectory d = build_dialogue_trajectory(fixture_trajectory(), 0);
  const nlohmann::json j = d;
  EXPECT_TRUE(j.contains("messages"));
  EXPECT_TRUE(j["turn_meta"][0].contains("action_idx"));
  const DialogueTrajectory back = j.get<DialogueTrajectory>();
  EXPECT_EQ(back.messages, d.messages);
  EXPECT_EQ(back.turn_meta[1].rtg_norm, 1.0);
  EXPECT_EQ(back.turn_meta[0].avail, d.turn_meta[0].avail);
}

}  // namespace
}  // namespace dlm
