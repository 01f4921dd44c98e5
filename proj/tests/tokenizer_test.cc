// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/tokenizer.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "dlm/collect.h"
#include "dlm/errors.h"
#include "dlm/pipeline.h"
#include "dlm/rng.h"
#include "support/test_support.h"

namespace dlm {
namespace {

std::vector<EnvConfig> all_envs() { return testing::all_default_envs(); }

Vocabulary default_vocab() { return Vocabulary::build(VocabBounds::from_configs(all_envs())); }

DialogueTrajectory expert_dialogue(const EnvConfig& cfg, std::uint64_t seed, int agent) {
  const ForageEnv env(cfg);
  std::vector<TrajectoryRecord> data = {rollout_expert(env, seed, 0, 0.95)};
  data.push_back(rollout_expert(env, seed + 1, 1, 0.95));
  data = normalize_rtg(data);
  return build_dialogue_trajectory(data[0], agent);
}

TEST(VocabularyTest, SpecialIdsAndDeterminism) {
  const Vocabulary v = default_vocab();
  EXPECT_EQ(v.id("<|pad|>"), kPadId);
  EXPECT_EQ(v.id("<|begin|>"), kBeginId);
  EXPECT_EQ(v.id("<|system|>"), kSystemId);
  EXPECT_EQ(v.id("<|user|>"), kUserId);
  EXPECT_EQ(v.id("<|assistant|>"), kAssistantId);
  EXPECT_EQ(v.id("<|eot|>"), kEotId);
  EXPECT_EQ(v, default_vocab());
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_THROW(v.id("zebra"), ArgumentError);
  EXPECT_THROW(v.token(v.size()), ArgumentError);
}

TEST(VocabularyTest, IntegerRangeFollowsGrammar) {
  VocabBounds b;
  b.max_width = 7;
  b.max_height = 7;
  b.max_sight = 2;
  b.max_level = 3;
  b.max_agents = 3;
  b.max_foods = 2;
  const Vocabulary v = Vocabulary::build(b);
  EXPECT_TRUE(v.contains("6"));
  EXPECT_FALSE(v.contains("7"));
  EXPECT_TRUE(v.contains("-2"));
  EXPECT_FALSE(v.contains("-3"));
  b.max_level = 7;
  EXPECT_TRUE(Vocabulary::build(b).contains("7"));
}

TEST(VocabularyTest, JsonRoundTrip) {
  const Vocabulary v = default_vocab();
  EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);
}

TEST(EncodeTest, SingleTokens) {
  const Vocabulary v = default_vocab();
  EXPECT_EQ(encode("stay", v), std::vector<int>({v.id("stay")}));
  EXPECT_EQ(encode("<|eot|>", v), std::vector<int>({kEotId}));
  EXPECT_EQ(decode({kEotId}, v), "<|eot|>");
  EXPECT_EQ(decode(encode("move north one step", v), v), "move north one step");
}

TEST(EncodeTest, UnknownFragmentIsNamed) {
  const Vocabulary v = default_vocab();
  try {
    encode("move northeast one step", v);
    FAIL() << "expected UnknownTokenError";
  } catch (const UnknownTokenError& e) {
    EXPECT_EQ(e.fragment(), "northeast");
  }
  EXPECT_THROW(decode({v.size()}, v), ArgumentError);
  EXPECT_THROW(decode({-1}, v), ArgumentError);
}

TEST(EncodeTest, RandomObservationsRoundTrip) {
  const Vocabulary v = default_vocab();
  for (const std::string& text : testing::random_observation_texts(1000, 99)) {
    ASSERT_EQ(decode(encode(text, v), v), text);
  }
  for (const auto& cfg : all_envs()) {
    const std::string sys = verbalize_system(cfg.env_id);
    EXPECT_EQ(decode(encode(sys, v), v), sys);
  }
}

TEST(EncodeTest, RenderedDialogueRoundTrip) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_train_envs()[1], 3, 2);
  const std::string text = render_chat(d.messages);
  EXPECT_EQ(decode(encode(text, v), v), text);
}

TEST(EncodeDialogueTest, MaskMarksRepliesAndEot) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_train_envs()[0], 11, 0);
  const TokenizedSample s = encode_dialogue(d, v, 100000);
  EXPECT_EQ(s.ids, encode(render_chat(d.messages), v));
  std::size_t expected_mask = 0;
  std::string expected_text;
  for (std::size_t t = 0; t < d.num_turns(); ++t) {
    expected_mask += encode(verbalize_action(d.turn_meta[t].action), v).size() + 1;
    expected_text += verbalize_action(d.turn_meta[t].action) + "<|eot|>";
  }
  std::vector<int> masked;
  for (std::size_t p = 0; p < s.ids.size(); ++p) {
    if (s.label_mask[p]) masked.push_back(s.ids[p]);
  }
  EXPECT_EQ(masked.size(), expected_mask);
  // Decoding per reply keeps the grammar's spacing.
  std::string got;
  std::vector<int> cur;
  for (int id : masked) {
    if (id == kEotId) {
      got += decode(cur, v) + "<|eot|>";
      cur.clear();
    } else {
      cur.push_back(id);
    }
  }
  EXPECT_EQ(got, expected_text);
  EXPECT_EQ(s.source, (SampleSource{d.episode_id, d.agent_id}));
}

TEST(EncodeDialogueTest, TruncationKeepsMostRecentTurns) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_train_envs()[2], 21, 1);
  ASSERT_GT(d.num_turns(), 4u);
  const TokenizedSample full = encode_dialogue(d, v, 100000);
  for (int len : {90, 150, 240, 384}) {
    const TokenizedSample s = encode_dialogue(d, v, len);
    ASSERT_LE(s.ids.size(), static_cast<std::size_t>(len));
    // System block then a suffix of the full sequence made of whole turns.
    const std::vector<int> system = encode(render_chat({d.messages[0]}), v);
    ASSERT_TRUE(std::equal(system.begin(), system.end(), s.ids.begin()));
    const std::size_t tail = s.ids.size() - system.size();
    EXPECT_TRUE(std::equal(s.ids.begin() + system.size(), s.ids.end(), full.ids.end() - tail));
    EXPECT_EQ(s.ids[system.size()], kUserId);
  }
}

TEST(EncodeDialogueTest, ShortLimitKeepsOnlyLatestTurn) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_train_envs()[0], 5, 1);
  const std::size_t n = d.num_turns();
  ASSERT_GE(n, 2u);
  const std::vector<int> head = encode(render_chat({d.messages[0]}), v);
  const DialogueTrajectory last = single_turn_dialogue(d, n - 1);
  const int one_turn = static_cast<int>(encode(render_chat(last.messages), v).size());
  const TokenizedSample s = encode_dialogue(d, v, one_turn);
  EXPECT_EQ(s.ids, encode(render_chat(last.messages), v));
  EXPECT_THROW(encode_dialogue(d, v, static_cast<int>(head.size()) + 3), SampleTooLongError);
}

TEST(EncodePromptTest, EndsWithAssistantMarker) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_train_envs()[0], 8, 0);
  std::vector<ChatMessage> h(d.messages.begin(), d.messages.begin() + 4);
  const std::vector<int> p = encode_prompt(h, v, 10000);
  EXPECT_EQ(p, encode(render_chat(h, true), v));
  EXPECT_EQ(p[p.size() - 2], kAssistantId);
  EXPECT_EQ(p.back(), v.id("\n"));
  const std::vector<int> tight = encode_prompt(h, v, static_cast<int>(p.size()) - 1);
  std::vector<ChatMessage> latest = {h[0], h[3]};
  EXPECT_EQ(tight, encode(render_chat(latest, true), v));
  EXPECT_THROW(encode_prompt(h, v, 10), SampleTooLongError);
}

TEST(WindowTest, EveryTurnInExactlyOneWindow) {
  const Vocabulary v = default_vocab();
  const DialogueTrajectory d = expert_dialogue(default_holdout_envs()[1], 2, 2);
  const auto windows = split_into_windows(d, v, 200);
  std::size_t turns = 0;
  for (const auto& w : windows) {
    EXPECT_EQ(w.messages[0], d.messages[0]);
    EXPECT_LE(encode_dialogue(w, v, 100000).ids.size(), 200u);
    for (std::size_t t = 0; t < w.num_turns(); ++t, ++turns) {
      EXPECT_EQ(w.messages[1 + 2 * t], d.messages[1 + 2 * turns]);
      EXPECT_EQ(w.turn_meta[t].action, d.turn_meta[turns].action);
    }
  }
  EXPECT_EQ(turns, d.num_turns());
}

TokenizedSample sample_of_length(std::size_t n, int id) {
  TokenizedSample s;
  s.ids.assign(n, 7);
  s.label_mask.assign(n, false);
  s.label_mask.back() = true;
  s.source = {id, 0};
  return s;
}

TEST(PackTest, ExactFits) {
  auto rows = pack({sample_of_length(64, 0)}, 64);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(std::count(rows[0].segment_ids.begin(), rows[0].segment_ids.end(), -1), 0);
  rows = pack({sample_of_length(32, 0), sample_of_length(32, 1)}, 64);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].sources.size(), 2u);
  EXPECT_EQ(rows[0].segment_ids[31], 0);
  EXPECT_EQ(rows[0].segment_ids[32], 1);
  EXPECT_THROW(pack({sample_of_length(65, 0)}, 64), ArgumentError);
}

TEST(PackTest, BoundsAndConservation) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 128;
    std::vector<TokenizedSample> samples;
    std::map<int, int> before;
    std::size_t total = 0;
    const int n = 1 + static_cast<int>(rng.below(40));
    for (int i = 0; i < n; ++i) {
      TokenizedSample s = sample_of_length(2 + rng.below(len - 1), i);
      for (auto& id : s.ids) id = 6 + static_cast<int>(rng.below(20));
      for (int id : s.ids) ++before[id];
      total += s.ids.size();
      samples.push_back(std::move(s));
    }
    const auto rows = pack(samples, len);
    EXPECT_LE(rows.size(), samples.size());
    EXPECT_GE(rows.size(), (total + len - 1) / len);
    std::map<int, int> after;
    for (const auto& r : rows) {
      ASSERT_EQ(r.ids.size(), static_cast<std::size_t>(len));
      for (std::size_t p = 0; p < r.ids.size(); ++p) {
        if (r.segment_ids[p] < 0) {
          EXPECT_EQ(r.ids[p], kPadId);
          EXPECT_FALSE(r.label_mask[p]);
        } else {
          ++after[r.ids[p]];
        }
      }
    }
    EXPECT_EQ(before, after);
  }
}

TEST(TokenizedSampleTest, JsonRoundTrip) {
  const TokenizedSample s = sample_of_length(5, 3);
  const nlohmann::json j = s;
  const TokenizedSample back = j.get<TokenizedSample>();
  EXPECT_EQ(back.ids, s.ids);
  EXPECT_EQ(back.label_mask, s.label_mask);
  EXPECT_EQ(back.source, s.source);
}

}  // namespace
}  // namespace dlm
