// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Closed word-level vocabulary over the verbalizer grammar.
//
// Text is split on spaces; the punctuation characters `(),.;:`, the newline
// and the chat markers are standalone tokens. Each remaining fragment is
// matched greedily (longest first) against the vocabulary; pieces after the
// first one inside a fragment use "##"-prefixed continuation tokens, which is
// how environment ids such as "forage-7x7-2p2f" are spelled. Every integer
// literal the grammar can emit is a single token.

#ifndef DLM_TOKENIZER_H_
#define DLM_TOKENIZER_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dlm/dialogue.h"
#include "dlm/env.h"

namespace dlm {

// Fixed ids of the special tokens.
inline constexpr int kPadId = 0;
inline constexpr int kBeginId = 1;
inline constexpr int kSystemId = 2;
inline constexpr int kUserId = 3;
inline constexpr int kAssistantId = 4;
inline constexpr int kEotId = 5;
inline constexpr int kNumSpecials = 6;

inline constexpr std::string_view kPadMarker = "<|pad|>";

// Upper bounds on every quantity the verbalizer can print.
struct VocabBounds {
  int max_width = 1;
  int max_height = 1;
  int max_sight = 1;
  int max_level = 1;
  int max_agents = 1;
  int max_foods = 1;
  std::vector<std::string> env_ids;

  static VocabBounds from_configs(const std::vector<EnvConfig>& configs);
};

class Vocabulary {
 public:
  static Vocabulary build(const VocabBounds& bounds);
  // JSON array of tokens in id order.
  static Vocabulary from_json(const nlohmann::json& tokens);
  nlohmann::json to_json() const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(std::string_view token) const;
  // ArgumentError if absent.
  int id(std::string_view token) const;
  // ArgumentError if out of range.
  const std::string& token(int id) const;
  std::size_t max_token_length() const { return max_len_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::size_t max_len_ = 0;
};

// UnknownTokenError naming the fragment that cannot be matched.
std::vector<int> encode(std::string_view text, const Vocabulary& vocab);
// ArgumentError on an id outside the vocabulary.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

// "<|role|>\n{content}<|eot|>\n" as token ids.
std::vector<int> encode_message(const ChatMessage& message, const Vocabulary& vocab);

struct SampleSource {
  std::int64_t episode_id = 0;
  int agent_id = 0;
  friend bool operator==(const SampleSource&, const SampleSource&) = default;
};

struct TokenizedSample {
  std::vector<int> ids;
  std::vector<bool> label_mask;  // assistant content and its eot
  SampleSource source;
};

void to_json(nlohmann::json& j, const TokenizedSample& s);
void from_json(const nlohmann::json& j, TokenizedSample& s);

// Tokenizes render_chat(d.messages). Over `max_len`, whole turns are dropped
// from the front (after the system message) until it fits.
// SampleTooLongError if system prompt plus the last turn exceed `max_len`.
TokenizedSample encode_dialogue(const DialogueTrajectory& d, const Vocabulary& vocab, int max_len);

// Generation prompt for a history ending in a user message: the chat
// rendering plus "<|assistant|>\n". Whole turns are dropped from the front
// (after the system message) until it fits in `budget` tokens.
// SampleTooLongError if system prompt plus the last user message do not fit.
std::vector<int> encode_prompt(const std::vector<ChatMessage>& messages, const Vocabulary& vocab,
                               int budget);

// Splits a dialogue into consecutive turn windows that each fit in `max_len`
// once the system message is prepended. Every turn lands in exactly one window.
std::vector<DialogueTrajectory> split_into_windows(const DialogueTrajectory& d,
                                                   const Vocabulary& vocab, int max_len);

// One row of a packed minibatch, exactly max_len long.
struct PackedRow {
  std::vector<int> ids;
  std::vector<bool> label_mask;
  std::vector<int> segment_ids;  // -1 on padding
  std::vector<SampleSource> sources;
};

// First-fit-decreasing packing. ArgumentError if a sample exceeds max_len.
std::vector<PackedRow> pack(const std::vector<TokenizedSample>& samples, int max_len);

}  // namespace dlm

#endif  // DLM_TOKENIZER_H_
