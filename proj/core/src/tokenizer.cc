// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <set>

#include "dlm/errors.h"

namespace dlm {

namespace {

constexpr std::string_view kPunctuation = "(),.;:";

// Words of the fixed templates (system prompt, observation, actions).
constexpr std::string_view kTemplateWords[] = {
    "You",   "are",      "a",       "cooperative", "foraging", "agent", "on",   "the",
    "map",   "Work",     "with",    "your",        "team",     "to",    "collect", "all",
    "food",  "level",    "at",      "Visible",     "allies",   "relative", "none", "stay",
    "move",  "north",    "south",   "east",        "west",     "one",   "step",  "load",
    "adjacent",
};

bool is_marker(std::string_view t) { return t.size() >= 4 && t.substr(0, 2) == "<|"; }

// Splits an environment id at character-class boundaries:
// "forage-7x7-2p2f" -> forage - 7 x 7 - 2 p 2 f.
std::vector<std::string> id_pieces(std::string_view id) {
  auto cls = [](char c) {
    if (std::isdigit(static_cast<unsigned char>(c))) return 0;
    if (std::isalpha(static_cast<unsigned char>(c))) return 1;
    return 2;
  };
  std::vector<std::string> out;
  std::string cur;
  for (char c : id) {
    if (!cur.empty() && (cls(c) != cls(cur.back()) || cls(c) == 2)) {
      out.push_back(cur);
      cur.clear();
    }
    cur += c;
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool space_between(const std::string& a, const std::string& b) {
  if (is_marker(a) || is_marker(b) || a == "\n" || b == "\n") return false;
  if (b.rfind("##", 0) == 0) return false;
  if (b.size() == 1 && std::string_view("),.;:").find(b[0]) != std::string_view::npos) return false;
  if (a == "(" || a == ",") return false;
  return true;
}

}  // namespace

VocabBounds VocabBounds::from_configs(const std::vector<EnvConfig>& configs) {
  VocabBounds b;
  for (const auto& c : configs) {
    b.max_width = std::max(b.max_width, c.width);
    b.max_height = std::max(b.max_height, c.height);
    b.max_sight = std::max(b.max_sight, c.sight_radius);
    b.max_agents = std::max(b.max_agents, c.n_agents);
    b.max_foods = std::max(b.max_foods, c.n_foods);
    for (int l : c.agent_levels) b.max_level = std::max(b.max_level, l);
    for (int l : c.food_levels) b.max_level = std::max(b.max_level, l);
    if (std::find(b.env_ids.begin(), b.env_ids.end(), c.env_id) == b.env_ids.end()) {
      b.env_ids.push_back(c.env_id);
    }
  }
  return b;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : id_to_token_(std::move(tokens)) {
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary token: " + id_to_token_[i]);
    }
    max_len_ = std::max(max_len_, id_to_token_[i].size());
  }
}

Vocabulary Vocabulary::build(const VocabBounds& bounds) {
  std::set<std::string> words;
  words.insert("\n");
  for (char c : kPunctuation) words.insert(std::string(1, c));
  for (std::string_view w : kTemplateWords) words.insert(std::string(w));

  auto add_range = [&words](int lo, int hi) {
    for (int v = lo; v <= hi; ++v) words.insert(std::to_string(v));
  };
  add_range(0, bounds.max_width - 1);
  add_range(0, bounds.max_height - 1);
  const int reach_x = std::min(bounds.max_sight, bounds.max_width - 1);
  const int reach_y = std::min(bounds.max_sight, bounds.max_height - 1);
  add_range(-reach_x, reach_x);
  add_range(-reach_y, reach_y);
  add_range(1, bounds.max_level);
  add_range(0, std::max(bounds.max_agents, bounds.max_foods) - 1);

  for (const auto& id : bounds.env_ids) {
    const auto pieces = id_pieces(id);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      words.insert(i == 0 ? pieces[i] : "##" + pieces[i]);
    }
  }

  std::vector<std::string> tokens = {std::string(kPadMarker),       std::string(kBeginMarker),
                                     std::string(kSystemMarker),    std::string(kUserMarker),
                                     std::string(kAssistantMarker), std::string(kEotMarker)};
  tokens.insert(tokens.end(), words.begin(), words.end());  // std::set is byte-sorted
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::from_json(const nlohmann::json& tokens) {
  Vocabulary v(tokens.get<std::vector<std::string>>());
  const std::string_view specials[] = {kPadMarker,       kBeginMarker, kSystemMarker,
                                       kUserMarker,      kAssistantMarker, kEotMarker};
  for (int i = 0; i < kNumSpecials; ++i) {
    if (v.size() <= i || v.id_to_token_[i] != specials[i]) {
      throw FormatError("vocabulary file does not start with the special tokens");
    }
  }
  return v;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json(id_to_token_); }

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.find(std::string(token)) != token_to_id_.end();
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) throw ArgumentError("token not in vocabulary: " + std::string(token));
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ArgumentError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

namespace {

void encode_fragment(std::string_view frag, const Vocabulary& vocab, std::vector<int>& out) {
  std::size_t pos = 0;
  std::string candidate;
  while (pos < frag.size()) {
    const bool continuation = pos > 0;
    std::size_t len = std::min(frag.size() - pos, vocab.max_token_length());
    bool matched = false;
    for (; len > 0; --len) {
      candidate.assign(continuation ? "##" : "");
      candidate.append(frag.substr(pos, len));
      if (vocab.contains(candidate)) {
        out.push_back(vocab.id(candidate));
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) throw UnknownTokenError(std::string(frag));
  }
}

}  // namespace

std::vector<int> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ') {
      ++i;
      continue;
    }
    if (c == '\n') {
      out.push_back(vocab.id("\n"));
      ++i;
      continue;
    }
    if (kPunctuation.find(c) != std::string_view::npos) {
      out.push_back(vocab.id(std::string_view(&text[i], 1)));
      ++i;
      continue;
    }
    if (text.substr(i, 2) == "<|") {
      const std::size_t end = text.find("|>", i + 2);
      if (end == std::string_view::npos) throw UnknownTokenError(std::string(text.substr(i)));
      const std::string_view marker = text.substr(i, end + 2 - i);
      if (!vocab.contains(marker)) throw UnknownTokenError(std::string(marker));
      out.push_back(vocab.id(marker));
      i = end + 2;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\n' &&
           kPunctuation.find(text[j]) == std::string_view::npos && text.substr(j, 2) != "<|") {
      ++j;
    }
    encode_fragment(text.substr(i, j - i), vocab, out);
    i = j;
  }
  return out;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  const std::string* prev = nullptr;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (prev != nullptr && space_between(*prev, tok)) out += ' ';
    if (tok.rfind("##", 0) == 0) {
      out.append(tok, 2);
    } else {
      out += tok;
    }
    prev = &tok;
  }
  return out;
}

std::vector<int> encode_message(const ChatMessage& message, const Vocabulary& vocab) {
  std::vector<int> ids;
  switch (message.role) {
    case Role::kSystem: ids.push_back(kSystemId); break;
    case Role::kUser: ids.push_back(kUserId); break;
    case Role::kAssistant: ids.push_back(kAssistantId); break;
  }
  const int newline = vocab.id("\n");
  ids.push_back(newline);
  const auto body = encode(message.content, vocab);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(kEotId);
  ids.push_back(newline);
  return ids;
}

void to_json(nlohmann::json& j, const TokenizedSample& s) {
  std::vector<int> mask(s.label_mask.begin(), s.label_mask.end());
  j = nlohmann::json{{"ids", s.ids},
                     {"label_mask", mask},
                     {"source", {{"episode_id", s.source.episode_id}, {"agent_id", s.source.agent_id}}}};
}

void from_json(const nlohmann::json& j, TokenizedSample& s) {
  s.ids = j.at("ids").get<std::vector<int>>();
  const auto mask = j.at("label_mask").get<std::vector<int>>();
  s.label_mask.assign(mask.begin(), mask.end());
  s.source.episode_id = j.at("source").at("episode_id").get<std::int64_t>();
  s.source.agent_id = j.at("source").at("agent_id").get<int>();
}

namespace {

struct EncodedTurn {
  std::vector<int> ids;
  std::vector<bool> mask;
};

// System block (with leading begin) plus one block per user/assistant turn.
std::pair<std::vector<int>, std::vector<EncodedTurn>> encode_blocks(const DialogueTrajectory& d,
                                                                     const Vocabulary& vocab) {
  check_message_order(d.messages);
  if (d.messages.empty()) throw FormatError("dialogue has no system message");
  if (d.messages.size() % 2 == 0) throw FormatError("dialogue ends without an assistant reply");
  std::vector<int> head = {kBeginId};
  const auto sys = encode_message(d.messages[0], vocab);
  head.insert(head.end(), sys.begin(), sys.end());

  std::vector<EncodedTurn> turns;
  for (std::size_t m = 1; m + 1 < d.messages.size(); m += 2) {
    EncodedTurn turn;
    turn.ids = encode_message(d.messages[m], vocab);
    turn.mask.assign(turn.ids.size(), false);
    const auto reply = encode_message(d.messages[m + 1], vocab);
    // reply = [assistant, \n, content..., eot, \n]; train content and eot.
    for (std::size_t k = 0; k < reply.size(); ++k) {
      turn.ids.push_back(reply[k]);
      turn.mask.push_back(k >= 2 && k + 1 < reply.size());
    }
    turns.push_back(std::move(turn));
  }
  return {std::move(head), std::move(turns)};
}

}  // namespace

TokenizedSample encode_dialogue(const DialogueTrajectory& d, const Vocabulary& vocab, int max_len) {
  auto [head, turns] = encode_blocks(d, vocab);
  std::size_t total = head.size();
  for (const auto& t : turns) total += t.ids.size();
  std::size_t first = 0;
  while (total > static_cast<std::size_t>(max_len) && first + 1 < turns.size()) {
    total -= turns[first].ids.size();
    ++first;
  }
  if (total > static_cast<std::size_t>(max_len)) {
    throw SampleTooLongError("episode " + std::to_string(d.episode_id) + " agent " +
                             std::to_string(d.agent_id) + ": a single turn needs " +
                             std::to_string(total) + " tokens, limit " + std::to_string(max_len));
  }
  TokenizedSample s;
  s.source = {d.episode_id, d.agent_id};
  s.ids = std::move(head);
  s.label_mask.assign(s.ids.size(), false);
  for (std::size_t t = first; t < turns.size(); ++t) {
    s.ids.insert(s.ids.end(), turns[t].ids.begin(), turns[t].ids.end());
    s.label_mask.insert(s.label_mask.end(), turns[t].mask.begin(), turns[t].mask.end());
  }
  return s;
}

std::vector<int> encode_prompt(const std::vector<ChatMessage>& messages, const Vocabulary& vocab,
                               int budget) {
  check_message_order(messages, true);
  std::vector<int> ids = {kBeginId};
  const auto sys = encode_message(messages[0], vocab);
  ids.insert(ids.end(), sys.begin(), sys.end());
  std::vector<std::vector<int>> turns;
  for (std::size_t m = 1; m + 1 < messages.size(); m += 2) {
    auto turn = encode_message(messages[m], vocab);
    const auto reply = encode_message(messages[m + 1], vocab);
    turn.insert(turn.end(), reply.begin(), reply.end());
    turns.push_back(std::move(turn));
  }
  auto last = encode_message(messages.back(), vocab);
  last.push_back(kAssistantId);
  last.push_back(vocab.id("\n"));

  std::size_t total = ids.size() + last.size();
  for (const auto& t : turns) total += t.size();
  std::size_t first = 0;
  while (total > static_cast<std::size_t>(budget) && first < turns.size()) {
    total -= turns[first].size();
    ++first;
  }
  if (total > static_cast<std::size_t>(budget)) {
    throw SampleTooLongError("generation prompt needs " + std::to_string(total) + " tokens, limit " +
                             std::to_string(budget));
  }
  for (std::size_t t = first; t < turns.size(); ++t) ids.insert(ids.end(), turns[t].begin(), turns[t].end());
  ids.insert(ids.end(), last.begin(), last.end());
  return ids;
}

std::vector<DialogueTrajectory> split_into_windows(const DialogueTrajectory& d,
                                                   const Vocabulary& vocab, int max_len) {
  auto [head, turns] = encode_blocks(d, vocab);
  std::vector<DialogueTrajectory> windows;
  std::size_t t = 0;
  while (t < turns.size()) {
    DialogueTrajectory w;
    w.episode_id = d.episode_id;
    w.agent_id = d.agent_id;
    w.messages.push_back(d.messages[0]);
    std::size_t used = head.size();
    const std::size_t begin = t;
    while (t < turns.size() && (t == begin || used + turns[t].ids.size() <= static_cast<std::size_t>(max_len))) {
      used += turns[t].ids.size();
      w.messages.push_back(d.messages[1 + 2 * t]);
      w.messages.push_back(d.messages[2 + 2 * t]);
      w.turn_meta.push_back(d.turn_meta[t]);
      ++t;
    }
    if (used > static_cast<std::size_t>(max_len)) {
      throw SampleTooLongError("episode " + std::to_string(d.episode_id) +
                               ": a single turn exceeds the length limit");
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<PackedRow> pack(const std::vector<TokenizedSample>& samples, int max_len) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (samples[i].ids.size() > static_cast<std::size_t>(max_len)) {
      throw ArgumentError("sample longer than the packing length");
    }
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&samples](std::size_t a, std::size_t b) {
    return samples[a].ids.size() > samples[b].ids.size();
  });

  std::vector<PackedRow> rows;
  for (std::size_t idx : order) {
    const TokenizedSample& s = samples[idx];
    PackedRow* target = nullptr;
    for (auto& r : rows) {
      if (r.ids.size() + s.ids.size() <= static_cast<std::size_t>(max_len)) {
        target = &r;
        break;
      }
    }
    if (target == nullptr) {
      rows.emplace_back();
      target = &rows.back();
    }
    const int seg = static_cast<int>(target->sources.size());
    target->ids.insert(target->ids.end(), s.ids.begin(), s.ids.end());
    target->label_mask.insert(target->label_mask.end(), s.label_mask.begin(), s.label_mask.end());
    target->segment_ids.insert(target->segment_ids.end(), s.ids.size(), seg);
    target->sources.push_back(s.source);
  }
  for (auto& r : rows) {
    const std::size_t pad = static_cast<std::size_t>(max_len) - r.ids.size();
    r.ids.insert(r.ids.end(), pad, kPadId);
    r.label_mask.insert(r.label_mask.end(), pad, false);
    r.segment_ids.insert(r.segment_ids.end(), pad, -1);
  }
  return rows;
}

}  // namespace dlm
