// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>

#include "dlm/errors.h"
#include "dlm/json_io.h"

namespace dlm {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

constexpr char kMagic[8] = {'D', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_doubles(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const OptimizerState* optimizer, const nlohmann::json& metadata) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout().tensors) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  }
  nlohmann::json header = {{"format", "dlm-checkpoint"},
                           {"model_config", params.config()},
                           {"dtype", "float64-le"},
                           {"num_values", params.data().size()},
                           {"tensors", tensors},
                           {"has_optimizer", optimizer != nullptr},
                           {"optimizer_step", optimizer != nullptr ? optimizer->step : 0},
                           {"metadata", metadata}};
  const std::string header_text = dump_json(header);

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  put_doubles(out, params.data());
  if (optimizer != nullptr) {
    put_doubles(out, optimizer->m);
    put_doubles(out, optimizer->v);
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError(path.string() + ": not a checkpoint file");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = in.get<std::uint64_t>();
  const nlohmann::json header = nlohmann::json::parse(in.get_string(header_len));

  Checkpoint ck;
  ck.params = Parameters(header.at("model_config").get<ModelConfig>());
  if (header.at("num_values").get<std::size_t>() != ck.params.data().size()) {
    throw FormatError("checkpoint tensor count does not match its model config");
  }
  in.get_doubles(ck.params.data());
  if (header.at("has_optimizer").get<bool>()) {
    OptimizerState s = make_optimizer_state(ck.params);
    s.step = header.at("optimizer_step").get<std::int64_t>();
    in.get_doubles(s.m);
    in.get_doubles(s.v);
    ck.optimizer = std::move(s);
  }
  if (!in.at_end()) throw FormatError("trailing bytes in checkpoint");
  ck.metadata = header.value("metadata", nlohmann::json::object());
  return ck;
}

}  // namespace dlm
