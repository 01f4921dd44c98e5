// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DLM_JSON_IO_H_
#define DLM_JSON_IO_H_

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dlm {

// Compact JSON with every floating-point number printed as %.17g, so values
// round-trip bit-exactly and byte output is stable across library versions.
std::string dump_json(const nlohmann::json& value);

std::string read_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_file(const std::filesystem::path& path, const std::string& contents);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

// Formats a double the same way dump_json does.
std::string format_double(double v);

}  // namespace dlm

#endif  // DLM_JSON_IO_H_
