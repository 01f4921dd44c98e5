// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DLM_HASH_H_
#define DLM_HASH_H_

#include <filesystem>
#include <string>
#include <string_view>

namespace dlm {

std::string sha256_hex(std::string_view data);

// Hash of a git blob object: sha1("blob <size>\0" + data).
std::string git_blob_hash(std::string_view data);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace dlm

#endif  // DLM_HASH_H_
