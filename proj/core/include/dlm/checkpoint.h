// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint container; byte layout in docs/checkpoint_format.md.

#ifndef DLM_CHECKPOINT_H_
#define DLM_CHECKPOINT_H_

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "dlm/model.h"

namespace dlm {

struct Checkpoint {
  Parameters params;
  std::optional<OptimizerState> optimizer;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const OptimizerState* optimizer = nullptr,
                     const nlohmann::json& metadata = nlohmann::json::object());

// FormatError on a bad magic, version or truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dlm

#endif  // DLM_CHECKPOINT_H_
