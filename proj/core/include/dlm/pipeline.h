// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Stage orchestration for the command-line tool. Every stage reads its
// inputs from and writes its outputs under one run directory and records
// them in manifest.json.

#ifndef DLM_PIPELINE_H_
#define DLM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/align.h"
#include "dlm/collect.h"
#include "dlm/env.h"
#include "dlm/model.h"
#include "dlm/policy.h"
#include "dlm/train_sft.h"

namespace dlm {

struct EvalSettings {
  int episodes_per_cfg = 50;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SamplingConfig sampling;
  int max_retries = 10;
  int max_new = 16;
};

void to_json(nlohmann::json& j, const EvalSettings& s);
void from_json(const nlohmann::json& j, EvalSettings& s);

struct PipelineConfig {
  std::uint64_t global_seed = 2026;
  std::string output_dir = "runs/default";
  std::vector<EnvConfig> train_envs;
  std::vector<EnvConfig> holdout_envs;
  CollectConfig collect;
  ModelConfig model;  // vocab_size is filled in from the vocabulary
  SftConfig sft;
  SftConfig bc;
  GrpoConfig grpo;
  EvalSettings eval;

  // ConfigError on invalid sub-configs or holdout ids that overlap training ids.
  void validate() const;
};

std::vector<EnvConfig> default_train_envs();
std::vector<EnvConfig> default_holdout_envs();

// Missing keys take the defaults. Seeds that are not given explicitly are
// derived from global_seed.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Fixed locations inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path vocab() const { return root / "data" / "vocab.json"; }
  std::filesystem::path trajectories() const { return root / "data" / "trajectories.jsonl"; }
  std::filesystem::path d_sft() const { return root / "data" / "d_sft.jsonl"; }
  std::filesystem::path d_grpo() const { return root / "data" / "d_grpo.jsonl"; }
  std::filesystem::path dialogues_sft() const { return root / "data" / "dialogues_sft.jsonl"; }
  std::filesystem::path dialogues_grpo() const { return root / "data" / "dialogues_grpo.jsonl"; }
  std::filesystem::path stats() const { return root / "data" / "stats.csv"; }
  std::filesystem::path rtg_scale() const { return root / "data" / "rtg_scale.json"; }
  std::filesystem::path checkpoint(const std::string& stage) const { return root / stage / "model.ckpt"; }
  std::filesystem::path train_log(const std::string& stage) const { return root / stage / "train_log.csv"; }
  std::filesystem::path d_ood() const { return root / "filter" / "d_ood.jsonl"; }
  std::filesystem::path filter_summary() const { return root / "filter" / "summary.json"; }
  std::filesystem::path eval_json(const std::string& mode) const { return root / "eval" / (mode + ".json"); }
  std::filesystem::path eval_csv(const std::string& mode) const { return root / "eval" / (mode + ".csv"); }
  std::filesystem::path report_dir() const { return root / "report"; }
};

struct EvalSummary {
  std::string mode;
  EvalReport train;
  EvalReport holdout;
};

void to_json(nlohmann::json& j, const EvalSummary& s);
void from_json(const nlohmann::json& j, EvalSummary& s);

void cmd_collect(const PipelineConfig& cfg);
// mode "sft" (dialogue history) or "bc" (single-turn). With `resume` the
// run continues from a checkpoint that carries optimizer state.
void cmd_sft(const PipelineConfig& cfg, const std::string& mode = "sft",
             const std::optional<std::filesystem::path>& resume = std::nullopt);
void cmd_filter(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
void cmd_grpo(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
// mode: sft | grpo | bc | random.
EvalSummary cmd_eval(const PipelineConfig& cfg, const std::string& mode,
                     const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
void cmd_report(const std::filesystem::path& run_dir);
// collect, sft, bc, filter, grpo, eval for every mode, report.
void cmd_run(const PipelineConfig& cfg);

// Content hash of the manifest: sha256 over the sorted (path, stable hash)
// pairs of every recorded artifact. Timestamps do not enter it.
std::string manifest_content_hash(const nlohmann::json& manifest);

// Git blob hash of a file; for CSV logs with a "seconds" column, the hash of
// the file with that column removed.
std::string stable_artifact_hash(const std::filesystem::path& path);

}  // namespace dlm

#endif  // DLM_PIPELINE_H_
