// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// dlm collect|sft|filter|grpo|eval|report|run --config <path>
//     [--checkpoint <path>] [--mode <m>] [--out <dir>]

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dlm/errors.h"
#include "dlm/pipeline.h"

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string mode;
  std::string out;
};

void add_common(CLI::App* cmd, Options& o, bool needs_config = true) {
  auto* c = cmd->add_option("--config", o.config, "Pipeline configuration (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--out", o.out, "Run directory (overrides output_dir)");
}

dlm::PipelineConfig load(const Options& o) {
  dlm::PipelineConfig cfg = dlm::load_pipeline_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

std::optional<std::filesystem::path> checkpoint(const Options& o) {
  if (o.checkpoint.empty()) return std::nullopt;
  return std::filesystem::path(o.checkpoint);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue-style language-model policies for cooperative foraging"};
  app.require_subcommand(1);
  Options o;

  auto* collect = app.add_subcommand("collect", "Collect expert trajectories and split them");
  add_common(collect, o);
  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning (--mode sft|bc)");
  add_common(sft, o);
  sft->add_option("--mode", o.mode, "sft (history) or bc (single turn)")->check(CLI::IsMember({"sft", "bc"}));
  sft->add_option("--checkpoint", o.checkpoint, "Resume from a checkpoint with optimizer state");
  auto* filter = app.add_subcommand("filter", "Filter OOD-prone samples from the GRPO split");
  add_common(filter, o);
  filter->add_option("--checkpoint", o.checkpoint, "Policy checkpoint (default: the run's SFT model)");
  auto* grpo = app.add_subcommand("grpo", "Group relative policy optimization on the filtered samples");
  add_common(grpo, o);
  grpo->add_option("--checkpoint", o.checkpoint, "Starting checkpoint (default: the run's SFT model)");
  auto* eval = app.add_subcommand("eval", "Roll out a policy on training and holdout configs");
  add_common(eval, o);
  eval->add_option("--mode", o.mode, "sft, grpo, bc or random")
      ->required()
      ->check(CLI::IsMember({"sft", "grpo", "bc", "random"}));
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: the run's model for --mode)");
  auto* report = app.add_subcommand("report", "Write the consolidated Markdown and CSV report");
  add_common(report, o, false);
  auto* run = app.add_subcommand("run", "Run every stage in order");
  add_common(run, o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect->parsed()) {
      dlm::cmd_collect(load(o));
    } else if (sft->parsed()) {
      dlm::cmd_sft(load(o), o.mode.empty() ? "sft" : o.mode, checkpoint(o));
    } else if (filter->parsed()) {
      dlm::cmd_filter(load(o), checkpoint(o));
    } else if (grpo->parsed()) {
      dlm::cmd_grpo(load(o), checkpoint(o));
    } else if (eval->parsed()) {
      dlm::cmd_eval(load(o), o.mode, checkpoint(o));
    } else if (report->parsed()) {
      if (o.out.empty() && o.config.empty()) throw dlm::ArgumentError("report needs --out or --config");
      dlm::cmd_report(o.out.empty() ? std::filesystem::path(load(o).output_dir) : std::filesystem::path(o.out));
    } else if (run->parsed()) {
      dlm::cmd_run(load(o));
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
