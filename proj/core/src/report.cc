// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

// Consolidated run report: verifies the manifest, then merges evaluation
// summaries and training logs into Markdown tables and curve CSVs.

#include <cstdio>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dlm/errors.h"
#include "dlm/hash.h"
#include "dlm/json_io.h"
#include "dlm/pipeline.h"

namespace dlm {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kModes = {"grpo", "sft", "bc", "random"};

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

// Training log without the wall-clock column.
std::string curve_csv(const fs::path& log) {
  const auto rows = read_csv(log);
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.size() && k < 3; ++k) out += (k ? "," : "") + r[k];
    out += '\n';
  }
  return out;
}

void verify_manifest(const RunLayout& run, const nlohmann::json& manifest) {
  for (const auto& [stage, body] : manifest.at("stages").items()) {
    if (stage == "report") continue;
    for (const auto& a : body.at("artifacts")) {
      const fs::path p = run.root / a.at("path").get<std::string>();
      if (!fs::exists(p)) throw IoError("manifest artifact missing: " + p.string());
      const std::string h = git_blob_hash_file(p);
      if (h != a.at("git_hash").get<std::string>()) {
        throw IoError("manifest hash mismatch for " + p.string() + ": recorded " +
                      a.at("git_hash").get<std::string>() + ", found " + h);
      }
    }
  }
}

using SectionOf = const EvalReport& (*)(const EvalSummary&);

using ModeEvals = std::vector<std::pair<std::string, const EvalSummary*>>;

void table(std::ostringstream& md, const ModeEvals& evals, SectionOf section, bool win_rate) {
  md << "| config |";
  for (const auto& [mode, _] : evals) md << ' ' << mode << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < evals.size(); ++i) md << "---|";
  md << '\n';
  const EvalReport& first = section(*evals.front().second);
  for (std::size_t c = 0; c < first.configs.size(); ++c) {
    md << "| " << first.configs[c].env_id << " |";
    for (const auto& [mode, s] : evals) {
      const ConfigResult& r = section(*s).configs.at(c);
      if (win_rate) {
        md << ' ' << fixed3(r.win_rate_mean) << " ± " << fixed3(r.win_rate_ci) << " |";
      } else {
        md << ' ' << fixed3(r.ood_rate) << " |";
      }
    }
    md << '\n';
  }
  if (win_rate) {
    md << "| mean |";
    for (const auto& [mode, s] : evals) md << ' ' << fixed3(section(*s).mean_win_rate()) << " |";
    md << '\n';
  }
  md << '\n';
}

}  // namespace

void cmd_report(const fs::path& run_dir) {
  const RunLayout run{run_dir};
  if (!fs::exists(run.manifest())) throw IoError("no manifest in run directory " + run_dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(read_file(run.manifest()));
  verify_manifest(run, manifest);

  std::map<std::string, EvalSummary> by_mode;
  std::vector<std::string> present;
  ModeEvals ordered;
  for (const auto& mode : kModes) {
    if (fs::exists(run.eval_json(mode))) {
      by_mode[mode] = nlohmann::json::parse(read_file(run.eval_json(mode))).get<EvalSummary>();
      present.push_back(mode);
    }
  }
  for (const auto& mode : present) ordered.emplace_back(mode, &by_mode[mode]);

  const fs::path out = run.report_dir();
  std::vector<fs::path> written;
  std::ostringstream win_csv, ood_csv;
  win_csv << "section,config,mode,win_rate_mean,win_rate_ci95,mean_length\n";
  ood_csv << "section,config,mode,ood_rate,unparseable,unavailable\n";
  for (const auto& mode : present) {
    const EvalSummary& s = by_mode[mode];
    for (const auto& [section, rep] : {std::pair<std::string, const EvalReport*>{"train", &s.train},
                                       std::pair<std::string, const EvalReport*>{"holdout", &s.holdout}}) {
      for (const auto& c : rep->configs) {
        win_csv << section << ',' << c.env_id << ',' << mode << ',' << format_double(c.win_rate_mean) << ','
                << format_double(c.win_rate_ci) << ',' << format_double(c.mean_length) << '\n';
        ood_csv << section << ',' << c.env_id << ',' << mode << ',' << format_double(c.ood_rate) << ','
                << c.unparseable << ',' << c.unavailable << '\n';
      }
    }
  }
  write_file(out / "win_rates.csv", win_csv.str());
  write_file(out / "ood_rates.csv", ood_csv.str());
  written.push_back(out / "win_rates.csv");
  written.push_back(out / "ood_rates.csv");
  for (const std::string stage : {"sft", "bc", "grpo"}) {
    if (!fs::exists(run.train_log(stage))) continue;
    const fs::path curve = out / (stage + "_curve.csv");
    write_file(curve, stage == "grpo" ? read_file(run.train_log(stage)) : curve_csv(run.train_log(stage)));
    written.push_back(curve);
  }

  std::ostringstream md;
  md << "# Run report\n\n";
  if (manifest.contains("config_hash")) md << "Config hash: `" << manifest["config_hash"].get<std::string>() << "`\n\n";
  if (fs::exists(run.stats())) {
    md << "## Dataset\n\n";
    const auto rows = read_csv(run.stats());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      md << '|';
      for (const auto& f : rows[i]) md << ' ' << f << " |";
      md << '\n';
      if (i == 0) {
        md << '|';
        for (std::size_t k = 0; k < rows[i].size(); ++k) md << "---|";
        md << '\n';
      }
    }
    md << '\n';
  }
  if (fs::exists(run.filter_summary())) {
    const auto f = nlohmann::json::parse(read_file(run.filter_summary()));
    md << "## OOD filter\n\n"
       << "Retained " << f.at("retained").get<long long>() << " of " << f.at("total_turns").get<long long>()
       << " turns (" << fixed3(f.at("retention_rate").get<double>()) << "): "
       << f.at("mismatch").get<long long>() << " mismatch, " << f.at("unavailable").get<long long>()
       << " unavailable.\n\n";
  }
  if (!ordered.empty()) {
    md << "## Win rate, training configs (mean ± 95% CI over seeds)\n\n";
    const SectionOf train = [](const EvalSummary& s) -> const EvalReport& { return s.train; };
    const SectionOf holdout = [](const EvalSummary& s) -> const EvalReport& { return s.holdout; };
    table(md, ordered, train, true);
    if (!ordered.front().second->holdout.configs.empty()) {
      md << "## Win rate, zero-shot holdout configs\n\n";
      table(md, ordered, holdout, true);
    }
    md << "## Rollout OOD rate, training configs\n\n";
    table(md, ordered, train, false);
    if (!ordered.front().second->holdout.configs.empty()) {
      md << "## Rollout OOD rate, zero-shot holdout configs\n\n";
      table(md, ordered, holdout, false);
    }
    if (present.size() == kModes.size()) {
      const double g = by_mode["grpo"].train.mean_win_rate();
      const double s = by_mode["sft"].train.mean_win_rate();
      const double b = by_mode["bc"].train.mean_win_rate();
      const double r = by_mode["random"].train.mean_win_rate();
      const bool holds = g >= s && s >= b && b >= r;
      md << "## Ordering\n\nMean training win rate grpo " << fixed3(g) << ", sft " << fixed3(s) << ", bc "
         << fixed3(b) << ", random " << fixed3(r) << ": grpo >= sft >= bc >= random "
         << (holds ? "holds" : "does not hold") << ".\n";
    }
  }
  const std::string text = md.str();
  write_file(out / "report.md", text);
  written.push_back(out / "report.md");

  nlohmann::json m = manifest;
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& p : written) {
    arts.push_back({{"path", fs::relative(p, run.root).generic_string()},
                    {"git_hash", git_blob_hash_file(p)},
                    {"stable_hash", stable_artifact_hash(p)}});
  }
  m["stages"]["report"] = {{"artifacts", arts}, {"info", nlohmann::json::object()}};
  m["content_hash"] = manifest_content_hash(m);
  write_file(run.manifest(), dump_json(m) + "\n");
  spdlog::info("report: wrote {}", (out / "report.md").string());
}

}  // namespace dlm
