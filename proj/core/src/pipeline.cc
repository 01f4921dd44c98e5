// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlm/pipeline.h"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dlm/checkpoint.h"
#include "dlm/dialogue.h"
#include "dlm/errors.h"
#include "dlm/hash.h"
#include "dlm/json_io.h"
#include "dlm/rng.h"
#include "dlm/tokenizer.h"

namespace dlm {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const EvalSettings& s) {
  j = {{"episodes_per_cfg", s.episodes_per_cfg},
       {"seeds", s.seeds},
       {"top_k", s.sampling.top_k},
       {"top_p", s.sampling.top_p},
       {"temperature", s.sampling.temperature},
       {"max_retries", s.max_retries},
       {"max_new", s.max_new}};
}

void from_json(const nlohmann::json& j, EvalSettings& s) {
  EvalSettings d;
  s.episodes_per_cfg = j.value("episodes_per_cfg", d.episodes_per_cfg);
  s.seeds = j.value("seeds", d.seeds);
  s.sampling.top_k = j.value("top_k", d.sampling.top_k);
  s.sampling.top_p = j.value("top_p", d.sampling.top_p);
  s.sampling.temperature = j.value("temperature", d.sampling.temperature);
  s.max_retries = j.value("max_retries", d.max_retries);
  s.max_new = j.value("max_new", d.max_new);
}

namespace {

EnvConfig make_env(std::string id, int size, std::vector<int> agents, std::vector<int> foods, int sight,
                   int max_steps) {
  EnvConfig c;
  c.env_id = std::move(id);
  c.width = size;
  c.height = size;
  c.n_agents = static_cast<int>(agents.size());
  c.agent_levels = std::move(agents);
  c.n_foods = static_cast<int>(foods.size());
  c.food_levels = std::move(foods);
  c.sight_radius = sight;
  c.max_steps = max_steps;
  return c;
}

// Tags for seeds derived from global_seed.
enum SeedTag : std::uint64_t {
  kTagEnv = 1,
  kTagSplit = 2,
  kTagInit = 3,
  kTagSft = 4,
  kTagBc = 5,
  kTagGrpo = 6,
};

std::uint64_t env_seed(std::uint64_t global, const std::string& env_id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the id
  for (unsigned char ch : env_id) h = (h ^ ch) * 1099511628211ULL;
  return derive_seed({global, kTagEnv, h});
}

std::vector<EnvConfig> parse_envs(const nlohmann::json& arr, std::uint64_t global) {
  std::vector<EnvConfig> out;
  for (nlohmann::json e : arr) {
    if (!e.contains("seed")) e["seed"] = env_seed(global, e.at("env_id").get<std::string>());
    if (!e.contains("n_agents") && e.contains("agent_levels")) e["n_agents"] = e["agent_levels"].size();
    if (!e.contains("n_foods") && e.contains("food_levels")) e["n_foods"] = e["food_levels"].size();
    out.push_back(e.get<EnvConfig>());
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json load_manifest(const RunLayout& run) {
  if (!fs::exists(run.manifest())) return {{"stages", nlohmann::json::object()}};
  return nlohmann::json::parse(read_file(run.manifest()));
}

void record_stage(const RunLayout& run, const PipelineConfig& cfg, const std::string& stage,
                  const std::vector<fs::path>& artifacts, const nlohmann::json& info = nlohmann::json::object()) {
  nlohmann::json m = load_manifest(run);
  // The run location is not part of the experiment's identity.
  nlohmann::json identity = pipeline_config_to_json(cfg);
  identity.erase("output_dir");
  m["config_hash"] = sha256_hex(dump_json(identity));
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& p : artifacts) {
    arts.push_back({{"path", fs::relative(p, run.root).generic_string()},
                    {"git_hash", git_blob_hash_file(p)},
                    {"stable_hash", stable_artifact_hash(p)}});
  }
  m["stages"][stage] = {{"completed_at", utc_timestamp()}, {"artifacts", arts}, {"info", info}};
  m["content_hash"] = manifest_content_hash(m);
  write_file(run.manifest(), dump_json(m) + "\n");
}

void ensure_config_written(const RunLayout& run, const PipelineConfig& cfg) {
  write_file(run.config(), dump_json(pipeline_config_to_json(cfg)) + "\n");
}

std::vector<TrajectoryRecord> read_trajectories(const fs::path& path) {
  std::vector<TrajectoryRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(j.get<TrajectoryRecord>());
  return out;
}

Vocabulary read_vocab(const RunLayout& run) {
  return Vocabulary::from_json(nlohmann::json::parse(read_file(run.vocab())));
}

ModelConfig model_config_for(const PipelineConfig& cfg, const Vocabulary& vocab) {
  ModelConfig m = cfg.model;
  m.vocab_size = vocab.size();
  return m;
}

Checkpoint load_checked(const fs::path& path, const Vocabulary& vocab) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.config().vocab_size != vocab.size()) {
    throw ConfigError("checkpoint " + path.string() + " does not match the run vocabulary");
  }
  return ck;
}

}  // namespace

std::vector<EnvConfig> default_train_envs() {
  return {make_env("forage-7x7-2p2f", 7, {1, 2}, {2, 3}, 2, 40),
          make_env("forage-7x7-3p2f", 7, {1, 1, 2}, {2, 3}, 2, 40),
          make_env("forage-9x9-2p3f", 9, {1, 2}, {1, 2, 3}, 2, 60)};
}

std::vector<EnvConfig> default_holdout_envs() {
  return {make_env("forage-9x9-3p3f", 9, {1, 1, 2}, {1, 2, 3}, 2, 60),
          make_env("forage-11x11-3p2f", 11, {1, 1, 2}, {2, 3}, 2, 70)};
}

void PipelineConfig::validate() const {
  if (train_envs.empty()) throw ConfigError("at least one training env config is required");
  std::set<std::string> ids;
  for (const auto& e : train_envs) {
    e.validate();
    if (!ids.insert(e.env_id).second) throw ConfigError("duplicate training env_id '" + e.env_id + "'");
  }
  for (const auto& e : holdout_envs) {
    e.validate();
    if (ids.count(e.env_id)) throw ConfigError("holdout env_id '" + e.env_id + "' is also a training config");
  }
  collect.validate();
  sft.validate();
  bc.validate();
  grpo.validate();
  if (eval.episodes_per_cfg < 1) throw ConfigError("eval.episodes_per_cfg must be >= 1");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds must be non-empty");
  if (eval.max_new < 1) throw ConfigError("eval.max_new must be >= 1");
  if (sft.max_len > model.max_len || bc.max_len > model.max_len) {
    throw ConfigError("sft.max_len exceeds model.max_len");
  }
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.global_seed = j.value("global_seed", c.global_seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  const std::uint64_t g = c.global_seed;

  const nlohmann::json envs = j.value("envs", nlohmann::json::object());
  const auto suite = [&](const char* key, std::vector<EnvConfig> defaults) {
    if (envs.contains(key)) return parse_envs(envs.at(key), g);
    for (auto& e : defaults) e.seed = env_seed(g, e.env_id);
    return defaults;
  };
  c.train_envs = suite("train", default_train_envs());
  c.holdout_envs = suite("holdout", default_holdout_envs());

  const auto sub = [&j](const char* key) { return j.value(key, nlohmann::json::object()); };
  const nlohmann::json collect = sub("collect");
  c.collect = collect.get<CollectConfig>();
  if (!collect.contains("split_seed")) c.collect.split_seed = derive_seed({g, kTagSplit});

  const nlohmann::json model = sub("model");
  c.model = model.get<ModelConfig>();
  if (!model.contains("init_seed")) c.model.init_seed = derive_seed({g, kTagInit});

  const nlohmann::json sft = sub("sft");
  c.sft = sft.get<SftConfig>();
  if (!sft.contains("seed")) c.sft.seed = derive_seed({g, kTagSft});
  // BC shares the SFT settings unless overridden.
  nlohmann::json bc = sft;
  const nlohmann::json bc_overrides = sub("bc");
  for (const auto& [k, v] : bc_overrides.items()) bc[k] = v;
  c.bc = bc.get<SftConfig>();
  if (!bc.contains("seed")) c.bc.seed = derive_seed({g, kTagBc});

  const nlohmann::json grpo = sub("grpo");
  c.grpo = grpo.get<GrpoConfig>();
  if (!grpo.contains("seed")) c.grpo.seed = derive_seed({g, kTagGrpo});

  c.eval = sub("eval").get<EvalSettings>();
  c.validate();
  return c;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json model = c.model;
  model.erase("vocab_size");
  return {{"global_seed", c.global_seed},
          {"output_dir", c.output_dir},
          {"envs", {{"train", c.train_envs}, {"holdout", c.holdout_envs}}},
          {"collect", c.collect},
          {"model", model},
          {"sft", c.sft},
          {"bc", c.bc},
          {"grpo", c.grpo},
          {"eval", c.eval}};
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return pipeline_config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const EvalSummary& s) {
  j = {{"mode", s.mode}, {"train", s.train}, {"holdout", s.holdout}};
}

void from_json(const nlohmann::json& j, EvalSummary& s) {
  s.mode = j.at("mode").get<std::string>();
  s.train = j.at("train").get<EvalReport>();
  s.holdout = j.at("holdout").get<EvalReport>();
}

std::string stable_artifact_hash(const fs::path& path) {
  const std::string text = read_file(path);
  if (path.extension() != ".csv") return git_blob_hash(text);
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> cols;
  {
    std::istringstream hs(header);
    std::string c;
    while (std::getline(hs, c, ',')) cols.push_back(c);
  }
  const auto it = std::find(cols.begin(), cols.end(), "seconds");
  if (it == cols.end()) return git_blob_hash(text);
  const std::size_t drop = static_cast<std::size_t>(it - cols.begin());
  std::string out;
  std::istringstream all(text);
  std::string line;
  while (std::getline(all, line)) {
    std::istringstream ls(line);
    std::string field;
    std::size_t k = 0;
    bool first = true;
    while (std::getline(ls, field, ',')) {
      if (k++ == drop) continue;
      if (!first) out += ',';
      out += field;
      first = false;
    }
    out += '\n';
  }
  return git_blob_hash(out);
}

std::string manifest_content_hash(const nlohmann::json& manifest) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [stage, body] : manifest.at("stages").items()) {
    for (const auto& a : body.at("artifacts")) {
      entries.emplace_back(a.at("path").get<std::string>(), a.at("stable_hash").get<std::string>());
    }
  }
  std::sort(entries.begin(), entries.end());
  std::string blob;
  for (const auto& [p, h] : entries) blob += p + '\t' + h + '\n';
  return sha256_hex(blob);
}

void cmd_collect(const PipelineConfig& cfg) {
  cfg.validate();
  const RunLayout run{cfg.output_dir};
  ensure_config_written(run, cfg);
  spdlog::info("collect: {} configs x {} episodes", cfg.train_envs.size(), cfg.collect.n_episodes);
  auto data = collect_dataset(cfg.train_envs, cfg.collect);
  const RtgScale scale = fit_rtg_scale(data);
  data = normalize_rtg(std::move(data), scale);
  const DatasetSplit split = split_dataset(data, cfg.collect.split_seed);

  const auto to_rows = [](const auto& items) {
    std::vector<nlohmann::json> rows;
    for (const auto& x : items) rows.push_back(x);
    return rows;
  };
  write_jsonl(run.trajectories(), to_rows(data));
  write_jsonl(run.d_sft(), to_rows(split.sft));
  write_jsonl(run.d_grpo(), to_rows(split.grpo));
  write_jsonl(run.dialogues_sft(), to_rows(build_dialogues(split.sft)));
  write_jsonl(run.dialogues_grpo(), to_rows(build_dialogues(split.grpo)));
  write_file(run.stats(), dataset_stats(split).to_csv());
  write_file(run.rtg_scale(), dump_json(scale) + "\n");

  std::vector<EnvConfig> all = cfg.train_envs;
  all.insert(all.end(), cfg.holdout_envs.begin(), cfg.holdout_envs.end());
  const Vocabulary vocab = Vocabulary::build(VocabBounds::from_configs(all));
  write_file(run.vocab(), dump_json(vocab.to_json()) + "\n");
  spdlog::info("collect: {} trajectories ({} sft / {} grpo), vocabulary {} tokens", data.size(),
               split.sft.size(), split.grpo.size(), vocab.size());
  record_stage(run, cfg, "collect",
               {run.trajectories(), run.d_sft(), run.d_grpo(), run.dialogues_sft(), run.dialogues_grpo(),
                run.stats(), run.rtg_scale(), run.vocab()},
               {{"n_trajectories", data.size()}, {"g_min", scale.g_min}, {"g_max", scale.g_max}});
}

void cmd_sft(const PipelineConfig& cfg, const std::string& mode, const std::optional<fs::path>& resume) {
  cfg.validate();
  if (mode != "sft" && mode != "bc") throw ArgumentError("sft mode must be 'sft' or 'bc', got '" + mode + "'");
  const RunLayout run{cfg.output_dir};
  const Vocabulary vocab = read_vocab(run);
  const auto dialogues = build_dialogues(read_trajectories(run.d_sft()));
  const ModelConfig mcfg = model_config_for(cfg, vocab);
  const SftConfig& scfg = mode == "bc" ? cfg.bc : cfg.sft;

  std::optional<ResumeState> state;
  if (resume) {
    Checkpoint ck = load_checked(*resume, vocab);
    if (!ck.optimizer) throw ConfigError("checkpoint " + resume->string() + " has no optimizer state to resume");
    state = ResumeState{std::move(ck.params), std::move(*ck.optimizer)};
    spdlog::info("{}: resuming from {} at step {}", mode, resume->string(), state->optimizer.step);
  }
  spdlog::info("{}: training on {} dialogues", mode, dialogues.size());
  const SftResult res = train_sft(dialogues, vocab, mcfg, scfg,
                                  mode == "bc" ? SampleMode::kSingleTurn : SampleMode::kHistory, state);
  nlohmann::json meta = {{"stage", mode}, {"steps", res.steps}, {"finished", res.finished}};
  if (res.heldout_accuracy) meta["heldout_accuracy"] = *res.heldout_accuracy;
  save_checkpoint(run.checkpoint(mode), res.params, &res.optimizer, meta);
  write_file(run.train_log(mode), res.log.to_csv());
  spdlog::info("{}: {} steps, held-out token accuracy {}", mode, res.steps,
               res.heldout_accuracy ? format_double(*res.heldout_accuracy) : "n/a");
  record_stage(run, cfg, mode, {run.checkpoint(mode), run.train_log(mode)}, meta);
}

void cmd_filter(const PipelineConfig& cfg, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  const RunLayout run{cfg.output_dir};
  const Vocabulary vocab = read_vocab(run);
  const Checkpoint ck = load_checked(checkpoint.value_or(run.checkpoint("sft")), vocab);
  const auto dialogues = build_dialogues(read_trajectories(run.d_grpo()));
  ModelPolicy policy(ck.params, vocab, cfg.eval.max_new);
  FilterSummary summary;
  const auto d_ood = filter_ood(policy, dialogues, &summary);
  std::vector<nlohmann::json> rows(d_ood.begin(), d_ood.end());
  write_jsonl(run.d_ood(), rows);
  write_file(run.filter_summary(), dump_json(nlohmann::json(summary)) + "\n");
  spdlog::info("filter: retained {} of {} turns ({} mismatch, {} unavailable)", summary.retained,
               summary.total_turns, summary.mismatch, summary.unavailable);
  record_stage(run, cfg, "filter", {run.d_ood(), run.filter_summary()}, summary);
}

void cmd_grpo(const PipelineConfig& cfg, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  const RunLayout run{cfg.output_dir};
  const Vocabulary vocab = read_vocab(run);
  const Checkpoint ck = load_checked(checkpoint.value_or(run.checkpoint("sft")), vocab);
  std::vector<FilteredSample> d_ood;
  for (const auto& j : read_jsonl(run.d_ood())) d_ood.push_back(j.get<FilteredSample>());
  nlohmann::json meta = {{"stage", "grpo"}, {"n_samples", d_ood.size()}};
  if (d_ood.empty()) {
    spdlog::warn("grpo: D_OOD is empty; the SFT parameters are copied unchanged");
    meta["copied_from_sft"] = true;
    save_checkpoint(run.checkpoint("grpo"), ck.params, nullptr, meta);
    write_file(run.train_log("grpo"), GrpoLog{}.to_csv());
  } else {
    spdlog::info("grpo: {} filtered samples, {} epochs", d_ood.size(), cfg.grpo.epochs);
    const GrpoResult res = train_grpo(ck.params, vocab, d_ood, cfg.grpo);
    meta["steps"] = res.log.rows.size();
    save_checkpoint(run.checkpoint("grpo"), res.params, nullptr, meta);
    write_file(run.train_log("grpo"), res.log.to_csv());
  }
  record_stage(run, cfg, "grpo", {run.checkpoint("grpo"), run.train_log("grpo")}, meta);
}

EvalSummary cmd_eval(const PipelineConfig& cfg, const std::string& mode, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  if (mode != "sft" && mode != "grpo" && mode != "bc" && mode != "random") {
    throw ArgumentError("eval mode must be sft, grpo, bc or random, got '" + mode + "'");
  }
  const RunLayout run{cfg.output_dir};
  EvalConfig ec;
  ec.episodes_per_cfg = cfg.eval.episodes_per_cfg;
  ec.seeds = cfg.eval.seeds;
  ec.sampling = cfg.eval.sampling;
  ec.max_retries = cfg.eval.max_retries;
  ec.bc_mode = mode == "bc";

  std::optional<Vocabulary> vocab;
  std::optional<Checkpoint> ck;
  std::unique_ptr<ModelPolicy> policy;
  std::unique_ptr<ActionSelector> selector;
  if (mode == "random") {
    selector = std::make_unique<RandomSelector>();
  } else {
    vocab = read_vocab(run);
    ck = load_checked(checkpoint.value_or(run.checkpoint(mode)), *vocab);
    policy = std::make_unique<ModelPolicy>(ck->params, *vocab, cfg.eval.max_new);
    selector = std::make_unique<LanguageSelector>(*policy, cfg.eval.sampling, cfg.eval.max_retries);
  }
  EvalSummary s;
  s.mode = mode;
  ec.env_cfgs = cfg.train_envs;
  s.train = evaluate(*selector, ec);
  if (!cfg.holdout_envs.empty()) {
    ec.env_cfgs = cfg.holdout_envs;
    s.holdout = evaluate(*selector, ec);
  }
  write_file(run.eval_json(mode), dump_json(nlohmann::json(s)) + "\n");
  write_file(run.eval_csv(mode), s.train.to_csv() + [&] {
    const std::string h = s.holdout.to_csv();
    return h.substr(h.find('\n') + 1);
  }());
  for (const auto* section : {&s.train, &s.holdout}) {
    for (const auto& c : section->configs) {
      spdlog::info("eval {}: {} win {} +- {}, ood {}", mode, c.env_id, format_double(c.win_rate_mean),
                   format_double(c.win_rate_ci), format_double(c.ood_rate));
    }
  }
  record_stage(run, cfg, "eval_" + mode, {run.eval_json(mode), run.eval_csv(mode)},
               {{"train_mean_win_rate", s.train.mean_win_rate()}});
  return s;
}

void cmd_run(const PipelineConfig& cfg) {
  cmd_collect(cfg);
  cmd_sft(cfg, "sft");
  cmd_sft(cfg, "bc");
  cmd_filter(cfg);
  cmd_grpo(cfg);
  for (const char* mode : {"grpo", "sft", "bc", "random"}) cmd_eval(cfg, mode);
  cmd_report(cfg.output_dir);
}

}  // namespace dlm
