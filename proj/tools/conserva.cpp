// conserva: command-line front end for the conservation-law discovery
// pipeline.
//
//   conserva sample        draw a seeded state batch and persist it as CSV
//   conserva train         train an ensemble of neural scalar fields
//   conserva rank          count independent invariants (differential +
//                          manifold estimators) from the trained ensemble
//   conserva sweep-lambda  retrain across a lambda grid, tabulating final
//                          conservation/independence losses
//   conserva search        exhaustive symbolic search over RPN formulas
//   conserva report        emit plot-ready CSVs and a plain-text summary
//   conserva all           sample -> train -> rank -> search -> report
//
// One JSON config drives everything; flat --set overrides use dotted paths
// (e.g. --set train.lambda=0.05). Artifacts land in the output directory
// together with manifest.json, which records per-stage configs and content
// hashes; a rerun with an unchanged config and intact artifacts skips the
// stage and notes the cache hit. Exit codes: 0 ok, 2 bad config, 3 numerical
// failure, 4 missing artifact.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conserva/common.hpp"
#include "conserva/field.hpp"
#include "conserva/io.hpp"
#include "conserva/rank.hpp"
#include "conserva/search.hpp"
#include "conserva/systems.hpp"
#include "conserva/trainer.hpp"
#include "conserva/vendor_json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Config plumbing

// Sets cfg at a dotted path ("train.lambda") to a value parsed as JSON when
// possible, else kept as a string.
void apply_override(json& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw conserva::ConfigError("override must look like key.path=value: " +
                                spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare words are strings
  }

  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty())
      throw conserva::ConfigError("override has an empty path segment: " + spec);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw conserva::ConfigError("override path crosses a non-object: " + spec);
    start = dot + 1;
  }
}

struct CommonArgs {
  std::string config_path;
  std::string system;
  std::string output;
  std::vector<std::string> sets;
};

json load_config(const CommonArgs& args) {
  json cfg = json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in)
      throw conserva::ConfigError("cannot open config file " + args.config_path);
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw conserva::ConfigError("config is not valid JSON: " +
                                  std::string(e.what()));
    }
    if (!cfg.is_object())
      throw conserva::ConfigError("config root must be a JSON object");
  }
  if (!args.system.empty()) cfg["system"] = args.system;
  if (!args.output.empty()) cfg["output"] = args.output;
  for (const auto& s : args.sets) apply_override(cfg, s);
  return cfg;
}

// Typed getters with range validation; the offending key is named so a bad
// config fails with an actionable message.
double get_num(const json& block, const std::string& key, double fallback,
               double lo, double hi) {
  if (!block.contains(key)) return fallback;
  if (!block[key].is_number())
    throw conserva::ConfigError("config key " + key + " must be a number");
  const double v = block[key].get<double>();
  if (v < lo || v > hi)
    throw conserva::ConfigError("config key " + key + " out of range");
  return v;
}

int get_int(const json& block, const std::string& key, int fallback, int lo,
            int hi) {
  return static_cast<int>(get_num(block, key, fallback, lo, hi));
}

std::string get_str(const json& block, const std::string& key,
                    const std::string& fallback) {
  if (!block.contains(key)) return fallback;
  if (!block[key].is_string())
    throw conserva::ConfigError("config key " + key + " must be a string");
  return block[key].get<std::string>();
}

json stage_block(const json& cfg, const std::string& name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg[name].is_object())
    throw conserva::ConfigError("config block " + name + " must be an object");
  return cfg[name];
}

// ---------------------------------------------------------------------------
// Pipeline state shared by the stage runners.

struct Pipeline {
  json cfg;
  conserva::SystemSpec sys;
  fs::path out;
  conserva::Manifest manifest;
  json stage_seconds = json::object();

  explicit Pipeline(json config)
      : cfg(std::move(config)),
        sys(conserva::make_system(
            cfg.contains("system")
                ? cfg["system"].get<std::string>()
                : throw conserva::ConfigError("config needs a system name"),
            cfg.contains("params") ? cfg["params"] : json::object())),
        out(cfg.contains("output") ? cfg["output"].get<std::string>()
                                   : std::string("runs/") + sys.name),
        manifest(out) {
    fs::create_directories(out);
    manifest.load();
  }

  fs::path batch_path() const { return out / "batch.csv"; }
  fs::path batch_meta_path() const { return out / "batch.meta.json"; }
  fs::path field_path(int i) const {
    return out / ("field_" + std::to_string(i) + ".json");
  }
  fs::path field_blob_path(int i) const {
    return out / ("field_" + std::to_string(i) + ".bin");
  }
  fs::path history_path() const { return out / "history.csv"; }
  fs::path train_summary_path() const { return out / "train_summary.json"; }
  fs::path rank_path() const { return out / "rank.json"; }
  fs::path sweep_path() const { return out / "lambda_sweep.csv"; }
  fs::path search_path() const { return out / "search.json"; }

  void finish(const std::string& command, double wall_s) {
    manifest.set_meta("version", conserva::kToolkitVersion);
    manifest.set_meta("command", command);
    manifest.set_meta("system", sys.name);
    manifest.set_meta("config", cfg);
    json seeds = json::object();
    for (const char* stage : {"sample", "train", "rank", "search"}) {
      const json block = stage_block(cfg, stage);
      seeds[stage] = get_num(block, "seed", 1, 0, 1e18);
    }
    manifest.set_meta("seeds", seeds);
    manifest.set_meta("wall_clock_s", wall_s);
    manifest.set_meta("stage_seconds", stage_seconds);
    manifest.save();
  }
};

// Runs one stage with timing, failure recording, and log lines.
template <typename Fn>
void run_stage(Pipeline& p, const std::string& name, Fn&& fn) {
  const double t0 = now_s();
  try {
    const bool ran = fn();
    p.stage_seconds[name] = now_s() - t0;
    std::fprintf(stderr, "[conserva] %-12s %s (%.2fs)\n", name.c_str(),
                 ran ? "done" : "cached", now_s() - t0);
  } catch (...) {
    p.stage_seconds[name] = now_s() - t0;
    try {
      throw;
    } catch (const std::exception& e) {
      p.manifest.record_failure(name, e.what());
    }
    p.manifest.save();
    throw;
  }
}

// ---------------------------------------------------------------------------
// Stage: sample

json resolve_sample(const Pipeline& p) {
  const json block = stage_block(p.cfg, "sample");
  json r;
  r["system"] = p.sys.name;
  r["params"] = p.sys.params;
  r["points"] = get_int(block, "points", 10000, 1, 100000000);
  r["seed"] = get_num(block, "seed", 1, 0, 1e18);
  return r;
}

bool stage_sample(Pipeline& p) {
  const json r = resolve_sample(p);
  if (p.manifest.up_to_date("sample", r)) {
    p.manifest.note_cache_hit("sample");
    return false;
  }
  const auto batch = conserva::sample_batch(
      p.sys, r["points"].get<int>(), r["seed"].get<std::uint64_t>());
  conserva::write_batch_csv(p.batch_path(), p.sys, batch);
  p.manifest.record("sample", r, {}, {p.batch_path(), p.batch_meta_path()});
  return true;
}

conserva::SampleBatch require_batch(const Pipeline& p) {
  if (!fs::exists(p.batch_path()))
    throw conserva::ArtifactError("missing artifact " +
                                  p.batch_path().string() +
                                  " (run the sample stage first)");
  auto batch = conserva::read_batch_csv(p.batch_path());
  if (batch.system != p.sys.name)
    throw conserva::ConfigError("batch on disk was sampled from system " +
                                batch.system + ", config says " + p.sys.name);
  return batch;
}

// ---------------------------------------------------------------------------
// Stage: train

json resolve_train(const Pipeline& p) {
  const json block = stage_block(p.cfg, "train");
  json r;
  r["models"] = get_int(block, "models", 2, 1, 64);
  r["lambda"] = get_num(block, "lambda", 0.02, 0.0, 1e6);
  r["epochs"] = get_int(block, "epochs", 100, 1, 100000);
  r["batch"] = get_int(block, "batch", 256, 1, 1000000);
  r["lr"] = get_num(block, "lr", 1e-3, 0.0, 1e3);
  r["seed"] = get_num(block, "seed", 1, 0, 1e18);
  r["arch"] = get_str(block, "arch", "auto");
  r["hidden"] = get_int(block, "hidden", 256, 1, 8192);
  r["sub_hidden"] = get_int(block, "sub_hidden", 64, 1, 8192);
  const std::string arch = r["arch"].get<std::string>();
  if (arch != "auto") conserva::arch_from_name(arch);  // validates
  return r;
}

conserva::ArchConfig arch_from_json(const Pipeline& p, const json& r) {
  conserva::ArchConfig arch = conserva::ArchConfig::defaults_for(p.sys);
  const std::string name = r["arch"].get<std::string>();
  if (name != "auto") arch.kind = conserva::arch_from_name(name);
  arch.hidden = r["hidden"].get<int>();
  arch.sub_hidden = r["sub_hidden"].get<int>();
  return arch;
}

bool stage_train(Pipeline& p) {
  const json r = resolve_train(p);
  if (p.manifest.up_to_date("train", r)) {
    p.manifest.note_cache_hit("train");
    return false;
  }
  const auto batch = require_batch(p);

  conserva::TrainConfig tc;
  tc.models = r["models"].get<int>();
  tc.lambda = r["lambda"].get<double>();
  tc.epochs = r["epochs"].get<int>();
  tc.batch = r["batch"].get<int>();
  tc.lr = r["lr"].get<double>();
  tc.seed = r["seed"].get<std::uint64_t>();

  const auto arch = arch_from_json(p, r);
  auto result = conserva::train_ensemble(p.sys, batch, arch, tc);

  std::vector<fs::path> outputs;
  for (int i = 0; i < tc.models; ++i) {
    result.fields[static_cast<std::size_t>(i)].save(p.field_path(i));
    outputs.push_back(p.field_path(i));
    outputs.push_back(p.field_blob_path(i));
  }
  conserva::write_history_csv(p.history_path(), result.history);
  outputs.push_back(p.history_path());

  json summary;
  summary["models"] = tc.models;
  summary["arch"] = conserva::arch_name(arch.kind);
  summary["final_train"] = {
      {"conservation", result.final_train.conservation},
      {"independence", result.final_train.independence},
      {"total", result.final_train.total(tc.lambda)}};
  summary["final_test"] = {
      {"conservation", result.final_test.conservation},
      {"independence", result.final_test.independence},
      {"total", result.final_test.total(tc.lambda)}};
  summary["per_field_train"] = std::vector<double>(
      result.per_field_train.data(),
      result.per_field_train.data() + result.per_field_train.size());
  summary["per_field_test"] = std::vector<double>(
      result.per_field_test.data(),
      result.per_field_test.data() + result.per_field_test.size());
  summary["skipped_updates"] = result.skipped_updates;
  conserva::write_json(p.train_summary_path(), summary);
  outputs.push_back(p.train_summary_path());

  p.manifest.record("train", r, {p.batch_path()}, outputs);
  return true;
}

std::vector<conserva::ScalarField> load_trained_fields(const Pipeline& p,
                                                       int models) {
  std::vector<conserva::ScalarField> fields;
  for (int i = 0; i < models; ++i) {
    if (!fs::exists(p.field_path(i)))
      throw conserva::ArtifactError("missing artifact " +
                                    p.field_path(i).string() +
                                    " (run the train stage first)");
    auto nf = std::make_shared<conserva::NeuralField>(
        conserva::NeuralField::load(p.field_path(i)));
    conserva::ScalarField f;
    f.label = "net_" + std::to_string(i);
    f.value = [nf](const conserva::Vec& z) { return nf->value_at(z); };
    f.grad = [nf](const conserva::Vec& z) { return nf->grad_at(z); };
    fields.push_back(std::move(f));
  }
  return fields;
}

// ---------------------------------------------------------------------------
// Stage: rank

json resolve_rank(const Pipeline& p) {
  const json block = stage_block(p.cfg, "rank");
  json r;
  const std::string mode = get_str(block, "mode", "both");
  if (mode != "differential" && mode != "manifold" && mode != "both")
    throw conserva::ConfigError(
        "rank.mode must be differential, manifold or both");
  r["mode"] = mode;
  r["eval_points"] = get_int(block, "eval_points", 100, 1, 1000000);
  r["sv_tol"] = get_num(block, "sv_tol", 1e-2, 1e-300, 1.0 - 1e-12);
  r["anchors"] = get_int(block, "anchors", 100, 1, 1000000);
  r["scales"] = get_int(block, "scales", 12, 2, 1000);
  r["scale_min"] = get_num(block, "scale_min", 0.15, 1e-9, 1e9);
  r["scale_max"] = get_num(block, "scale_max", 1.6, 1e-9, 1e9);
  r["var_tol"] = get_num(block, "var_tol", 1e-2, 1e-300, 1.0 - 1e-12);
  r["seed"] = get_num(block, "seed", 1, 0, 1e18);
  r["models"] = get_int(block, "models",
                        get_int(stage_block(p.cfg, "train"), "models", 2, 1, 64),
                        1, 64);
  return r;
}

bool stage_rank(Pipeline& p) {
  const json r = resolve_rank(p);
  if (p.manifest.up_to_date("rank", r)) {
    p.manifest.note_cache_hit("rank");
    return false;
  }
  const auto batch = require_batch(p);
  const int models = r["models"].get<int>();
  const auto fields = load_trained_fields(p, models);

  const std::string mode = r["mode"].get<std::string>();
  json out;
  out["fields"] = models;

  if (mode != "manifold") {
    conserva::RankConfig rc;
    rc.eval_points = r["eval_points"].get<int>();
    rc.sv_tol = r["sv_tol"].get<double>();
    rc.seed = r["seed"].get<std::uint64_t>();
    const int k = conserva::differential_rank(fields, batch.states, rc);
    const conserva::Vec spec =
        conserva::differential_spectrum(fields, batch.states, rc);
    out["differential"] = {
        {"k", k},
        {"eval_points", rc.eval_points},
        {"sv_tol", rc.sv_tol},
        {"explained_variance",
         std::vector<double>(spec.data(), spec.data() + spec.size())}};
  }

  if (mode != "differential") {
    // Field values over the whole batch embed the data for the manifold test.
    conserva::Mat values(batch.count(), models);
    for (int i = 0; i < models; ++i)
      for (int j = 0; j < batch.count(); ++j)
        values(j, i) = fields[static_cast<std::size_t>(i)].value(
            batch.states.col(j));
    conserva::ManifoldConfig mc;
    mc.anchors = r["anchors"].get<int>();
    mc.scales = r["scales"].get<int>();
    mc.scale_min = r["scale_min"].get<double>();
    mc.scale_max = r["scale_max"].get<double>();
    mc.var_tol = r["var_tol"].get<double>();
    mc.seed = r["seed"].get<std::uint64_t>();
    const auto m = conserva::manifold_rank(values, mc);
    out["manifold"] = {{"rank", m.rank},
                       {"plateau_length", m.plateau_length},
                       {"scale", m.scale},
                       {"n_eff", m.n_eff},
                       {"valid", std::vector<int>(m.valid.begin(),
                                                  m.valid.end())}};
  }

  conserva::write_json(p.rank_path(), out);
  std::vector<fs::path> inputs = {p.batch_path()};
  for (int i = 0; i < models; ++i) inputs.push_back(p.field_path(i));
  p.manifest.record("rank", r, inputs, {p.rank_path()});
  return true;
}

// ---------------------------------------------------------------------------
// Stage: sweep-lambda

json resolve_sweep(const Pipeline& p) {
  const json block = stage_block(p.cfg, "sweep");
  json r;
  std::vector<double> grid = {0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  if (block.contains("grid")) {
    if (!block["grid"].is_array() || block["grid"].empty())
      throw conserva::ConfigError("sweep.grid must be a nonempty array");
    grid.clear();
    for (const auto& v : block["grid"]) {
      if (!v.is_number() || v.get<double>() < 0)
        throw conserva::ConfigError("sweep.grid entries must be >= 0");
      grid.push_back(v.get<double>());
    }
  }
  r["grid"] = grid;
  int seeds = get_int(block, "seeds", 3, 1, 64);
  r["seeds"] = seeds;
  r["models"] = get_int(block, "models", 2, 2, 64);
  r["epochs"] = get_int(block, "epochs", 60, 1, 100000);
  r["points"] = get_int(block, "points", 4096, 16, 10000000);
  r["batch"] = get_int(block, "batch", 256, 1, 1000000);
  r["lr"] = get_num(block, "lr", 1e-3, 0.0, 1e3);
  r["sample_seed"] = get_num(block, "sample_seed", 1, 0, 1e18);
  r["arch"] = get_str(block, "arch", "auto");
  r["hidden"] = get_int(block, "hidden", 256, 1, 8192);
  r["sub_hidden"] = get_int(block, "sub_hidden", 64, 1, 8192);
  return r;
}

bool stage_sweep(Pipeline& p) {
  const json r = resolve_sweep(p);
  if (p.manifest.up_to_date("sweep-lambda", r)) {
    p.manifest.note_cache_hit("sweep-lambda");
    return false;
  }
  const auto grid = r["grid"].get<std::vector<double>>();
  const int seeds = r["seeds"].get<int>();
  const auto arch = arch_from_json(p, r);

  conserva::Mat rows(static_cast<Eigen::Index>(grid.size()) * seeds, 5);
  Eigen::Index row = 0;
  for (int s = 0; s < seeds; ++s) {
    // One batch per seed, shared across the whole grid so the sweep isolates
    // the effect of lambda.
    const auto batch = conserva::sample_batch(
        p.sys, r["points"].get<int>(),
        r["sample_seed"].get<std::uint64_t>() + static_cast<std::uint64_t>(s));
    for (double lambda : grid) {
      conserva::TrainConfig tc;
      tc.models = r["models"].get<int>();
      tc.lambda = lambda;
      tc.epochs = r["epochs"].get<int>();
      tc.batch = r["batch"].get<int>();
      tc.lr = r["lr"].get<double>();
      tc.seed = static_cast<std::uint64_t>(s + 1);
      const auto result = conserva::train_ensemble(p.sys, batch, arch, tc);
      rows(row, 0) = lambda;
      rows(row, 1) = s + 1;
      rows(row, 2) = result.final_train.conservation;
      rows(row, 3) = result.final_train.independence;
      rows(row, 4) = result.final_train.total(lambda);
      ++row;
      std::fprintf(stderr,
                   "[conserva] sweep lambda=%-8g seed=%d l1=%.3e l2=%.3e\n",
                   lambda, s + 1, result.final_train.conservation,
                   result.final_train.independence);
    }
  }
  conserva::write_csv(p.sweep_path(),
                      {"lambda", "seed", "conservation", "independence",
                       "total"},
                      rows);
  p.manifest.record("sweep-lambda", r, {}, {p.sweep_path()});
  return true;
}

// ---------------------------------------------------------------------------
// Stage: search

json resolve_search(const Pipeline& p) {
  const json block = stage_block(p.cfg, "search");
  json r;
  r["max_len"] = get_int(block, "max_len", 9, 1, conserva::kMaxFormulaLen);
  r["accept_eps"] = get_num(block, "accept_eps", 1e-4, 1e-300, 1.0);
  r["fast_points"] = get_int(block, "fast_points", 10, 1, 10000);
  r["verify_points"] = get_int(block, "verify_points", 1000, 10, 1000000);
  r["target_count"] = get_int(block, "target_count", 0, 0, 1000);
  r["time_budget_s"] = get_num(block, "time_budget_s", 0, 0, 1e9);
  r["seed"] = get_num(block, "seed", 1, 0, 1e18);
  const std::string method = get_str(block, "indep_method", "B");
  if (method != "A" && method != "B")
    throw conserva::ConfigError("search.indep_method must be A or B");
  r["indep_method"] = method;
  const std::string wrapper = get_str(block, "wrapper", "auto");
  if (wrapper != "auto") conserva::wrapper_from_name(wrapper);  // validates
  r["wrapper"] = wrapper;
  std::vector<int> features;
  if (block.contains("features")) {
    if (!block["features"].is_array())
      throw conserva::ConfigError("search.features must be an array");
    for (const auto& v : block["features"]) {
      if (!v.is_number_integer())
        throw conserva::ConfigError(
            "search.features entries are exposed-feature indices");
      features.push_back(v.get<int>());
    }
  }
  r["features"] = features;
  return r;
}

bool stage_search(Pipeline& p) {
  const json r = resolve_search(p);
  if (p.manifest.up_to_date("search", r)) {
    p.manifest.note_cache_hit("search");
    return false;
  }
  const auto batch = require_batch(p);

  conserva::WrapperSpec wrapper;
  const std::string wname = r["wrapper"].get<std::string>();
  wrapper.kind = wname == "auto" ? conserva::default_wrapper(p.sys)
                                 : conserva::wrapper_from_name(wname);
  wrapper.grid_features = r["features"].get<std::vector<int>>();

  const auto grammar = conserva::default_grammar(p.sys, wrapper);

  conserva::SearchConfig sc;
  sc.max_len = r["max_len"].get<int>();
  sc.accept_eps = r["accept_eps"].get<double>();
  sc.fast_points = r["fast_points"].get<int>();
  sc.verify_points = r["verify_points"].get<int>();
  sc.target_count = r["target_count"].get<int>();
  sc.time_budget_s = r["time_budget_s"].get<double>();
  sc.seed = r["seed"].get<std::uint64_t>();
  sc.indep_method = r["indep_method"].get<std::string>()[0];

  const auto result = conserva::symbolic_search(p.sys, batch, grammar,
                                                wrapper, sc);

  auto formula_json = [](const conserva::FoundFormula& f) {
    return json{{"rpn", f.rpn},
                {"pretty", f.pretty},
                {"max_residual", f.max_residual},
                {"stream_index", f.stream_index},
                {"length", f.length}};
  };
  json out;
  out["wrapper"] = conserva::wrapper_name(wrapper.kind);
  out["slot_names"] = conserva::wrapper_slot_names(p.sys, wrapper);
  out["accepted"] = json::array();
  for (const auto& f : result.accepted) out["accepted"].push_back(formula_json(f));
  out["dependent"] = json::array();
  for (const auto& f : result.dependent)
    out["dependent"].push_back(formula_json(f));
  out["scanned"] = result.scanned;
  out["completed_length"] = result.completed_length;
  out["duplicates"] = result.duplicates;
  out["reached_target"] = result.reached_target;
  out["timed_out"] = result.timed_out;
  // Wall-clock stays out of the artifact so reruns hash identically.
  p.stage_seconds["search_core"] = result.seconds;

  conserva::write_json(p.search_path(), out);
  p.manifest.record("search", r, {p.batch_path()}, {p.search_path()});
  return true;
}

// ---------------------------------------------------------------------------
// Stage: report

bool stage_report(Pipeline& p) {
  const fs::path dir = p.out / "report";
  fs::create_directories(dir);

  const bool have_rank = fs::exists(p.rank_path());
  const bool have_sweep = fs::exists(p.sweep_path());
  const bool have_search = fs::exists(p.search_path());
  if (!have_rank && !have_sweep && !have_search)
    throw conserva::ArtifactError(
        "report: no rank.json, lambda_sweep.csv or search.json in " +
        p.out.string());

  // The report is a pure function of the upstream artifacts, so the recorded
  // input hashes decide whether anything needs to be regenerated.
  json key;
  key["have_rank"] = have_rank;
  key["have_sweep"] = have_sweep;
  key["have_search"] = have_search;
  if (p.manifest.up_to_date("report", key)) {
    p.manifest.note_cache_hit("report");
    return false;
  }

  std::vector<fs::path> outputs;
  std::string summary;
  summary += "system: " + p.sys.name + "\n";

  if (have_rank) {
    const json rank = conserva::require_json(p.rank_path());
    if (rank.contains("differential")) {
      const auto& d = rank["differential"];
      summary += "n_c = " + std::to_string(d["k"].get<int>()) + "\n";
      const auto ev = d["explained_variance"].get<std::vector<double>>();
      conserva::Mat rows(static_cast<Eigen::Index>(ev.size()), 2);
      for (std::size_t i = 0; i < ev.size(); ++i) {
        rows(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
        rows(static_cast<Eigen::Index>(i), 1) = ev[i];
      }
      conserva::write_csv(dir / "explained_variance.csv",
                          {"component", "explained_variance"}, rows);
      outputs.push_back(dir / "explained_variance.csv");
    }
    if (rank.contains("manifold")) {
      const auto& m = rank["manifold"];
      summary += "manifold rank = " + std::to_string(m["rank"].get<int>()) +
                 " (plateau length " +
                 std::to_string(m["plateau_length"].get<int>()) + ")\n";
      const auto scale = m["scale"].get<std::vector<double>>();
      const auto n_eff = m["n_eff"].get<std::vector<double>>();
      const auto valid = m["valid"].get<std::vector<int>>();
      conserva::Mat rows(static_cast<Eigen::Index>(scale.size()), 3);
      for (std::size_t i = 0; i < scale.size(); ++i) {
        rows(static_cast<Eigen::Index>(i), 0) = scale[i];
        rows(static_cast<Eigen::Index>(i), 1) = n_eff[i];
        rows(static_cast<Eigen::Index>(i), 2) = valid[i];
      }
      conserva::write_csv(dir / "n_eff_vs_scale.csv",
                          {"scale", "n_eff", "valid"}, rows);
      outputs.push_back(dir / "n_eff_vs_scale.csv");
    }
  }

  if (have_sweep) {
    // Aggregate seed rows into per-lambda means for plotting.
    const auto table = conserva::read_csv(p.sweep_path());
    std::vector<double> lambdas;
    for (Eigen::Index i = 0; i < table.rows.rows(); ++i) {
      const double l = table.rows(i, 0);
      if (lambdas.empty() || lambdas.back() != l) {
        if (std::find(lambdas.begin(), lambdas.end(), l) == lambdas.end())
          lambdas.push_back(l);
      }
    }
    std::sort(lambdas.begin(), lambdas.end());
    conserva::Mat rows(static_cast<Eigen::Index>(lambdas.size()), 3);
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      double l1 = 0, l2 = 0;
      int count = 0;
      for (Eigen::Index i = 0; i < table.rows.rows(); ++i) {
        if (table.rows(i, 0) == lambdas[k]) {
          l1 += table.rows(i, 2);
          l2 += table.rows(i, 3);
          ++count;
        }
      }
      rows(static_cast<Eigen::Index>(k), 0) = lambdas[k];
      rows(static_cast<Eigen::Index>(k), 1) = l1 / count;
      rows(static_cast<Eigen::Index>(k), 2) = l2 / count;
    }
    conserva::write_csv(dir / "lambda_sweep.csv",
                        {"lambda", "conservation_mean", "independence_mean"},
                        rows);
    outputs.push_back(dir / "lambda_sweep.csv");
  }

  if (have_search) {
    const json search = conserva::require_json(p.search_path());
    const auto& acc = search["accepted"];
    if (acc.empty()) {
      summary += "no formulas accepted\n";
    } else {
      summary += "accepted formulas (" + std::to_string(acc.size()) + "):\n";
      for (const auto& f : acc)
        summary += "  " + f["rpn"].get<std::string>() + "  =  " +
                   f["pretty"].get<std::string>() + "  (max residual " +
                   conserva::format_g17(f["max_residual"].get<double>()) +
                   ")\n";
    }
    const auto& dep = search["dependent"];
    if (!dep.empty()) {
      summary += "dependent rediscoveries (" + std::to_string(dep.size()) +
                 "):\n";
      for (const auto& f : dep)
        summary += "  " + f["rpn"].get<std::string>() + "  =  " +
                   f["pretty"].get<std::string>() + "\n";
    }
  }

  {
    std::ofstream out(dir / "summary.txt", std::ios::binary);
    if (!out)
      throw conserva::ArtifactError("report: cannot write summary.txt");
    out << summary;
  }
  outputs.push_back(dir / "summary.txt");
  std::fputs(summary.c_str(), stdout);

  std::vector<fs::path> inputs;
  if (have_rank) inputs.push_back(p.rank_path());
  if (have_sweep) inputs.push_back(p.sweep_path());
  if (have_search) inputs.push_back(p.search_path());
  p.manifest.record("report", key, inputs, outputs);
  return true;
}

int run_command(const std::string& command, const CommonArgs& args) {
  Pipeline p(load_config(args));
  const double t0 = now_s();

  if (command == "sample" || command == "all")
    run_stage(p, "sample", [&] { return stage_sample(p); });
  if (command == "train" || command == "all")
    run_stage(p, "train", [&] { return stage_train(p); });
  if (command == "rank" || command == "all")
    run_stage(p, "rank", [&] { return stage_rank(p); });
  if (command == "sweep-lambda")
    run_stage(p, "sweep-lambda", [&] { return stage_sweep(p); });
  if (command == "search" || command == "all")
    run_stage(p, "search", [&] { return stage_search(p); });
  if (command == "report" || command == "all")
    run_stage(p, "report", [&] { return stage_report(p); });

  p.finish(command, now_s() - t0);
  return conserva::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conserva: discover conservation laws of dynamical systems"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string command;
  for (const char* name : {"sample", "train", "rank", "sweep-lambda", "search",
                           "report", "all"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config,-c", args.config_path, "JSON config file");
    sub->add_option("--system,-s", args.system, "system name");
    sub->add_option("--out,-o", args.output, "output directory");
    sub->add_option("--set", args.sets,
                    "dotted-path override, e.g. --set train.lambda=0.05");
    sub->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? conserva::kExitOk : conserva::kExitConfig;
  }

  try {
    return run_command(command, args);
  } catch (const conserva::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return conserva::kExitConfig;
  } catch (const conserva::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return conserva::kExitNumeric;
  } catch (const conserva::ArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return conserva::kExitArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
