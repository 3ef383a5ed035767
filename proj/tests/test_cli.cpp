// End-to-end checks of the command-line pipeline: artifact layout, manifest
// caching, exit codes, and byte-level determinism of reruns. The binary under
// test is passed in through CONSERVA_CLI_PATH at compile time.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>

#include "conserva/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunOut {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / "conserva_cli_tests" / tag;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunOut run_cli(const std::string& args, const fs::path& log_dir) {
  fs::create_directories(log_dir);
  const fs::path so = log_dir / "stdout.txt";
  const fs::path se = log_dir / "stderr.txt";
  const std::string cmd = std::string(CONSERVA_CLI_PATH) + " " + args + " > \"" +
                          so.string() + "\" 2> \"" + se.string() + "\"";
  const int rc = std::system(cmd.c_str());
  RunOut r;
  r.code = rc == -1 ? -1 : WEXITSTATUS(rc);
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

// A deliberately small but complete pipeline configuration. The numbers are
// chosen so the whole run takes a few seconds: the searched formula space at
// two variables and five tokens is tiny, and x^2 + p^2 sits inside it.
json tiny_config(const std::string& out_dir) {
  return json{
      {"system", "damped-ho"},
      {"params", {{"gamma", 0.0}}},
      {"output", out_dir},
      {"sample", {{"points", 600}, {"seed", 1}}},
      {"train",
       {{"models", 2},
        {"epochs", 3},
        {"batch", 64},
        {"hidden", 16},
        {"sub_hidden", 8},
        {"seed", 1}}},
      {"rank", {{"eval_points", 40}, {"anchors", 30}}},
      {"search", {{"max_len", 5}, {"target_count", 1}, {"seed", 1}}},
  };
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path p = dir / "config.json";
  conserva::write_json(p, cfg);
  return p;
}

}  // namespace

TEST_CASE("full pipeline produces artifacts, caches reruns, and is deterministic") {
  const fs::path base = scratch_dir("pipeline");
  const fs::path run_a = base / "a";
  const fs::path cfg_a = write_config(base, tiny_config(run_a.string()));

  const auto first = run_cli("all -c \"" + cfg_a.string() + "\"", base / "log1");
  CAPTURE(first.err);
  REQUIRE(first.code == 0);

  for (const char* name :
       {"batch.csv", "batch.meta.json", "field_0.json", "field_0.bin",
        "field_1.json", "field_1.bin", "history.csv", "train_summary.json",
        "rank.json", "search.json", "manifest.json", "report/summary.txt",
        "report/explained_variance.csv", "report/n_eff_vs_scale.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(run_a / name));
  }

  const std::string summary = slurp(run_a / "report" / "summary.txt");
  CHECK(summary.find("system: damped-ho") != std::string::npos);
  CHECK(summary.find("n_c = ") != std::string::npos);
  CHECK(summary.find("manifold rank") != std::string::npos);
  CHECK(summary.find("accepted formulas (1):") != std::string::npos);
  CHECK(summary.find("aQbQ+") != std::string::npos);
  CHECK(summary.find('\r') == std::string::npos);
  // The summary is also printed to stdout.
  CHECK(first.out.find("accepted formulas (1):") != std::string::npos);

  // The batch CSV is plain LF-terminated text with a header row.
  const std::string batch_text = slurp(run_a / "batch.csv");
  CHECK(batch_text.find('\r') == std::string::npos);
  CHECK(batch_text.rfind("x,p,f_x,f_p", 0) == 0);

  json man = conserva::read_json(run_a / "manifest.json");
  CHECK(man["meta"]["version"].get<std::string>() == "0.1.0");
  CHECK(man["meta"]["system"].get<std::string>() == "damped-ho");
  CHECK(man["meta"]["seeds"]["sample"].get<std::uint64_t>() == 1);
  CHECK(man["meta"].contains("wall_clock_s"));
  for (const char* st : {"sample", "train", "rank", "search", "report"}) {
    CAPTURE(st);
    REQUIRE(man["stages"].contains(st));
    CHECK_FALSE(man["stages"][st]["cache_hit"].get<bool>());
  }
  CHECK(man["stages"]["sample"]["outputs"].contains("batch.csv"));

  const std::string sum_hash = conserva::sha256_file(run_a / "report/summary.txt");
  const std::string batch_hash = conserva::sha256_file(run_a / "batch.csv");
  const std::string search_hash = conserva::sha256_file(run_a / "search.json");
  const std::string hist_hash = conserva::sha256_file(run_a / "history.csv");

  SUBCASE("rerun is fully cached and leaves artifacts untouched") {
    const auto second =
        run_cli("all -c \"" + cfg_a.string() + "\"", base / "log2");
    CAPTURE(second.err);
    REQUIRE(second.code == 0);
    man = conserva::read_json(run_a / "manifest.json");
    for (const char* st : {"sample", "train", "rank", "search", "report"}) {
      CAPTURE(st);
      CHECK(man["stages"][st]["cache_hit"].get<bool>());
    }
    CHECK(conserva::sha256_file(run_a / "report/summary.txt") == sum_hash);
    CHECK(conserva::sha256_file(run_a / "search.json") == search_hash);
    CHECK(second.err.find("cached") != std::string::npos);
  }

  SUBCASE("identical config in a fresh directory reproduces artifacts byte for byte") {
    const fs::path run_b = base / "b";
    const fs::path cfg_b = write_config(base / "bdir", tiny_config(run_b.string()));
    const auto other = run_cli("all -c \"" + cfg_b.string() + "\"", base / "log3");
    CAPTURE(other.err);
    REQUIRE(other.code == 0);
    CHECK(conserva::sha256_file(run_b / "report/summary.txt") == sum_hash);
    CHECK(conserva::sha256_file(run_b / "batch.csv") == batch_hash);
    CHECK(conserva::sha256_file(run_b / "search.json") == search_hash);
    CHECK(conserva::sha256_file(run_b / "history.csv") == hist_hash);
  }

  SUBCASE("a dotted override invalidates only the stages it touches") {
    const auto third = run_cli(
        "all -c \"" + cfg_a.string() + "\" --set search.max_len=4",
        base / "log4");
    CAPTURE(third.err);
    REQUIRE(third.code == 0);
    man = conserva::read_json(run_a / "manifest.json");
    CHECK(man["stages"]["sample"]["cache_hit"].get<bool>());
    CHECK(man["stages"]["train"]["cache_hit"].get<bool>());
    CHECK(man["stages"]["rank"]["cache_hit"].get<bool>());
    CHECK_FALSE(man["stages"]["search"]["cache_hit"].get<bool>());
    CHECK_FALSE(man["stages"]["report"]["cache_hit"].get<bool>());
    // No four-token conserved formula exists for this system.
    const std::string s = slurp(run_a / "report" / "summary.txt");
    CHECK(s.find("no formulas accepted") != std::string::npos);
  }
}

TEST_CASE("exit codes distinguish config, numeric, and artifact failures") {
  const fs::path base = scratch_dir("exit_codes");

  SUBCASE("unknown system is a config error") {
    const auto r = run_cli(
        "sample -s hubbard -o \"" + (base / "x1").string() + "\"", base / "l1");
    CHECK(r.code == 2);
    CHECK(r.err.find("config error") != std::string::npos);
  }

  SUBCASE("rank without a sampled batch is a missing artifact") {
    const fs::path dir = base / "x2";
    const auto r =
        run_cli("rank -s damped-ho -o \"" + dir.string() + "\"", base / "l2");
    CHECK(r.code == 4);
    CHECK(r.err.find("missing artifact") != std::string::npos);
    // The failure is recorded in a partial manifest.
    const json man = conserva::read_json(dir / "manifest.json");
    REQUIRE(man["stages"].contains("rank"));
    CHECK(man["stages"]["rank"].contains("error"));
  }

  SUBCASE("out-of-range override is a config error even before artifacts") {
    const auto r = run_cli("train -s damped-ho -o \"" + (base / "x3").string() +
                               "\" --set train.epochs=0",
                           base / "l3");
    CHECK(r.code == 2);
  }

  SUBCASE("malformed override is a config error") {
    const auto r = run_cli(
        "sample -s damped-ho -o \"" + (base / "x4").string() + "\" --set garbage",
        base / "l4");
    CHECK(r.code == 2);
  }

  SUBCASE("unknown flag is a usage error") {
    const auto r = run_cli("sample --bogus", base / "l5");
    CHECK(r.code == 2);
  }

  SUBCASE("missing config file is a config error") {
    const auto r =
        run_cli("sample -c /nonexistent/conserva.json", base / "l6");
    CHECK(r.code == 2);
  }

  SUBCASE("help exits cleanly") {
    const auto r = run_cli("--help", base / "l7");
    CHECK(r.code == 0);
    CHECK(r.out.find("sample") != std::string::npos);
  }
}

TEST_CASE("lambda sweep writes per-seed rows and the report aggregates them") {
  const fs::path base = scratch_dir("sweep");
  const fs::path run = base / "run";
  json cfg = {
      {"system", "damped-ho"},
      {"params", {{"gamma", 0.0}}},
      {"output", run.string()},
      {"sweep",
       {{"grid", {0.1, 1.0}},
        {"seeds", 1},
        {"models", 2},
        {"epochs", 2},
        {"points", 192},
        {"batch", 64},
        {"hidden", 8},
        {"sub_hidden", 4}}},
  };
  const fs::path cfg_path = write_config(base, cfg);

  const auto sweep =
      run_cli("sweep-lambda -c \"" + cfg_path.string() + "\"", base / "l1");
  CAPTURE(sweep.err);
  REQUIRE(sweep.code == 0);
  const std::string text = slurp(run / "lambda_sweep.csv");
  CHECK(text.rfind("lambda,seed,conservation,independence,total", 0) == 0);

  const auto table = conserva::read_csv(run / "lambda_sweep.csv");
  REQUIRE(table.rows.rows() == 2);  // two lambdas, one seed each
  CHECK(table.rows(0, 0) == doctest::Approx(0.1));
  CHECK(table.rows(1, 0) == doctest::Approx(1.0));

  const auto rep = run_cli("report -c \"" + cfg_path.string() + "\"", base / "l2");
  CAPTURE(rep.err);
  REQUIRE(rep.code == 0);
  const auto agg = conserva::read_csv(run / "report" / "lambda_sweep.csv");
  REQUIRE(agg.rows.rows() == 2);
  CHECK(agg.columns.size() == 3);
  CHECK(agg.rows(0, 0) == doctest::Approx(0.1));
}
