// Random streams and artifact IO.
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "conserva/common.hpp"
#include "conserva/io.hpp"
#include "conserva/rng.hpp"

using namespace conserva;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* tag) {
  const auto dir = fs::temp_directory_path() /
                   (std::string("conserva_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("rng draws are pure functions of (seed, stream, counter)") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());

  // Different stream, different sequence.
  RngStream c(42, 8);
  int same = 0;
  RngStream a2(42, 7);
  for (int i = 0; i < 100; ++i)
    if (a2.u64() == c.u64()) ++same;
  CHECK(same == 0);

  // Copies fork the counter state.
  RngStream d(1, 1);
  d.u64();
  RngStream e = d;
  CHECK(d.u64() == e.u64());
}

TEST_CASE("rng unit interval statistics") {
  RngStream r(123, 0);
  const int n = 200000;
  double sum = 0, sumsq = 0;
  double lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12).epsilon(0.02));
  CHECK(lo < 1e-4);
  CHECK(hi > 1 - 1e-4);
}

TEST_CASE("rng normal moments") {
  RngStream r(9, 3);
  const int n = 200000;
  double sum = 0, sumsq = 0, sumcube = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sumsq += x * x;
    sumcube += x * x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(sumcube / n) < 0.05);
}

TEST_CASE("format_g17 round-trips doubles exactly") {
  RngStream r(77, 0);
  for (int i = 0; i < 1000; ++i) {
    const double x = (r.unit() - 0.5) * std::pow(10.0, r.uniform(-20, 20));
    const double back = std::stod(format_g17(x));
    CHECK(back == x);
  }
  CHECK(std::stod(format_g17(0.1)) == 0.1);
}

TEST_CASE("csv writes header + 17-digit values with LF endings") {
  const auto dir = scratch_dir("csv");
  Eigen::MatrixXd m(2, 3);
  m << 0.1, 2.0, -3.5, 1e-300, 12345.6789012345678, -0.0;
  const auto path = dir / "t.csv";
  write_csv(path, {"a", "b", "c"}, m);

  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("a,b,c\n") == 0);
  CHECK(text.find('\r') == std::string::npos);

  const auto back = read_csv(path);
  REQUIRE(back.columns.size() == 3);
  CHECK(back.columns[1] == "b");
  REQUIRE(back.rows.rows() == 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(back.rows(i, j) == m(i, j));
  fs::remove_all(dir);
}

TEST_CASE("f64 blob round-trip") {
  const auto dir = scratch_dir("blob");
  std::vector<double> v = {0.0, -1.5, 3.14159, 1e-308, 1e308};
  const auto path = dir / "v.bin";
  write_f64_blob(path, v);
  const auto back = read_f64_blob(path);
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == v[i]);
  fs::remove_all(dir);
}

TEST_CASE("sha256 matches the published test vector") {
  // FIPS 180-2 appendix B.1: sha256("abc").
  CHECK(sha256_hex(std::string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("manifest caches stages by config and content hashes") {
  const auto dir = scratch_dir("manifest");
  const auto art = dir / "data.txt";
  std::ofstream(art) << "hello";

  Manifest m(dir);
  nlohmann::json cfg = {{"points", 10}};
  CHECK_FALSE(m.up_to_date("sample", cfg));
  m.record("sample", cfg, {}, {art});
  CHECK(m.up_to_date("sample", cfg));
  m.save();

  // Reload and keep the hit.
  Manifest m2(dir);
  m2.load();
  CHECK(m2.up_to_date("sample", cfg));

  // Config change invalidates.
  nlohmann::json cfg2 = {{"points", 20}};
  CHECK_FALSE(m2.up_to_date("sample", cfg2));

  // Artifact tampering invalidates.
  std::ofstream(art) << "tampered";
  CHECK_FALSE(m2.up_to_date("sample", cfg));

  // A recorded failure never counts as up to date.
  std::ofstream(art) << "hello";
  Manifest m3(dir);
  m3.load();
  CHECK(m3.up_to_date("sample", cfg));
  m3.record_failure("sample", "boom");
  CHECK_FALSE(m3.up_to_date("sample", cfg));
  fs::remove_all(dir);
}

TEST_CASE("require_json raises the artifact error") {
  CHECK_THROWS_AS(require_json("/nonexistent/nowhere.json"), ArtifactError);
}

TEST_CASE("worker_count respects CONSERVA_THREADS") {
  // The env var is read per call, so this is safe to toggle inside the test.
  ::setenv("CONSERVA_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("CONSERVA_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  ::unsetenv("CONSERVA_THREADS");
  CHECK(worker_count() >= 1);
}

TEST_CASE("parallel_chunks covers every index exactly once") {
  ::setenv("CONSERVA_THREADS", "4", 1);
  std::vector<int> hits(1000, 0);
  parallel_chunks(1000, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) hits[static_cast<std::size_t>(i)]++;
  });
  for (int h : hits) CHECK(h == 1);
  ::unsetenv("CONSERVA_THREADS");
}
