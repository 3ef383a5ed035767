// Artifact IO: CSV tables (17 significant digits, LF), little-endian f64
// blobs, SHA-256 content hashes and the per-run manifest.
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "vendor_json.hpp"

namespace conserva {

std::string format_g17(double v);

// Rows x named columns. Values are round-trip exact (17 significant digits).
void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& columns,
               const Eigen::MatrixXd& rows);

struct CsvTable {
  std::vector<std::string> columns;
  Eigen::MatrixXd rows;
};
CsvTable read_csv(const std::filesystem::path& path);

// Raw little-endian doubles. On the (x86-64) targets we build for this is a
// straight memcpy; the byte order is asserted once at startup.
void write_f64_blob(const std::filesystem::path& path,
                    const std::vector<double>& values);
std::vector<double> read_f64_blob(const std::filesystem::path& path);

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
// Like read_json but raises ArtifactError (exit 4) if the file is missing.
nlohmann::json require_json(const std::filesystem::path& path);

// Manifest: one JSON object per run directory recording, for every stage,
// the resolved config, input/output files and their content hashes. A stage
// may be skipped on rerun when its recorded hashes still match. Run-level
// metadata (config echo, version, seeds, wall clock) lives under "meta";
// artifacts themselves never carry timing so their hashes stay reproducible.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path run_dir);

  void load();   // no-op if absent
  void save() const;

  // Records a completed stage.
  void record(const std::string& stage, const nlohmann::json& config,
              const std::vector<std::filesystem::path>& inputs,
              const std::vector<std::filesystem::path>& outputs);

  // True when the stage was recorded with the same config and every listed
  // input/output file still hashes to the recorded value.
  bool up_to_date(const std::string& stage, const nlohmann::json& config) const;

  // Marks a recorded stage as reused on this run instead of re-executed.
  void note_cache_hit(const std::string& stage);
  // Keeps a partial manifest on stage failure: the error text replaces the
  // stage entry so a later rerun re-executes it.
  void record_failure(const std::string& stage, const std::string& what);

  void set_meta(const std::string& key, const nlohmann::json& value);

  const nlohmann::json& raw() const { return data_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path run_dir_;
  nlohmann::json data_;
};

}  // namespace conserva
