#include "conserva/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "conserva/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "f64 blobs are little-endian; add byte swapping for this target");

namespace conserva {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// Artifact writers create missing parent directories so callers can lay out
// run folders without a separate mkdir pass.
void ensure_parent(const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

}  // namespace

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& columns,
               const Eigen::MatrixXd& rows) {
  if (columns.size() != static_cast<std::size_t>(rows.cols()))
    throw ConfigError("csv: column name count does not match data width");
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings
  if (!out) throw ArtifactError("csv: cannot open " + path.string());
  for (std::size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c];
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      out << (c ? "," : "") << format_g17(rows(r, c));
    out << '\n';
  }
  if (!out) throw ArtifactError("csv: write failed for " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("csv: missing " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ArtifactError("csv: empty " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  std::vector<double> values;
  std::size_t nrows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.c_str();
    const char* end = p + line.size();
    std::size_t got = 0;
    while (p < end) {
      double v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw ArtifactError("csv: bad number in " + path.string());
      values.push_back(v);
      ++got;
      p = next;
      if (p < end && *p == ',') ++p;
    }
    if (got != t.columns.size())
      throw ArtifactError("csv: ragged row in " + path.string());
    ++nrows;
  }
  t.rows.resize(nrows, static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t r = 0; r < nrows; ++r)
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      t.rows(r, c) = values[r * t.columns.size() + c];
  return t;
}

void write_f64_blob(const std::filesystem::path& path,
                    const std::vector<double>& values) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("blob: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw ArtifactError("blob: write failed for " + path.string());
}

std::vector<double> read_f64_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ArtifactError("blob: missing " + path.string());
  const std::streamsize bytes = in.tellg();
  if (bytes % sizeof(double))
    throw ArtifactError("blob: truncated " + path.string());
  std::vector<double> values(static_cast<std::size_t>(bytes) / sizeof(double));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), bytes);
  if (!in) throw ArtifactError("blob: read failed for " + path.string());
  return values;
}

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  if (!EVP_Digest(data, len, md, &md_len, EVP_sha256(), nullptr))
    throw NumericError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out(md_len * 2, '0');
  for (unsigned i = 0; i < md_len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("hash: missing " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  EVP_DigestFinal_ex(ctx, md, &md_len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out(md_len * 2, '0');
  for (unsigned i = 0; i < md_len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 0xf];
  }
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("json: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("json: missing " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

nlohmann::json require_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ArtifactError("required artifact missing: " + path.string());
  return read_json(path);
}

Manifest::Manifest(std::filesystem::path run_dir)
    : path_(run_dir / "manifest.json"), run_dir_(std::move(run_dir)) {
  data_ = nlohmann::json::object();
}

void Manifest::load() {
  if (std::filesystem::exists(path_)) data_ = read_json(path_);
}

void Manifest::save() const { write_json(path_, data_); }

// Artifacts are keyed by their path relative to the run directory so files in
// sub-directories (report/summary.txt) can be re-located by up_to_date.
static nlohmann::json hash_files(const std::filesystem::path& base,
                                 const std::vector<std::filesystem::path>& files) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : files) {
    auto rel = f.lexically_relative(base);
    if (rel.empty() || *rel.begin() == "..") rel = f.filename();
    out[rel.generic_string()] = sha256_file(f);
  }
  return out;
}

void Manifest::record(const std::string& stage, const nlohmann::json& config,
                      const std::vector<std::filesystem::path>& inputs,
                      const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json entry;
  entry["config"] = config;
  entry["config_hash"] = sha256_hex(config.dump());
  entry["inputs"] = hash_files(run_dir_, inputs);
  entry["outputs"] = hash_files(run_dir_, outputs);
  entry["cache_hit"] = false;
  data_["stages"][stage] = entry;
}

bool Manifest::up_to_date(const std::string& stage,
                          const nlohmann::json& config) const {
  if (!data_.contains("stages") || !data_["stages"].contains(stage))
    return false;
  const auto& entry = data_["stages"][stage];
  if (entry.contains("error")) return false;
  if (entry.value("config_hash", "") != sha256_hex(config.dump())) return false;
  for (const char* key : {"inputs", "outputs"}) {
    if (!entry.contains(key)) return false;
    for (auto it = entry[key].begin(); it != entry[key].end(); ++it) {
      const auto file = run_dir_ / it.key();
      if (!std::filesystem::exists(file)) return false;
      if (sha256_file(file) != it.value().get<std::string>()) return false;
    }
  }
  return true;
}

void Manifest::note_cache_hit(const std::string& stage) {
  if (data_.contains("stages") && data_["stages"].contains(stage))
    data_["stages"][stage]["cache_hit"] = true;
}

void Manifest::record_failure(const std::string& stage,
                              const std::string& what) {
  nlohmann::json entry;
  entry["error"] = what;
  data_["stages"][stage] = entry;
}

void Manifest::set_meta(const std::string& key, const nlohmann::json& value) {
  data_["meta"][key] = value;
}

}  // namespace conserva
