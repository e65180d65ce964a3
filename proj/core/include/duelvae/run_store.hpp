#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "duelvae/training.hpp"

namespace duelvae {

/// Summary written once a run finishes (run.json).
struct RunRecord {
  std::string digest;
  std::string cell;  // digest with the training seed removed
  uint64_t seed = 0;
  nlohmann::json config;
  std::optional<MetricsRow> final_metrics;
  std::optional<int64_t> drop_step;
  double wall_seconds = 0.0;
  std::string checkpoint;  // relative to the run directory
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Digest shared by all seeds of one grid cell.
std::string cell_digest(const TrainConfig& cfg);

/// Directory-backed, digest-keyed store:
///
///   <root>/runs/<digest>/config.json
///   <root>/runs/<digest>/metrics.csv
///   <root>/runs/<digest>/run.json          written once, on completion
///   <root>/runs/<digest>/eval.json         written once per evaluation
///   <root>/runs/<digest>/failure.json      last failure, if any
///   <root>/runs/<digest>/checkpoints/
///
/// Files are written to a temporary name and renamed, so readers never see
/// partial records and concurrent writers of distinct digests never collide.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  [[nodiscard]] const std::filesystem::path& root() const { return root_; }
  [[nodiscard]] std::filesystem::path run_dir(const std::string& digest) const;
  [[nodiscard]] bool is_complete(const std::string& digest) const;

  void write_config(const std::string& digest, const nlohmann::json& config) const;
  /// Refuses to replace an existing run.json.
  void write_record(const RunRecord& record) const;
  void write_failure(const std::string& digest, const std::string& message) const;
  /// Refuses to replace an existing eval.json unless `replace`.
  void write_eval(const std::string& digest, const nlohmann::json& report, bool replace = false) const;

  [[nodiscard]] std::optional<RunRecord> record(const std::string& digest) const;
  [[nodiscard]] std::optional<nlohmann::json> eval(const std::string& digest) const;
  /// All completed runs, ordered by digest.
  [[nodiscard]] std::vector<RunRecord> records() const;
  /// Hash over every completed record and evaluation; changes whenever the
  /// store's reportable content does.
  [[nodiscard]] std::string snapshot_digest() const;

 private:
  std::filesystem::path root_;
};

void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace duelvae
