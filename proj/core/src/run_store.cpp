#include "duelvae/run_store.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "duelvae/config.hpp"

namespace duelvae {

using nlohmann::json;

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  static std::atomic<int> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary);
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json row_to_json(const MetricsRow& r) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"step", r.step},         {"distortion", num(r.distortion)},
          {"aux_distortion", num(r.aux_distortion)}, {"rate", num(r.rate)},
          {"elbo_nats", num(r.elbo_nats)}, {"beta_eff", num(r.beta_eff)},
          {"lr", num(r.lr)}};
}

MetricsRow row_from_json(const json& j) {
  auto num = [&](const char* k) {
    return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
  };
  MetricsRow r;
  r.step = j.at("step").get<int64_t>();
  r.distortion = num("distortion");
  r.aux_distortion = num("aux_distortion");
  r.rate = num("rate");
  r.elbo_nats = num("elbo_nats");
  r.beta_eff = num("beta_eff");
  r.lr = num("lr");
  return r;
}

}  // namespace

json to_json(const RunRecord& r) {
  return {{"digest", r.digest},
          {"cell", r.cell},
          {"seed", r.seed},
          {"config", r.config},
          {"final_metrics", r.final_metrics ? row_to_json(*r.final_metrics) : json(nullptr)},
          {"drop_step", r.drop_step ? json(*r.drop_step) : json(nullptr)},
          {"wall_seconds", r.wall_seconds},
          {"checkpoint", r.checkpoint}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.digest = j.at("digest").get<std::string>();
  r.cell = j.at("cell").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.config = j.at("config");
  if (!j.at("final_metrics").is_null()) r.final_metrics = row_from_json(j.at("final_metrics"));
  if (!j.at("drop_step").is_null()) r.drop_step = j.at("drop_step").get<int64_t>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

std::string cell_digest(const TrainConfig& cfg) {
  auto doc = to_json(cfg);
  doc["data"].erase("root");
  doc["training"].erase("seed");
  return sha256_hex(canonical_json(doc));
}

RunStore::RunStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_ / "runs");
}

std::filesystem::path RunStore::run_dir(const std::string& digest) const {
  if (digest.size() < 16 || digest.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw std::invalid_argument("malformed run digest: " + digest);
  return root_ / "runs" / digest.substr(0, 16);
}

bool RunStore::is_complete(const std::string& digest) const {
  return std::filesystem::exists(run_dir(digest) / "run.json");
}

void RunStore::write_config(const std::string& digest, const json& config) const {
  write_file_atomic(run_dir(digest) / "config.json", config.dump(2) + "\n");
}

void RunStore::write_record(const RunRecord& record) const {
  const auto path = run_dir(record.digest) / "run.json";
  if (std::filesystem::exists(path))
    throw std::runtime_error("run record already exists: " + path.string());
  write_file_atomic(path, to_json(record).dump(2) + "\n");
}

void RunStore::write_failure(const std::string& digest, const std::string& message) const {
  write_file_atomic(run_dir(digest) / "failure.json", json{{"error", message}}.dump(2) + "\n");
}

void RunStore::write_eval(const std::string& digest, const json& report, bool replace) const {
  const auto path = run_dir(digest) / "eval.json";
  if (!replace && std::filesystem::exists(path))
    throw std::runtime_error("evaluation already recorded: " + path.string());
  write_file_atomic(path, report.dump(2) + "\n");
}

std::optional<RunRecord> RunStore::record(const std::string& digest) const {
  const auto path = run_dir(digest) / "run.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  return run_record_from_json(json::parse(read_file(path)));
}

std::optional<json> RunStore::eval(const std::string& digest) const {
  const auto path = run_dir(digest) / "eval.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  return json::parse(read_file(path));
}

std::vector<RunRecord> RunStore::records() const {
  std::vector<RunRecord> out;
  for (const auto& e : std::filesystem::directory_iterator(root_ / "runs")) {
    const auto path = e.path() / "run.json";
    if (e.is_directory() && std::filesystem::exists(path))
      out.push_back(run_record_from_json(json::parse(read_file(path))));
  }
  std::sort(out.begin(), out.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.digest < b.digest; });
  return out;
}

std::string RunStore::snapshot_digest() const {
  std::string acc;
  for (const auto& r : records()) {
    acc += r.digest + "\n" + read_file(run_dir(r.digest) / "run.json");
    if (auto ev = eval(r.digest)) acc += canonical_json(*ev);
  }
  return sha256_hex(acc);
}

}  // namespace duelvae
