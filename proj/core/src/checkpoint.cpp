#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duelvae/config.hpp"
#include "duelvae/training.hpp"

namespace duelvae {

namespace {

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return {{"format_version", m.format_version},
          {"config_digest", m.config_digest},
          {"step", m.step},
          {"seed", m.seed},
          {"config", nlohmann::json::parse(m.config_json)},
          {"timeline_csv", m.timeline_csv},
          {"drop_step", m.drop_step ? nlohmann::json(*m.drop_step) : nlohmann::json(nullptr)}};
}

CheckpointMeta meta_from_archive(torch::serialize::InputArchive& archive,
                                 const std::filesystem::path& path) {
  c10::IValue value;
  if (!archive.try_read("meta", value) || !value.isString())
    throw std::runtime_error(path.string() + ": not a duelvae checkpoint (no meta record)");
  const auto j = nlohmann::json::parse(value.toStringRef());
  CheckpointMeta m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kCheckpointFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint format version " +
                             std::to_string(m.format_version));
  m.config_digest = j.at("config_digest").get<std::string>();
  m.step = j.at("step").get<int64_t>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_json = j.at("config").dump();
  m.timeline_csv = j.at("timeline_csv").get<std::string>();
  if (!j.at("drop_step").is_null()) m.drop_step = j.at("drop_step").get<int64_t>();
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, VaeModel& model,
                     torch::optim::Adam* optimizer, const CheckpointMeta& meta) {
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta_to_json(meta).dump()));
  torch::serialize::OutputArchive model_archive;
  model->save(model_archive);
  archive.write("model", model_archive);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive opt_archive;
    optimizer->save(opt_archive);
    archive.write("optimizer", opt_archive);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return meta_from_archive(archive, path);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, VaeModel& model,
                               torch::optim::Adam* optimizer) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  auto meta = meta_from_archive(archive, path);
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  model->load(model_archive);
  if (optimizer != nullptr) {
    torch::serialize::InputArchive opt_archive;
    if (!archive.try_read("optimizer", opt_archive))
      throw std::runtime_error(path.string() + ": checkpoint has no optimizer state");
    optimizer->load(opt_archive);
  }
  return meta;
}

VaeModel load_model(const std::filesystem::path& path, TrainConfig* config_out) {
  const auto meta = read_checkpoint_meta(path);
  auto cfg = train_config_from_json(nlohmann::json::parse(meta.config_json));
  VaeModel model(cfg.model_config(), cfg.seed);
  if (cfg.double_precision) model->to(torch::kDouble);
  load_checkpoint(path, model, nullptr);
  if (config_out != nullptr) *config_out = cfg;
  return model;
}

}  // namespace duelvae
