#include "duelvae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <regex>
#include <sstream>

#include <torch/torch.h>

#include "duelvae/config.hpp"

namespace duelvae {

void TrainConfig::validate() const {
  objective.validate();
  model_config().validate();
  if (decoder == DecoderKind::dueling && !objective.aux_kind)
    throw std::invalid_argument("dueling decoder requires objective.aux_kind");
  if (decoder != DecoderKind::dueling && decoder != DecoderKind::cnn && objective.aux_kind)
    throw std::invalid_argument("aux_kind is only meaningful for dueling (or cnn) decoders");
  if (decoder == DecoderKind::cnn && size == PixelCnnSize::enlarged)
    throw std::invalid_argument("enlarged size is valid only for pixelcnn or dueling decoders");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be nonnegative");
  if (log_every < 1) throw std::invalid_argument("log_every must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be nonnegative");
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.decoder = decoder;
  m.size = size;
  m.latent_dim = latent_dim;
  m.image_size = data.image_size;
  m.levels = levels();
  m.aux_kind = objective.aux_kind;
  m.components = components;
  m.pseudo_inputs = pseudo_inputs;
  m.widths = widths;
  return m;
}

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path periodic_checkpoint(const std::filesystem::path& dir, int64_t step) {
  std::ostringstream name;
  name << "step_" << std::setw(7) << std::setfill('0') << step << ".pt";
  return dir / "checkpoints" / name.str();
}

std::optional<std::filesystem::path> newest_periodic(const std::filesystem::path& dir) {
  const auto ckdir = dir / "checkpoints";
  if (!std::filesystem::exists(ckdir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  static const std::regex kName(R"(step_\d{7}\.pt)");
  for (const auto& e : std::filesystem::directory_iterator(ckdir)) {
    const auto name = e.path().filename().string();
    if (!std::regex_match(name, kName)) continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

}  // namespace

std::string MetricsTimeline::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_double(r.distortion) + "," +
           format_double(r.aux_distortion) + "," + format_double(r.rate) + "," +
           format_double(r.elbo_nats) + "," + format_double(r.beta_eff) + "," + format_double(r.lr) +
           "\n";
  }
  return out;
}

MetricsTimeline MetricsTimeline::from_csv(const std::string& text) {
  MetricsTimeline t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw std::runtime_error("metrics csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw std::runtime_error("metrics csv: expected 7 columns");
    auto num = [](const std::string& s) {
      return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    MetricsRow r;
    r.step = std::stoll(cells[0]);
    r.distortion = num(cells[1]);
    r.aux_distortion = num(cells[2]);
    r.rate = num(cells[3]);
    r.elbo_nats = num(cells[4]);
    r.beta_eff = num(cells[5]);
    r.lr = num(cells[6]);
    t.append(r);
  }
  return t;
}

void MetricsTimeline::append(const MetricsRow& row) {
  if (!rows.empty() && row.step <= rows.back().step)
    throw std::logic_error("metrics timeline steps must increase");
  rows.push_back(row);
}

bool MetricsTimeline::operator==(const MetricsTimeline& o) const {
  if (rows.size() != o.rows.size() || drop_step != o.drop_step) return false;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = o.rows[i];
    if (a.step != b.step || !same_double(a.distortion, b.distortion) ||
        !same_double(a.aux_distortion, b.aux_distortion) || !same_double(a.rate, b.rate) ||
        !same_double(a.elbo_nats, b.elbo_nats) || !same_double(a.beta_eff, b.beta_eff) ||
        !same_double(a.lr, b.lr))
      return false;
  }
  return true;
}

TrainingDiverged::TrainingDiverged(int64_t step, std::optional<std::filesystem::path> snapshot)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) +
                         (snapshot ? "; diagnostic snapshot at " + snapshot->string() : "")),
      step_(step),
      snapshot_(std::move(snapshot)) {}

Trainer::Trainer(const TrainConfig& cfg, const LabeledImageDataset& train,
                 std::optional<std::filesystem::path> run_dir)
    : cfg_(cfg),
      digest_(config_digest(cfg)),
      batches_(train, cfg.batch_size, mix_seed(cfg.seed, 0xba7c), cfg.total_steps),
      run_dir_(std::move(run_dir)) {
  cfg_.validate();
  if (train.levels() != cfg_.levels() || train.height != cfg_.data.image_size)
    throw std::invalid_argument("training data does not match the configuration");
  torch::set_num_threads(1);
  model_ = VaeModel(cfg_.model_config(), cfg_.seed);
  if (cfg_.double_precision) model_->to(torch::kDouble);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(),
      torch::optim::AdamOptions(cfg_.lr(0)).betas({0.9, 0.999}).eps(1e-8));
  timeline_.drop_step = cfg_.objective.drop_aux_at_step;
}

void Trainer::restore(const std::filesystem::path& checkpoint) {
  const auto meta = load_checkpoint(checkpoint, model_, optimizer_.get());
  if (meta.config_digest != digest_)
    throw std::runtime_error("checkpoint was written for a different configuration");
  step_ = meta.step;
  timeline_ = MetricsTimeline::from_csv(meta.timeline_csv);
  timeline_.drop_step = meta.drop_step;
  window_ = {};
  window_count_ = 0;
}

LossBreakdown Trainer::step() {
  const int64_t t = step_;
  const double lr = cfg_.lr(t);
  for (auto& group : optimizer_->param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

  model_->train();
  auto batch = batches_.batch_at(t);
  auto gen = make_generator(mix_seed(cfg_.seed, 0x10000 + static_cast<uint64_t>(t)));
  optimizer_->zero_grad();
  auto out = compute_loss(model_, batch.pixels, cfg_.objective, t, gen);
  if (!std::isfinite(out.loss.item<double>())) {
    std::optional<std::filesystem::path> snapshot;
    if (run_dir_) {
      snapshot = *run_dir_ / "checkpoints" / "diverged.pt";
      save(*snapshot);
    }
    throw TrainingDiverged(t, snapshot);
  }
  out.loss.backward();
  optimizer_->step();
  ++step_;

  window_.distortion += out.distortion;
  window_.aux_distortion += out.aux_distortion;
  window_.rate += out.rate;
  window_.beta_eff += out.beta_eff;
  window_.lr = lr;
  ++window_count_;
  return out;
}

void Trainer::flush_window() {
  if (window_count_ == 0) return;
  const double n = static_cast<double>(window_count_);
  MetricsRow row;
  row.step = step_;
  row.distortion = window_.distortion / n;
  row.aux_distortion = window_.aux_distortion / n;
  row.rate = window_.rate / n;
  row.elbo_nats = row.distortion + row.rate;
  row.beta_eff = window_.beta_eff / n;
  row.lr = window_.lr;
  timeline_.append(row);
  window_ = {};
  window_count_ = 0;
}

void Trainer::run_until(int64_t until, const std::function<void(const MetricsRow&)>& on_log) {
  while (step_ < until) {
    step();
    if (step_ % cfg_.log_every == 0 || step_ == until) {
      flush_window();
      if (on_log) on_log(timeline_.rows.back());
    }
    if (run_dir_ && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < until) {
      flush_window();
      save(periodic_checkpoint(*run_dir_, step_));
    }
  }
}

void Trainer::save(const std::filesystem::path& path) {
  CheckpointMeta meta;
  meta.config_digest = digest_;
  meta.step = step_;
  meta.seed = cfg_.seed;
  meta.config_json = to_json(cfg_).dump();
  meta.timeline_csv = timeline_.to_csv();
  meta.drop_step = timeline_.drop_step;
  save_checkpoint(path, model_, optimizer_.get(), meta);
}

TrainResult train(const TrainConfig& cfg, const LabeledImageDataset& train,
                  const std::optional<std::filesystem::path>& run_dir) {
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(cfg, train, run_dir);
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    if (auto ck = newest_periodic(*run_dir)) trainer.restore(*ck);
  }
  trainer.run_until(cfg.total_steps);

  TrainResult result;
  result.timeline = trainer.timeline();
  if (run_dir) {
    result.checkpoint = *run_dir / "checkpoints" / "final.pt";
    trainer.save(*result.checkpoint);
    write_text_atomic(*run_dir / "metrics.csv", result.timeline.to_csv());
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

int64_t default_extra_steps(int64_t total_steps, int64_t drop_step) {
  if (drop_step >= total_steps) return 20000;
  return total_steps + 10000 - drop_step;
}

TrainResult drop_regularization_run(const TrainConfig& cfg, int64_t drop_step,
                                    std::optional<int64_t> extra_steps,
                                    const LabeledImageDataset& train,
                                    const std::optional<std::filesystem::path>& run_dir) {
  if (cfg.decoder != DecoderKind::dueling)
    throw std::invalid_argument("drop-regularization needs a dueling configuration");
  if (drop_step < 0 || drop_step > cfg.total_steps)
    throw std::invalid_argument("drop step must lie within the training schedule [0, " +
                                std::to_string(cfg.total_steps) + "]");
  const int64_t extra = extra_steps.value_or(default_extra_steps(cfg.total_steps, drop_step));
  if (extra < 0) throw std::invalid_argument("extra_steps must be nonnegative");
  TrainConfig run = cfg;
  run.objective.drop_aux_at_step = drop_step;
  run.total_steps = drop_step + extra;
  return duelvae::train(run, train, run_dir);
}

}  // namespace duelvae
