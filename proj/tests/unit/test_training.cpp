#include <gtest/gtest.h>

#include <cmath>

#include "duelvae/config.hpp"
#include "duelvae/grid.hpp"
#include "duelvae/schedule.hpp"
#include "duelvae/training.hpp"
#include "support.hpp"

using namespace duelvae;
using duelvae::testing::synthetic_dataset;
using duelvae::testing::TempDir;
using duelvae::testing::tiny_config;

namespace {

const LabeledImageDataset& tiny_train() {
  static const auto ds = synthetic_dataset(200, 8, 2, 21);
  return ds;
}

void expect_identity(const MetricsTimeline& t) {
  for (const auto& r : t.rows)
    EXPECT_LE(std::abs(r.elbo_nats - (r.distortion + r.rate)), 1e-6 * std::abs(r.elbo_nats)) << "step " << r.step;
}

double max_param_diff(VaeModel& a, VaeModel& b) {
  double worst = 0.0;
  auto pa = a->parameters(), pb = b->parameters();
  for (size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, (pa[i] - pb[i]).abs().max().item<double>());
  return worst;
}

}  // namespace

TEST(LrSchedule, PinnedValues) {
  LrSchedule lr;
  EXPECT_EQ(lr(0), 1e-10);
  const double direct1000 = 1e-3 * std::pow(0.66, 0.1) * (1 - 0.66) + 1e-10;
  const double direct20000 = 1e-3 * 0.66 * 0.66 * (1 - std::pow(0.66, 20.0)) + 1e-10;
  EXPECT_NEAR(lr(1000), direct1000, 1e-6 * direct1000);
  EXPECT_NEAR(lr(20000), direct20000, 1e-6 * direct20000);
  EXPECT_NEAR(lr(1000), 3.26e-4, 0.01e-4);
  EXPECT_NEAR(lr(20000), 4.36e-4, 0.01e-4);
  EXPECT_THROW((void)lr(-1), std::invalid_argument);
}

TEST(LrSchedule, WarmupThenDecay) {
  LrSchedule lr;
  int64_t argmax = 0;
  for (int64_t t = 0; t <= 20000; ++t) {
    EXPECT_GE(lr(t), 1e-10);
    if (t > 0) EXPECT_LT(std::abs(lr(t) - lr(t - 1)), 1e-6);
    if (lr(t) > lr(argmax)) argmax = t;
  }
  EXPECT_GT(argmax, 0);
  EXPECT_LT(lr(20000), lr(argmax));
}

TEST(MetricsTimeline, CsvHeaderAndRoundTrip) {
  MetricsTimeline t;
  t.append({100, 50.5, std::nan(""), 3.25, 53.75, 1.0, 3e-4});
  t.append({200, 49.0, 12.0, 4.0, 53.0, 0.5, 4e-4});
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,distortion,aux_distortion,rate,elbo_nats,beta_eff,lr");
  EXPECT_EQ(MetricsTimeline::from_csv(csv), t);
  EXPECT_THROW(t.append({200, 1, 1, 1, 2, 1, 1}), std::logic_error);
}

TEST(Train, SmokeRunKeepsTheElboIdentity) {
  auto cfg = tiny_config(DecoderKind::dueling, 1);
  cfg.total_steps = 500;
  cfg.log_every = 100;
  auto result = train(cfg, tiny_train());
  ASSERT_EQ(result.timeline.rows.size(), 5u);
  EXPECT_EQ(result.timeline.rows.back().step, 500);
  expect_identity(result.timeline);
  for (const auto& r : result.timeline.rows) {
    EXPECT_TRUE(std::isfinite(r.distortion) && std::isfinite(r.rate) && std::isfinite(r.aux_distortion));
    EXPECT_DOUBLE_EQ(r.lr, cfg.lr(r.step - 1));
  }
  EXPECT_LT(result.timeline.rows.back().elbo_nats, result.timeline.rows.front().elbo_nats);
}

TEST(Train, BitReproducible) {
  for (auto decoder : {DecoderKind::cnn, DecoderKind::dueling}) {
    auto cfg = tiny_config(decoder, 3);
    cfg.total_steps = 40;
    auto a = train(cfg, tiny_train());
    auto b = train(cfg, tiny_train());
    EXPECT_EQ(a.timeline, b.timeline);
    cfg.seed = 4;
    EXPECT_FALSE(a.timeline == train(cfg, tiny_train()).timeline);
  }
}

TEST(Train, CheckpointRoundTripContinuesExactly) {
  TempDir dir("ckpt");
  auto cfg = tiny_config(DecoderKind::dueling, 5);
  cfg.double_precision = true;
  cfg.total_steps = 31;
  Trainer straight(cfg, tiny_train());
  straight.run_until(31);

  Trainer first(cfg, tiny_train());
  first.run_until(30);
  first.save(dir.path() / "ck.pt");
  Trainer resumed(cfg, tiny_train());
  resumed.restore(dir.path() / "ck.pt");
  EXPECT_EQ(resumed.current_step(), 30);
  resumed.run_until(31);
  EXPECT_LE(max_param_diff(straight.model(), resumed.model()), 1e-6);
  EXPECT_EQ(straight.timeline(), resumed.timeline());

  auto meta = read_checkpoint_meta(dir.path() / "ck.pt");
  EXPECT_EQ(meta.format_version, kCheckpointFormatVersion);
  EXPECT_EQ(meta.config_digest, config_digest(cfg));
  EXPECT_EQ(meta.step, 30);
  TrainConfig loaded;
  auto model = load_model(dir.path() / "ck.pt", &loaded);
  EXPECT_EQ(config_digest(loaded), config_digest(cfg));
  EXPECT_EQ(max_param_diff(model, first.model()), 0.0);

  auto other = cfg;
  other.seed = 6;
  Trainer mismatched(other, tiny_train());
  EXPECT_THROW(mismatched.restore(dir.path() / "ck.pt"), std::runtime_error);
}

TEST(Train, ResumesFromPeriodicCheckpoint) {
  TempDir a("resume_a"), b("resume_b");
  auto cfg = tiny_config(DecoderKind::pixelcnn, 7);
  cfg.total_steps = 30;
  cfg.checkpoint_every = 10;
  auto full = train(cfg, tiny_train(), a.path());
  EXPECT_TRUE(std::filesystem::exists(a.path() / "checkpoints" / "step_0000020.pt"));
  EXPECT_TRUE(std::filesystem::exists(a.path() / "metrics.csv"));

  // A run killed after its step-20 checkpoint.
  std::filesystem::create_directories(b.path() / "checkpoints");
  std::filesystem::copy_file(a.path() / "checkpoints" / "step_0000020.pt",
                             b.path() / "checkpoints" / "step_0000020.pt");
  auto resumed = train(cfg, tiny_train(), b.path());
  EXPECT_EQ(full.timeline, resumed.timeline);
}

TEST(Train, NonFiniteLossAbortsWithSnapshot) {
  TempDir dir("diverge");
  auto cfg = tiny_config(DecoderKind::cnn, 8);
  Trainer t(cfg, tiny_train(), dir.path());
  {
    torch::NoGradGuard no_grad;
    t.model()->encoder->parameters().front().fill_(std::nanf(""));
  }
  try {
    t.step();
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0);
    ASSERT_TRUE(e.snapshot());
    EXPECT_TRUE(std::filesystem::exists(*e.snapshot()));
  }
}

TEST(Train, RejectsInvalidConfigs) {
  auto cfg = tiny_config(DecoderKind::dueling);
  cfg.objective.aux_kind.reset();
  cfg.objective.lambda = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  auto enlarged = tiny_config(DecoderKind::cnn);
  enlarged.size = PixelCnnSize::enlarged;
  EXPECT_THROW(enlarged.validate(), std::invalid_argument);
  auto wrong_size = tiny_config(DecoderKind::cnn);
  wrong_size.data.image_size = 12;
  EXPECT_THROW(Trainer(wrong_size, tiny_train()), std::invalid_argument);
}

TEST(DropRegularization, DropAtZeroMatchesPlainPixelCnn) {
  auto dueling = tiny_config(DecoderKind::dueling, 9);
  dueling.total_steps = 30;
  auto plain = dueling;
  plain.decoder = DecoderKind::pixelcnn;
  plain.objective.aux_kind.reset();
  plain.objective.lambda = 0.0;
  plain.total_steps = 40;
  auto dropped = drop_regularization_run(dueling, 0, 40, tiny_train());
  auto reference = train(plain, tiny_train());
  EXPECT_EQ(dropped.timeline.drop_step, std::optional<int64_t>(0));
  dropped.timeline.drop_step.reset();
  EXPECT_EQ(dropped.timeline, reference.timeline);
}

TEST(DropRegularization, DropAtEndIsANoOpBeforeTheDrop) {
  auto cfg = tiny_config(DecoderKind::dueling, 10);
  cfg.total_steps = 30;
  auto base = train(cfg, tiny_train());
  auto dropped = drop_regularization_run(cfg, 30, 10, tiny_train());
  ASSERT_GT(dropped.timeline.rows.size(), base.timeline.rows.size());
  for (size_t i = 0; i < base.timeline.rows.size(); ++i) {
    MetricsTimeline a, b;
    a.append(base.timeline.rows[i]);
    b.append(dropped.timeline.rows[i]);
    EXPECT_EQ(a, b) << "row " << i;
  }
  EXPECT_TRUE(std::isnan(dropped.timeline.rows.back().aux_distortion));
}

TEST(DropRegularization, Validation) {
  auto cfg = tiny_config(DecoderKind::dueling);
  EXPECT_THROW(drop_regularization_run(cfg, cfg.total_steps + 1, 0, tiny_train()), std::invalid_argument);
  EXPECT_THROW(drop_regularization_run(cfg, -1, 0, tiny_train()), std::invalid_argument);
  EXPECT_THROW(drop_regularization_run(tiny_config(DecoderKind::pixelcnn), 0, 0, tiny_train()),
               std::invalid_argument);
  EXPECT_EQ(default_extra_steps(20000, 20000), 20000);
  EXPECT_EQ(default_extra_steps(20000, 5000), 25000);
  EXPECT_EQ(default_extra_steps(20000, 10000), 20000);
}

TEST(Grid, PaperAxesGiveSeventyTwoDuelingRuns) {
  auto base = tiny_config(DecoderKind::dueling);
  EXPECT_EQ(expand_grid(base, GridAxes::paper(DecoderKind::dueling)).size(), 72u);
  EXPECT_EQ(expand_grid(base, GridAxes::paper(DecoderKind::pixelcnn)).size(), 36u);
  auto parsed = GridAxes::parse("beta=0.1,1;lambda=0.1,1;batch_size=32,64;latent_dim=2,16,64;seed=0,1,2");
  EXPECT_EQ(expand_grid(base, parsed).size(), 72u);
  EXPECT_EQ(expand_grid(base, GridAxes{}).size(), 1u);
  EXPECT_THROW(GridAxes::parse("gamma=1"), std::invalid_argument);
}

TEST(Grid, ResumesAndIsolatesFailures) {
  TempDir dir("grid");
  RunStore store(dir.path());
  auto base = tiny_config(DecoderKind::dueling);
  auto axes = GridAxes::parse("beta=0.1,1;seed=0,1");
  int calls = 0;
  int budget = 2;  // simulates a sweep killed half way
  TrainFn fake = [&](const TrainConfig& cfg, const std::filesystem::path&) {
    ++calls;
    if (budget-- <= 0) throw std::runtime_error("killed");
    TrainResult r;
    r.timeline.append({cfg.total_steps, 10.0, 1.0, 2.0, 12.0, cfg.objective.beta, 1e-4});
    return r;
  };
  auto first = grid_search(base, axes, store, fake);
  ASSERT_EQ(first.size(), 4u);
  EXPECT_EQ(std::count_if(first.begin(), first.end(),
                          [](const auto& o) { return o.status == GridOutcome::Status::failed; }),
            2);
  EXPECT_EQ(store.records().size(), 2u);

  calls = 0;
  budget = 100;
  auto second = grid_search(base, axes, store, fake);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(std::count_if(second.begin(), second.end(),
                          [](const auto& o) { return o.status == GridOutcome::Status::skipped; }),
            2);
  EXPECT_EQ(store.records().size(), 4u);

  calls = 0;
  grid_search(base, axes, store, fake);
  EXPECT_EQ(calls, 0);
}

TEST(Grid, SingleCellProducesOneRecord) {
  TempDir dir("grid1");
  RunStore store(dir.path());
  auto base = tiny_config(DecoderKind::cnn, 2);
  base.total_steps = 10;
  TrainFn real = [](const TrainConfig& cfg, const std::filesystem::path& run_dir) {
    return train(cfg, tiny_train(), run_dir);
  };
  auto out = grid_search(base, GridAxes{}, store, real);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].status, GridOutcome::Status::trained);
  auto rec = store.record(out[0].digest);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->seed, 2u);
  ASSERT_TRUE(rec->final_metrics);
  EXPECT_EQ(rec->final_metrics->step, 10);
  EXPECT_TRUE(std::filesystem::exists(store.run_dir(rec->digest) / rec->checkpoint));
  EXPECT_THROW(store.write_record(*rec), std::runtime_error);
}

TEST(Config, JsonRoundTripAndDigest) {
  auto cfg = tiny_config(DecoderKind::dueling, 11);
  cfg.objective.modification = Modification::free_bits;
  cfg.objective.free_bits_nats = 2.0;
  auto doc = to_json(cfg);
  auto back = train_config_from_json(doc);
  EXPECT_EQ(to_json(back), doc);
  EXPECT_EQ(config_digest(back), config_digest(cfg));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  auto moved = cfg;
  moved.data.root = "/somewhere/else";
  EXPECT_EQ(config_digest(moved), config_digest(cfg));
  auto reseeded = cfg;
  reseeded.seed = 12;
  EXPECT_NE(config_digest(reseeded), config_digest(cfg));
  EXPECT_EQ(cell_digest(reseeded), cell_digest(cfg));
  auto other_beta = cfg;
  other_beta.objective.beta = 0.1;
  EXPECT_NE(cell_digest(other_beta), cell_digest(cfg));
}

TEST(Config, RejectsUnknownKeysAndAppliesOverrides) {
  auto doc = to_json(tiny_config(DecoderKind::pixelcnn));
  auto bad = doc;
  bad["objective"]["lamda"] = 0.1;
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
  bad = doc;
  bad["extra"] = 1;
  EXPECT_THROW(train_config_from_json(bad), ConfigError);

  apply_override(doc, "objective.beta=0.1");
  apply_override(doc, "model.decoder=dueling");
  apply_override(doc, "objective.aux_kind=histogram");
  apply_override(doc, "objective.lambda=1");
  auto cfg = train_config_from_json(doc);
  EXPECT_DOUBLE_EQ(cfg.objective.beta, 0.1);
  EXPECT_EQ(cfg.decoder, DecoderKind::dueling);
  EXPECT_EQ(cfg.objective.aux_kind, std::optional<AuxTargetKind>(AuxTargetKind::intensity_histogram));
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  int parsed = 0;
  for (const auto& e : std::filesystem::directory_iterator(DUELVAE_CONFIG_DIR)) {
    if (e.path().extension() != ".json" || e.path().filename() == "schema.json") continue;
    SCOPED_TRACE(e.path().string());
    auto cfg = load_train_config(e.path());
    EXPECT_NO_THROW(cfg.validate());
    ++parsed;
  }
  EXPECT_GE(parsed, 5);
}
