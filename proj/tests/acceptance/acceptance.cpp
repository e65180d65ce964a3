// Acceptance checks. One PASS/FAIL line per criterion.
//
//   acceptance --tier 1
//   acceptance --tier 2 --work <store dir> [--data-root <dir>]
//
// Tier 2 and 3 train through a run store under --work, so an interrupted
// invocation resumes where it stopped.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "duelvae/config.hpp"
#include "duelvae/distributions.hpp"
#include "duelvae/evaluation.hpp"
#include "duelvae/grid.hpp"
#include "duelvae/objectives.hpp"
#include "duelvae/pipeline.hpp"
#include "duelvae/networks.hpp"
#include "duelvae/run_store.hpp"
#include "duelvae/schedule.hpp"
#include "duelvae/tables.hpp"
#include "duelvae/training.hpp"

using namespace duelvae;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Verdict& v) {
  std::printf("%s  %2d  %-28s %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++g_failures;
}

void check(int id, const std::string& name, const std::function<Verdict()>& fn) {
  try {
    report(id, name, fn());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("error: ") + e.what()});
  }
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ---- tier 1 ----------------------------------------------------------------

Verdict qlm_normalization() {
  auto gen = make_generator(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto params = torch::randn({2, 15, 4, 4}, gen, torch::kDouble);
    params.narrow(1, 5, 5).mul_(3.0);   // means well outside [-1, 1] too
    params.narrow(1, 10, 5).mul_(3.0);  // log-scales from sharp to very wide
    auto total = qlm_log_pmf({params, 5}).exp().sum(1);
    worst = std::max(worst, (total - 1.0).abs().max().item<double>());
  }
  return {worst <= 1e-6, "max |sum pmf - 1| = " + num(worst, 3) + " over 100 grids (tol 1e-6)"};
}

Verdict pixelcnn_causality() {
  torch::manual_seed(202);
  PixelCnn net(PixelCnnOptions{});
  net->eval();
  torch::NoGradGuard no_grad;
  auto gen = make_generator(202);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = torch::bernoulli(torch::full({1, 1, 28, 28}, 0.4), gen);
    auto z = torch::randn({1, 16}, gen);
    const int64_t j = torch::randint(0, 784, {1}, gen).item<int64_t>();
    auto y = x.clone();
    y.view({-1})[j] = 1.0 - y.view({-1})[j];
    auto diff = (net->forward(x, z) - net->forward(y, z)).flatten(2).abs().amax(1).squeeze(0);
    worst = std::max(worst, diff.narrow(0, 0, j + 1).max().item<double>());
  }
  return {worst <= 1e-6, "max change at positions <= j: " + num(worst, 3) + " over 20 perturbations (tol 1e-6)"};
}

TrainConfig tiny_run(DecoderKind decoder, uint64_t seed) {
  TrainConfig c;
  c.data.image_size = 8;
  c.decoder = decoder;
  c.latent_dim = 4;
  c.batch_size = 8;
  c.total_steps = 200;
  c.log_every = 10;
  c.checkpoint_every = 0;
  c.seed = seed;
  c.widths = NetworkWidths::tiny();
  c.components = 2;
  c.pseudo_inputs = 6;
  if (decoder == DecoderKind::dueling) {
    c.objective.aux_kind = AuxTargetKind::pixel;
    c.objective.lambda = 0.1;
  }
  return c;
}

// Label-dependent 8×8 binary images.
LabeledImageDataset toy_images(int64_t n, uint64_t seed) {
  LabeledImageDataset ds;
  ds.height = ds.width = 8;
  ds.binarization = Binarization::threshold;
  auto gen = make_generator(seed);
  auto u = torch::rand({n, 8, 8}, gen);
  auto labels = torch::randint(0, 10, {n}, gen);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t y = labels[i].item<int64_t>();
    ds.labels.push_back(static_cast<uint8_t>(y));
    for (int64_t r = 0; r < 8; ++r)
      for (int64_t c = 0; c < 8; ++c) {
        const bool on = r == y % 8 || c == (3 * y) % 8;
        ds.pixels.push_back(static_cast<uint8_t>(u[i][r][c].item<double>() < (on ? 0.9 : 0.08)));
      }
  }
  return ds;
}

Verdict elbo_identity() {
  const auto data = toy_images(400, 303);
  size_t rows = 0;
  double worst = 0.0;
  for (auto decoder : {DecoderKind::cnn, DecoderKind::pixelcnn, DecoderKind::dueling}) {
    auto result = train(tiny_run(decoder, 3), data);
    for (const auto& r : result.timeline.rows) {
      worst = std::max(worst, std::abs(r.elbo_nats - (r.distortion + r.rate)) / std::abs(r.elbo_nats));
      ++rows;
    }
  }
  return {rows > 0 && worst <= 1e-6,
          std::to_string(rows) + " logged rows, max relative gap " + num(worst, 3) + " (tol 1e-6)"};
}

Verdict kl_monte_carlo() {
  auto gen = make_generator(404);
  FullCovGaussian post{torch::tensor({{1.0, 0.0}}, torch::kDouble), torch::eye(2, torch::kDouble).unsqueeze(0)};
  auto z = gaussian_sample(post, 100000, gen);
  auto terms = rate_terms(z, post, GaussianMarginal::standard(2, torch::kDouble)).flatten();
  const double mean = terms.mean().item<double>();
  const double se = terms.std().item<double>() / std::sqrt(1e5);
  return {std::abs(mean - 0.5) <= 3 * se,
          "estimate " + num(mean, 6) + ", |est - 0.5| = " + num(std::abs(mean - 0.5), 3) + " vs 3 SE = " +
              num(3 * se, 3)};
}

Verdict gradient_check() {
  ModelConfig m;
  m.decoder = DecoderKind::dueling;
  m.image_size = 8;
  m.latent_dim = 4;
  m.aux_kind = AuxTargetKind::gradient;
  m.components = 2;
  m.pseudo_inputs = 5;
  m.widths = NetworkWidths::tiny();
  VaeModel model(m, 505);
  model->to(torch::kDouble);
  const auto data = toy_images(4, 505);
  auto x = make_batch(data, std::vector<int64_t>{0, 1, 2, 3}).pixels;
  ObjectiveConfig cfg;
  cfg.aux_kind = AuxTargetKind::gradient;
  cfg.lambda = 0.5;
  auto loss = [&] {
    auto gen = make_generator(55);
    return compute_loss(model, x, cfg, 0, gen).loss;
  };
  model->zero_grad();
  loss().backward();
  auto params = model->parameters();
  auto pick = make_generator(56);
  double worst = 0.0;
  int nonzero = 0;
  torch::NoGradGuard no_grad;
  for (int k = 0; k < 50; ++k) {
    auto& p = params[static_cast<size_t>(
        torch::randint(0, static_cast<int64_t>(params.size()), {1}, pick).item<int64_t>())];
    const int64_t i = torch::randint(0, p.numel(), {1}, pick).item<int64_t>();
    auto flat = p.view({-1});
    const double orig = flat[i].item<double>();
    const double h = 1e-6;
    flat[i] = orig + h;
    const double up = loss().item<double>();
    flat[i] = orig - h;
    const double down = loss().item<double>();
    flat[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double an = p.grad().view({-1})[i].item<double>();
    const double scale = std::max(std::abs(fd), std::abs(an));
    if (scale > 1e-7) {
      ++nonzero;
      worst = std::max(worst, std::abs(fd - an) / scale);
    }
  }
  return {worst <= 1e-3, "50 parameters (" + std::to_string(nonzero) + " with |grad| > 1e-7), max relative error " +
                             num(worst, 3) + " (tol 1e-3)"};
}

Verdict lr_schedule() {
  LrSchedule lr;
  auto direct = [](double t) {
    return 1e-3 * std::pow(0.66, t / 1e4) * (1.0 - std::pow(0.66, t / 1e3)) + 1e-10;
  };
  const double r1000 = std::abs(lr(1000) - direct(1000)) / direct(1000);
  const double r20000 = std::abs(lr(20000) - direct(20000)) / direct(20000);
  const bool pass = lr(0) == 1e-10 && r1000 <= 1e-6 && r20000 <= 1e-6 && std::abs(lr(1000) - 3.26e-4) <= 1e-6 &&
                    std::abs(lr(20000) - 4.36e-4) <= 1e-6;
  return {pass, "lr(0)=" + num(lr(0), 3) + " lr(1000)=" + num(lr(1000), 6) + " lr(20000)=" + num(lr(20000), 6) +
                    " (rel err " + num(std::max(r1000, r20000), 2) + ")"};
}

Verdict probe_sanity() {
  Probe uniform(ProbeKind::linear, 3);
  uniform->to(torch::kDouble);
  {
    torch::NoGradGuard no_grad;
    for (auto& w : uniform->parameters()) w.zero_();
  }
  auto gen = make_generator(707);
  auto labels = torch::arange(500, torch::kLong).remainder(10);
  auto eye3 = torch::eye(3, torch::kDouble).expand({500, 3, 3}).contiguous();
  EncodedSet noise{torch::randn({500, 3}, gen, torch::TensorOptions().dtype(torch::kDouble)), eye3, labels};
  const double ld = label_distortion(uniform, noise, 4, 1);

  auto centers = torch::nn::functional::one_hot(labels, 10).to(torch::kFloat).mul(8.0);
  auto scale = torch::eye(10).mul(0.5).expand({500, 10, 10}).contiguous();
  EncodedSet separable{centers, scale, labels};
  ProbeOptions opts;
  opts.seed = 7;
  auto probe = train_probe(separable, opts);
  const double acc = latent_accuracy(probe, separable, 16, 8);
  const double gap = std::abs(ld - std::numbers::ln10);
  return {gap <= 1e-9 && acc == 1.0,
          "uniform probe |LD - ln 10| = " + num(gap, 2) + " (tol 1e-9); separable accuracy " + num(acc, 6)};
}

double max_param_diff(VaeModel& a, VaeModel& b) {
  double worst = 0.0;
  auto pa = a->parameters(), pb = b->parameters();
  for (size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, (pa[i] - pb[i]).abs().max().item<double>());
  return worst;
}

Verdict checkpoint_determinism(const fs::path& scratch) {
  const auto data = toy_images(200, 808);
  auto cfg = tiny_run(DecoderKind::dueling, 8);
  cfg.double_precision = true;
  cfg.total_steps = 41;

  Trainer straight(cfg, data);
  straight.run_until(41);
  Trainer first(cfg, data);
  first.run_until(40);
  fs::create_directories(scratch);
  const auto ck = scratch / "roundtrip.pt";
  first.save(ck);
  Trainer resumed(cfg, data);
  resumed.restore(ck);
  resumed.run_until(41);
  const double after_one = max_param_diff(straight.model(), resumed.model());

  auto det = tiny_run(DecoderKind::dueling, 9);
  det.total_steps = 60;
  const bool same_seed = train(det, data).timeline == train(det, data).timeline;
  fs::remove(ck);
  return {after_one <= 1e-6 && same_seed && straight.timeline() == resumed.timeline(),
          "resumed step differs by " + num(after_one, 2) + " (tol 1e-6); same-seed timelines " +
              (same_seed ? "identical" : "differ")};
}

// ---- tier 2 / 3 --------------------------------------------------------------

struct Context {
  fs::path work;
  std::optional<fs::path> data_root;
  EvalOptions eval;
  bool dry_run = false;
};

TrainConfig mnist_base(const Context& ctx, int64_t steps) {
  TrainConfig c;
  c.data.name = "mnist";
  c.data.binarize = Binarization::threshold;
  if (ctx.data_root) c.data.root = *ctx.data_root;
  c.decoder = DecoderKind::pixelcnn;
  c.latent_dim = 16;
  c.batch_size = 32;
  c.total_steps = steps;
  c.checkpoint_every = 1000;
  return c;
}

TrainConfig dueling(TrainConfig c, AuxTargetKind kind, double lambda) {
  c.decoder = DecoderKind::dueling;
  c.objective.aux_kind = kind;
  c.objective.lambda = lambda;
  return c;
}

TrainConfig modified(TrainConfig c, Modification m) {
  c.objective.modification = m;
  return c;
}

class Runner {
 public:
  explicit Runner(Context ctx) : ctx_(std::move(ctx)), store_(ctx_.work), train_fn_(dataset_train_fn()) {}

  const RunStore& store() const { return store_; }

  // Trains (or finds) the run and returns its evaluation.
  EvalReport run(const TrainConfig& cfg) {
    const auto digest = config_digest(cfg);
    if (!store_.is_complete(digest)) {
      if (ctx_.dry_run) throw std::runtime_error("run " + digest + " not in the store (dry run)");
      std::fprintf(stderr, "training %s (%s, beta=%g, seed %llu, %lld steps)\n", digest.substr(0, 12).c_str(),
                   decoder_label(to_json(cfg)).c_str(), cfg.objective.beta,
                   static_cast<unsigned long long>(cfg.seed), static_cast<long long>(cfg.total_steps));
      store_.write_config(digest, to_json(cfg));
      record_run(store_, cfg, train_fn_(cfg, store_.run_dir(digest)));
    }
    return evaluated(digest);
  }

  EvalReport drop_run(const TrainConfig& base, int64_t drop_step, MetricsTimeline* timeline) {
    TrainConfig cfg = base;
    cfg.objective.drop_aux_at_step = drop_step;
    cfg.total_steps = drop_step + default_extra_steps(base.total_steps, drop_step);
    const auto digest = config_digest(cfg);
    if (!store_.is_complete(digest)) {
      if (ctx_.dry_run) throw std::runtime_error("run " + digest + " not in the store (dry run)");
      std::fprintf(stderr, "training drop-at-%lld run %s\n", static_cast<long long>(drop_step),
                   digest.substr(0, 12).c_str());
      store_.write_config(digest, to_json(cfg));
      const auto train_set = load_dataset(cfg.data, Split::train);
      auto result =
          drop_regularization_run(base, drop_step, std::nullopt, train_set, store_.run_dir(digest));
      write_file_atomic(store_.run_dir(digest) / "metrics.csv", result.timeline.to_csv());
      record_run(store_, cfg, result);
    }
    if (timeline) {
      *timeline = MetricsTimeline::from_csv(read_file(store_.run_dir(digest) / "metrics.csv"));
      timeline->drop_step = drop_step;
    }
    return evaluated(digest);
  }

 private:
  EvalReport evaluated(const std::string& digest) {
    if (auto j = store_.eval(digest)) return eval_report_from_json(*j);
    const auto rec = store_.record(digest);
    std::fprintf(stderr, "evaluating %s\n", digest.substr(0, 12).c_str());
    return evaluate_checkpoint(store_.run_dir(digest) / rec->checkpoint, ctx_.eval, &store_, ctx_.data_root)
        .report;
  }

  Context ctx_;
  RunStore store_;
  TrainFn train_fn_;
};

double mean_of(const std::vector<EvalReport>& rs, const std::function<double(const EvalReport&)>& f) {
  double s = 0.0;
  for (const auto& r : rs) s += f(r);
  return s / static_cast<double>(rs.size());
}

double mlp(const EvalReport& r) { return r.latent_accuracy_mlp.value_or(std::nan("")); }

std::vector<EvalReport> seeds(Runner& runner, TrainConfig cfg, int n) {
  std::vector<EvalReport> out;
  for (int s = 0; s < n; ++s) {
    cfg.seed = static_cast<uint64_t>(s);
    out.push_back(runner.run(cfg));
  }
  return out;
}

void tier2(Runner& runner, const Context& ctx) {
  check(9, "collapse contrast", [&]() -> Verdict {
    auto base = mnist_base(ctx, 5000);
    const auto pixel = runner.run(base);
    const auto duel = runner.run(dueling(base, AuxTargetKind::pixel, 0.1));
    const double gap = mlp(duel) - mlp(pixel);
    const bool pass = pixel.rate < 3.0 && duel.rate > 5.0 && gap >= 0.3;
    return {pass, "PixelCNN rate " + num(pixel.rate) + " (< 3), Dueling rate " + num(duel.rate) +
                      " (> 5), mlp accuracy " + num(mlp(duel), 3) + " vs " + num(mlp(pixel), 3) +
                      " (gap >= 0.3)"};
  });
}

void tier3(Runner& runner, const Context& ctx) {
  const auto base = mnist_base(ctx, 20000);
  const auto duel_cfg = dueling(base, AuxTargetKind::pixel, 0.1);

  check(10, "dueling reproduction", [&]() -> Verdict {
    const auto rs = seeds(runner, duel_cfg, 3);
    const double elbo = mean_of(rs, [](const EvalReport& r) { return r.reported_elbo_nats; });
    const double rate = mean_of(rs, [](const EvalReport& r) { return r.rate; });
    const double acc = mean_of(rs, mlp);
    const double recon = mean_of(rs, [](const EvalReport& r) { return r.reconstruction_accuracy.value_or(std::nan("")); });
    const bool pass = elbo <= 62.0 && rate >= 6.0 && rate <= 12.0 && acc >= 0.85 && recon >= 0.80;
    return {pass, "ELBO " + num(elbo) + " (<= 62), rate " + num(rate) + " (6..12), mlp " + num(acc, 3) +
                      " (>= 0.85), recon " + num(recon, 3) + " (>= 0.80)"};
  });

  check(11, "pixelcnn collapse", [&]() -> Verdict {
    const auto rs = seeds(runner, base, 3);
    const double rate = mean_of(rs, [](const EvalReport& r) { return r.rate; });
    const double acc = mean_of(rs, mlp);
    return {rate < 2.0 && acc < 0.30, "rate " + num(rate) + " (< 2), mlp " + num(acc, 3) + " (< 0.30)"};
  });

  check(12, "auxiliary task ordering", [&]() -> Verdict {
    std::map<AuxTargetKind, double> acc;
    std::string detail;
    for (auto kind : {AuxTargetKind::pixel, AuxTargetKind::gradient, AuxTargetKind::row_col_marginals,
                      AuxTargetKind::intensity_histogram}) {
      std::vector<RunMetrics> runs;
      for (double lambda : {0.1, 1.0}) {
        auto cfg = dueling(base, kind, lambda);
        const auto rs = seeds(runner, cfg, 3);
        for (size_t s = 0; s < rs.size(); ++s) {
          cfg.seed = s;
          RunMetrics m;
          m.digest = config_digest(cfg);
          m.cell = cell_digest(cfg);
          m.rate = rs[s].rate;
          m.distortion = rs[s].distortion;
          m.latent_accuracy_mlp = mlp(rs[s]);
          runs.push_back(m);
        }
      }
      const auto best = best_low_rate(runs);
      acc[kind] = best.best ? best.best->latent_accuracy_mlp.mean : std::nan("");
      detail += std::string(to_string(kind)) + " " + num(acc[kind], 3) + "  ";
    }
    const double conv = acc[AuxTargetKind::pixel], grad = acc[AuxTargetKind::gradient];
    const double marg = acc[AuxTargetKind::row_col_marginals], hist = acc[AuxTargetKind::intensity_histogram];
    const bool pass = conv >= marg && grad >= marg && marg >= hist && conv - hist >= 0.25;
    return {pass, detail + "(conv, gradient >= marginals >= histogram; conv - histogram >= 0.25)"};
  });

  check(13, "modification comparison", [&]() -> Verdict {
    const double duel = mean_of(seeds(runner, duel_cfg, 3), mlp);
    const double anneal = mean_of(seeds(runner, modified(base, Modification::kl_anneal), 3), mlp);
    const double free_bits = mean_of(seeds(runner, modified(base, Modification::free_bits), 3), mlp);
    const double penalty = mean_of(seeds(runner, modified(base, Modification::penalty), 3), mlp);
    const bool pass = duel - free_bits >= 0.05 && anneal - free_bits >= 0.05 && duel - penalty >= 0.20 &&
                      anneal - penalty >= 0.20;
    return {pass, "dueling " + num(duel, 3) + ", kl_anneal " + num(anneal, 3) + ", free_bits " +
                      num(free_bits, 3) + ", penalty " + num(penalty, 3)};
  });

  check(14, "drop regularization", [&]() -> Verdict {
    auto cfg = duel_cfg;
    cfg.seed = 0;
    std::vector<double> elbos, rates;
    double worst_ratio = std::numeric_limits<double>::infinity();
    for (int64_t drop : {5000, 10000, 20000}) {
      MetricsTimeline t;
      const auto r = runner.drop_run(cfg, drop, &t);
      elbos.push_back(r.reported_elbo_nats);
      rates.push_back(r.rate);
      double at_drop = std::nan("");
      double lowest = std::numeric_limits<double>::infinity();
      for (const auto& row : t.rows) {
        if (row.step == drop) at_drop = row.rate;
        if (row.step > drop && row.step <= drop + 5000) lowest = std::min(lowest, row.rate);
      }
      worst_ratio = std::min(worst_ratio, lowest / at_drop);
    }
    const auto [elo, ehi] = std::minmax_element(elbos.begin(), elbos.end());
    const auto [rlo, rhi] = std::minmax_element(rates.begin(), rates.end());
    const bool pass = *ehi - *elo <= 5.0 && *rhi - *rlo >= 1.0 && worst_ratio >= 0.5;
    return {pass, "ELBO spread " + num(*ehi - *elo) + " (<= 5), rate spread " + num(*rhi - *rlo) +
                      " (>= 1), min post-drop rate ratio " + num(worst_ratio, 3) + " (>= 0.5)"};
  });

  check(15, "probe/reconstruction r^2", [&]() -> Verdict {
    std::vector<double> recon, acc;
    for (const auto& run : load_evaluated_runs(runner.store())) {
      if (!run.eval || !matches_dataset(run.record.config, "mnist:threshold")) continue;
      if (!run.eval->reconstruction_accuracy || !run.eval->latent_accuracy_mlp) continue;
      recon.push_back(*run.eval->reconstruction_accuracy);
      acc.push_back(*run.eval->latent_accuracy_mlp);
    }
    if (recon.size() < 3) return {false, "only " + std::to_string(recon.size()) + " evaluated runs"};
    const double r2 = r_squared(recon, acc);
    return {r2 >= 0.8, "r^2 " + num(r2, 3) + " over " + std::to_string(recon.size()) + " runs (>= 0.8)"};
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> tiers{1};
  Context ctx;
  ctx.work = fs::temp_directory_path() / "duelvae_acceptance";
  std::string data_root;
  int64_t likelihood_examples = 0;
  app.add_option("--tier", tiers, "Tier(s) to run: 1, 2, 3")->delimiter(',');
  app.add_option("--work", ctx.work, "Run store for tiers 2 and 3");
  app.add_option("--data-root", data_root, "Directory containing mnist/");
  app.add_option("--n-mc", ctx.eval.n_mc, "Latent samples per example for D and R")->capture_default_str();
  app.add_option("--likelihood-examples", likelihood_examples, "Test examples for D and R (0 = all)");
  app.add_flag("--dry-run", ctx.dry_run, "Report from the store without training");
  CLI11_PARSE(app, argc, argv);
  if (!data_root.empty()) ctx.data_root = fs::absolute(data_root);
  if (likelihood_examples > 0) ctx.eval.likelihood_examples = likelihood_examples;
  torch::set_num_threads(1);

  const std::set<int> run(tiers.begin(), tiers.end());
  if (run.contains(1)) {
    check(1, "qlm normalization", qlm_normalization);
    check(2, "pixelcnn causality", pixelcnn_causality);
    check(3, "elbo identity", elbo_identity);
    check(4, "kl monte carlo", kl_monte_carlo);
    check(5, "gradient check", gradient_check);
    check(6, "lr schedule", lr_schedule);
    check(7, "probe sanity", probe_sanity);
    check(8, "checkpoint and determinism", [&] { return checkpoint_determinism(ctx.work / "tier1"); });
  }
  if (run.contains(2) || run.contains(3)) {
    Runner runner(ctx);
    if (run.contains(2)) tier2(runner, ctx);
    if (run.contains(3)) tier3(runner, ctx);
  }
  return g_failures == 0 ? 0 : 1;
}
