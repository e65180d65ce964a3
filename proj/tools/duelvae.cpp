// duelvae: train, sweep, evaluate and report Dueling Decoders VAEs.
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "duelvae/config.hpp"
#include "duelvae/figures.hpp"
#include "duelvae/grid.hpp"
#include "duelvae/image_io.hpp"
#include "duelvae/pipeline.hpp"
#include "duelvae/run_store.hpp"
#include "duelvae/tables.hpp"

using namespace duelvae;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string store = "store";
  std::string config;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;
  std::string data_root;
};

TrainConfig resolve_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  auto cfg = load_train_config(g.config);
  if (!g.overrides.empty() || g.seed) {
    auto doc = to_json(cfg);
    for (const auto& o : g.overrides) apply_override(doc, o);
    if (g.seed) doc["training"]["seed"] = *g.seed;
    const auto root = cfg.data.root;
    cfg = train_config_from_json(doc);
    cfg.data.root = root;
  }
  if (!g.data_root.empty()) cfg.data.root = g.data_root;
  cfg.validate();
  return cfg;
}

void print_row(const MetricsRow& r) {
  std::printf("step %7lld  D %9.3f  R %7.3f  ELBO %9.3f  lr %.3g\n", static_cast<long long>(r.step),
              r.distortion, r.rate, r.elbo_nats, r.lr);
}

int cmd_train(const Globals& g) {
  const auto cfg = resolve_config(g);
  RunStore store(g.store);
  const auto digest = config_digest(cfg);
  if (store.is_complete(digest)) {
    std::printf("run %s already complete\n", digest.c_str());
    return 0;
  }
  store.write_config(digest, to_json(cfg));
  const auto train_set = load_dataset(cfg.data, Split::train);
  const auto dir = store.run_dir(digest);
  std::printf("run %s -> %s\n", digest.c_str(), dir.c_str());
  try {
    const auto result = train(cfg, train_set, dir);
    for (const auto& r : result.timeline.rows) print_row(r);
    record_run(store, cfg, result);
  } catch (const std::exception& e) {
    store.write_failure(digest, e.what());
    throw;
  }
  return 0;
}

int cmd_grid(const Globals& g, const std::string& axes_spec) {
  const auto base = resolve_config(g);
  const auto axes = axes_spec == "paper" ? GridAxes::paper(base.decoder) : GridAxes::parse(axes_spec);
  RunStore store(g.store);
  const auto outcomes = grid_search(base, axes, store, dataset_train_fn());
  int failed = 0;
  for (const auto& o : outcomes) {
    const char* status = o.status == GridOutcome::Status::trained   ? "trained"
                         : o.status == GridOutcome::Status::skipped ? "skipped"
                                                                    : "FAILED";
    std::printf("%-8s %s%s%s\n", status, o.digest.c_str(), o.error.empty() ? "" : "  ", o.error.c_str());
    failed += o.status == GridOutcome::Status::failed;
  }
  std::printf("%zu runs, %d failed\n", outcomes.size(), failed);
  return failed == 0 ? 0 : 1;
}

int cmd_drop_reg(const Globals& g, int64_t drop_step, std::optional<int64_t> extra) {
  const auto cfg = resolve_config(g);
  TrainConfig run = cfg;
  run.objective.drop_aux_at_step = drop_step;
  run.total_steps = drop_step + extra.value_or(default_extra_steps(cfg.total_steps, drop_step));
  RunStore store(g.store);
  const auto digest = config_digest(run);
  if (store.is_complete(digest)) {
    std::printf("run %s already complete\n", digest.c_str());
    return 0;
  }
  store.write_config(digest, to_json(run));
  const auto train_set = load_dataset(cfg.data, Split::train);
  const auto result = drop_regularization_run(cfg, drop_step, extra, train_set, store.run_dir(digest));
  for (const auto& r : result.timeline.rows) print_row(r);
  record_run(store, run, result);
  std::printf("run %s (drop at %lld)\n", digest.c_str(), static_cast<long long>(drop_step));
  return 0;
}

EvalOptions parse_probes(const std::string& probes, EvalOptions o) {
  o.linear_probe = o.mlp_probe = false;
  std::stringstream ss(probes);
  std::string p;
  while (std::getline(ss, p, ',')) {
    if (p == "linear") o.linear_probe = true;
    else if (p == "mlp") o.mlp_probe = true;
    else if (p != "none") throw std::invalid_argument("unknown probe '" + p + "' (linear, mlp, none)");
  }
  return o;
}

int cmd_eval(const Globals& g, std::string checkpoint, const std::string& run, const std::string& probes,
             int64_t n_recon, int64_t n_mc, int64_t likelihood_examples, bool replace) {
  RunStore store(g.store);
  if (checkpoint.empty()) {
    if (run.empty()) throw std::invalid_argument("give --checkpoint or --run");
    const auto rec = store.record(run);
    if (!rec) throw std::invalid_argument("no completed run " + run + " in " + g.store);
    checkpoint = (store.run_dir(rec->digest) / rec->checkpoint).string();
  }
  EvalOptions opts = parse_probes(probes, {});
  opts.n_recon = n_recon;
  opts.reconstruction = n_recon > 0;
  opts.n_mc = n_mc;
  if (likelihood_examples > 0) opts.likelihood_examples = likelihood_examples;
  if (g.seed) opts.seed = *g.seed;
  const auto root = g.data_root.empty() ? std::nullopt : std::optional<fs::path>(g.data_root);
  const auto out = evaluate_checkpoint(checkpoint, opts, &store, root, replace);
  std::cout << to_json(out.report).dump(2) << "\n";
  return 0;
}

std::string selector_tag(const std::string& dataset) {
  auto tag = dataset;
  for (auto& ch : tag)
    if (ch == ':') ch = '_';
  return tag;
}

int cmd_report(const Globals& g, const std::string& dataset, double rate_cap, int bonferroni, std::string out_dir) {
  RunStore store(g.store);
  const auto runs = load_evaluated_runs(store);
  const auto table = render_results_table(runs, dataset, rate_cap, bonferroni);
  if (out_dir.empty()) out_dir = (store.root() / "reports").string();
  fs::create_directories(out_dir);
  const auto stem = "table_" + selector_tag(dataset) + "_" + store.snapshot_digest().substr(0, 12);
  write_file_atomic(fs::path(out_dir) / (stem + ".txt"), table.text());
  write_file_atomic(fs::path(out_dir) / (stem + ".csv"), table.csv());
  std::cout << table.text();
  std::printf("\nwrote %s/%s.{txt,csv}\n", out_dir.c_str(), stem.c_str());
  return 0;
}

std::vector<RatePoint> rate_points(const std::vector<EvaluatedRun>& runs, const std::string& dataset) {
  std::vector<RatePoint> points;
  for (const auto& r : runs) {
    if (!matches_dataset(r.record.config, dataset)) continue;
    if (!r.eval || !r.eval->latent_accuracy_mlp) {
      std::fprintf(stderr, "skipping %s: no mlp probe evaluation\n", r.record.digest.c_str());
      continue;
    }
    points.push_back({r.record.digest, decoder_label(r.record.config), r.eval->rate, r.eval->distortion,
                      *r.eval->latent_accuracy_mlp});
  }
  return points;
}

struct PlotArgs {
  std::string kind;
  std::string dataset = "mnist:threshold";
  std::vector<std::string> checkpoints;
  std::vector<std::string> runs;
  std::string out_dir;
  double rate_cap = 10.0;
  int64_t n_images = 10;
};

int cmd_plot(const Globals& g, const PlotArgs& a) {
  RunStore store(g.store);
  const fs::path out = a.out_dir.empty() ? store.root() / "figures" : fs::path(a.out_dir);
  fs::create_directories(out);
  const auto snap = store.snapshot_digest().substr(0, 12);
  const auto root = g.data_root.empty() ? std::nullopt : std::optional<fs::path>(g.data_root);
  auto written = [](const fs::path& p) { std::printf("wrote %s\n", p.c_str()); };

  if (a.kind == "rate_accuracy" || a.kind == "rate_distortion") {
    const auto points = rate_points(load_evaluated_runs(store), a.dataset);
    const auto fig = a.kind == "rate_accuracy" ? rate_accuracy_figure(points, a.rate_cap) : rate_distortion_figure(points);
    const auto path = out / (a.kind + "_" + selector_tag(a.dataset) + "_" + snap + ".svg");
    fig.write_svg(path);
    written(path);
    return 0;
  }
  if (a.kind == "drop_reg") {
    std::vector<DropCurve> curves;
    for (const auto& r : store.records()) {
      if (!r.drop_step || !matches_dataset(r.config, a.dataset)) continue;
      if (!a.runs.empty() && std::find(a.runs.begin(), a.runs.end(), r.digest) == a.runs.end()) continue;
      auto tl = MetricsTimeline::from_csv(read_file(store.run_dir(r.digest) / "metrics.csv"));
      tl.drop_step = r.drop_step;
      curves.push_back({"drop at " + std::to_string(*r.drop_step), r.digest, std::move(tl)});
    }
    const auto figs = drop_reg_figures(curves);
    const char* names[] = {"drop_reg_distortion_elbo", "drop_reg_rate"};
    for (int i = 0; i < 2; ++i) {
      const auto path = out / (std::string(names[i]) + "_" + selector_tag(a.dataset) + "_" + snap + ".svg");
      figs[static_cast<size_t>(i)].write_svg(path);
      written(path);
    }
    return 0;
  }
  if (a.kind == "latent_ellipses") {
    if (a.checkpoints.size() != 1) throw std::invalid_argument("latent_ellipses takes exactly one --checkpoint");
    TrainConfig cfg;
    auto model = load_model(a.checkpoints[0], &cfg);
    if (root) cfg.data.root = *root;
    model->eval();
    const auto test = load_dataset(cfg.data, Split::test);
    const auto digest = config_digest(cfg);
    const auto fig = latent_ellipse_figure(encode_dataset(model, test), digest);
    const auto path = out / ("latent_ellipses_" + digest.substr(0, 12) + "_" + snap + ".svg");
    fig.write_svg(path);
    written(path);
    return 0;
  }
  if (a.kind == "recon_grid") {
    if (a.checkpoints.empty()) throw std::invalid_argument("recon_grid needs at least one --checkpoint");
    std::vector<torch::Tensor> rows;
    torch::Tensor originals;
    int levels = 2;
    std::string tag;
    for (const auto& ck : a.checkpoints) {
      TrainConfig cfg;
      auto model = load_model(ck, &cfg);
      if (root) cfg.data.root = *root;
      model->eval();
      const auto test = load_dataset(cfg.data, Split::test);
      const auto idx = evenly_spaced_indices(test.size(), a.n_images);
      auto batch = make_batch(test, idx);
      if (!originals.defined()) {
        originals = batch.pixels;
        levels = test.levels();
      } else if (!torch::equal(originals, batch.pixels)) {
        throw std::invalid_argument("recon_grid checkpoints must share one test set");
      }
      auto gen = make_generator(g.seed.value_or(0));
      rows.push_back(model->reconstruct(batch.pixels, gen).to(torch::kFloat));
      tag += config_digest(cfg).substr(0, 6);
    }
    const auto path = out / ("recon_grid_" + tag + "_" + snap + ".png");
    write_png(path, recon_grid(originals, rows, levels));
    written(path);
    return 0;
  }
  throw std::invalid_argument("unknown figure kind '" + a.kind +
                              "' (rate_accuracy, rate_distortion, latent_ellipses, recon_grid, drop_reg)");
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Dueling Decoders VAE: training, evaluation and reporting"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--store", g.store, "Run store directory")->capture_default_str();
  app.add_option("--config", g.config, "Experiment configuration (JSON)");
  app.add_option("--seed", g.seed, "Override training.seed (or the evaluation seed for eval)");
  app.add_option("--set", g.overrides, "Override a config key, e.g. objective.lambda=0.1");
  app.add_option("--data-root", g.data_root, "Directory holding mnist/ and fashion_mnist/");

  auto* train = app.add_subcommand("train", "Train one configuration");

  std::string axes = "paper";
  auto* grid = app.add_subcommand("grid", "Resumable grid search");
  grid->add_option("--axes", axes, "'paper' or e.g. beta=0.1,1;lambda=0.1,1;seed=0,1,2")->capture_default_str();

  int64_t drop_step = 0;
  std::optional<int64_t> extra_steps;
  auto* drop = app.add_subcommand("drop-reg", "Disable the auxiliary term at a given step");
  drop->add_option("--drop-step", drop_step, "Step at which lambda becomes 0")->required();
  drop->add_option("--extra-steps", extra_steps, "Updates after the drop");

  std::string checkpoint, run, probes = "linear,mlp";
  int64_t n_recon = 300, n_mc = 64, likelihood_examples = 0;
  bool replace = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and store the report");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  eval->add_option("--run", run, "Run digest in the store (uses its final checkpoint)");
  eval->add_option("--probes", probes, "linear,mlp or none")->capture_default_str();
  eval->add_option("--n-recon", n_recon, "Reconstructions to classify (0 skips)")->capture_default_str();
  eval->add_option("--n-mc", n_mc, "Latent samples per example for D and R")->capture_default_str();
  eval->add_option("--likelihood-examples", likelihood_examples, "Test examples for D and R (0 = all)");
  eval->add_flag("--replace", replace, "Overwrite an existing evaluation");

  std::string dataset = "mnist:threshold", out_dir;
  double rate_cap = 10.0;
  int bonferroni = 2;
  auto* report = app.add_subcommand("report", "Results table (text and CSV)");
  report->add_option("--dataset", dataset, "dataset[:binarization]")->capture_default_str();
  report->add_option("--rate-cap", rate_cap)->capture_default_str();
  report->add_option("--bonferroni", bonferroni)->capture_default_str();
  report->add_option("--out", out_dir, "Output directory (default <store>/reports)");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "Emit a figure");
  plot->add_option("--kind", plot_args.kind, "rate_accuracy, rate_distortion, latent_ellipses, recon_grid, drop_reg")
      ->required();
  plot->add_option("--dataset", plot_args.dataset)->capture_default_str();
  plot->add_option("--checkpoint", plot_args.checkpoints, "Checkpoint(s) for latent_ellipses / recon_grid");
  plot->add_option("--runs", plot_args.runs, "Restrict drop_reg to these digests");
  plot->add_option("--out", plot_args.out_dir, "Output directory (default <store>/figures)");
  plot->add_option("--rate-cap", plot_args.rate_cap)->capture_default_str();
  plot->add_option("--n", plot_args.n_images, "Originals in a recon_grid")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(g);
    if (*grid) return cmd_grid(g, axes);
    if (*drop) return cmd_drop_reg(g, drop_step, extra_steps);
    if (*eval) return cmd_eval(g, checkpoint, run, probes, n_recon, n_mc, likelihood_examples, replace);
    if (*report) return cmd_report(g, dataset, rate_cap, bonferroni, out_dir);
    if (*plot) return cmd_plot(g, plot_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
