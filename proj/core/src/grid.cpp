#include "duelvae/grid.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "duelvae/config.hpp"

namespace duelvae {

GridAxes GridAxes::paper(DecoderKind decoder) {
  GridAxes a;
  a.beta = {0.1, 1.0};
  a.batch_size = {32, 64};
  a.latent_dim = {2, 16, 64};
  a.seeds = {0, 1, 2};
  if (decoder == DecoderKind::dueling) a.lambda = {0.1, 1.0};
  return a;
}

GridAxes GridAxes::parse(std::string_view spec) {
  GridAxes a;
  std::stringstream ss{std::string(spec)};
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("grid axis must look like name=v1,v2: " + item);
    const auto name = item.substr(0, eq);
    std::stringstream vs(item.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) {
      if (name == "beta") a.beta.push_back(std::stod(v));
      else if (name == "lambda") a.lambda.push_back(std::stod(v));
      else if (name == "batch_size") a.batch_size.push_back(std::stoll(v));
      else if (name == "latent_dim") a.latent_dim.push_back(std::stoll(v));
      else if (name == "seed") a.seeds.push_back(std::stoull(v));
      else throw std::invalid_argument("unknown grid axis: " + name);
    }
  }
  return a;
}

std::vector<TrainConfig> expand_grid(const TrainConfig& base, const GridAxes& axes) {
  auto or_base = [](const auto& axis, auto value) {
    using T = decltype(value);
    return axis.empty() ? std::vector<T>{value} : std::vector<T>(axis.begin(), axis.end());
  };
  std::vector<TrainConfig> out;
  for (double beta : or_base(axes.beta, base.objective.beta))
    for (double lambda : or_base(axes.lambda, base.objective.lambda))
      for (int64_t bs : or_base(axes.batch_size, base.batch_size))
        for (int64_t d : or_base(axes.latent_dim, base.latent_dim))
          for (uint64_t seed : or_base(axes.seeds, base.seed)) {
            TrainConfig c = base;
            c.objective.beta = beta;
            c.objective.lambda = lambda;
            c.batch_size = bs;
            c.latent_dim = d;
            c.seed = seed;
            out.push_back(c);
          }
  return out;
}

RunRecord record_run(const RunStore& store, const TrainConfig& cfg, const TrainResult& result) {
  RunRecord r;
  r.digest = config_digest(cfg);
  r.cell = cell_digest(cfg);
  r.seed = cfg.seed;
  r.config = to_json(cfg);
  if (!result.timeline.rows.empty()) r.final_metrics = result.timeline.rows.back();
  r.drop_step = result.timeline.drop_step;
  r.wall_seconds = result.wall_seconds;
  if (result.checkpoint)
    r.checkpoint = std::filesystem::relative(*result.checkpoint, store.run_dir(r.digest)).string();
  store.write_record(r);
  return r;
}

std::vector<GridOutcome> grid_search(const TrainConfig& base, const GridAxes& axes, const RunStore& store,
                                     const TrainFn& train_fn) {
  std::vector<GridOutcome> outcomes;
  for (const auto& cfg : expand_grid(base, axes)) {
    GridOutcome o;
    o.digest = config_digest(cfg);
    if (store.is_complete(o.digest)) {
      o.status = GridOutcome::Status::skipped;
      outcomes.push_back(o);
      continue;
    }
    try {
      cfg.validate();
      const auto dir = store.run_dir(o.digest);
      store.write_config(o.digest, to_json(cfg));
      const auto result = train_fn(cfg, dir);
      record_run(store, cfg, result);
    } catch (const std::exception& e) {
      o.status = GridOutcome::Status::failed;
      o.error = e.what();
      store.write_failure(o.digest, o.error);
    }
    outcomes.push_back(o);
  }
  return outcomes;
}

TrainFn dataset_train_fn() {
  auto cache = std::make_shared<std::map<std::string, std::shared_ptr<LabeledImageDataset>>>();
  return [cache](const TrainConfig& cfg, const std::filesystem::path& run_dir) {
    auto key = to_json(cfg)["data"].dump();
    auto it = cache->find(key);
    if (it == cache->end())
      it = cache->emplace(key, std::make_shared<LabeledImageDataset>(load_dataset(cfg.data, Split::train)))
               .first;
    auto result = train(cfg, *it->second, run_dir);
    write_file_atomic(run_dir / "metrics.csv", result.timeline.to_csv());
    return result;
  };
}

}  // namespace duelvae
