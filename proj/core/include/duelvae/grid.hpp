#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "duelvae/data.hpp"
#include "duelvae/run_store.hpp"
#include "duelvae/training.hpp"

namespace duelvae {

/// Hyperparameter axes of a sweep. Empty axes keep the base value.
struct GridAxes {
  std::vector<double> beta;
  std::vector<double> lambda;
  std::vector<int64_t> batch_size;
  std::vector<int64_t> latent_dim;
  std::vector<uint64_t> seeds;

  /// β {0.1,1}, batch {32,64}, latent {2,16,64}, 3 seeds, plus λ {0.1,1}
  /// for dueling decoders.
  static GridAxes paper(DecoderKind decoder);
  /// "beta=0.1,1;lambda=0.1,1;batch_size=32,64;latent_dim=2,16,64;seed=0,1,2"
  static GridAxes parse(std::string_view spec);
};

/// Cartesian product of the axes applied to `base`, seeds innermost.
std::vector<TrainConfig> expand_grid(const TrainConfig& base, const GridAxes& axes);

struct GridOutcome {
  std::string digest;
  enum class Status { trained, skipped, failed } status = Status::trained;
  std::string error;
};

using TrainFn = std::function<TrainResult(const TrainConfig&, const std::filesystem::path& run_dir)>;

/// Runs every grid point not already complete in `store`. A failing point is
/// recorded and the sweep continues.
std::vector<GridOutcome> grid_search(const TrainConfig& base, const GridAxes& axes, const RunStore& store,
                                     const TrainFn& train_fn);

/// Default TrainFn: loads the configured training split and calls train().
TrainFn dataset_train_fn();

/// Completes a run in the store from a training result.
RunRecord record_run(const RunStore& store, const TrainConfig& cfg, const TrainResult& result);

}  // namespace duelvae
