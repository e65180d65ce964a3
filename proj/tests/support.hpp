#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "duelvae/data.hpp"
#include "duelvae/distributions.hpp"
#include "duelvae/training.hpp"

namespace duelvae::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("duelvae_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path data_root() { return DUELVAE_TEST_DATA_DIR; }

inline bool have_mnist() {
  const auto dir = data_root() / "mnist";
  for (const char* stem : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                           "t10k-labels-idx1-ubyte"}) {
    const auto p = dir / stem;
    if (!std::filesystem::exists(p) && !std::filesystem::exists(p.string() + ".gz")) return false;
  }
  return true;
}

/// Images whose ink pattern depends on the label: class k lights row k mod side,
/// and classes past `side` also a column band, plus noise. Binary unless `levels == 256`.
inline LabeledImageDataset synthetic_dataset(int64_t n, int64_t side, int levels, uint64_t seed) {
  LabeledImageDataset ds;
  ds.height = ds.width = side;
  ds.binarization = levels == 2 ? Binarization::threshold : Binarization::none;
  ds.seed = seed;
  auto gen = make_generator(seed);
  auto noise = torch::rand({n, side, side}, gen);
  auto label_draw = torch::randint(0, 10, {n}, gen);
  ds.pixels.resize(static_cast<size_t>(n * side * side));
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t label = label_draw[i].item<int64_t>();
    ds.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(label);
    for (int64_t r = 0; r < side; ++r)
      for (int64_t c = 0; c < side; ++c) {
        const bool on = r == label % side || (label >= side && c == label - side);
        const double u = noise[i][r][c].item<double>();
        const double v = on ? 0.8 + 0.2 * u : 0.15 * u;
        ds.pixels[static_cast<size_t>((i * side + r) * side + c)] =
            levels == 2 ? static_cast<uint8_t>(u < v) : static_cast<uint8_t>(v * 255.0);
      }
  }
  return ds;
}

/// 8×8 configuration with tiny widths; a few milliseconds per step.
inline TrainConfig tiny_config(DecoderKind decoder, uint64_t seed = 0, int levels = 2) {
  TrainConfig c;
  c.data.image_size = 8;
  c.data.binarize = levels == 2 ? Binarization::threshold : Binarization::none;
  c.decoder = decoder;
  c.latent_dim = 4;
  c.batch_size = 8;
  c.total_steps = 20;
  c.seed = seed;
  c.log_every = 5;
  c.checkpoint_every = 0;
  c.widths = NetworkWidths::tiny();
  c.components = 2;
  c.pseudo_inputs = 6;
  if (decoder == DecoderKind::dueling) {
    c.objective.aux_kind = AuxTargetKind::pixel;
    c.objective.lambda = 0.1;
  }
  return c;
}

}  // namespace duelvae::testing
