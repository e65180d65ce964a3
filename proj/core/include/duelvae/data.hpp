#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace duelvae {

enum class Split { train, test };
enum class Binarization { none, stochastic, threshold };

std::string_view to_string(Split s);
std::string_view to_string(Binarization b);
Binarization parse_binarization(std::string_view s);

/// Raised for malformed or inconsistent dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grayscale labeled images stored row-major as one byte per pixel.
///
/// Pixel values are 0..255 while `binarization == none`, and {0,1} after
/// `binarize`. Instances are treated as immutable once built.
struct LabeledImageDataset {
  int64_t height = 28;
  int64_t width = 28;
  int64_t channels = 1;
  std::vector<uint8_t> pixels;
  std::vector<uint8_t> labels;
  Split split = Split::train;
  Binarization binarization = Binarization::none;
  uint64_t seed = 0;

  [[nodiscard]] int64_t size() const { return static_cast<int64_t>(labels.size()); }
  [[nodiscard]] int64_t pixels_per_image() const { return height * width * channels; }
  [[nodiscard]] std::span<const uint8_t> image(int64_t i) const;
  /// Number of distinct pixel values: 2 for binarized data, 256 for 8-bit.
  [[nodiscard]] int levels() const { return binarization == Binarization::none ? 256 : 2; }
  [[nodiscard]] bool is_binary() const { return binarization != Binarization::none; }
};

/// Reads an IDX image file and its label file (gzip or raw).
LabeledImageDataset load_idx_pair(const std::filesystem::path& images,
                                  const std::filesystem::path& labels, Split split);

/// Reads the standard `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`
/// pair from `dir`.
LabeledImageDataset load_idx(const std::filesystem::path& dir, Split split);

/// Returns a binarized copy. Rejects datasets that are already binary.
LabeledImageDataset binarize(const LabeledImageDataset& ds, Binarization mode, uint64_t seed);

/// Shannon entropy (nats) of the empirical label distribution.
double label_entropy(const LabeledImageDataset& ds);

/// Examples `[begin, end)` as a new dataset (keeps provenance fields).
LabeledImageDataset slice(const LabeledImageDataset& ds, int64_t begin, int64_t end);

/// Area-resamples 8-bit images to `side`×`side` (rounded to the nearest
/// level). Used for the reduced 8×8 configurations. Requires binarization
/// none.
LabeledImageDataset resize_images(const LabeledImageDataset& ds, int64_t side);

/// Identity of a dataset as selected by configuration.
struct DatasetSpec {
  std::string name = "mnist";  // mnist | fashion_mnist
  std::filesystem::path root;  // directory containing <name>/
  Binarization binarize = Binarization::threshold;
  uint64_t data_seed = 0;
  int64_t image_size = 28;
  std::optional<int64_t> train_limit;
  std::optional<int64_t> test_limit;
};

/// Loads and binarizes the split named by `spec`.
LabeledImageDataset load_dataset(const DatasetSpec& spec, Split split);

/// One minibatch. `pixels` holds raw level values (0/1 or 0..255) as float
/// with shape [B, C, H, W].
struct Batch {
  std::vector<int64_t> indices;
  torch::Tensor pixels;
  torch::Tensor labels;
};

/// Gathers examples into a batch tensor.
Batch make_batch(const LabeledImageDataset& ds, std::span<const int64_t> indices);

/// Converts raw level values to the network input convention: binary data
/// stays in {0,1}; 8-bit data is rescaled to [-1,1].
torch::Tensor network_input(const torch::Tensor& raw_pixels, int levels);

/// Deterministic minibatch stream keyed by step index.
///
/// Each epoch visits a seed-derived permutation; the trailing partial batch
/// of an epoch is dropped. `batch_at(step)` is random access so a resumed
/// run sees the same sequence as an uninterrupted one.
class BatchIterator {
 public:
  BatchIterator(const LabeledImageDataset& ds, int64_t batch_size, uint64_t seed,
                int64_t num_steps);

  [[nodiscard]] int64_t num_steps() const { return num_steps_; }
  [[nodiscard]] int64_t batches_per_epoch() const { return batches_per_epoch_; }
  /// Epochs worth of examples consumed by `num_steps` batches.
  [[nodiscard]] double epochs_traversed() const;

  [[nodiscard]] std::vector<int64_t> indices_at(int64_t step) const;
  [[nodiscard]] Batch batch_at(int64_t step) const;

  /// Sequential interface; returns nullopt after `num_steps` batches.
  std::optional<Batch> next();

 private:
  const std::vector<int64_t>& permutation(int64_t epoch) const;

  const LabeledImageDataset* ds_;
  int64_t batch_size_;
  uint64_t seed_;
  int64_t num_steps_;
  int64_t batches_per_epoch_;
  int64_t cursor_ = 0;
  mutable int64_t cached_epoch_ = -1;
  mutable std::vector<int64_t> cached_perm_;
};

/// splitmix64 finalizer; used to derive independent seeds from (seed, key).
uint64_t mix_seed(uint64_t seed, uint64_t key);

}  // namespace duelvae
