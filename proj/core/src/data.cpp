#include "duelvae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include <torch/torch.h>
#include <zlib.h>

namespace duelvae {
namespace fs = std::filesystem;

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

// gzread transparently passes through uncompressed files.
std::vector<uint8_t> read_maybe_gzip(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open " + path.string());
  std::vector<uint8_t> out;
  std::array<uint8_t, 1 << 16> buf{};
  for (;;) {
    int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      gzclose(f);
      throw DataError("truncated payload: gzip stream error in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t offset) {
  return (uint32_t{b[offset]} << 24) | (uint32_t{b[offset + 1]} << 16) |
         (uint32_t{b[offset + 2]} << 8) | uint32_t{b[offset + 3]};
}

fs::path first_existing(const fs::path& dir, const std::string& stem) {
  for (const char* suffix : {".gz", ""}) {
    fs::path p = dir / (stem + suffix);
    if (fs::exists(p)) return p;
  }
  throw DataError("missing IDX file " + (dir / stem).string() + "[.gz]");
}

}  // namespace

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string_view to_string(Binarization b) {
  switch (b) {
    case Binarization::none: return "none";
    case Binarization::stochastic: return "stochastic";
    case Binarization::threshold: return "threshold";
  }
  return "?";
}

Binarization parse_binarization(std::string_view s) {
  if (s == "none") return Binarization::none;
  if (s == "stochastic") return Binarization::stochastic;
  if (s == "threshold") return Binarization::threshold;
  throw std::invalid_argument("unknown binarization '" + std::string(s) + "'");
}

std::span<const uint8_t> LabeledImageDataset::image(int64_t i) const {
  const auto n = static_cast<size_t>(pixels_per_image());
  return {pixels.data() + static_cast<size_t>(i) * n, n};
}

LabeledImageDataset load_idx_pair(const fs::path& images, const fs::path& labels, Split split) {
  const auto img = read_maybe_gzip(images);
  const auto lab = read_maybe_gzip(labels);
  if (img.size() < 16 || lab.size() < 8) throw DataError("truncated payload: header incomplete");
  if (read_be32(img, 0) != kImageMagic)
    throw DataError("malformed magic number in " + images.string());
  if (read_be32(lab, 0) != kLabelMagic)
    throw DataError("malformed magic number in " + labels.string());

  const uint32_t n_images = read_be32(img, 4);
  const uint32_t rows = read_be32(img, 8);
  const uint32_t cols = read_be32(img, 12);
  const uint32_t n_labels = read_be32(lab, 4);
  const size_t image_bytes = size_t{n_images} * rows * cols;
  if (img.size() < 16 + image_bytes) throw DataError("truncated payload: image data");
  if (lab.size() < 8 + size_t{n_labels}) throw DataError("truncated payload: label data");
  if (n_images != n_labels) {
    throw DataError("image/label count mismatch: " + std::to_string(n_images) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }

  LabeledImageDataset ds;
  ds.height = rows;
  ds.width = cols;
  ds.channels = 1;
  ds.split = split;
  ds.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(image_bytes));
  ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + n_labels);
  for (uint8_t l : ds.labels) {
    if (l > 9) throw DataError("label out of range: " + std::to_string(l));
  }
  return ds;
}

LabeledImageDataset load_idx(const fs::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  return load_idx_pair(first_existing(dir, prefix + "-images-idx3-ubyte"),
                       first_existing(dir, prefix + "-labels-idx1-ubyte"), split);
}

LabeledImageDataset binarize(const LabeledImageDataset& ds, Binarization mode, uint64_t seed) {
  if (ds.binarization != Binarization::none)
    throw std::invalid_argument("dataset is already binarized; refusing to binarize twice");
  if (mode == Binarization::none) return ds;

  LabeledImageDataset out = ds;
  out.binarization = mode;
  out.seed = seed;
  if (mode == Binarization::threshold) {
    for (auto& p : out.pixels) p = p > 127 ? 1 : 0;
    return out;
  }
  std::mt19937_64 rng(seed);
  for (auto& p : out.pixels) {
    // 53-bit uniform in [0,1); p==255 always fires, p==0 never does.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    p = u < static_cast<double>(p) / 255.0 ? 1 : 0;
  }
  return out;
}

double label_entropy(const LabeledImageDataset& ds) {
  if (ds.labels.empty()) throw std::invalid_argument("label_entropy: empty dataset");
  std::array<int64_t, 256> counts{};
  for (uint8_t l : ds.labels) ++counts[l];
  const double n = static_cast<double>(ds.labels.size());
  double h = 0.0;
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

LabeledImageDataset slice(const LabeledImageDataset& ds, int64_t begin, int64_t end) {
  begin = std::clamp<int64_t>(begin, 0, ds.size());
  end = std::clamp<int64_t>(end, begin, ds.size());
  LabeledImageDataset out = ds;
  const auto n = ds.pixels_per_image();
  out.pixels.assign(ds.pixels.begin() + begin * n, ds.pixels.begin() + end * n);
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  return out;
}

LabeledImageDataset resize_images(const LabeledImageDataset& ds, int64_t side) {
  if (ds.binarization != Binarization::none)
    throw std::invalid_argument("resize_images expects 8-bit data");
  if (side == ds.height && side == ds.width) return ds;
  auto src = torch::from_blob(const_cast<uint8_t*>(ds.pixels.data()),
                              {ds.size(), ds.channels, ds.height, ds.width}, torch::kUInt8)
                 .to(torch::kFloat);
  auto dst = torch::adaptive_avg_pool2d(src, {side, side}).round().clamp(0, 255).to(torch::kUInt8);
  LabeledImageDataset out = ds;
  out.height = side;
  out.width = side;
  out.pixels.assign(dst.data_ptr<uint8_t>(), dst.data_ptr<uint8_t>() + dst.numel());
  return out;
}

LabeledImageDataset load_dataset(const DatasetSpec& spec, Split split) {
  if (spec.name != "mnist" && spec.name != "fashion_mnist")
    throw std::invalid_argument("unknown dataset '" + spec.name + "'");
  auto ds = load_idx(spec.root / spec.name, split);
  const auto& limit = split == Split::train ? spec.train_limit : spec.test_limit;
  if (limit && *limit < ds.size()) ds = slice(ds, 0, *limit);
  if (spec.image_size != ds.height) ds = resize_images(ds, spec.image_size);
  // The test split gets its own stream so the two splits never share draws.
  const uint64_t seed = split == Split::train ? spec.data_seed : mix_seed(spec.data_seed, 1);
  return binarize(ds, spec.binarize, seed);
}

Batch make_batch(const LabeledImageDataset& ds, std::span<const int64_t> indices) {
  const auto b = static_cast<int64_t>(indices.size());
  const auto n = ds.pixels_per_image();
  auto pixels = torch::empty({b, ds.channels, ds.height, ds.width}, torch::kFloat);
  auto labels = torch::empty({b}, torch::kLong);
  float* px = pixels.data_ptr<float>();
  int64_t* lb = labels.data_ptr<int64_t>();
  for (int64_t i = 0; i < b; ++i) {
    const auto img = ds.image(indices[i]);
    std::transform(img.begin(), img.end(), px + i * n, [](uint8_t v) { return float(v); });
    lb[i] = ds.labels[static_cast<size_t>(indices[i])];
  }
  return {std::vector<int64_t>(indices.begin(), indices.end()), pixels, labels};
}

torch::Tensor network_input(const torch::Tensor& raw_pixels, int levels) {
  if (levels == 2) return raw_pixels;
  return raw_pixels / 127.5 - 1.0;
}

uint64_t mix_seed(uint64_t seed, uint64_t key) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

BatchIterator::BatchIterator(const LabeledImageDataset& ds, int64_t batch_size, uint64_t seed,
                             int64_t num_steps)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), num_steps_(num_steps) {
  if (batch_size <= 0 || batch_size > ds.size())
    throw std::invalid_argument("batch_size must be in [1, dataset size]");
  batches_per_epoch_ = ds.size() / batch_size;
}

double BatchIterator::epochs_traversed() const {
  return static_cast<double>(num_steps_) * static_cast<double>(batch_size_) /
         static_cast<double>(ds_->size());
}

const std::vector<int64_t>& BatchIterator::permutation(int64_t epoch) const {
  if (epoch != cached_epoch_) {
    cached_perm_.resize(static_cast<size_t>(ds_->size()));
    std::iota(cached_perm_.begin(), cached_perm_.end(), int64_t{0});
    std::mt19937_64 rng(mix_seed(seed_, static_cast<uint64_t>(epoch)));
    // Fisher-Yates with an explicit draw so the order is library independent.
    for (size_t i = cached_perm_.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(rng() % i);
      std::swap(cached_perm_[i - 1], cached_perm_[j]);
    }
    cached_epoch_ = epoch;
  }
  return cached_perm_;
}

std::vector<int64_t> BatchIterator::indices_at(int64_t step) const {
  const int64_t epoch = step / batches_per_epoch_;
  const int64_t offset = (step % batches_per_epoch_) * batch_size_;
  const auto& perm = permutation(epoch);
  return {perm.begin() + offset, perm.begin() + offset + batch_size_};
}

Batch BatchIterator::batch_at(int64_t step) const {
  const auto idx = indices_at(step);
  return make_batch(*ds_, idx);
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= num_steps_) return std::nullopt;
  return batch_at(cursor_++);
}

}  // namespace duelvae
