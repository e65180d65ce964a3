#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <torch/types.h>

namespace duelvae {

/// What an auxiliary decoder reconstructs from the latent.
enum class AuxTargetKind { pixel, gradient, row_col_marginals, intensity_histogram };

std::string_view to_string(AuxTargetKind k);
AuxTargetKind parse_aux_kind(std::string_view s);

/// Number of values a single target cell can take: the pixel levels for
/// pixel/histogram kinds, 2·levels−1 for signed differences.
int aux_support(AuxTargetKind kind, int levels);

struct PixelPayload {
  std::vector<int> values;  // H×W
};

/// Forward differences: horizontal is H×(W−1) (right minus pixel), vertical
/// is (H−1)×W (below minus pixel).
struct GradientPayload {
  std::vector<int> horizontal;
  std::vector<int> vertical;
};

/// Per-row and per-column intensity histograms, each normalized to 1.
struct MarginalsPayload {
  std::vector<double> rows;  // H×levels
  std::vector<double> cols;  // W×levels
};

struct HistogramPayload {
  std::vector<double> frequencies;  // levels
};

struct AuxTarget {
  AuxTargetKind kind;
  int levels;
  int64_t height;
  int64_t width;
  std::variant<PixelPayload, GradientPayload, MarginalsPayload, HistogramPayload> payload;
};

/// Reference (per-image) target computation. Total over images whose values
/// lie in [0, levels).
AuxTarget compute_aux_target(std::span<const uint8_t> image, int64_t height, int64_t width,
                             int levels, AuxTargetKind kind);

/// Batched targets in the layout the auxiliary likelihoods consume.
///
///  pixel      primary = raw pixels [B,1,H,W]
///  gradient   primary = horizontal class index [B, H·(W−1)],
///             secondary = vertical class index [B, (H−1)·W]; index = diff + levels − 1
///  marginals  primary = row frequencies [B,H,levels], secondary = column frequencies [B,W,levels]
///  histogram  primary = frequencies [B,1,levels]
struct AuxTargetBatch {
  AuxTargetKind kind;
  int levels;
  int64_t height;
  int64_t width;
  torch::Tensor primary;
  torch::Tensor secondary;
};

AuxTargetBatch aux_targets(const torch::Tensor& raw_pixels, int levels, AuxTargetKind kind);

}  // namespace duelvae
