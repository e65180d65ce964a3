#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/types.h>

namespace duelvae {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Tiles images [rows × cols] of equal size with `pad` pixels of separation.
/// `raw` is [rows, cols, H, W] in raw levels; values are scaled by
/// 255/(levels−1).
GrayImage tile_images(const torch::Tensor& raw, int levels, int64_t pad = 2);

/// Row 0 holds the originals [N,1,H,W]; each following row holds one
/// decoder's reconstructions of the same examples.
GrayImage recon_grid(const torch::Tensor& originals, const std::vector<torch::Tensor>& reconstructions,
                     int levels, int64_t pad = 2);

}  // namespace duelvae
