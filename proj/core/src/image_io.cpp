#include "duelvae/image_io.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>
#include <torch/torch.h>

namespace duelvae {

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<size_t>(image.height * image.width))
    throw std::invalid_argument("write_png: pixel buffer does not match dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t r = 0; r < image.height; ++r)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + r * image.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage tile_images(const torch::Tensor& raw, int levels, int64_t pad) {
  if (raw.dim() != 4) throw std::invalid_argument("tile_images expects [rows, cols, H, W]");
  const int64_t rows = raw.size(0), cols = raw.size(1), h = raw.size(2), w = raw.size(3);
  GrayImage out;
  out.height = rows * h + (rows + 1) * pad;
  out.width = cols * w + (cols + 1) * pad;
  out.pixels.assign(static_cast<size_t>(out.height * out.width), 128);
  auto scaled = (raw.to(torch::kDouble) * (255.0 / (levels - 1))).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  const auto* p = scaled.data_ptr<uint8_t>();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const int64_t oy = pad + i * (h + pad) + y;
          const int64_t ox = pad + j * (w + pad) + x;
          out.pixels[static_cast<size_t>(oy * out.width + ox)] = p[((i * cols + j) * h + y) * w + x];
        }
  return out;
}

GrayImage recon_grid(const torch::Tensor& originals, const std::vector<torch::Tensor>& reconstructions,
                     int levels, int64_t pad) {
  std::vector<torch::Tensor> rows{originals.squeeze(1)};
  for (const auto& r : reconstructions) {
    if (r.sizes() != originals.sizes())
      throw std::invalid_argument("recon_grid: reconstruction shape differs from originals");
    rows.push_back(r.squeeze(1));
  }
  return tile_images(torch::stack(rows), levels, pad);
}

}  // namespace duelvae
