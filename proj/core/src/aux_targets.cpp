#include "duelvae/aux_targets.hpp"

#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace duelvae {

std::string_view to_string(AuxTargetKind k) {
  switch (k) {
    case AuxTargetKind::pixel: return "pixel";
    case AuxTargetKind::gradient: return "gradient";
    case AuxTargetKind::row_col_marginals: return "row_col_marginals";
    case AuxTargetKind::intensity_histogram: return "intensity_histogram";
  }
  return "?";
}

AuxTargetKind parse_aux_kind(std::string_view s) {
  if (s == "pixel" || s == "conv") return AuxTargetKind::pixel;
  if (s == "gradient") return AuxTargetKind::gradient;
  if (s == "row_col_marginals" || s == "marginals") return AuxTargetKind::row_col_marginals;
  if (s == "intensity_histogram" || s == "histogram") return AuxTargetKind::intensity_histogram;
  throw std::invalid_argument("unknown aux_kind '" + std::string(s) + "'");
}

int aux_support(AuxTargetKind kind, int levels) {
  return kind == AuxTargetKind::gradient ? 2 * levels - 1 : levels;
}

AuxTarget compute_aux_target(std::span<const uint8_t> image, int64_t height, int64_t width,
                             int levels, AuxTargetKind kind) {
  AuxTarget t{kind, levels, height, width, PixelPayload{}};
  auto at = [&](int64_t r, int64_t c) { return static_cast<int>(image[r * width + c]); };

  switch (kind) {
    case AuxTargetKind::pixel: {
      t.payload = PixelPayload{std::vector<int>(image.begin(), image.end())};
      break;
    }
    case AuxTargetKind::gradient: {
      GradientPayload g;
      g.horizontal.reserve(height * (width - 1));
      g.vertical.reserve((height - 1) * width);
      for (int64_t r = 0; r < height; ++r)
        for (int64_t c = 0; c + 1 < width; ++c) g.horizontal.push_back(at(r, c + 1) - at(r, c));
      for (int64_t r = 0; r + 1 < height; ++r)
        for (int64_t c = 0; c < width; ++c) g.vertical.push_back(at(r + 1, c) - at(r, c));
      t.payload = std::move(g);
      break;
    }
    case AuxTargetKind::row_col_marginals: {
      MarginalsPayload m;
      m.rows.assign(height * levels, 0.0);
      m.cols.assign(width * levels, 0.0);
      for (int64_t r = 0; r < height; ++r) {
        for (int64_t c = 0; c < width; ++c) {
          const int v = at(r, c);
          m.rows[r * levels + v] += 1.0 / static_cast<double>(width);
          m.cols[c * levels + v] += 1.0 / static_cast<double>(height);
        }
      }
      t.payload = std::move(m);
      break;
    }
    case AuxTargetKind::intensity_histogram: {
      HistogramPayload h;
      h.frequencies.assign(levels, 0.0);
      const double inc = 1.0 / static_cast<double>(height * width);
      for (uint8_t v : image) h.frequencies[v] += inc;
      t.payload = std::move(h);
      break;
    }
  }
  return t;
}

AuxTargetBatch aux_targets(const torch::Tensor& raw_pixels, int levels, AuxTargetKind kind) {
  TORCH_CHECK(raw_pixels.dim() == 4 && raw_pixels.size(1) == 1,
              "aux_targets expects [B,1,H,W] grayscale pixels");
  const auto b = raw_pixels.size(0);
  const auto h = raw_pixels.size(2);
  const auto w = raw_pixels.size(3);
  AuxTargetBatch out{kind, levels, h, w, {}, {}};
  switch (kind) {
    case AuxTargetKind::pixel:
      out.primary = raw_pixels;
      break;
    case AuxTargetKind::gradient: {
      auto x = raw_pixels.squeeze(1).to(torch::kLong);
      using torch::indexing::None;
      using torch::indexing::Slice;
      auto horiz = x.index({Slice(), Slice(), Slice(1, None)}) -
                   x.index({Slice(), Slice(), Slice(None, -1)});
      auto vert = x.index({Slice(), Slice(1, None), Slice()}) -
                  x.index({Slice(), Slice(None, -1), Slice()});
      out.primary = (horiz + (levels - 1)).reshape({b, h * (w - 1)});
      out.secondary = (vert + (levels - 1)).reshape({b, (h - 1) * w});
      break;
    }
    case AuxTargetKind::row_col_marginals: {
      auto onehot = torch::one_hot(raw_pixels.squeeze(1).to(torch::kLong), levels)
                        .to(raw_pixels.scalar_type());  // [B,H,W,L]
      out.primary = onehot.mean(2);
      out.secondary = onehot.mean(1);
      break;
    }
    case AuxTargetKind::intensity_histogram: {
      auto onehot = torch::one_hot(raw_pixels.reshape({b, h * w}).to(torch::kLong), levels)
                        .to(raw_pixels.scalar_type());
      out.primary = onehot.mean(1, /*keepdim=*/true);
      break;
    }
  }
  return out;
}

}  // namespace duelvae
