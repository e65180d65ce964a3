#include <map>
#include <optional>
#include <stdexcept>

#include <torch/torch.h>

#include "duelvae/networks.hpp"

namespace duelvae {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

enum Role : int { kResidual = 0, kDown = 1, kUp = 2 };
enum class Shift { down, down_right };

torch::Tensor down_shift(const torch::Tensor& x) {
  return F::pad(x.index({Slice(), Slice(), Slice(None, -1), Slice()}),
                F::PadFuncOptions({0, 0, 1, 0}));
}

torch::Tensor right_shift(const torch::Tensor& x) {
  return F::pad(x.index({Slice(), Slice(), Slice(), Slice(None, -1)}),
                F::PadFuncOptions({1, 0, 0, 0}));
}

// Convolution whose receptive field never reaches below the output row
// (down) or below-or-right of the output pixel (down_right).
class ShiftedConvImpl : public nn::Module {
 public:
  ShiftedConvImpl(int64_t in, int64_t out, std::array<int64_t, 2> k, int64_t stride, Shift shift,
                  bool transposed)
      : k_(k), shift_(shift), transposed_(transposed) {
    if (transposed) {
      deconv_ = register_module(
          "deconv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, {k[0], k[1]})
                                            .stride(stride)
                                            .output_padding(1)));
    } else {
      conv_ = register_module("conv",
                              nn::Conv2d(nn::Conv2dOptions(in, out, {k[0], k[1]}).stride(stride)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    if (!transposed_) {
      std::vector<int64_t> pad = shift_ == Shift::down
                                     ? std::vector<int64_t>{(k_[1] - 1) / 2, (k_[1] - 1) / 2,
                                                            k_[0] - 1, 0}
                                     : std::vector<int64_t>{k_[1] - 1, 0, k_[0] - 1, 0};
      return conv_->forward(F::pad(x, F::PadFuncOptions(pad)));
    }
    auto y = deconv_->forward(x);
    const int64_t rows = y.size(2) - k_[0] + 1;
    if (shift_ == Shift::down) {
      const int64_t c = (k_[1] - 1) / 2;
      return y.index({Slice(), Slice(), Slice(None, rows), Slice(c, y.size(3) - c)});
    }
    return y.index({Slice(), Slice(), Slice(None, rows), Slice(None, y.size(3) - k_[1] + 1)});
  }

 private:
  std::array<int64_t, 2> k_;
  Shift shift_;
  bool transposed_;
  nn::Conv2d conv_{nullptr};
  nn::ConvTranspose2d deconv_{nullptr};
};
TORCH_MODULE(ShiftedConv);

torch::Tensor gate(const torch::Tensor& h) {
  auto parts = h.chunk(2, 1);
  return torch::tanh(parts[0]) * torch::sigmoid(parts[1]);
}

nn::Conv2d nin(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

// One gated stage acting on both streams. Residual stages keep the spatial
// size; down / up stages change it by 2 and drop the residual path.
class PixelBlockImpl : public nn::Module {
 public:
  PixelBlockImpl(Role role, int64_t c, int64_t latent_dim, bool use_skip) : role_(role) {
    const int64_t stride = role == kResidual ? 1 : 2;
    const bool transposed = role == kUp;
    u_conv_ = register_module("u_conv", ShiftedConv(c, 2 * c, std::array<int64_t, 2>{2, 3}, stride, Shift::down, transposed));
    ul_conv_ = register_module(
        "ul_conv", ShiftedConv(c, 2 * c, std::array<int64_t, 2>{2, 2}, stride, Shift::down_right, transposed));
    ul_from_u_ = register_module("ul_from_u", nin(c, 2 * c));
    u_latent_ = register_module("u_latent", nn::Linear(latent_dim, 2 * c));
    ul_latent_ = register_module("ul_latent", nn::Linear(latent_dim, 2 * c));
    if (use_skip) {
      u_skip_ = register_module("u_skip", nin(c, 2 * c));
      ul_skip_ = register_module("ul_skip", nin(c, 2 * c));
    }
  }

  [[nodiscard]] bool uses_skip() const { return !u_skip_.is_empty(); }

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& u, const torch::Tensor& ul,
                                                  const torch::Tensor& z,
                                                  const std::pair<torch::Tensor, torch::Tensor>* skip) {
    auto hu = u_conv_->forward(u) + u_latent_->forward(z).unsqueeze(-1).unsqueeze(-1);
    if (skip != nullptr) hu = hu + u_skip_->forward(skip->first);
    auto gu = gate(hu);
    auto u_out = role_ == kResidual ? u + gu : gu;

    auto hul = ul_conv_->forward(ul) + ul_from_u_->forward(u_out) +
               ul_latent_->forward(z).unsqueeze(-1).unsqueeze(-1);
    if (skip != nullptr) hul = hul + ul_skip_->forward(skip->second);
    auto gul = gate(hul);
    auto ul_out = role_ == kResidual ? ul + gul : gul;
    return {u_out, ul_out};
  }

 private:
  Role role_;
  ShiftedConv u_conv_{nullptr};
  ShiftedConv ul_conv_{nullptr};
  nn::Conv2d ul_from_u_{nullptr};
  nn::Linear u_latent_{nullptr};
  nn::Linear ul_latent_{nullptr};
  nn::Conv2d u_skip_{nullptr};
  nn::Conv2d ul_skip_{nullptr};
};
TORCH_MODULE(PixelBlock);

std::vector<int> block_layout(PixelCnnSize size) {
  if (size == PixelCnnSize::small)
    return {kResidual, kResidual, kDown, kResidual, kDown, kResidual,
            kUp,       kResidual, kUp,   kResidual};
  // Two extra residual stages after each of the fourth, sixth, eighth and tenth.
  return {kResidual, kResidual, kDown, kResidual, kResidual, kResidual,
          kDown,     kResidual, kResidual, kResidual, kUp, kResidual,
          kResidual, kResidual, kUp,       kResidual, kResidual, kResidual};
}

// Which residual stages in the upward half receive the lower-half state at
// their resolution.
std::vector<bool> skip_mask(const std::vector<int>& roles) {
  std::vector<bool> mask(roles.size(), false);
  int level = 0;
  bool upward = false;
  std::map<int, bool> captured;
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == kDown) {
      captured[level] = true;
      ++level;
    } else if (roles[i] == kUp) {
      upward = true;
      --level;
    } else if (upward && captured.contains(level)) {
      mask[i] = true;
    }
  }
  return mask;
}

}  // namespace

PixelCnnImpl::PixelCnnImpl(const PixelCnnOptions& opts) : opts_(opts) {
  if (opts.image_size < 4 || opts.image_size % 4 != 0)
    throw std::invalid_argument("pixelcnn: image size must be a positive multiple of 4");
  filters_ = opts.size == PixelCnnSize::small ? opts.widths.pixelcnn_small
                                               : opts.widths.pixelcnn_enlarged;
  const int64_t in = opts.in_channels + 1;
  stem_u_ = register_module("stem_u", nn::Conv2d(nn::Conv2dOptions(in, filters_, {2, 3})));
  stem_ul_down_ = register_module("stem_ul_down", nn::Conv2d(nn::Conv2dOptions(in, filters_, {1, 3})));
  stem_ul_right_ =
      register_module("stem_ul_right", nn::Conv2d(nn::Conv2dOptions(in, filters_, {2, 1})));
  block_roles_ = block_layout(opts.size);
  const auto mask = skip_mask(block_roles_);
  blocks_ = register_module("blocks", nn::ModuleList());
  for (size_t i = 0; i < block_roles_.size(); ++i)
    blocks_->push_back(PixelBlock(static_cast<Role>(block_roles_[i]), filters_, opts.latent_dim, mask[i]));
  head_ = register_module("head", nin(filters_, opts.out_channels));
}

torch::Tensor PixelCnnImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  if (x.dim() != 4 || x.size(1) != opts_.in_channels)
    throw std::invalid_argument("pixelcnn: expected [B, C, H, W] input");
  if (x.size(2) % 4 != 0) throw std::invalid_argument("pixelcnn: row count must be a multiple of 4");
  if (z.dim() != 2 || z.size(0) != x.size(0) || z.size(1) != opts_.latent_dim)
    throw std::invalid_argument("pixelcnn: latent shape mismatch");

  auto xin = torch::cat({x, torch::ones_like(x.narrow(1, 0, 1))}, 1);
  auto u = down_shift(stem_u_->forward(F::pad(xin, F::PadFuncOptions({1, 1, 1, 0}))));
  auto ul = down_shift(stem_ul_down_->forward(F::pad(xin, F::PadFuncOptions({1, 1, 0, 0})))) +
            right_shift(stem_ul_right_->forward(F::pad(xin, F::PadFuncOptions({0, 0, 1, 0}))));

  std::map<int, std::pair<torch::Tensor, torch::Tensor>> lower;
  int level = 0;
  for (size_t i = 0; i < block_roles_.size(); ++i) {
    auto block = blocks_[i]->as<PixelBlockImpl>();
    const std::pair<torch::Tensor, torch::Tensor>* skip = nullptr;
    if (block_roles_[i] == kDown) {
      lower[level] = {u, ul};
      ++level;
    } else if (block_roles_[i] == kUp) {
      --level;
    } else if (block->uses_skip()) {
      skip = &lower.at(level);
    }
    std::tie(u, ul) = block->forward(u, ul, z, skip);
  }
  return head_->forward(torch::elu(ul));
}

}  // namespace duelvae
