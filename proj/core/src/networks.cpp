#include "duelvae/networks.hpp"

#include <stdexcept>

#include <torch/torch.h>

namespace duelvae {

namespace nn = torch::nn;

NetworkWidths NetworkWidths::tiny() {
  NetworkWidths w;
  w.encoder = {4, 8, 8, 8, 16};
  w.decoder = {16, 16, 16, 8, 8, 4};
  w.pixelcnn_small = 8;
  w.pixelcnn_enlarged = 16;
  w.aux_hidden = 16;
  w.probe_hidden = 16;
  return w;
}

namespace {

void check_image_size(int64_t image_size) {
  if (image_size < 4 || image_size % 4 != 0)
    throw std::invalid_argument("image size must be a positive multiple of 4");
}

}  // namespace

ConvTrunkImpl::ConvTrunkImpl(int64_t in_channels, int64_t image_size,
                             const std::array<int64_t, 5>& filters, int64_t extra_layers) {
  check_image_size(image_size);
  convs_ = register_module("convs", nn::ModuleList());
  auto conv = [](int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
  };
  convs_->push_back(conv(in_channels, filters[0], 5, 1, 2));
  convs_->push_back(conv(filters[0], filters[1], 5, 2, 2));
  convs_->push_back(conv(filters[1], filters[2], 5, 1, 2));
  for (int64_t i = 0; i < extra_layers; ++i) convs_->push_back(conv(filters[2], filters[2], 3, 1, 1));
  convs_->push_back(conv(filters[2], filters[3], 5, 2, 2));
  // "valid" 7×7 at 28×28 input; the kernel tracks the spatial size for other inputs.
  convs_->push_back(conv(filters[3], filters[4], image_size / 4, 1, 0));
  out_features_ = filters[4];
}

torch::Tensor ConvTrunkImpl::forward(torch::Tensor x) {
  for (auto& m : *convs_) x = torch::relu(m->as<nn::Conv2d>()->forward(x));
  return x.flatten(1);
}

EncoderImpl::EncoderImpl(int64_t latent_dim, int64_t image_size, const NetworkWidths& widths,
                         int64_t in_channels)
    : latent_dim_(latent_dim) {
  trunk_ = register_module("trunk", ConvTrunk(in_channels, image_size, widths.encoder));
  head_ = register_module(
      "head", nn::Linear(trunk_->out_features(), latent_dim + tril_entries(latent_dim)));
}

FullCovGaussian EncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4) throw std::invalid_argument("encoder expects [B,C,H,W] input");
  return gaussian_from_raw(head_->forward(trunk_->forward(x)), latent_dim_);
}

CnnDecoderImpl::CnnDecoderImpl(int64_t latent_dim, int64_t image_size, const NetworkWidths& widths,
                               int64_t out_channels)
    : latent_dim_(latent_dim) {
  check_image_size(image_size);
  layers_ = register_module("layers", nn::ModuleList());
  const auto& f = widths.decoder;
  auto tconv = [](int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad, int64_t out_pad) {
    return nn::ConvTranspose2d(
        nn::ConvTranspose2dOptions(in, out, k).stride(stride).padding(pad).output_padding(out_pad));
  };
  layers_->push_back(tconv(latent_dim, f[0], image_size / 4, 1, 0, 0));
  layers_->push_back(tconv(f[0], f[1], 5, 1, 2, 0));
  layers_->push_back(tconv(f[1], f[2], 5, 2, 2, 1));
  layers_->push_back(tconv(f[2], f[3], 5, 1, 2, 0));
  layers_->push_back(tconv(f[3], f[4], 5, 2, 2, 1));
  layers_->push_back(tconv(f[4], f[5], 5, 1, 2, 0));
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(f[5], out_channels, 5).padding(2)));
}

torch::Tensor CnnDecoderImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != latent_dim_)
    throw std::invalid_argument("cnn decoder: latent shape mismatch");
  auto h = z.view({z.size(0), latent_dim_, 1, 1});
  for (auto& m : *layers_) h = torch::relu(m->as<nn::ConvTranspose2d>()->forward(h));
  return head_->forward(h);
}

PixelDistributionGrid make_pixel_grid(const torch::Tensor& raw, PixelFamily family,
                                      int64_t components) {
  if (family == PixelFamily::bernoulli) return {family, raw, components};
  auto logits = raw.narrow(1, 0, components);
  auto centers = raw.narrow(1, components, components);
  auto log_scales = raw.narrow(1, 2 * components, components).clamp_min(-7.0);
  return {family, torch::cat({logits, centers, log_scales}, 1), components};
}

AuxDecoderImpl::AuxDecoderImpl(AuxTargetKind kind, int64_t latent_dim, int64_t image_size,
                               int levels, PixelFamily family, int64_t components,
                               const NetworkWidths& widths)
    : kind_(kind), levels_(levels), image_size_(image_size), family_(family), components_(components) {
  const int64_t support = aux_support(kind, levels);
  switch (kind) {
    case AuxTargetKind::pixel:
      cnn_ = register_module("cnn", CnnDecoder(latent_dim, image_size, widths,
                                               pixel_param_channels(family, components)));
      break;
    case AuxTargetKind::gradient:
      cnn_ = register_module("cnn", CnnDecoder(latent_dim, image_size, widths, 2 * support));
      break;
    case AuxTargetKind::row_col_marginals:
    case AuxTargetKind::intensity_histogram: {
      const int64_t cells = kind == AuxTargetKind::row_col_marginals ? 2 * image_size : 1;
      mlp_ = register_module(
          "mlp", nn::Sequential(nn::Linear(latent_dim, widths.aux_hidden), nn::ReLU(),
                                nn::Linear(widths.aux_hidden, widths.aux_hidden), nn::ReLU(),
                                nn::Linear(widths.aux_hidden, cells * support)));
      break;
    }
  }
}

void AuxDecoderImpl::tie_cnn(CnnDecoder shared) {
  if (kind_ != AuxTargetKind::pixel) throw std::logic_error("tie_cnn: pixel kind only");
  cnn_ = replace_module("cnn", shared);
}

AuxDistribution AuxDecoderImpl::forward(const torch::Tensor& z) {
  AuxDistribution d;
  d.kind = kind_;
  d.levels = levels_;
  const int64_t b = z.size(0);
  const int64_t s = image_size_;
  const int64_t support = aux_support(kind_, levels_);
  using torch::indexing::None;
  using torch::indexing::Slice;
  switch (kind_) {
    case AuxTargetKind::pixel:
      d.pixels = make_pixel_grid(cnn_->forward(z), family_, components_);
      break;
    case AuxTargetKind::gradient: {
      auto out = cnn_->forward(z);  // [B, 2S, H, W]
      auto horiz = out.index({Slice(), Slice(0, support), Slice(), Slice(None, s - 1)});
      auto vert = out.index({Slice(), Slice(support, None), Slice(None, s - 1), Slice()});
      d.primary.logits = horiz.permute({0, 2, 3, 1}).reshape({b, s * (s - 1), support});
      d.secondary.logits = vert.permute({0, 2, 3, 1}).reshape({b, (s - 1) * s, support});
      break;
    }
    case AuxTargetKind::row_col_marginals: {
      auto out = mlp_->forward(z).view({b, 2 * s, support});
      d.primary.logits = out.narrow(1, 0, s);
      d.secondary.logits = out.narrow(1, s, s);
      break;
    }
    case AuxTargetKind::intensity_histogram:
      d.primary.logits = mlp_->forward(z).view({b, 1, support});
      break;
  }
  return d;
}

ProbeImpl::ProbeImpl(ProbeKind kind, int64_t latent_dim, int64_t hidden, int64_t classes)
    : kind_(kind) {
  if (kind == ProbeKind::linear) {
    net_ = register_module("net", nn::Sequential(nn::Linear(latent_dim, classes)));
  } else {
    net_ = register_module("net", nn::Sequential(nn::Linear(latent_dim, hidden), nn::ELU(),
                                                 nn::Linear(hidden, hidden), nn::ELU(),
                                                 nn::Linear(hidden, classes)));
  }
}

torch::Tensor ProbeImpl::forward(const torch::Tensor& z) { return net_->forward(z); }

ClassifierImpl::ClassifierImpl(int64_t image_size, const NetworkWidths& widths,
                               int64_t extra_layers, int64_t in_channels, int64_t classes) {
  trunk_ = register_module("trunk", ConvTrunk(in_channels, image_size, widths.encoder, extra_layers));
  head_ = register_module("head", nn::Linear(trunk_->out_features(), classes));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4) throw std::invalid_argument("classifier expects [B,C,H,W] input");
  return head_->forward(trunk_->forward(x));
}

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace duelvae
