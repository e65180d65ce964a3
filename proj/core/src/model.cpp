#include "duelvae/model.hpp"

#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "duelvae/data.hpp"

namespace duelvae {

using torch::indexing::Slice;

std::string_view to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::cnn: return "cnn";
    case DecoderKind::pixelcnn: return "pixelcnn";
    case DecoderKind::dueling: return "dueling";
  }
  return "?";
}

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "cnn") return DecoderKind::cnn;
  if (s == "pixelcnn") return DecoderKind::pixelcnn;
  if (s == "dueling") return DecoderKind::dueling;
  throw std::invalid_argument("unknown decoder kind: " + std::string(s));
}

std::string_view to_string(PixelCnnSize s) {
  return s == PixelCnnSize::small ? "small" : "enlarged";
}

PixelCnnSize parse_pixelcnn_size(std::string_view s) {
  if (s == "small") return PixelCnnSize::small;
  if (s == "enlarged") return PixelCnnSize::enlarged;
  throw std::invalid_argument("unknown decoder size: " + std::string(s));
}

void ModelConfig::validate() const {
  if (levels != 2 && levels != 256) throw std::invalid_argument("levels must be 2 or 256");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");
  if (image_size < 4 || image_size % 4 != 0)
    throw std::invalid_argument("image_size must be a positive multiple of 4");
  if (components < 1) throw std::invalid_argument("components must be positive");
  if (pseudo_inputs < 1) throw std::invalid_argument("pseudo_inputs must be positive");
  if (decoder == DecoderKind::dueling && !aux_kind)
    throw std::invalid_argument("dueling decoder requires an auxiliary target kind");
  if (decoder == DecoderKind::pixelcnn && aux_kind)
    throw std::invalid_argument("pixelcnn decoder takes no auxiliary decoder; use dueling");
  if (decoder == DecoderKind::cnn && size == PixelCnnSize::enlarged)
    throw std::invalid_argument("enlarged size applies only to pixelcnn or dueling decoders");
}

namespace {

enum : uint64_t { kEncoderStream = 1, kPrimaryStream = 2, kAuxStream = 3, kPseudoStream = 4 };

int64_t ceil4(int64_t n) { return (n + 3) / 4 * 4; }

}  // namespace

VaeModelImpl::VaeModelImpl(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const auto family = cfg_.family();
  const int64_t out_channels = pixel_param_channels(family, cfg_.components);

  torch::manual_seed(mix_seed(seed, kEncoderStream));
  encoder = register_module("encoder", Encoder(cfg_.latent_dim, cfg_.image_size, cfg_.widths));

  torch::manual_seed(mix_seed(seed, kPrimaryStream));
  if (cfg_.decoder == DecoderKind::cnn) {
    cnn = register_module("cnn", CnnDecoder(cfg_.latent_dim, cfg_.image_size, cfg_.widths, out_channels));
  } else {
    PixelCnnOptions opts;
    opts.latent_dim = cfg_.latent_dim;
    opts.image_size = cfg_.image_size;
    opts.out_channels = out_channels;
    opts.size = cfg_.size;
    opts.widths = cfg_.widths;
    pixelcnn = register_module("pixelcnn", PixelCnn(opts));
  }

  if (cfg_.aux_kind) {
    torch::manual_seed(mix_seed(seed, kAuxStream));
    aux_ = register_module("aux", AuxDecoder(*cfg_.aux_kind, cfg_.latent_dim, cfg_.image_size,
                                             cfg_.levels, family, cfg_.components, cfg_.widths));
  }

  auto gen = make_generator(mix_seed(seed, kPseudoStream));
  const double mid = cfg_.levels == 2 ? 0.5 : 0.0;
  auto init = mid + 0.01 * torch::randn({cfg_.pseudo_inputs, 1, cfg_.image_size, cfg_.image_size}, gen);
  pseudo_ = register_parameter("pseudo_inputs", init);
}

torch::Dtype VaeModelImpl::dtype() const {
  return encoder->parameters().front().scalar_type();
}

torch::Tensor VaeModelImpl::input(const torch::Tensor& raw) const {
  return network_input(raw.to(dtype()), cfg_.levels);
}

FullCovGaussian VaeModelImpl::encode(const torch::Tensor& raw_pixels) {
  return encoder->forward(input(raw_pixels));
}

PixelDistributionGrid VaeModelImpl::decode(const torch::Tensor& z, const torch::Tensor& raw_teacher) {
  const auto zt = z.to(dtype());
  auto raw = cfg_.decoder == DecoderKind::cnn ? cnn->forward(zt)
                                              : pixelcnn->forward(input(raw_teacher), zt);
  return make_pixel_grid(raw, cfg_.family(), cfg_.components);
}

AuxDistribution VaeModelImpl::decode_aux(const torch::Tensor& z) {
  if (!has_aux()) throw std::logic_error("model has no auxiliary decoder");
  return aux_->forward(z.to(dtype()));
}

torch::Tensor VaeModelImpl::pseudo_inputs() {
  return cfg_.levels == 2 ? torch::clamp(pseudo_, 0.0, 1.0) : torch::clamp(pseudo_, -1.0, 1.0);
}

MixtureMarginal VaeModelImpl::marginal() { return MixtureMarginal(encoder->forward(pseudo_inputs())); }

torch::Tensor VaeModelImpl::sample_images(const torch::Tensor& z, at::Generator& gen,
                                          torch::Tensor* step_params) {
  torch::NoGradGuard no_grad;
  const auto zt = z.to(dtype());
  const int64_t b = zt.size(0);
  const int64_t s = cfg_.image_size;
  if (cfg_.decoder == DecoderKind::cnn) {
    auto grid = make_pixel_grid(cnn->forward(zt), cfg_.family(), cfg_.components);
    if (step_params != nullptr) *step_params = grid.params;
    return grid.sample(gen);
  }
  auto x = torch::zeros({b, 1, s, s}, zt.options());
  torch::Tensor record;
  for (int64_t r = 0; r < s; ++r) {
    const int64_t rows = std::min(s, ceil4(r + 1));
    for (int64_t c = 0; c < s; ++c) {
      auto prefix = x.index({Slice(), Slice(), Slice(0, rows), Slice()});
      auto raw = pixelcnn->forward(network_input(prefix, cfg_.levels), zt);
      auto params = raw.index({Slice(), Slice(), Slice(r, r + 1), Slice(c, c + 1)});
      auto grid = make_pixel_grid(params, cfg_.family(), cfg_.components);
      if (step_params != nullptr) {
        if (!record.defined()) record = torch::zeros({b, grid.params.size(1), s, s}, zt.options());
        record.index_put_({Slice(), Slice(), Slice(r, r + 1), Slice(c, c + 1)}, grid.params);
      }
      x.index_put_({Slice(), Slice(), Slice(r, r + 1), Slice(c, c + 1)}, grid.sample(gen));
    }
  }
  if (step_params != nullptr) *step_params = record;
  return x;
}

torch::Tensor VaeModelImpl::reconstruct(const torch::Tensor& raw_pixels, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  auto posterior = encode(raw_pixels);
  auto z = gaussian_sample(posterior, 1, gen)[0];
  return sample_images(z, gen);
}

void VaeModelImpl::tie_aux_to_primary() {
  if (cfg_.decoder != DecoderKind::cnn || !has_aux() || aux_->kind() != AuxTargetKind::pixel)
    throw std::logic_error("tying needs a cnn primary and a pixel auxiliary decoder");
  aux_->tie_cnn(cnn);
}

}  // namespace duelvae
