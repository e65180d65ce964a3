#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include <ATen/core/Generator.h>
#include <torch/nn/module.h>
#include <torch/nn/pimpl.h>

#include "duelvae/aux_targets.hpp"
#include "duelvae/distributions.hpp"
#include "duelvae/networks.hpp"

namespace duelvae {

/// Primary decoder class. `dueling` is a PixelCNN primary plus an auxiliary
/// decoder sharing the latent.
enum class DecoderKind { cnn, pixelcnn, dueling };

std::string_view to_string(DecoderKind k);
DecoderKind parse_decoder_kind(std::string_view s);
std::string_view to_string(PixelCnnSize s);
PixelCnnSize parse_pixelcnn_size(std::string_view s);

struct ModelConfig {
  DecoderKind decoder = DecoderKind::pixelcnn;
  PixelCnnSize size = PixelCnnSize::small;
  int64_t latent_dim = 16;
  int64_t image_size = 28;
  int levels = 2;
  std::optional<AuxTargetKind> aux_kind;
  int64_t components = 5;
  int64_t pseudo_inputs = 280;
  NetworkWidths widths;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  [[nodiscard]] PixelFamily family() const {
    return levels == 2 ? PixelFamily::bernoulli : PixelFamily::quantized_logistic;
  }
};

/// Encoder, VampPrior pseudo-inputs, primary decoder and optional auxiliary
/// decoder.
///
/// Every public method takes raw level values ({0,1} or 0..255) and casts to
/// the module's floating type. Each submodule is initialized from its own
/// seed stream, so adding or removing the auxiliary decoder leaves the
/// remaining initial parameters unchanged.
class VaeModelImpl : public torch::nn::Module {
 public:
  VaeModelImpl(const ModelConfig& cfg, uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] torch::Dtype dtype() const;
  [[nodiscard]] bool has_aux() const { return !aux_.is_empty(); }

  FullCovGaussian encode(const torch::Tensor& raw_pixels);
  /// Primary decoder. `raw_teacher` is the teacher-forcing image for the
  /// PixelCNN and is ignored by the CNN decoder.
  PixelDistributionGrid decode(const torch::Tensor& z, const torch::Tensor& raw_teacher);
  AuxDistribution decode_aux(const torch::Tensor& z);

  /// Pseudo-inputs mapped into the encoder's input range.
  torch::Tensor pseudo_inputs();
  /// The VampPrior at the current parameters.
  MixtureMarginal marginal();

  /// Draws images from the primary decoder, raster order for the PixelCNN.
  /// If `step_params` is non-null it receives the distribution parameters
  /// used for each pixel, shaped like a teacher-forced decode.
  torch::Tensor sample_images(const torch::Tensor& z, at::Generator& gen,
                              torch::Tensor* step_params = nullptr);
  /// x' ~ d(x'|z), z ~ e(z|x).
  torch::Tensor reconstruct(const torch::Tensor& raw_pixels, at::Generator& gen);

  /// Makes the pixel auxiliary decoder share the CNN primary's parameters.
  void tie_aux_to_primary();

  Encoder encoder{nullptr};
  CnnDecoder cnn{nullptr};
  PixelCnn pixelcnn{nullptr};

 private:
  torch::Tensor input(const torch::Tensor& raw) const;

  ModelConfig cfg_;
  AuxDecoder aux_{nullptr};
  torch::Tensor pseudo_;
};
TORCH_MODULE(VaeModel);

}  // namespace duelvae
