#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

#include "duelvae/aux_targets.hpp"
#include "duelvae/distributions.hpp"

namespace duelvae {

/// Channel counts for every architecture. `paper()` reproduces the published
/// tables; `tiny()` keeps the same topology at a fraction of the cost and is
/// what the fast test configurations use.
struct NetworkWidths {
  std::array<int64_t, 5> encoder{32, 64, 64, 64, 128};
  std::array<int64_t, 6> decoder{128, 128, 128, 64, 64, 32};
  int64_t pixelcnn_small = 64;
  int64_t pixelcnn_enlarged = 128;
  int64_t aux_hidden = 256;
  int64_t probe_hidden = 200;

  static NetworkWidths paper() { return {}; }
  static NetworkWidths tiny();
  bool operator==(const NetworkWidths&) const = default;
};

/// Five-layer convolutional trunk shared by the encoder and the reference
/// classifier. Output is [B, widths[4]].
class ConvTrunkImpl : public torch::nn::Module {
 public:
  ConvTrunkImpl(int64_t in_channels, int64_t image_size, const std::array<int64_t, 5>& filters,
                int64_t extra_layers = 0);
  torch::Tensor forward(torch::Tensor x);
  [[nodiscard]] int64_t out_features() const { return out_features_; }

 private:
  torch::nn::ModuleList convs_;
  int64_t out_features_;
};
TORCH_MODULE(ConvTrunk);

/// e(z|x): conv trunk followed by a linear head producing a full-covariance
/// Gaussian. Input uses the network_input convention.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int64_t latent_dim, int64_t image_size, const NetworkWidths& widths,
              int64_t in_channels = 1);
  FullCovGaussian forward(const torch::Tensor& x);
  [[nodiscard]] int64_t latent_dim() const { return latent_dim_; }

 private:
  int64_t latent_dim_;
  ConvTrunk trunk_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Encoder);

/// Transposed-convolution decoder from a latent vector to a per-pixel
/// parameter grid [B, out_channels, H, W].
class CnnDecoderImpl : public torch::nn::Module {
 public:
  CnnDecoderImpl(int64_t latent_dim, int64_t image_size, const NetworkWidths& widths,
                 int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& z);
  [[nodiscard]] int64_t latent_dim() const { return latent_dim_; }

 private:
  int64_t latent_dim_;
  torch::nn::ModuleList layers_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(CnnDecoder);

/// Maps a raw decoder parameter grid onto a pixel distribution. For the
/// quantized-logistic family log-scales are floored at −7.
PixelDistributionGrid make_pixel_grid(const torch::Tensor& raw, PixelFamily family,
                                      int64_t components);

enum class PixelCnnSize { small, enlarged };

struct PixelCnnOptions {
  int64_t latent_dim = 16;
  int64_t image_size = 28;
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  PixelCnnSize size = PixelCnnSize::small;
  NetworkWidths widths;
};

/// Autoregressive decoder built from down / down-right shifted convolutions.
///
/// The output parameters at raster position (r, c) depend only on pixels
/// strictly before (r, c) and on the latent. Spatial size must be a multiple
/// of 4. Given a prefix of rows whose count is a multiple of 4, the outputs
/// for those rows are identical to a full-image pass, which sampling uses.
class PixelCnnImpl : public torch::nn::Module {
 public:
  explicit PixelCnnImpl(const PixelCnnOptions& opts);
  /// x uses the network_input convention, z is [B, latent_dim].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);
  [[nodiscard]] const PixelCnnOptions& options() const { return opts_; }

 private:
  PixelCnnOptions opts_;
  int64_t filters_;
  torch::nn::Conv2d stem_u_{nullptr};
  torch::nn::Conv2d stem_ul_down_{nullptr};
  torch::nn::Conv2d stem_ul_right_{nullptr};
  torch::nn::ModuleList blocks_;
  std::vector<int> block_roles_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PixelCnn);

/// d'(·|z) for one auxiliary target kind. Never sees the input image.
class AuxDecoderImpl : public torch::nn::Module {
 public:
  AuxDecoderImpl(AuxTargetKind kind, int64_t latent_dim, int64_t image_size, int levels,
                 PixelFamily family, int64_t components, const NetworkWidths& widths);
  AuxDistribution forward(const torch::Tensor& z);
  [[nodiscard]] AuxTargetKind kind() const { return kind_; }
  /// Pixel-kind only: replace the inner CNN decoder (parameter tying).
  void tie_cnn(CnnDecoder shared);

 private:
  AuxTargetKind kind_;
  int levels_;
  int64_t image_size_;
  PixelFamily family_;
  int64_t components_;
  CnnDecoder cnn_{nullptr};
  torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(AuxDecoder);

enum class ProbeKind { linear, mlp };

/// P(Y|Z): linear softmax or two ELU layers then softmax. Returns logits.
class ProbeImpl : public torch::nn::Module {
 public:
  ProbeImpl(ProbeKind kind, int64_t latent_dim, int64_t hidden = 200, int64_t classes = 10);
  torch::Tensor forward(const torch::Tensor& z);
  [[nodiscard]] ProbeKind kind() const { return kind_; }

 private:
  ProbeKind kind_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Probe);

/// P(Y|X) reference classifier: encoder trunk plus a 10-way head; the
/// deeper variant inserts `extra_layers` 3×3 convolutions. Returns logits.
class ClassifierImpl : public torch::nn::Module {
 public:
  ClassifierImpl(int64_t image_size, const NetworkWidths& widths, int64_t extra_layers = 0,
                 int64_t in_channels = 1, int64_t classes = 10);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvTrunk trunk_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Classifier);

/// Total trainable scalar count of a module.
int64_t parameter_count(const torch::nn::Module& m);

}  // namespace duelvae
