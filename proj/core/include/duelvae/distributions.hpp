#pragma once

#include <cstdint>
#include <optional>

#include <ATen/core/Generator.h>
#include <torch/types.h>

#include "duelvae/aux_targets.hpp"

namespace duelvae {

/// Seeded CPU generator; every stochastic op takes one explicitly.
at::Generator make_generator(uint64_t seed);

inline constexpr int64_t tril_entries(int64_t d) { return d * (d + 1) / 2; }

/// Multivariate normal parameterized by its Cholesky factor.
///
/// `mean` has shape [..., d]; `scale_tril` has shape [..., d, d], is lower
/// triangular, and has a strictly positive diagonal.
struct FullCovGaussian {
  torch::Tensor mean;
  torch::Tensor scale_tril;

  [[nodiscard]] int64_t dim() const { return mean.size(-1); }
  [[nodiscard]] torch::Tensor covariance() const;
  /// Batch element `i` along the leading dimension.
  [[nodiscard]] FullCovGaussian select(int64_t i) const;
  [[nodiscard]] FullCovGaussian detach() const;
};

/// Builds a Gaussian from raw network outputs [..., d + d(d+1)/2]: the first
/// d entries are the mean, the rest fill the lower triangle row by row. The
/// diagonal passes through softplus (plus a 1e-6 floor).
FullCovGaussian gaussian_from_raw(const torch::Tensor& raw, int64_t d);

/// Exact log-density via a triangular solve. `z` broadcasts against the
/// Gaussian's batch shape. Throws std::invalid_argument on dimension mismatch.
torch::Tensor gaussian_log_prob(const torch::Tensor& z, const FullCovGaussian& g);

/// Reparameterized samples, shape [n, ..., d].
torch::Tensor gaussian_sample(const FullCovGaussian& g, int64_t n, at::Generator& gen);

/// Sum over pixels of the Bernoulli log-pmf, one value per example.
torch::Tensor bernoulli_log_prob(const torch::Tensor& x, const torch::Tensor& logits);

/// Per-pixel mixture of K discretized logistics over 256 levels.
///
/// `params` is [B, 3K, H, W]: mixture logits, centers on the [−1,1] scale,
/// log-scales. The two edge bins are open-ended.
struct QuantizedLogisticMixtureGrid {
  torch::Tensor params;
  int64_t components = 5;

  [[nodiscard]] torch::Tensor logits() const;
  [[nodiscard]] torch::Tensor centers() const;
  [[nodiscard]] torch::Tensor log_scales() const;
};

/// Per-pixel log-pmf at raw values x ∈ [0,255], shape [B,H,W].
torch::Tensor qlm_pixel_log_prob(const torch::Tensor& x, const QuantizedLogisticMixtureGrid& p);
/// Summed over pixels, one value per example.
torch::Tensor qlm_log_prob(const torch::Tensor& x, const QuantizedLogisticMixtureGrid& p);
/// Full table of log-pmfs, shape [B,256,H,W].
torch::Tensor qlm_log_pmf(const QuantizedLogisticMixtureGrid& p);
/// Raw values in [0,255], shape [B,1,H,W].
torch::Tensor qlm_sample(const QuantizedLogisticMixtureGrid& p, at::Generator& gen);

enum class PixelFamily { bernoulli, quantized_logistic };

/// Channels a decoder must emit per pixel for a family.
int64_t pixel_param_channels(PixelFamily family, int64_t components);

/// Per-pixel output distribution from any decoder.
struct PixelDistributionGrid {
  PixelFamily family = PixelFamily::bernoulli;
  torch::Tensor params;  // [B, P, H, W]
  int64_t components = 5;

  [[nodiscard]] torch::Tensor log_prob(const torch::Tensor& x) const;
  [[nodiscard]] torch::Tensor pixel_log_prob(const torch::Tensor& x) const;
  [[nodiscard]] torch::Tensor sample(at::Generator& gen) const;
};

/// Independent categoricals, logits shaped [B, cells, support].
struct CategoricalGrid {
  torch::Tensor logits;
  [[nodiscard]] int64_t support() const { return logits.size(-1); }
};

/// Σ_cells log p(observed index), one value per example.
torch::Tensor categorical_log_prob(const torch::Tensor& observed_index, const CategoricalGrid& c);

/// Count-weighted cross-entropy: count_per_cell · Σ_cells Σ_bins f·log p.
torch::Tensor multinomial_log_prob(const torch::Tensor& frequencies, double count_per_cell,
                                   const CategoricalGrid& c);

/// Output of an auxiliary decoder. `pixels` is set for the pixel kind;
/// `primary`/`secondary` carry the categorical heads otherwise
/// (gradient: horizontal/vertical; marginals: rows/columns; histogram: primary only).
struct AuxDistribution {
  AuxTargetKind kind = AuxTargetKind::pixel;
  int levels = 2;
  std::optional<PixelDistributionGrid> pixels;
  CategoricalGrid primary;
  CategoricalGrid secondary;
};

/// log d'(target | z) per example. Throws on kind or support mismatch.
torch::Tensor aux_log_prob(const AuxTargetBatch& target, const AuxDistribution& d);
/// Single-example reference path over the per-image payload.
double aux_log_prob(const AuxTarget& target, const AuxDistribution& d);

/// A marginal m(z) over the latent space.
class Marginal {
 public:
  virtual ~Marginal() = default;
  /// z has shape [..., d]; returns [...].
  [[nodiscard]] virtual torch::Tensor log_prob(const torch::Tensor& z) const = 0;
};

class GaussianMarginal final : public Marginal {
 public:
  explicit GaussianMarginal(FullCovGaussian g) : g_(std::move(g)) {}
  static GaussianMarginal standard(int64_t d, torch::Dtype dtype = torch::kFloat);
  [[nodiscard]] torch::Tensor log_prob(const torch::Tensor& z) const override;

 private:
  FullCovGaussian g_;
};

/// log m(z) = logsumexp_k log N(z; μ_k, Σ_k) − log K with uniform weights.
torch::Tensor mixture_log_prob(const torch::Tensor& z, const FullCovGaussian& components);

/// Uniform mixture of Gaussians with components [K, d]; the VampPrior is this
/// mixture evaluated at the encoder's pseudo-input encodings.
class MixtureMarginal final : public Marginal {
 public:
  explicit MixtureMarginal(FullCovGaussian components) : components_(std::move(components)) {}
  [[nodiscard]] torch::Tensor log_prob(const torch::Tensor& z) const override;
  [[nodiscard]] const FullCovGaussian& components() const { return components_; }

 private:
  FullCovGaussian components_;
};

/// log e(z|x) − log m(z) at given samples z [..., B, d]; returns [..., B].
torch::Tensor rate_terms(const torch::Tensor& z, const FullCovGaussian& posterior,
                         const Marginal& marginal);

/// Monte-Carlo KL estimate per example, averaged over n_mc fresh samples.
torch::Tensor rate_estimate(const FullCovGaussian& posterior, const Marginal& marginal,
                            int64_t n_mc, at::Generator& gen);

}  // namespace duelvae
