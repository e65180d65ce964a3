#include "duelvae/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <variant>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace duelvae {

using torch::indexing::Slice;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2π)
constexpr double kHalfBin = 1.0 / 255.0;

void check_dims(const torch::Tensor& z, const FullCovGaussian& g) {
  if (z.size(-1) != g.dim()) {
    throw std::invalid_argument("dimension mismatch: z has " + std::to_string(z.size(-1)) +
                                " entries, Gaussian has " + std::to_string(g.dim()));
  }
}

// log(σ(a) − σ(b)) for a > b, written as log σ(a) + log σ(−b) + log(1 − e^{b−a}).
torch::Tensor log_sigmoid_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return torch::log_sigmoid(a) + torch::log_sigmoid(-b) + torch::log(-torch::expm1(b - a));
}

}  // namespace

at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor FullCovGaussian::covariance() const {
  return torch::matmul(scale_tril, scale_tril.transpose(-1, -2));
}

FullCovGaussian FullCovGaussian::select(int64_t i) const { return {mean[i], scale_tril[i]}; }

FullCovGaussian FullCovGaussian::detach() const { return {mean.detach(), scale_tril.detach()}; }

FullCovGaussian gaussian_from_raw(const torch::Tensor& raw, int64_t d) {
  TORCH_CHECK(raw.size(-1) == d + tril_entries(d), "gaussian_from_raw: expected ",
              d + tril_entries(d), " raw entries, got ", raw.size(-1));
  auto mean = raw.narrow(-1, 0, d);
  auto entries = raw.narrow(-1, d, tril_entries(d));

  auto idx = torch::tril_indices(d, d, 0, torch::TensorOptions().dtype(torch::kLong));
  auto flat_pos = idx[0] * d + idx[1];
  auto batch_shape = raw.sizes().vec();
  batch_shape.pop_back();
  auto shape = batch_shape;
  shape.push_back(d * d);
  auto flat = torch::zeros(shape, raw.options()).index_copy(-1, flat_pos, entries);
  shape.pop_back();
  shape.push_back(d);
  shape.push_back(d);
  auto lower = flat.reshape(shape);

  auto diag_mask = torch::eye(d, raw.options().dtype(torch::kBool));
  auto positive = torch::softplus(lower) + 1e-6;
  auto scale_tril = torch::where(diag_mask, positive, lower);
  return {mean, scale_tril};
}

torch::Tensor gaussian_log_prob(const torch::Tensor& z, const FullCovGaussian& g) {
  check_dims(z, g);
  const int64_t d = g.dim();
  auto diff = (z - g.mean).unsqueeze(-1);
  auto batch = diff.sizes().vec();
  batch.pop_back();
  batch.pop_back();
  std::vector<int64_t> lshape = batch;
  lshape.push_back(d);
  lshape.push_back(d);
  auto solved = torch::linalg_solve_triangular(g.scale_tril.expand(lshape), diff, /*upper=*/false);
  auto quad = solved.squeeze(-1).pow(2).sum(-1);
  auto log_det = torch::log(torch::diagonal(g.scale_tril, 0, -2, -1)).sum(-1);
  return -0.5 * quad - log_det - 0.5 * static_cast<double>(d) * kLog2Pi;
}

torch::Tensor gaussian_sample(const FullCovGaussian& g, int64_t n, at::Generator& gen) {
  if (n < 1) throw std::invalid_argument("gaussian_sample: n must be >= 1");
  auto shape = g.mean.sizes().vec();
  shape.insert(shape.begin(), n);
  auto eps = torch::randn(shape, gen, g.mean.options().requires_grad(false));
  return g.mean.unsqueeze(0) + torch::matmul(g.scale_tril.unsqueeze(0), eps.unsqueeze(-1)).squeeze(-1);
}

torch::Tensor bernoulli_log_prob(const torch::Tensor& x, const torch::Tensor& logits) {
  // x·l − softplus(l) is exact and saturates cleanly at large |l|.
  auto lp = x * logits - torch::softplus(logits);
  return lp.flatten(1).sum(1);
}

torch::Tensor QuantizedLogisticMixtureGrid::logits() const { return params.narrow(1, 0, components); }
torch::Tensor QuantizedLogisticMixtureGrid::centers() const {
  return params.narrow(1, components, components);
}
torch::Tensor QuantizedLogisticMixtureGrid::log_scales() const {
  return params.narrow(1, 2 * components, components);
}

namespace {

// x: raw values broadcastable to [B, K, H, W] after unsqueeze; returns per-component log bin mass.
torch::Tensor component_log_bin(const torch::Tensor& x, const torch::Tensor& mu,
                                const torch::Tensor& log_s) {
  auto x_scaled = x / 127.5 - 1.0;
  auto inv_s = torch::exp(-log_s);
  auto centered = x_scaled - mu;
  auto upper = inv_s * (centered + kHalfBin);
  auto lower = inv_s * (centered - kHalfBin);
  auto interior = log_sigmoid_diff(upper, lower);
  auto first = torch::log_sigmoid(upper);
  auto last = torch::log_sigmoid(-lower);
  return torch::where(x < 0.5, first, torch::where(x > 254.5, last, interior));
}

}  // namespace

torch::Tensor qlm_pixel_log_prob(const torch::Tensor& x, const QuantizedLogisticMixtureGrid& p) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == 1, "qlm expects grayscale [B,1,H,W] values");
  auto log_w = torch::log_softmax(p.logits(), 1);
  auto lb = component_log_bin(x, p.centers(), p.log_scales());
  return torch::logsumexp(log_w + lb, 1);
}

torch::Tensor qlm_log_prob(const torch::Tensor& x, const QuantizedLogisticMixtureGrid& p) {
  return qlm_pixel_log_prob(x, p).flatten(1).sum(1);
}

torch::Tensor qlm_log_pmf(const QuantizedLogisticMixtureGrid& p) {
  auto values = torch::arange(256, p.params.options()).view({1, 256, 1, 1, 1});
  auto log_w = torch::log_softmax(p.logits(), 1).unsqueeze(1);
  auto lb = component_log_bin(values, p.centers().unsqueeze(1), p.log_scales().unsqueeze(1));
  return torch::logsumexp(log_w + lb, 2);
}

torch::Tensor qlm_sample(const QuantizedLogisticMixtureGrid& p, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  auto logits = p.logits();
  auto u = torch::rand(logits.sizes(), gen, logits.options()).clamp(1e-10, 1.0 - 1e-7);
  auto pick = torch::argmax(logits - torch::log(-torch::log(u)), 1, /*keepdim=*/true);
  auto mu = p.centers().gather(1, pick);
  auto log_s = p.log_scales().gather(1, pick);
  auto v = torch::rand(mu.sizes(), gen, mu.options()).clamp(1e-7, 1.0 - 1e-7);
  auto x = mu + torch::exp(log_s) * (torch::log(v) - torch::log1p(-v));
  return torch::round((x.clamp(-1.0, 1.0) + 1.0) * 127.5);
}

int64_t pixel_param_channels(PixelFamily family, int64_t components) {
  return family == PixelFamily::bernoulli ? 1 : 3 * components;
}

torch::Tensor PixelDistributionGrid::pixel_log_prob(const torch::Tensor& x) const {
  if (family == PixelFamily::bernoulli) {
    return (x * params - torch::softplus(params)).sum(1);
  }
  return qlm_pixel_log_prob(x, {params, components});
}

torch::Tensor PixelDistributionGrid::log_prob(const torch::Tensor& x) const {
  if (family == PixelFamily::bernoulli) return bernoulli_log_prob(x, params);
  return qlm_log_prob(x, {params, components});
}

torch::Tensor PixelDistributionGrid::sample(at::Generator& gen) const {
  torch::NoGradGuard no_grad;
  if (family == PixelFamily::bernoulli) {
    auto u = torch::rand(params.sizes(), gen, params.options());
    return (u < torch::sigmoid(params)).to(params.scalar_type());
  }
  return qlm_sample({params, components}, gen);
}

torch::Tensor categorical_log_prob(const torch::Tensor& observed_index, const CategoricalGrid& c) {
  if (observed_index.dim() != 2 || observed_index.size(1) != c.logits.size(1))
    throw std::invalid_argument("categorical_log_prob: cell count mismatch");
  auto lp = torch::log_softmax(c.logits, -1);
  return lp.gather(-1, observed_index.unsqueeze(-1)).squeeze(-1).sum(1);
}

torch::Tensor multinomial_log_prob(const torch::Tensor& frequencies, double count_per_cell,
                                   const CategoricalGrid& c) {
  if (frequencies.sizes() != c.logits.sizes())
    throw std::invalid_argument("multinomial_log_prob: support mismatch");
  auto lp = torch::log_softmax(c.logits, -1);
  return count_per_cell * (frequencies * lp).flatten(1).sum(1);
}

torch::Tensor aux_log_prob(const AuxTargetBatch& target, const AuxDistribution& d) {
  if (target.kind != d.kind) throw std::invalid_argument("aux_log_prob: kind mismatch");
  if (target.levels != d.levels) throw std::invalid_argument("aux_log_prob: support mismatch");
  switch (d.kind) {
    case AuxTargetKind::pixel:
      return d.pixels->log_prob(target.primary);
    case AuxTargetKind::gradient: {
      const auto support = aux_support(d.kind, d.levels);
      if (d.primary.support() != support || d.secondary.support() != support)
        throw std::invalid_argument("aux_log_prob: support mismatch");
      return categorical_log_prob(target.primary, d.primary) +
             categorical_log_prob(target.secondary, d.secondary);
    }
    case AuxTargetKind::row_col_marginals: {
      // Each row histogram covers W pixels and each column histogram H pixels.
      return multinomial_log_prob(target.primary, static_cast<double>(target.width), d.primary) +
             multinomial_log_prob(target.secondary, static_cast<double>(target.height), d.secondary);
    }
    case AuxTargetKind::intensity_histogram:
      return multinomial_log_prob(target.primary, static_cast<double>(target.height * target.width),
                                  d.primary);
  }
  throw std::invalid_argument("aux_log_prob: unknown kind");
}

double aux_log_prob(const AuxTarget& target, const AuxDistribution& d) {
  torch::NoGradGuard no_grad;
  auto dtype = d.pixels ? d.pixels->params.scalar_type() : d.primary.logits.scalar_type();
  auto opts = torch::TensorOptions().dtype(dtype);
  AuxTargetBatch batch{target.kind, target.levels, target.height, target.width, {}, {}};
  const auto h = target.height;
  const auto w = target.width;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PixelPayload>) {
          batch.primary = torch::tensor(std::vector<int64_t>(p.values.begin(), p.values.end()))
                              .to(dtype)
                              .view({1, 1, h, w});
        } else if constexpr (std::is_same_v<T, GradientPayload>) {
          auto shift = [&](const std::vector<int>& v) {
            std::vector<int64_t> out(v.begin(), v.end());
            for (auto& x : out) x += target.levels - 1;
            return torch::tensor(out).view({1, -1});
          };
          batch.primary = shift(p.horizontal);
          batch.secondary = shift(p.vertical);
        } else if constexpr (std::is_same_v<T, MarginalsPayload>) {
          batch.primary = torch::tensor(p.rows, opts).view({1, h, target.levels});
          batch.secondary = torch::tensor(p.cols, opts).view({1, w, target.levels});
        } else {
          batch.primary = torch::tensor(p.frequencies, opts).view({1, 1, target.levels});
        }
      },
      target.payload);
  return aux_log_prob(batch, d).item<double>();
}

GaussianMarginal GaussianMarginal::standard(int64_t d, torch::Dtype dtype) {
  auto opts = torch::TensorOptions().dtype(dtype);
  return GaussianMarginal({torch::zeros({d}, opts), torch::eye(d, opts)});
}

torch::Tensor GaussianMarginal::log_prob(const torch::Tensor& z) const {
  return gaussian_log_prob(z, g_);
}

torch::Tensor mixture_log_prob(const torch::Tensor& z, const FullCovGaussian& components) {
  check_dims(z, components);
  const int64_t k = components.mean.size(0);
  auto batch_shape = z.sizes().vec();
  batch_shape.pop_back();
  auto flat = z.reshape({-1, 1, z.size(-1)});  // [N,1,d] against [K,d]
  auto per_component = gaussian_log_prob(flat, components);  // [N,K]
  auto lp = torch::logsumexp(per_component, -1) - std::log(static_cast<double>(k));
  return lp.reshape(batch_shape);
}

torch::Tensor MixtureMarginal::log_prob(const torch::Tensor& z) const {
  return mixture_log_prob(z, components_);
}

torch::Tensor rate_terms(const torch::Tensor& z, const FullCovGaussian& posterior,
                         const Marginal& marginal) {
  return gaussian_log_prob(z, posterior) - marginal.log_prob(z);
}

torch::Tensor rate_estimate(const FullCovGaussian& posterior, const Marginal& marginal,
                            int64_t n_mc, at::Generator& gen) {
  if (n_mc < 1) throw std::invalid_argument("rate_estimate: n_mc must be >= 1");
  auto z = gaussian_sample(posterior, n_mc, gen);
  return rate_terms(z, posterior, marginal).mean(0);
}

}  // namespace duelvae
