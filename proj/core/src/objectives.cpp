#include "duelvae/objectives.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace duelvae {

std::string_view to_string(Modification m) {
  switch (m) {
    case Modification::none: return "none";
    case Modification::kl_anneal: return "kl_anneal";
    case Modification::free_bits: return "free_bits";
    case Modification::penalty: return "penalty";
  }
  return "?";
}

Modification parse_modification(std::string_view s) {
  if (s == "none") return Modification::none;
  if (s == "kl_anneal") return Modification::kl_anneal;
  if (s == "free_bits") return Modification::free_bits;
  if (s == "penalty") return Modification::penalty;
  throw std::invalid_argument("unknown modification: " + std::string(s));
}

void ObjectiveConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  if (lambda > 0.0 && !aux_kind) throw std::invalid_argument("lambda > 0 requires aux_kind");
  if (modification == Modification::kl_anneal && anneal_steps < 1)
    throw std::invalid_argument("anneal_steps must be positive");
  if (modification == Modification::free_bits && free_bits_nats < 0.0)
    throw std::invalid_argument("free_bits_nats must be nonnegative");
  if (modification == Modification::penalty && !(penalty_gamma > 0.0))
    throw std::invalid_argument("penalty_gamma must be positive");
  if (drop_aux_at_step && *drop_aux_at_step < 0)
    throw std::invalid_argument("drop_aux_at_step must be nonnegative");
}

bool ObjectiveConfig::aux_active(int64_t step) const {
  return aux_kind.has_value() && !(drop_aux_at_step && step >= *drop_aux_at_step);
}

double effective_beta(int64_t step, const ObjectiveConfig& cfg) {
  if (cfg.modification != Modification::kl_anneal)
    throw std::logic_error("effective_beta requires modification kl_anneal");
  if (step >= cfg.anneal_steps) return cfg.beta;
  return cfg.beta * static_cast<double>(step) / static_cast<double>(cfg.anneal_steps);
}

torch::Tensor apply_free_bits(const torch::Tensor& rate, double threshold_nats) {
  if (threshold_nats < 0.0) throw std::invalid_argument("free bits threshold must be >= 0");
  return torch::clamp_min(rate, threshold_nats);
}

torch::Tensor penalty_term(const torch::Tensor& rate, double target_nats, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("penalty gamma must be positive");
  return gamma * torch::abs(rate - target_nats);
}

LossBreakdown compute_loss(VaeModel& model, const torch::Tensor& raw_pixels,
                           const ObjectiveConfig& cfg, int64_t step, at::Generator& gen) {
  if (step < 0) throw std::invalid_argument("step must be nonnegative");
  if (cfg.aux_kind.has_value() != model->has_aux() ||
      (cfg.aux_kind && model->config().aux_kind != cfg.aux_kind))
    throw std::invalid_argument("objective aux_kind does not match the model");

  const auto x = raw_pixels.to(model->dtype());
  auto posterior = model->encode(x);
  auto z = gaussian_sample(posterior, 1, gen)[0];

  auto distortion = -model->decode(z, x).log_prob(x).mean();
  auto marginal = model->marginal();
  auto rate = rate_terms(z, posterior, marginal).mean();

  LossBreakdown out;
  auto loss = distortion;
  out.aux_distortion = std::numeric_limits<double>::quiet_NaN();
  if (cfg.aux_active(step)) {
    const int levels = model->config().levels;
    auto target = aux_targets(x, levels, *cfg.aux_kind);
    auto aux_distortion = -aux_log_prob(target, model->decode_aux(z)).mean();
    loss = loss + cfg.lambda * aux_distortion;
    out.aux_distortion = aux_distortion.item<double>();
  }

  switch (cfg.modification) {
    case Modification::none:
      out.beta_eff = cfg.beta;
      loss = loss + cfg.beta * rate;
      break;
    case Modification::kl_anneal:
      out.beta_eff = effective_beta(step, cfg);
      loss = loss + out.beta_eff * rate;
      break;
    case Modification::free_bits:
      out.beta_eff = cfg.beta;
      loss = loss + cfg.beta * apply_free_bits(rate, cfg.free_bits_nats);
      break;
    case Modification::penalty:
      out.beta_eff = cfg.beta;
      loss = loss + penalty_term(rate, cfg.penalty_target_nats, cfg.penalty_gamma);
      break;
  }

  out.loss = loss;
  out.distortion = distortion.item<double>();
  out.rate = rate.item<double>();
  out.reported_elbo_nats = out.distortion + out.rate;
  return out;
}

}  // namespace duelvae
