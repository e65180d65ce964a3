#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include <ATen/core/Generator.h>
#include <torch/types.h>

#include "duelvae/aux_targets.hpp"
#include "duelvae/model.hpp"

namespace duelvae {

enum class Modification { none, kl_anneal, free_bits, penalty };

std::string_view to_string(Modification m);
Modification parse_modification(std::string_view s);

/// Objective variant. The auxiliary term is weighted by `lambda` and is
/// switched off from `drop_aux_at_step` onwards.
struct ObjectiveConfig {
  double beta = 1.0;
  double lambda = 0.0;
  std::optional<AuxTargetKind> aux_kind;
  Modification modification = Modification::none;
  int64_t anneal_steps = 10000;
  double free_bits_nats = 10.0;
  double penalty_target_nats = 10.0;
  double penalty_gamma = 1.0;
  std::optional<int64_t> drop_aux_at_step;

  void validate() const;
  /// Whether the auxiliary term contributes at `step`.
  [[nodiscard]] bool aux_active(int64_t step) const;
};

/// Scalars are per-example batch means in nats. `aux_distortion` is NaN when
/// the auxiliary term was not evaluated.
struct LossBreakdown {
  torch::Tensor loss;
  double distortion = 0.0;
  double aux_distortion = 0.0;
  double rate = 0.0;
  double reported_elbo_nats = 0.0;
  double beta_eff = 0.0;
};

/// Linear ramp 0 → beta over anneal_steps. Only valid for kl_anneal.
double effective_beta(int64_t step, const ObjectiveConfig& cfg);

/// max(rate, threshold); no gradient flows through rate below the threshold.
torch::Tensor apply_free_bits(const torch::Tensor& rate, double threshold_nats);

/// gamma·|rate − target|.
torch::Tensor penalty_term(const torch::Tensor& rate, double target_nats, double gamma);

/// One reparameterized latent sample per example; teacher-forced primary
/// decode; rate from the single sample against the VampPrior.
LossBreakdown compute_loss(VaeModel& model, const torch::Tensor& raw_pixels,
                           const ObjectiveConfig& cfg, int64_t step, at::Generator& gen);

}  // namespace duelvae
