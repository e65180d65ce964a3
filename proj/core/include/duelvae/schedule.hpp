#pragma once

#include <cstdint>

namespace duelvae {

/// lr(t) = base · decay^(t/decay_steps) · (1 − decay^(t/warmup_steps)) + floor
///
/// Warmup from `floor` at t=0, then exponential decay.
struct LrSchedule {
  double base = 1e-3;
  double decay = 0.66;
  double decay_steps = 1e4;
  double warmup_steps = 1e3;
  double floor = 1e-10;

  [[nodiscard]] double operator()(int64_t t) const;
  bool operator==(const LrSchedule&) const = default;
};

}  // namespace duelvae
