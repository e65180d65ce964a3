#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "duelvae/evaluation.hpp"

namespace duelvae {

MeanSd mean_sd(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_sd: empty sample");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, std::numeric_limits<double>::quiet_NaN()};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

std::vector<CellSummary> summarize_cells(const std::vector<RunMetrics>& runs) {
  std::map<std::string, std::vector<const RunMetrics*>> by_cell;
  for (const auto& r : runs) by_cell[r.cell].push_back(&r);
  std::vector<CellSummary> out;
  for (const auto& [cell, members] : by_cell) {
    CellSummary s;
    s.cell = cell;
    auto field = [&](double RunMetrics::*m) {
      std::vector<double> xs;
      for (const auto* r : members) xs.push_back(r->*m);
      return mean_sd(xs);
    };
    for (const auto* r : members) s.digests.push_back(r->digest);
    s.rate = field(&RunMetrics::rate);
    s.distortion = field(&RunMetrics::distortion);
    s.elbo = field(&RunMetrics::elbo);
    s.latent_accuracy_linear = field(&RunMetrics::latent_accuracy_linear);
    s.latent_accuracy_mlp = field(&RunMetrics::latent_accuracy_mlp);
    s.label_distortion_mlp = field(&RunMetrics::label_distortion_mlp);
    s.reconstruction_accuracy = field(&RunMetrics::reconstruction_accuracy);
    out.push_back(std::move(s));
  }
  return out;
}

BestLowRate best_low_rate(const std::vector<RunMetrics>& runs, double rate_cap,
                          SelectionCriterion criterion) {
  if (runs.empty()) throw std::invalid_argument("best_low_rate: no runs");
  auto score = [criterion](const CellSummary& c) {
    switch (criterion) {
      case SelectionCriterion::latent_accuracy_linear: return c.latent_accuracy_linear.mean;
      case SelectionCriterion::reconstruction_accuracy: return c.reconstruction_accuracy.mean;
      case SelectionCriterion::latent_accuracy_mlp: break;
    }
    return c.latent_accuracy_mlp.mean;
  };
  BestLowRate result;
  for (auto& c : summarize_cells(runs)) {
    if (!(c.rate.mean < rate_cap)) continue;
    if (!result.best) {
      result.best = c;
      continue;
    }
    const auto& b = *result.best;
    const bool better = score(c) > score(b) ||
                        (score(c) == score(b) &&
                         (c.rate.mean < b.rate.mean ||
                          (c.rate.mean == b.rate.mean && c.distortion.mean < b.distortion.mean)));
    if (better) result.best = c;
  }
  result.all_over_cap = !result.best.has_value();
  return result;
}

SignificanceResult significance_test(std::span<const double> a, std::span<const double> b,
                                     int bonferroni_n, double alpha) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("significance_test needs at least two runs per group");
  if (bonferroni_n < 1) throw std::invalid_argument("bonferroni_n must be >= 1");
  SignificanceResult r;
  r.a = mean_sd(a);
  r.b = mean_sd(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  r.dof = na + nb - 2.0;
  r.corrected_alpha = alpha / bonferroni_n;
  const double pooled =
      ((na - 1.0) * r.a.sd * r.a.sd + (nb - 1.0) * r.b.sd * r.b.sd) / r.dof;
  const double diff = r.a.mean - r.b.mean;
  if (pooled == 0.0) {
    if (diff == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p_value = 0.0;
    }
  } else {
    r.t = diff / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
    boost::math::students_t dist(r.dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  }
  r.equivalent = !(r.p_value < r.corrected_alpha);
  return r;
}

double r_squared(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("r_squared: need paired samples");
  const auto mx = mean_sd(x).mean;
  const auto my = mean_sd(y).mean;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

}  // namespace duelvae
