#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "duelvae/evaluation.hpp"
#include "duelvae/run_store.hpp"

namespace duelvae {

/// A completed run joined with its evaluation, if any.
struct EvaluatedRun {
  RunRecord record;
  std::optional<EvalReport> eval;
};

/// Row label for a configuration, e.g. "Dueling (pixel)", "PixelCNN+",
/// "PixelCNN [free_bits]".
std::string decoder_label(const nlohmann::json& config);

/// "mnist" or "mnist:threshold".
bool matches_dataset(const nlohmann::json& config, const std::string& selector);

struct ResultsTable {
  static constexpr int kColumns = 9;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> over_cap;       // groups with no cell under the cap
  std::vector<std::string> missing_evals;  // run digests without eval.json

  [[nodiscard]] std::string text() const;
  [[nodiscard]] std::string csv() const;
};

/// Per (decoder label, β) group: the best-low-rate cell as mean ± sd over
/// seeds. A trailing '*' marks values statistically equivalent to the best
/// in their column.
ResultsTable render_results_table(const std::vector<EvaluatedRun>& runs, const std::string& dataset,
                                  double rate_cap = 10.0, int bonferroni_n = 2);

std::vector<EvaluatedRun> load_evaluated_runs(const RunStore& store);

RunMetrics run_metrics(const EvaluatedRun& run);

}  // namespace duelvae
