#include "duelvae/tables.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace duelvae {

using nlohmann::json;

std::string decoder_label(const json& config) {
  const auto& model = config.at("model");
  const auto& obj = config.at("objective");
  const auto decoder = model.at("decoder").get<std::string>();
  std::string label = decoder == "cnn" ? "CNN" : decoder == "pixelcnn" ? "PixelCNN" : "Dueling";
  if (decoder != "cnn" && model.value("size", "small") == "enlarged") label += "+";
  if (!obj.at("aux_kind").is_null()) label += " (" + obj.at("aux_kind").get<std::string>() + ")";
  const auto mod = obj.value("modification", "none");
  if (mod != "none") label += " [" + mod + "]";
  return label;
}

bool matches_dataset(const json& config, const std::string& selector) {
  const auto& data = config.at("data");
  const auto colon = selector.find(':');
  const auto name = selector.substr(0, colon);
  if (data.at("dataset").get<std::string>() != name) return false;
  if (colon == std::string::npos) return true;
  return data.at("binarize").get<std::string>() == selector.substr(colon + 1);
}

RunMetrics run_metrics(const EvaluatedRun& run) {
  if (!run.eval) throw std::invalid_argument("run " + run.record.digest + " has no evaluation");
  const auto& e = *run.eval;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RunMetrics m;
  m.digest = run.record.digest;
  m.cell = run.record.cell;
  m.rate = e.rate;
  m.distortion = e.distortion;
  m.elbo = e.reported_elbo_nats;
  m.latent_accuracy_linear = e.latent_accuracy_linear.value_or(nan);
  m.latent_accuracy_mlp = e.latent_accuracy_mlp.value_or(nan);
  m.label_distortion_mlp = e.label_distortion_mlp.value_or(nan);
  m.reconstruction_accuracy = e.reconstruction_accuracy.value_or(nan);
  return m;
}

std::vector<EvaluatedRun> load_evaluated_runs(const RunStore& store) {
  std::vector<EvaluatedRun> out;
  for (auto& r : store.records()) {
    EvaluatedRun e{r, std::nullopt};
    if (auto j = store.eval(r.digest)) e.eval = eval_report_from_json(*j);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::string fmt(const MeanSd& v, int digits) {
  char buf[64];
  if (std::isnan(v.mean)) return "n/a";
  if (std::isnan(v.sd)) {
    std::snprintf(buf, sizeof buf, "%.*f ± n/a", digits, v.mean);
  } else {
    std::snprintf(buf, sizeof buf, "%.*f ± %.*f", digits, v.mean, digits, v.sd);
  }
  return buf;
}

struct Column {
  MeanSd CellSummary::*field;
  double RunMetrics::*raw;
  int digits;
  int direction;  // +1 higher is better, −1 lower is better, 0 not compared
};

// Display order after the decoder and β columns.
const Column kColumns[] = {
    {&CellSummary::elbo, &RunMetrics::elbo, 1, -1},
    {&CellSummary::distortion, &RunMetrics::distortion, 1, -1},
    {&CellSummary::rate, &RunMetrics::rate, 2, 0},
    {&CellSummary::latent_accuracy_mlp, &RunMetrics::latent_accuracy_mlp, 2, +1},
    {&CellSummary::label_distortion_mlp, &RunMetrics::label_distortion_mlp, 2, -1},
    {&CellSummary::latent_accuracy_linear, &RunMetrics::latent_accuracy_linear, 2, +1},
    {&CellSummary::reconstruction_accuracy, &RunMetrics::reconstruction_accuracy, 2, +1},
};

}  // namespace

ResultsTable render_results_table(const std::vector<EvaluatedRun>& runs, const std::string& dataset,
                                  double rate_cap, int bonferroni_n) {
  ResultsTable table;
  table.header = {"Decoder", "beta", "ELBO", "Distortion", "Rate", "Latent Accuracy MLP",
                  "Label Distortion MLP", "Latent Accuracy Linear", "Reconstruction Accuracy"};

  std::map<std::pair<std::string, double>, std::vector<RunMetrics>> groups;
  for (const auto& r : runs) {
    if (!matches_dataset(r.record.config, dataset)) continue;
    if (!r.eval) {
      table.missing_evals.push_back(r.record.digest);
      continue;
    }
    const auto& cfg = r.record.config;
    groups[{decoder_label(cfg), cfg.at("objective").at("beta").get<double>()}].push_back(run_metrics(r));
  }
  if (groups.empty() && table.missing_evals.empty())
    throw std::runtime_error("empty table: no completed runs for dataset '" + dataset + "'");

  struct Selected {
    std::string label;
    double beta;
    CellSummary cell;
    std::vector<RunMetrics> members;
  };
  std::vector<Selected> selected;
  for (const auto& [key, members] : groups) {
    auto best = best_low_rate(members, rate_cap);
    char name[96];
    std::snprintf(name, sizeof name, "%s beta=%g", key.first.c_str(), key.second);
    if (best.all_over_cap) {
      table.over_cap.push_back(name);
      continue;
    }
    std::vector<RunMetrics> in_cell;
    for (const auto& m : members)
      if (m.cell == best.best->cell) in_cell.push_back(m);
    selected.push_back({key.first, key.second, *best.best, in_cell});
  }

  std::vector<std::vector<bool>> bold(selected.size(), std::vector<bool>(std::size(kColumns), false));
  for (size_t c = 0; c < std::size(kColumns); ++c) {
    const auto& col = kColumns[c];
    if (col.direction == 0 || selected.empty()) continue;
    size_t best = selected.size();
    for (size_t i = 0; i < selected.size(); ++i) {
      const double v = (selected[i].cell.*col.field).mean;
      if (std::isnan(v)) continue;
      if (best == selected.size() || col.direction * v > col.direction * (selected[best].cell.*col.field).mean)
        best = i;
    }
    if (best == selected.size()) continue;
    auto values = [&](size_t i) {
      std::vector<double> xs;
      for (const auto& m : selected[i].members) xs.push_back(m.*col.raw);
      return xs;
    };
    const auto best_values = values(best);
    for (size_t i = 0; i < selected.size(); ++i) {
      if (i == best) {
        bold[i][c] = true;
        continue;
      }
      const auto xs = values(i);
      if (xs.size() < 2 || best_values.size() < 2) continue;
      bold[i][c] = significance_test(best_values, xs, bonferroni_n).equivalent;
    }
  }

  for (size_t i = 0; i < selected.size(); ++i) {
    char beta[32];
    std::snprintf(beta, sizeof beta, "%g", selected[i].beta);
    std::vector<std::string> row{selected[i].label, beta};
    for (size_t c = 0; c < std::size(kColumns); ++c)
      row.push_back(fmt(selected[i].cell.*kColumns[c].field, kColumns[c].digits) + (bold[i][c] ? "*" : ""));
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string ResultsTable::text() const {
  std::vector<size_t> width(header.size(), 0);
  auto measure = [](const std::string& s) {
    // Count code points so "±" is one column wide.
    return static_cast<size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  for (size_t c = 0; c < header.size(); ++c) width[c] = measure(header[c]);
  for (const auto& r : rows)
    for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], measure(r[c]));
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      out << cells[c] << std::string(width[c] - measure(cells[c]), ' ');
      out << (c + 1 < cells.size() ? "  " : "\n");
    }
  };
  line(header);
  size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << "\n";
  for (const auto& r : rows) line(r);
  if (!over_cap.empty()) {
    out << "\nno cell under the rate cap:";
    for (const auto& g : over_cap) out << "\n  " << g;
    out << "\n";
  }
  if (!missing_evals.empty()) {
    out << "\nruns without evaluation:";
    for (const auto& d : missing_evals) out << "\n  " << d;
    out << "\n";
  }
  return out.str();
}

std::string ResultsTable::csv() const {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  std::ostringstream out;
  for (size_t c = 0; c < header.size(); ++c) out << quote(header[c]) << (c + 1 < header.size() ? "," : "\n");
  for (const auto& r : rows)
    for (size_t c = 0; c < r.size(); ++c) out << quote(r[c]) << (c + 1 < r.size() ? "," : "\n");
  return out.str();
}

}  // namespace duelvae
