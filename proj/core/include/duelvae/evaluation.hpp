#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <nlohmann/json.hpp>

#include "duelvae/aux_targets.hpp"
#include "duelvae/data.hpp"
#include "duelvae/model.hpp"
#include "duelvae/networks.hpp"
#include "duelvae/training.hpp"

namespace duelvae {

/// Encoder outputs for a whole dataset: mean [N,d], scale_tril [N,d,d],
/// labels [N] (int64).
struct EncodedSet {
  torch::Tensor mean;
  torch::Tensor scale_tril;
  torch::Tensor labels;

  [[nodiscard]] int64_t size() const { return labels.size(0); }
  [[nodiscard]] int64_t dim() const { return mean.size(1); }
  /// One latent sample per example.
  [[nodiscard]] torch::Tensor sample(at::Generator& gen) const;
  [[nodiscard]] EncodedSet subset(const torch::Tensor& index) const;
};

/// Runs the (frozen) encoder over every example.
EncodedSet encode_dataset(VaeModel& model, const LabeledImageDataset& ds, int64_t batch_size = 500);

struct ProbeOptions {
  ProbeKind kind = ProbeKind::mlp;
  int64_t hidden = 200;
  int64_t epochs = 10;
  int64_t batch_size = 100;
  double lr = 1e-3;
  double holdout_fraction = 0.1;
  uint64_t seed = 0;
};

/// Trains P(Y|Z) on fresh latent samples each epoch. The held-out slice
/// picks the epoch whose parameters are kept.
Probe train_probe(const EncodedSet& train, const ProbeOptions& opts);

/// Mean argmax-match over `n_samples` latent draws per example.
double latent_accuracy(Probe& probe, const EncodedSet& test, int64_t n_samples = 16, uint64_t seed = 0);

/// Mean cross-entropy −log P(y|z) (nats) over `n_samples` draws per example.
double label_distortion(Probe& probe, const EncodedSet& test, int64_t n_samples = 16, uint64_t seed = 0);

struct ClassifierOptions {
  int64_t extra_layers = 0;
  int64_t epochs = 5;
  int64_t batch_size = 64;
  double lr = 1e-3;
  uint64_t seed = 0;
  NetworkWidths widths;
};

/// Accuracy the reference classifier must reach on original test images.
double classifier_floor(const std::string& dataset);

/// Trains P(Y|X) on original training images only.
Classifier train_classifier(const LabeledImageDataset& train, const ClassifierOptions& opts);

/// Predicted class per image; `raw_pixels` uses raw levels.
torch::Tensor classify(Classifier& classifier, const torch::Tensor& raw_pixels, int levels);

double classifier_accuracy(Classifier& classifier, const LabeledImageDataset& ds);

class ClassifierBelowFloor : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `n` indices spaced by ⌊total/n⌋, starting at 0.
std::vector<int64_t> evenly_spaced_indices(int64_t total, int64_t n);

using ReconstructFn = std::function<torch::Tensor(const torch::Tensor& raw_pixels, at::Generator& gen)>;

/// Classifies reconstructions of evenly spaced test examples. Refuses when
/// the classifier's measured accuracy is below `floor`.
double reconstruction_accuracy(Classifier& classifier, double classifier_test_accuracy, double floor,
                               const ReconstructFn& reconstruct, const LabeledImageDataset& test,
                               int64_t n_recon = 300, uint64_t seed = 0);

struct SupervisedOptions {
  int64_t hidden = 256;
  int64_t epochs = 5;
  int64_t batch_size = 100;
  double lr = 1e-3;
  uint64_t seed = 0;
  bool shuffle_labels = false;
};

/// Test accuracy of an MLP that sees only the auxiliary target of each image.
double supervised_on_target(AuxTargetKind kind, const LabeledImageDataset& train,
                            const LabeledImageDataset& test, const SupervisedOptions& opts);

/// Flattened float features for a batch of auxiliary targets.
torch::Tensor aux_target_features(const AuxTargetBatch& target);

struct EvalOptions {
  bool linear_probe = true;
  bool mlp_probe = true;
  int64_t n_probe_samples = 16;
  int64_t n_mc = 64;
  int64_t n_recon = 300;
  bool reconstruction = true;
  std::optional<int64_t> likelihood_examples;  // test examples used for D/R; all if unset
  ProbeOptions probe;
  uint64_t seed = 0;
};

struct EvalReport {
  std::string run_digest;
  double distortion = 0.0;
  double rate = 0.0;
  double reported_elbo_nats = 0.0;
  int64_t n_mc = 0;
  int64_t likelihood_examples = 0;
  std::optional<double> latent_accuracy_linear;
  std::optional<double> latent_accuracy_mlp;
  std::optional<double> label_distortion_linear;
  std::optional<double> label_distortion_mlp;
  std::optional<double> reconstruction_accuracy;
  std::optional<double> classifier_accuracy;
  int64_t n_recon = 0;
  int64_t n_probe_samples = 0;
  uint64_t model_seed = 0;
  uint64_t data_seed = 0;
  uint64_t eval_seed = 0;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Distortion and rate re-estimated with `n_mc` latent samples per example.
struct LikelihoodEstimate {
  double distortion = 0.0;
  double rate = 0.0;
};
LikelihoodEstimate estimate_likelihood(VaeModel& model, const LabeledImageDataset& ds, int64_t n_mc,
                                       uint64_t seed, int64_t batch_size = 100);

/// Full evaluation of one trained model. `classifier` may be null, which
/// skips reconstruction accuracy.
EvalReport evaluate(VaeModel& model, const TrainConfig& cfg, const LabeledImageDataset& train,
                    const LabeledImageDataset& test, Classifier* classifier, double classifier_test_accuracy,
                    const EvalOptions& opts);

/// Metrics of one run as used for cell selection.
struct RunMetrics {
  std::string digest;
  std::string cell;
  double rate = 0.0;
  double distortion = 0.0;
  double elbo = 0.0;
  double latent_accuracy_linear = 0.0;
  double latent_accuracy_mlp = 0.0;
  double label_distortion_mlp = 0.0;
  double reconstruction_accuracy = 0.0;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; NaN for a single run
};

struct CellSummary {
  std::string cell;
  std::vector<std::string> digests;
  MeanSd rate, distortion, elbo, latent_accuracy_linear, latent_accuracy_mlp, label_distortion_mlp,
      reconstruction_accuracy;
};

MeanSd mean_sd(std::span<const double> xs);
std::vector<CellSummary> summarize_cells(const std::vector<RunMetrics>& runs);

enum class SelectionCriterion { latent_accuracy_mlp, latent_accuracy_linear, reconstruction_accuracy };

struct BestLowRate {
  bool all_over_cap = false;
  std::optional<CellSummary> best;
};

/// Among seed-averaged cells with mean rate below the cap, the one with the
/// highest criterion; ties go to lower rate, then lower distortion.
BestLowRate best_low_rate(const std::vector<RunMetrics>& runs, double rate_cap = 10.0,
                          SelectionCriterion criterion = SelectionCriterion::latent_accuracy_mlp);

struct SignificanceResult {
  MeanSd a;
  MeanSd b;
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  double corrected_alpha = 0.05;
  bool equivalent = true;  // fail to reject equal means
};

/// Equal-variance two-sample t-test at alpha / bonferroni_n.
SignificanceResult significance_test(std::span<const double> a, std::span<const double> b,
                                     int bonferroni_n = 2, double alpha = 0.05);

/// Squared Pearson correlation.
double r_squared(std::span<const double> x, std::span<const double> y);

}  // namespace duelvae
