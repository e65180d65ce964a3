#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "duelvae/evaluation.hpp"
#include "duelvae/run_store.hpp"
#include "duelvae/training.hpp"

namespace duelvae {

/// A reference classifier together with its measured test accuracy.
struct ReferenceClassifier {
  Classifier net{nullptr};
  double test_accuracy = 0.0;
};

/// Trains the reference classifier for a dataset, or loads it from
/// `<store>/classifiers/` when one was already trained for the same data
/// and options.
ReferenceClassifier cached_classifier(const RunStore& store, const DatasetSpec& data,
                                      const ClassifierOptions& opts);

/// Default classifier options for a dataset: the plain trunk for MNIST,
/// two extra layers and more epochs for Fashion-MNIST.
ClassifierOptions default_classifier_options(const DatasetSpec& data, const NetworkWidths& widths);

struct CheckpointEval {
  TrainConfig config;
  EvalReport report;
};

/// Loads a checkpoint and evaluates it on its configured dataset. With a
/// store, the reference classifier is cached there and the report is
/// written to the run's eval.json. `data_root` overrides the stored root.
CheckpointEval evaluate_checkpoint(const std::filesystem::path& checkpoint, const EvalOptions& opts,
                                   const RunStore* store,
                                   const std::optional<std::filesystem::path>& data_root = std::nullopt,
                                   bool replace = false);

}  // namespace duelvae
