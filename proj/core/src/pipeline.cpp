#include "duelvae/pipeline.hpp"

#include <torch/serialize.h>

#include "duelvae/config.hpp"

namespace duelvae {

ClassifierOptions default_classifier_options(const DatasetSpec& data, const NetworkWidths& widths) {
  ClassifierOptions o;
  o.widths = widths;
  if (data.name == "fashion_mnist") {
    o.extra_layers = 2;
    o.epochs = 10;
  }
  return o;
}

ReferenceClassifier cached_classifier(const RunStore& store, const DatasetSpec& data,
                                      const ClassifierOptions& opts) {
  nlohmann::json key = {{"dataset", data.name},
                        {"binarize", std::string(to_string(data.binarize))},
                        {"data_seed", data.data_seed},
                        {"image_size", data.image_size},
                        {"train_limit", data.train_limit ? nlohmann::json(*data.train_limit) : nlohmann::json(nullptr)},
                        {"test_limit", data.test_limit ? nlohmann::json(*data.test_limit) : nlohmann::json(nullptr)},
                        {"extra_layers", opts.extra_layers},
                        {"epochs", opts.epochs},
                        {"batch_size", opts.batch_size},
                        {"lr", opts.lr},
                        {"seed", opts.seed},
                        {"encoder", opts.widths.encoder}};
  const auto digest = sha256_hex(canonical_json(key)).substr(0, 16);
  const auto dir = store.root() / "classifiers";
  const auto weights = dir / (digest + ".pt");
  const auto info = dir / (digest + ".json");

  ReferenceClassifier out;
  out.net = Classifier(data.image_size, opts.widths, opts.extra_layers, 1, 10);
  if (std::filesystem::exists(weights) && std::filesystem::exists(info)) {
    torch::load(out.net, weights.string());
    out.net->eval();
    out.test_accuracy = nlohmann::json::parse(read_file(info)).at("test_accuracy").get<double>();
    return out;
  }
  const auto train = load_dataset(data, Split::train);
  const auto test = load_dataset(data, Split::test);
  out.net = train_classifier(train, opts);
  out.test_accuracy = classifier_accuracy(out.net, test);
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (digest + ".pt.tmp");
  torch::save(out.net, tmp.string());
  std::filesystem::rename(tmp, weights);
  key["test_accuracy"] = out.test_accuracy;
  write_file_atomic(info, key.dump(2) + "\n");
  return out;
}

CheckpointEval evaluate_checkpoint(const std::filesystem::path& checkpoint, const EvalOptions& opts,
                                   const RunStore* store, const std::optional<std::filesystem::path>& data_root,
                                   bool replace) {
  CheckpointEval out;
  auto model = load_model(checkpoint, &out.config);
  if (data_root) out.config.data.root = *data_root;
  model->eval();
  const auto train = load_dataset(out.config.data, Split::train);
  const auto test = load_dataset(out.config.data, Split::test);

  std::optional<ReferenceClassifier> classifier;
  if (opts.reconstruction) {
    const auto copts = default_classifier_options(out.config.data, out.config.widths);
    if (store != nullptr) {
      classifier = cached_classifier(*store, out.config.data, copts);
    } else {
      classifier = ReferenceClassifier{train_classifier(train, copts), 0.0};
      classifier->test_accuracy = classifier_accuracy(classifier->net, test);
    }
  }
  out.report = evaluate(model, out.config, train, test, classifier ? &classifier->net : nullptr,
                        classifier ? classifier->test_accuracy : 0.0, opts);
  if (store != nullptr) store->write_eval(out.report.run_digest, to_json(out.report), replace);
  return out;
}

}  // namespace duelvae
