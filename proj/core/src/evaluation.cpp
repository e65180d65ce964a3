#include "duelvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <torch/torch.h>

#include "duelvae/config.hpp"

namespace duelvae {

using torch::indexing::Slice;

torch::Tensor EncodedSet::sample(at::Generator& gen) const {
  auto eps = torch::randn(mean.sizes(), gen, mean.options());
  return mean + torch::matmul(scale_tril, eps.unsqueeze(-1)).squeeze(-1);
}

EncodedSet EncodedSet::subset(const torch::Tensor& index) const {
  return {mean.index_select(0, index), scale_tril.index_select(0, index), labels.index_select(0, index)};
}

EncodedSet encode_dataset(VaeModel& model, const LabeledImageDataset& ds, int64_t batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<torch::Tensor> means, trils, labels;
  for (int64_t begin = 0; begin < ds.size(); begin += batch_size) {
    const int64_t end = std::min(ds.size(), begin + batch_size);
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = make_batch(ds, idx);
    auto g = model->encode(batch.pixels);
    means.push_back(g.mean);
    trils.push_back(g.scale_tril);
    labels.push_back(batch.labels);
  }
  return {torch::cat(means), torch::cat(trils), torch::cat(labels)};
}

namespace {

std::vector<int64_t> seeded_permutation(int64_t n, uint64_t seed) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> pick(0, i);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(pick(rng))]);
  }
  return p;
}

torch::Tensor as_index(const std::vector<int64_t>& v) {
  return torch::tensor(v, torch::kLong);
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard no_grad;
  auto params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

double accuracy_of(const torch::Tensor& logits, const torch::Tensor& labels) {
  return logits.argmax(-1).eq(labels).to(torch::kDouble).mean().item<double>();
}

// Minibatch Adam on (features, labels) with optional held-out model selection.
template <typename Net>
void fit_classifier(Net& net, int64_t n, const torch::Tensor& labels, int64_t epochs,
                    int64_t batch_size, double lr, uint64_t seed, const std::vector<int64_t>& holdout,
                    const std::function<torch::Tensor(int64_t epoch, const torch::Tensor& index)>& sampled) {
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(lr));
  std::vector<int64_t> fit_idx;
  {
    std::vector<bool> held(static_cast<size_t>(n), false);
    for (auto i : holdout) held[static_cast<size_t>(i)] = true;
    for (int64_t i = 0; i < n; ++i)
      if (!held[static_cast<size_t>(i)]) fit_idx.push_back(i);
  }
  double best = -1.0;
  std::vector<torch::Tensor> best_params;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    net->train();
    const auto order = seeded_permutation(static_cast<int64_t>(fit_idx.size()), mix_seed(seed, 2 * epoch));
    for (size_t b = 0; b + 1 <= order.size(); b += static_cast<size_t>(batch_size)) {
      const size_t e = std::min(order.size(), b + static_cast<size_t>(batch_size));
      std::vector<int64_t> idx;
      for (size_t k = b; k < e; ++k) idx.push_back(fit_idx[static_cast<size_t>(order[k])]);
      auto index = as_index(idx);
      auto x = sampled(epoch, index);
      auto loss = torch::nn::functional::cross_entropy(net->forward(x), labels.index_select(0, index));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    if (!holdout.empty()) {
      torch::NoGradGuard no_grad;
      net->eval();
      auto index = as_index(holdout);
      const double acc = accuracy_of(net->forward(sampled(-1, index)), labels.index_select(0, index));
      if (acc > best) {
        best = acc;
        best_params = snapshot(*net);
      }
    }
  }
  if (!best_params.empty()) restore(*net, best_params);
}

}  // namespace

Probe train_probe(const EncodedSet& train, const ProbeOptions& opts) {
  if (train.size() < 2) throw std::invalid_argument("train_probe: need at least two examples");
  torch::manual_seed(mix_seed(opts.seed, 0x9b0e));
  Probe probe(opts.kind, train.dim(), opts.hidden, 10);
  probe->to(train.mean.scalar_type());

  std::vector<int64_t> holdout;
  const auto n_hold = static_cast<int64_t>(std::floor(opts.holdout_fraction * static_cast<double>(train.size())));
  if (n_hold > 0) {
    auto perm = seeded_permutation(train.size(), mix_seed(opts.seed, 0x401d));
    holdout.assign(perm.begin(), perm.begin() + n_hold);
  }
  // A fresh latent draw of every example per epoch; the held-out slice uses
  // one fixed draw so epochs are compared on equal footing.
  torch::Tensor epoch_z;
  int64_t epoch_of_z = -2;
  torch::Tensor holdout_z;
  auto sampled = [&](int64_t epoch, const torch::Tensor& index) {
    torch::NoGradGuard no_grad;
    if (epoch < 0) {
      if (!holdout_z.defined()) {
        auto gen = make_generator(mix_seed(opts.seed, 0x5eed));
        holdout_z = train.sample(gen);
      }
      return holdout_z.index_select(0, index);
    }
    if (epoch != epoch_of_z) {
      auto gen = make_generator(mix_seed(opts.seed, 0x1000 + static_cast<uint64_t>(epoch)));
      epoch_z = train.sample(gen);
      epoch_of_z = epoch;
    }
    return epoch_z.index_select(0, index);
  };
  fit_classifier(probe, train.size(), train.labels, opts.epochs, opts.batch_size, opts.lr, opts.seed,
                 holdout, sampled);
  probe->eval();
  return probe;
}

double latent_accuracy(Probe& probe, const EncodedSet& test, int64_t n_samples, uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("latent_accuracy: n_samples must be >= 1");
  torch::NoGradGuard no_grad;
  probe->eval();
  double total = 0.0;
  for (int64_t s = 0; s < n_samples; ++s) {
    auto gen = make_generator(mix_seed(seed, static_cast<uint64_t>(s)));
    total += accuracy_of(probe->forward(test.sample(gen)), test.labels);
  }
  return total / static_cast<double>(n_samples);
}

double label_distortion(Probe& probe, const EncodedSet& test, int64_t n_samples, uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("label_distortion: n_samples must be >= 1");
  torch::NoGradGuard no_grad;
  probe->eval();
  double total = 0.0;
  for (int64_t s = 0; s < n_samples; ++s) {
    auto gen = make_generator(mix_seed(seed, static_cast<uint64_t>(s)));
    auto logits = probe->forward(test.sample(gen));
    total += torch::nn::functional::cross_entropy(logits, test.labels).item<double>();
  }
  return total / static_cast<double>(n_samples);
}

double classifier_floor(const std::string& dataset) {
  if (dataset == "mnist") return 0.98;
  if (dataset == "fashion_mnist") return 0.90;
  throw std::invalid_argument("no classifier floor for dataset " + dataset);
}

Classifier train_classifier(const LabeledImageDataset& train, const ClassifierOptions& opts) {
  torch::manual_seed(mix_seed(opts.seed, 0xc1a5));
  Classifier net(train.height, opts.widths, opts.extra_layers, train.channels, 10);
  const int levels = train.levels();
  auto labels = torch::from_blob(const_cast<uint8_t*>(train.labels.data()), {train.size()}, torch::kUInt8)
                    .to(torch::kLong);
  auto sampled = [&](int64_t, const torch::Tensor& index) {
    std::vector<int64_t> idx(index.data_ptr<int64_t>(), index.data_ptr<int64_t>() + index.numel());
    return network_input(make_batch(train, idx).pixels, levels);
  };
  fit_classifier(net, train.size(), labels, opts.epochs, opts.batch_size, opts.lr, opts.seed, {},
                 sampled);
  net->eval();
  return net;
}

torch::Tensor classify(Classifier& classifier, const torch::Tensor& raw_pixels, int levels) {
  torch::NoGradGuard no_grad;
  classifier->eval();
  return classifier->forward(network_input(raw_pixels.to(torch::kFloat), levels)).argmax(-1);
}

double classifier_accuracy(Classifier& classifier, const LabeledImageDataset& ds) {
  int64_t correct = 0;
  for (int64_t begin = 0; begin < ds.size(); begin += 500) {
    const int64_t end = std::min(ds.size(), begin + 500);
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = make_batch(ds, idx);
    correct += classify(classifier, batch.pixels, ds.levels()).eq(batch.labels).sum().item<int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<int64_t> evenly_spaced_indices(int64_t total, int64_t n) {
  if (n < 1 || n > total) throw std::invalid_argument("evenly_spaced_indices: need 1 <= n <= total");
  const int64_t stride = total / n;
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i * stride;
  return out;
}

double reconstruction_accuracy(Classifier& classifier, double classifier_test_accuracy, double floor,
                               const ReconstructFn& reconstruct, const LabeledImageDataset& test,
                               int64_t n_recon, uint64_t seed) {
  if (classifier_test_accuracy < floor)
    throw ClassifierBelowFloor("reference classifier accuracy " + std::to_string(classifier_test_accuracy) +
                               " is below the required " + std::to_string(floor) +
                               "; retrain it (more epochs or a deeper variant) before scoring reconstructions");
  const auto idx = evenly_spaced_indices(test.size(), n_recon);
  auto gen = make_generator(seed);
  int64_t correct = 0;
  constexpr size_t kChunk = 50;
  for (size_t b = 0; b < idx.size(); b += kChunk) {
    std::vector<int64_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                               idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + kChunk)));
    auto batch = make_batch(test, chunk);
    auto recon = reconstruct(batch.pixels, gen);
    correct += classify(classifier, recon, test.levels()).eq(batch.labels).sum().item<int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

torch::Tensor aux_target_features(const AuxTargetBatch& t) {
  const int64_t b = t.primary.size(0);
  const double scale = static_cast<double>(t.levels - 1);
  switch (t.kind) {
    case AuxTargetKind::pixel:
      return t.primary.reshape({b, -1}).to(torch::kFloat) / scale;
    case AuxTargetKind::gradient:
      return torch::cat({t.primary, t.secondary}, 1).to(torch::kFloat).sub(scale).div(scale);
    case AuxTargetKind::row_col_marginals:
      return torch::cat({t.primary.reshape({b, -1}), t.secondary.reshape({b, -1})}, 1).to(torch::kFloat);
    case AuxTargetKind::intensity_histogram:
      return t.primary.reshape({b, -1}).to(torch::kFloat);
  }
  throw std::logic_error("unreachable");
}

double supervised_on_target(AuxTargetKind kind, const LabeledImageDataset& train,
                            const LabeledImageDataset& test, const SupervisedOptions& opts) {
  auto features_of = [kind](const LabeledImageDataset& ds) {
    std::vector<torch::Tensor> parts;
    for (int64_t begin = 0; begin < ds.size(); begin += 1000) {
      const int64_t end = std::min(ds.size(), begin + 1000);
      std::vector<int64_t> idx(static_cast<size_t>(end - begin));
      std::iota(idx.begin(), idx.end(), begin);
      parts.push_back(aux_target_features(aux_targets(make_batch(ds, idx).pixels, ds.levels(), kind)));
    }
    return torch::cat(parts);
  };
  auto labels_of = [](const LabeledImageDataset& ds) {
    return torch::from_blob(const_cast<uint8_t*>(ds.labels.data()), {ds.size()}, torch::kUInt8).to(torch::kLong);
  };
  auto x_train = features_of(train);
  auto y_train = labels_of(train);
  if (opts.shuffle_labels) {
    auto perm = seeded_permutation(train.size(), mix_seed(opts.seed, 0x5aff));
    y_train = y_train.index_select(0, as_index(perm));
  }
  auto x_test = features_of(test);
  auto y_test = labels_of(test);

  torch::manual_seed(mix_seed(opts.seed, 0x50b7));
  auto net = torch::nn::Sequential(torch::nn::Linear(x_train.size(1), opts.hidden), torch::nn::ReLU(),
                                   torch::nn::Linear(opts.hidden, opts.hidden), torch::nn::ReLU(),
                                   torch::nn::Linear(opts.hidden, 10));
  auto sampled = [&](int64_t, const torch::Tensor& index) { return x_train.index_select(0, index); };
  fit_classifier(net, train.size(), y_train, opts.epochs, opts.batch_size, opts.lr, opts.seed, {},
                 sampled);
  torch::NoGradGuard no_grad;
  net->eval();
  return accuracy_of(net->forward(x_test), y_test);
}

LikelihoodEstimate estimate_likelihood(VaeModel& model, const LabeledImageDataset& ds, int64_t n_mc,
                                       uint64_t seed, int64_t batch_size) {
  if (n_mc < 1) throw std::invalid_argument("estimate_likelihood: n_mc must be >= 1");
  torch::NoGradGuard no_grad;
  model->eval();
  auto marginal = model->marginal();
  auto gen = make_generator(seed);
  double d_sum = 0.0;
  double r_sum = 0.0;
  for (int64_t begin = 0; begin < ds.size(); begin += batch_size) {
    const int64_t end = std::min(ds.size(), begin + batch_size);
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto x = make_batch(ds, idx).pixels.to(model->dtype());
    auto posterior = model->encode(x);
    auto z = gaussian_sample(posterior, n_mc, gen);  // [n_mc, B, d]
    r_sum += rate_terms(z, posterior, marginal).mean(0).sum().item<double>();
    for (int64_t s = 0; s < n_mc; ++s)
      d_sum -= model->decode(z[s], x).log_prob(x).sum().item<double>() / static_cast<double>(n_mc);
  }
  const double n = static_cast<double>(ds.size());
  return {d_sum / n, r_sum / n};
}

EvalReport evaluate(VaeModel& model, const TrainConfig& cfg, const LabeledImageDataset& train,
                    const LabeledImageDataset& test, Classifier* classifier, double classifier_test_accuracy,
                    const EvalOptions& opts) {
  EvalReport r;
  r.run_digest = config_digest(cfg);
  r.n_mc = opts.n_mc;
  r.n_probe_samples = opts.n_probe_samples;
  r.model_seed = cfg.seed;
  r.data_seed = cfg.data.data_seed;
  r.eval_seed = opts.seed;

  const auto like_set =
      opts.likelihood_examples ? slice(test, 0, std::min(test.size(), *opts.likelihood_examples)) : test;
  r.likelihood_examples = like_set.size();
  const auto like = estimate_likelihood(model, like_set, opts.n_mc, mix_seed(opts.seed, 1));
  r.distortion = like.distortion;
  r.rate = like.rate;
  r.reported_elbo_nats = like.distortion + like.rate;

  if (opts.linear_probe || opts.mlp_probe) {
    const auto enc_train = encode_dataset(model, train);
    const auto enc_test = encode_dataset(model, test);
    auto run_probe = [&](ProbeKind kind, std::optional<double>& acc, std::optional<double>& ld) {
      auto po = opts.probe;
      po.kind = kind;
      po.seed = mix_seed(opts.seed, kind == ProbeKind::linear ? 2 : 3);
      auto probe = train_probe(enc_train, po);
      acc = latent_accuracy(probe, enc_test, opts.n_probe_samples, mix_seed(opts.seed, 4));
      ld = label_distortion(probe, enc_test, opts.n_probe_samples, mix_seed(opts.seed, 4));
    };
    if (opts.linear_probe) run_probe(ProbeKind::linear, r.latent_accuracy_linear, r.label_distortion_linear);
    if (opts.mlp_probe) run_probe(ProbeKind::mlp, r.latent_accuracy_mlp, r.label_distortion_mlp);
  }

  if (opts.reconstruction && classifier != nullptr) {
    r.classifier_accuracy = classifier_test_accuracy;
    r.n_recon = opts.n_recon;
    ReconstructFn fn = [&model](const torch::Tensor& x, at::Generator& gen) {
      return model->reconstruct(x, gen);
    };
    r.reconstruction_accuracy = reconstruction_accuracy(*classifier, classifier_test_accuracy,
                                                        classifier_floor(cfg.data.name), fn, test,
                                                        opts.n_recon, mix_seed(opts.seed, 5));
  }
  return r;
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  return {{"run_digest", r.run_digest},
          {"distortion", r.distortion},
          {"rate", r.rate},
          {"reported_elbo_nats", r.reported_elbo_nats},
          {"n_mc", r.n_mc},
          {"likelihood_examples", r.likelihood_examples},
          {"latent_accuracy_linear", opt(r.latent_accuracy_linear)},
          {"latent_accuracy_mlp", opt(r.latent_accuracy_mlp)},
          {"label_distortion_linear", opt(r.label_distortion_linear)},
          {"label_distortion_mlp", opt(r.label_distortion_mlp)},
          {"reconstruction_accuracy", opt(r.reconstruction_accuracy)},
          {"classifier_accuracy", opt(r.classifier_accuracy)},
          {"n_recon", r.n_recon},
          {"n_probe_samples", r.n_probe_samples},
          {"seeds", {{"model", r.model_seed}, {"data", r.data_seed}, {"eval", r.eval_seed}}}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.run_digest = j.at("run_digest").get<std::string>();
  r.distortion = j.at("distortion").get<double>();
  r.rate = j.at("rate").get<double>();
  r.reported_elbo_nats = j.at("reported_elbo_nats").get<double>();
  r.n_mc = j.at("n_mc").get<int64_t>();
  r.likelihood_examples = j.at("likelihood_examples").get<int64_t>();
  r.latent_accuracy_linear = opt_from<double>(j, "latent_accuracy_linear");
  r.latent_accuracy_mlp = opt_from<double>(j, "latent_accuracy_mlp");
  r.label_distortion_linear = opt_from<double>(j, "label_distortion_linear");
  r.label_distortion_mlp = opt_from<double>(j, "label_distortion_mlp");
  r.reconstruction_accuracy = opt_from<double>(j, "reconstruction_accuracy");
  r.classifier_accuracy = opt_from<double>(j, "classifier_accuracy");
  r.n_recon = j.at("n_recon").get<int64_t>();
  r.n_probe_samples = j.at("n_probe_samples").get<int64_t>();
  r.model_seed = j.at("seeds").at("model").get<uint64_t>();
  r.data_seed = j.at("seeds").at("data").get<uint64_t>();
  r.eval_seed = j.at("seeds").at("eval").get<uint64_t>();
  return r;
}

}  // namespace duelvae
