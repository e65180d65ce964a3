#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "duelvae/distributions.hpp"
#include "duelvae/model.hpp"
#include "duelvae/networks.hpp"
#include "duelvae/objectives.hpp"

using namespace duelvae;

namespace {

ModelConfig paper_config(DecoderKind decoder, int levels) {
  ModelConfig cfg;
  cfg.decoder = decoder;
  cfg.levels = levels;
  if (decoder == DecoderKind::dueling) cfg.aux_kind = AuxTargetKind::pixel;
  return cfg;
}

torch::Tensor binary_batch(int64_t b, int64_t side) {
  auto gen = make_generator(7);
  return torch::bernoulli(torch::full({b, 1, side, side}, 0.3), gen);
}

}  // namespace

static void BM_QlmLogProb(benchmark::State& state) {
  const int64_t b = state.range(0);
  auto gen = make_generator(1);
  QuantizedLogisticMixtureGrid p{torch::randn({b, 15, 28, 28}, gen), 5};
  auto x = torch::randint(0, 256, {b, 1, 28, 28}, gen).to(torch::kFloat);
  for (auto _ : state) benchmark::DoNotOptimize(qlm_log_prob(x, p));
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_QlmLogProb)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_EncoderForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  Encoder enc(16, 28, NetworkWidths::paper());
  auto x = binary_batch(state.range(0), 28);
  for (auto _ : state) benchmark::DoNotOptimize(enc->forward(x).mean);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_VampLogProb(benchmark::State& state) {
  auto gen = make_generator(2);
  const int64_t d = state.range(0);
  auto raw = torch::randn({280, d + tril_entries(d)}, gen);
  MixtureMarginal m(gaussian_from_raw(raw, d));
  auto z = torch::randn({32, d}, gen);
  for (auto _ : state) benchmark::DoNotOptimize(m.log_prob(z));
}
BENCHMARK(BM_VampLogProb)->Arg(2)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_PixelCnnForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  PixelCnnOptions o;
  o.size = state.range(1) == 0 ? PixelCnnSize::small : PixelCnnSize::enlarged;
  PixelCnn net(o);
  auto x = binary_batch(state.range(0), 28);
  auto z = torch::zeros({state.range(0), 16});
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(x, z));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PixelCnnForward)->Args({32, 0})->Args({32, 1})->Unit(benchmark::kMillisecond);

// One full training step (forward, backward) of the dueling model at the
// published widths; this is what dominates wall time of a run.
static void BM_DuelingLossBackward(benchmark::State& state) {
  VaeModel model(paper_config(DecoderKind::dueling, 2), 0);
  ObjectiveConfig obj;
  obj.lambda = 0.1;
  obj.aux_kind = AuxTargetKind::pixel;
  auto x = binary_batch(state.range(0), 28);
  auto gen = make_generator(3);
  for (auto _ : state) {
    model->zero_grad();
    auto out = compute_loss(model, x, obj, 0, gen);
    out.loss.backward();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DuelingLossBackward)->Arg(32)->Unit(benchmark::kMillisecond)->Iterations(3);

static void BM_PixelCnnSampleTiny(benchmark::State& state) {
  ModelConfig cfg = paper_config(DecoderKind::pixelcnn, 2);
  cfg.image_size = 8;
  cfg.widths = NetworkWidths::tiny();
  VaeModel model(cfg, 0);
  auto z = torch::zeros({4, 16});
  for (auto _ : state) {
    auto gen = make_generator(4);
    benchmark::DoNotOptimize(model->sample_images(z, gen));
  }
}
BENCHMARK(BM_PixelCnnSampleTiny)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
