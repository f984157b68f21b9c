#include <benchmark/benchmark.h>

#include <random>

#include "cladec/model_zoo.hpp"
#include "cladec/nn.hpp"
#include "cladec/saliency.hpp"

using namespace cladec;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (float& v : t.storage()) v = d(rng);
  return t;
}

model::ArchSpec arch_of(int family) {
  return {family == 0 ? model::ArchFamily::kVggTable1 : model::ArchFamily::kResNet10, 1, 10};
}

void BM_Conv2dForward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  nn::Conv2d conv(ch, ch, 3, 1, 1, true, rng);
  const Tensor x = uniform({32, ch, 16, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::kTrain));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2dBackward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  nn::Conv2d conv(ch, ch, 3, 1, 1, true, rng);
  const Tensor x = uniform({32, ch, 16, 16}, 2);
  const Tensor g = uniform(conv.forward(x, nn::Mode::kTrain).shape(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64)->Arg(128);

// Forward and backward of a whole classifier on one batch of 32.
void BM_ClassifierStep(benchmark::State& state) {
  auto clf = model::build_classifier(arch_of(static_cast<int>(state.range(0))), 1);
  const Tensor x = uniform({32, 1, 32, 32}, 2);
  const Tensor g = uniform({32, 10}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clf->forward(x, nn::Mode::kTrain));
    benchmark::DoNotOptimize(clf->backward_from(g, model::LayerSelector::of(-1)));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ClassifierStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DecoderForward(benchmark::State& state) {
  const auto arch = arch_of(0);
  const auto sel = model::LayerSelector::of(static_cast<int>(state.range(0)));
  auto clf = model::build_classifier(arch, 1);
  const Tensor act = clf->forward_to_layer(uniform({32, 1, 32, 32}, 2), sel, nn::Mode::kEval);
  auto dec = model::build_decoder(arch, sel, model::NeuronSubset::full(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(dec->forward(act, nn::Mode::kEval));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_DecoderForward)->Arg(-1)->Arg(-3)->Arg(-5)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  auto clf = model::build_classifier(arch_of(0), 1);
  const Tensor x = uniform({16, 1, 32, 32}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(saliency::gradcam(*clf, model::LayerSelector::of(-5), x));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_GradCam)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
