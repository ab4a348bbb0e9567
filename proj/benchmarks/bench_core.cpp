// Micro benchmarks for the hot paths: conv3d forward/backward, the full
// model step, and the survival loss.

#include <benchmark/benchmark.h>

#include "daft/metrics.hpp"
#include "daft/optim.hpp"
#include "daft/train.hpp"

namespace {

using namespace daft;

void BM_Conv3dForward(benchmark::State& state) {
    const std::int64_t channels = state.range(0);
    Rng rng(1);
    auto input = TensorF::randn({16, channels, 8, 8, 8}, rng);
    auto weight = TensorF::randn({channels, channels, 3, 3, 3}, rng, 0.1);
    for (auto _ : state) {
        auto out = conv3d(input, weight, TensorF{}, 1, 1);
        benchmark::DoNotOptimize(out.data().data());
    }
    const double macs = 16.0 * static_cast<double>(channels * channels) * 512.0 * 27.0;
    state.SetItemsProcessed(static_cast<std::int64_t>(macs) * state.iterations());
}
BENCHMARK(BM_Conv3dForward)->Arg(16)->Arg(32);

void BM_Conv3dTrainStep(benchmark::State& state) {
    Rng rng(2);
    auto input = TensorF::randn({16, 16, 8, 8, 8}, rng);
    auto weight = TensorF::randn({16, 16, 3, 3, 3}, rng, 0.05, true);
    for (auto _ : state) {
        auto loss = sum(conv3d(input, weight, TensorF{}, 1, 1));
        backward(loss);
        weight.zero_grad();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_Conv3dTrainStep);

void BM_ModelStep(benchmark::State& state) {
    ModelConfig cfg;  // default backbone, daft fusion
    auto model = build_model<float>(cfg, 3);
    model.set_training(true);
    auto params = model.trainable_parameters();
    AdamW<float> opt({0.0055, 0.9, 0.999, 1e-8, 0.0});
    Rng rng(4);
    auto image = TensorF::randn({16, 1, 16, 16, 16}, rng, 0.3);
    auto tabular = TensorF::randn({16, 15}, rng);
    std::vector<DiagnosisLabel> labels(16);
    for (int i = 0; i < 16; ++i) labels[static_cast<std::size_t>(i)].class_index = i % 3;
    for (auto _ : state) {
        auto loss = cross_entropy(model.forward(image, tabular), labels);
        backward(loss);
        opt.step(params);
        zero_grads<float>(params);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_ModelStep)->Unit(benchmark::kMillisecond);

void BM_CoxLoss(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    Rng rng(5);
    auto risk = TensorF::randn({n}, rng, 1.0, true);
    std::vector<SurvivalLabel> labels(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = {rng.uniform(0.5, 5.0), rng.uniform() < 0.4};
    }
    labels[0].event = true;
    for (auto _ : state) {
        auto loss = cox_ph_loss(risk, labels);
        backward(loss);
        risk.zero_grad();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_CoxLoss)->Arg(16)->Arg(128);

void BM_UnoCindex(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(6);
    std::vector<double> risk(n);
    std::vector<SurvivalLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        risk[i] = rng.uniform(-1.0, 1.0);
        labels[i] = {rng.uniform(0.5, 5.0), rng.uniform() < 0.4};
    }
    labels[0].event = true;
    for (auto _ : state) {
        benchmark::DoNotOptimize(uno_cindex(risk, labels));
    }
}
BENCHMARK(BM_UnoCindex)->Arg(100)->Arg(400);

}  // namespace

BENCHMARK_MAIN();
