#include <benchmark/benchmark.h>

#include "vfift/complexity.hpp"
#include "vfift/training.hpp"

using namespace vfift;

namespace {

void bm_conv2d(benchmark::State& state) {
    const int C = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    Rng rng(1);
    ConvParams conv = ConvParams::create(C, C, 3, 1, 1, rng);
    Tensor x = Tensor::uniform({1, C, size, size}, -1.0, 1.0, rng);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, conv));
    state.SetItemsProcessed(state.iterations() * cost({CostKind::Conv, size, size, C, 3}));
}
BENCHMARK(bm_conv2d)->Args({16, 32})->Args({16, 64})->Args({32, 32});

void bm_flow_attention(benchmark::State& state) {
    const int C = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    const int L = static_cast<int>(state.range(2));
    Rng rng(2);
    QkvProj proj = QkvProj::create(C, rng);
    const WindowSpec spec{L, 4, C / 4};
    Tensor x = Tensor::uniform({1, C, size, size}, -1.0, 1.0, rng);
    FlowField flow{Tensor::uniform({1, 2, size, size}, -4.0, 4.0, rng)};
    for (auto _ : state) benchmark::DoNotOptimize(flow_attention(x, flow, spec, proj));
    state.SetItemsProcessed(state.iterations() * cost({CostKind::FlowAttn, size, size, C, L}));
}
BENCHMARK(bm_flow_attention)->Args({16, 32, 5})->Args({16, 64, 5})->Args({16, 64, 3});

void bm_backward_warp(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Rng rng(3);
    Tensor frame = Tensor::uniform({1, 3, size, size}, 0.0, 1.0, rng);
    FlowField flow{Tensor::uniform({1, 2, size, size}, -6.0, 6.0, rng)};
    for (auto _ : state) benchmark::DoNotOptimize(backward_warp(frame, flow));
}
BENCHMARK(bm_backward_warp)->Arg(64)->Arg(128);

void bm_model_forward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.window = 5;
    cfg.heads = 4;
    cfg.attn_width = 16;
    cfg.feature_channels = 8;
    cfg.encoder_channels = {8, 12, 16, 16};
    cfg.num_scales = 2;
    Rng rng(4);
    VfiftModel model(cfg, rng);
    Tensor prev = Tensor::uniform({1, 3, 32, 32}, 0.0, 1.0, rng);
    Tensor next = Tensor::uniform({1, 3, 32, 32}, 0.0, 1.0, rng);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(prev, next));
}
BENCHMARK(bm_model_forward);

void bm_train_step(benchmark::State& state) {
    ModelConfig cfg;
    cfg.window = 3;
    cfg.heads = 1;
    cfg.attn_width = 4;
    cfg.feature_channels = 1;
    cfg.encoder_channels = {1, 1, 2, 2};
    cfg.num_scales = 2;
    Rng rng(5);
    VfiftModel model(cfg, rng);
    std::vector<SyntheticTriplet> data{gen_synthetic(0, MotionKind::Translate, 16, 2.0)};
    TrainOptions opts;
    opts.steps = 1;
    opts.lr = 1e-4;
    for (auto _ : state) benchmark::DoNotOptimize(train_loop(model, data, opts));
}
BENCHMARK(bm_train_step);

} // namespace

BENCHMARK_MAIN();
