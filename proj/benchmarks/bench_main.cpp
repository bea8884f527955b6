#include <benchmark/benchmark.h>

#include "rcps/inference.hpp"
#include "rcps/losses.hpp"
#include "rcps/metrics.hpp"
#include "rcps/network.hpp"
#include "rcps/sampling.hpp"

using namespace rcps;

namespace {

void BM_RectifiedPseudoLoss(benchmark::State& state)
{
    torch::manual_seed(0);
    const auto n = state.range(0);
    const auto z = torch::randn({2, 3, n, n, n});
    const auto p1 = torch::softmax(torch::randn({2, 3, n, n, n}), 1);
    const auto p2 = torch::softmax(torch::randn({2, 3, n, n, n}), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(loss::rectified_pseudo_loss(p1, p2, z).total.item<float>());
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_RectifiedPseudoLoss)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ContrastiveLoss(benchmark::State& state)
{
    torch::manual_seed(0);
    const auto n = 16;
    const auto u1 = torch::randn({32, n, n, n});
    const auto u2 = torch::randn({32, n, n, n});
    const auto un = torch::randn({32, n, n, n});
    const auto probs = torch::softmax(torch::randn({3, n, n, n}), 0);
    const auto grid = sampling::downsample_pseudo_labels(probs, 1);
    sampling::ContrastiveOptions opts;
    opts.num_negatives = static_cast<int>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(sampling::bidirectional_contrastive_loss(u1, u2, un, grid, grid, opts).item<float>());
}
BENCHMARK(BM_ContrastiveLoss)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_SurfaceDistances(benchmark::State& state)
{
    PhantomSpec spec;
    const auto n = static_cast<int>(state.range(0));
    spec.volume_shape = {n, n, n};
    const auto a = make_phantom(spec, 0).data.label;
    const auto b = make_phantom(spec, 1).data.label;
    for (auto _ : state)
        benchmark::DoNotOptimize(metrics::evaluate_case("bench", a, b, 3));
}
BENCHMARK(BM_SurfaceDistances)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state)
{
    torch::manual_seed(0);
    net::UNet3d model(NetworkConfig{});
    model->eval();
    torch::NoGradGuard guard;
    const auto n = state.range(0);
    const auto x = torch::randn({1, 1, n, n, n});
    for (auto _ : state)
        benchmark::DoNotOptimize(model->forward(x).probs);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SlidingWindow(benchmark::State& state)
{
    torch::manual_seed(0);
    net::UNet3d model(NetworkConfig{});
    PhantomSpec spec;
    spec.volume_shape = {48, 48, 48};
    const auto v = make_phantom(spec, 0).data.image;
    for (auto _ : state)
        benchmark::DoNotOptimize(infer::sliding_window_predict(model, v, {{32, 32, 32}, 0.5}));
}
BENCHMARK(BM_SlidingWindow)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
