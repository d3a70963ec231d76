// Microbenchmarks for the hot paths: convolution, nearest-neighbour search,
// raycast rendering, Fourier encoding and one denoiser evaluation.

#include <benchmark/benchmark.h>

#include <random>

#include "pmdiff/correspond.hpp"
#include "pmdiff/encode.hpp"
#include "pmdiff/microdiff.hpp"
#include "pmdiff/pipeline.hpp"
#include "pmdiff/synth.hpp"
#include "pmdiff/tensor.hpp"
#include "pmdiff/trainer.hpp"

namespace {

using namespace pmdiff;

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    std::vector<double> v(count);
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

PointMap random_pointmap(std::size_t side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointMap m(side, side, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, {u(rng), u(rng), 2.0 + u(rng)});
    return m;
}

void BM_Conv2dForward(benchmark::State& state) {
    set_compute_threads(1);
    const auto c = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_tensor({8, c, 32, 48}, 1);
    const Tensor w = random_tensor({c, c, 3, 3}, 2);
    const Tensor b = random_tensor({c}, 3);
    for (auto _ : state) {
        Graph g;
        benchmark::DoNotOptimize(g.conv2d(x, w, b, {1, 1}));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
    set_compute_threads(1);
    const auto c = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_tensor({8, c, 32, 48}, 1, true);
    const Tensor w = random_tensor({c, c, 3, 3}, 2, true);
    const Tensor b = random_tensor({c}, 3, true);
    for (auto _ : state) {
        Graph g;
        g.backward(g.sum(g.conv2d(x, w, b, {1, 1})));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_NnSearch(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const auto method = state.range(1) == 0 ? NnMethod::KdTree : NnMethod::BruteForce;
    const PointMap query = random_pointmap(side, 11);
    const PointMap base = random_pointmap(side, 12);
    for (auto _ : state) benchmark::DoNotOptimize(nn_search(query, base, method));
    state.SetLabel(method == NnMethod::KdTree ? "kdtree" : "brute");
}
BENCHMARK(BM_NnSearch)->ArgsProduct({{16, 32, 64}, {0, 1}})->Unit(benchmark::kMicrosecond);

void BM_Render(benchmark::State& state) {
    const auto w = static_cast<std::size_t>(state.range(0));
    const SceneSpec scene = random_scene(5);
    CameraView view{toy_intrinsics(w, w * 2 / 3, 0.85 * static_cast<double>(w)), Rigid::translation({0, -1.5, 0})};
    for (auto _ : state) benchmark::DoNotOptimize(render(scene, view));
}
BENCHMARK(BM_Render)->Arg(48)->Arg(96)->Unit(benchmark::kMicrosecond);

void BM_FourierEncode(benchmark::State& state) {
    const PointMap m = random_pointmap(static_cast<std::size_t>(state.range(0)), 21);
    const EncodingConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(fourier_encode(m, cfg));
}
BENCHMARK(BM_FourierEncode)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_DenoiserEps(benchmark::State& state) {
    set_compute_threads(1);
    const ModelParams params = build_model(ModelConfig{});
    const EpsFn eps = base_eps_fn(params);
    const Tensor z = random_tensor({1, 3, 32, 48}, 31);
    for (auto _ : state) benchmark::DoNotOptimize(eps(z, 50));
}
BENCHMARK(BM_DenoiserEps)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
