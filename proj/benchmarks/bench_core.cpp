#include <benchmark/benchmark.h>

#include "sodkd/distill.hpp"
#include "sodkd/grid.hpp"
#include "sodkd/metrics.hpp"
#include "sodkd/net.hpp"
#include "sodkd/rng.hpp"
#include "sodkd/synthdata.hpp"
#include "sodkd/tape.hpp"

using sodkd::Grid;
using sodkd::Tape;

namespace {

Grid random_grid(int h, int w, int c, sodkd::Rng& rng) {
    Grid g(h, w, c);
    for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
    return g;
}

void conv_args(benchmark::internal::Benchmark* b) {
    // (side, cin, cout) spanning the layer sizes the networks use
    b->Args({64, 4, 24})->Args({64, 24, 24})->Args({32, 48, 48})->Args({16, 96, 96});
}

}  // namespace

static void BM_ConvForward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int cin = static_cast<int>(state.range(1));
    const int cout = static_cast<int>(state.range(2));
    sodkd::Rng rng(1);
    Grid x = random_grid(side, side, cin, rng);
    Grid k = random_grid(3, 3, cin * cout, rng);
    Grid b = random_grid(1, 1, cout, rng);
    for (auto _ : state) {
        Tape t;
        auto out = t.conv2d(t.leaf(x), t.leaf(k), t.leaf(b));
        benchmark::DoNotOptimize(t.value(out).data.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side) * side * 9 * cin *
                            cout);
}
BENCHMARK(BM_ConvForward)->Apply(conv_args);

static void BM_ConvForwardBackward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int cin = static_cast<int>(state.range(1));
    const int cout = static_cast<int>(state.range(2));
    sodkd::Rng rng(1);
    Grid x = random_grid(side, side, cin, rng);
    Grid k = random_grid(3, 3, cin * cout, rng);
    Grid b = random_grid(1, 1, cout, rng);
    for (auto _ : state) {
        Tape t;
        auto loss = t.sum(t.conv2d(t.leaf(x, true), t.leaf(k, true), t.leaf(b, true)));
        t.backward(loss);
        benchmark::DoNotOptimize(t.grad(t.parameters()[1]).data.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side) * side * 9 * cin *
                            cout);
}
BENCHMARK(BM_ConvForwardBackward)->Apply(conv_args);

static void BM_NetworkPredict(benchmark::State& state) {
    const auto kind = state.range(0) == 0 ? sodkd::NetKind::kStudent : sodkd::NetKind::kTeacher;
    const auto cfg = kind == sodkd::NetKind::kStudent ? sodkd::student_config(1)
                                                      : sodkd::teacher_config(1);
    sodkd::Network net = sodkd::Network::init(kind, cfg);
    sodkd::Rng rng(2);
    Grid input = random_grid(64, 64, cfg.input_channels, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.predict(input).data.data());
    }
}
BENCHMARK(BM_NetworkPredict)->Arg(0)->Arg(1);

static void BM_TrainStep(benchmark::State& state) {
    const auto kind = state.range(0) == 0 ? sodkd::NetKind::kStudent : sodkd::NetKind::kTeacher;
    const auto cfg = kind == sodkd::NetKind::kStudent ? sodkd::student_config(1)
                                                      : sodkd::teacher_config(1);
    sodkd::Network net = sodkd::Network::init(kind, cfg);
    sodkd::Sample sample = sodkd::gen_sample(3, sodkd::NoiseMode::kClean, 64);
    Grid input = sodkd::model_input(sample, cfg.input_channels);
    for (auto _ : state) {
        Tape t;
        auto fwd = net.forward(t, input);
        t.backward(sodkd::ce_loss(t, fwd.logits, sample.gt));
        benchmark::DoNotOptimize(t.grad(fwd.params.front()).data.data());
    }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1);

static void BM_GenSample(benchmark::State& state) {
    std::uint64_t seed = 0;
    for (auto _ : state) {
        sodkd::Sample s = sodkd::gen_sample(++seed, sodkd::NoiseMode::kDistractorDepth, 64);
        benchmark::DoNotOptimize(s.gt.data.data());
    }
}
BENCHMARK(BM_GenSample);

static void BM_EvaluateMap(benchmark::State& state) {
    sodkd::Rng rng(4);
    Grid g = random_grid(64, 64, 1, rng);
    for (double& v : g.data) v = v > 0.0 ? 1.0 : 0.0;
    Grid s = random_grid(64, 64, 1, rng);
    for (double& v : s.data) v = 0.5 * (v + 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(sodkd::weighted_f(s, g));
        benchmark::DoNotOptimize(sodkd::f_curve(s, g).data());
    }
}
BENCHMARK(BM_EvaluateMap);

BENCHMARK_MAIN();
