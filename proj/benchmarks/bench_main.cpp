#include <benchmark/benchmark.h>

#include <random>

#include "ssankit/eval_retrieval.hpp"
#include "ssankit/model.hpp"

using namespace ssankit;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
    std::normal_distribution<double> d;
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v));
}

TokenizedCaption random_caption(std::mt19937_64& rng, std::size_t rows, std::size_t n, std::size_t n_max) {
    TokenizedCaption t;
    t.valid_length = n;
    for (std::size_t i = 0; i < n; ++i)
        t.ids.push_back(static_cast<std::int32_t>(2 + rng() % (rows - 2)));
    t.ids.resize(n_max, Vocabulary::kPad);
    return t;
}

ModelConfig bench_model() {
    ModelConfig c = ModelConfig::tiny();
    c.vocab_rows = 64;
    c.num_identities = 40;
    return c;
}

void BM_Conv2d(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    const ag::Var x = ag::constant(random_tensor(rng, Shape{c, 48, 16}));
    const ag::Var w = ag::constant(random_tensor(rng, Shape{c, c, 3, 3}));
    const ag::Var b = ag::constant(Tensor(Shape{c}, 0.0));
    ag::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_TextEncode(benchmark::State& state) {
    const SsanModel m(bench_model());
    std::mt19937_64 rng(2);
    const auto t = random_caption(rng, 64, static_cast<std::size_t>(state.range(0)), m.config().text.max_length);
    ag::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(m.encode_text(t));
}
BENCHMARK(BM_TextEncode)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_ImageEncode(benchmark::State& state) {
    const SsanModel m(bench_model());
    std::mt19937_64 rng(3);
    const Tensor img = random_tensor(rng, Shape{3, 96, 32});
    ag::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(m.encode_image(img));
}
BENCHMARK(BM_ImageEncode)->Unit(benchmark::kMillisecond);

void BM_TrainingStepPair(benchmark::State& state) {
    SsanModel m(bench_model());
    std::mt19937_64 rng(4);
    const Tensor img = random_tensor(rng, Shape{3, 96, 32});
    const auto t = random_caption(rng, 64, 16, m.config().text.max_length);
    for (auto _ : state) {
        auto [v, x] = m.forward(img, t);
        ag::Var loss = ag::cosine(v.relation_concat(), x.relation_concat());
        m.parameters().zero_grad();
        ag::backward(loss);
    }
}
BENCHMARK(BM_TrainingStepPair)->Unit(benchmark::kMillisecond);

void BM_ScoreMatrix(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(5);
    auto table = [&](std::size_t rows) {
        FeatureTable f;
        for (std::size_t i = 0; i < rows; ++i) {
            f.identities.push_back(static_cast<std::int64_t>(i));
            f.refs.emplace_back();
            f.global.push_back(random_tensor(rng, Shape{32}).storage());
            f.parts.push_back(random_tensor(rng, Shape{96}).storage());
            f.relations.push_back(random_tensor(rng, Shape{48}).storage());
        }
        return f;
    };
    const FeatureTable q = table(n), g = table(n);
    for (auto _ : state) benchmark::DoNotOptimize(score_matrix(q, g));
    state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}
BENCHMARK(BM_ScoreMatrix)->Arg(40)->Arg(160)->Arg(640)->Unit(benchmark::kMillisecond)->Complexity();

} // namespace

BENCHMARK_MAIN();
