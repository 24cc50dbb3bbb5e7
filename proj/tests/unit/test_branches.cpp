#include <doctest.h>

#include <cmath>
#include <random>

#include "ssankit/global_branch.hpp"
#include "ssankit/pfl.hpp"
#include "ssankit/prl.hpp"
#include "test_support.hpp"

using namespace ssankit;
using namespace testsupport;

namespace {

WordBank bank(const Tensor& m, std::size_t valid) {
    std::vector<bool> mask(m.dim(1), false);
    for (std::size_t i = 0; i < valid; ++i) mask[i] = true;
    return {ag::constant(m), mask};
}

void set_identity(const Linear& l) {
    ag::Var w = l.weight();
    for (std::size_t r = 0; r < w.shape()[0]; ++r)
        for (std::size_t c = 0; c < w.shape()[1]; ++c) w.mutable_value().at(r, c) = r == c ? 1.0 : 0.0;
    if (l.bias().defined()) {
        ag::Var b = l.bias();
        b.mutable_value().fill(0.0);
    }
}

Vec value(const ag::Var& v) { return ref::to_vec(v.value()); }

} // namespace

TEST_SUITE("global_branch") {

TEST_CASE("visual max pooling") {
    Tensor f(Shape{3, 2, 2});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i) f[c * 4 + i] = static_cast<double>(c) - 0.5;
    CHECK(value(pool_visual_global({ag::constant(f)})) == Vec{-0.5, 0.5, 1.5});
    f.at(1, 1, 0) = 9.0;
    CHECK(value(pool_visual_global({ag::constant(f)})) == Vec{-0.5, 9.0, 1.5});

    std::mt19937_64 rng(1);
    const Tensor r = random_tensor(rng, Shape{4, 3, 5});
    const Vec got = value(pool_visual_global({ag::constant(r)}));
    for (std::size_t c = 0; c < 4; ++c) {
        double m = -1e300;
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t w = 0; w < 5; ++w) m = std::max(m, r.at(c, h, w));
        CHECK(got[c] == m);
    }
}

TEST_CASE("text max pooling over valid columns") {
    std::mt19937_64 rng(2);
    const Tensor one = random_tensor(rng, Shape{3, 4});
    const Vec got1 = value(pool_text_global(bank(one, 1)));
    for (std::size_t c = 0; c < 3; ++c) CHECK(got1[c] == one.at(c, 0));

    const Tensor e = random_tensor(rng, Shape{3, 6});
    const Vec base = value(pool_text_global(bank(e, 4)));
    Tensor padded = e;
    for (std::size_t c = 0; c < 3; ++c) padded.at(c, 5) = 100.0;
    CHECK(value(pool_text_global(bank(padded, 4))) == base);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = -1e300;
        for (std::size_t i = 0; i < 4; ++i) m = std::max(m, e.at(c, i));
        CHECK(base[c] == m);
    }
}

TEST_CASE("identity projection is a no-op") {
    ParameterStore store(3);
    GlobalBranch g(store, 4, 4);
    set_identity(g.projection());
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor(rng, Shape{4});
    CHECK(project_global(ag::constant(x), g.projection()).value() == x);
    CHECK(ModelConfig::reference().embed_dim == 1024);
}

TEST_CASE("cosine examples and degenerate input") {
    const Vec x{0.3, -1.2, 2.0};
    const Vec neg{-0.3, 1.2, -2.0};
    CHECK(cosine(x, x) == doctest::Approx(1.0));
    CHECK(cosine(x, neg) == doctest::Approx(-1.0));
    CHECK(cosine(Vec{1, 0}, Vec{1, 1}) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK_THROWS(cosine(Vec{0, 0}, Vec{1, 1}));
}

} // TEST_SUITE

TEST_SUITE("pfl") {

TEST_CASE("zero scorer gives 0.5 everywhere; scores stay in (0, 1)") {
    ParameterStore store(4);
    WordAttention wam(store, 3, 4);
    std::mt19937_64 rng(4);
    const WordBank e = bank(random_tensor(rng, Shape{4, 5}, -50.0, 50.0), 5);
    const Tensor neutral = wam(e).scores.value();
    for (double s : neutral.values()) CHECK(s == 0.5);
    ag::Var w = wam.weight();
    randomize(w, rng, -0.1, 0.1);
    const Tensor trained = wam(e).scores.value();
    for (double s : trained.values()) {
        CHECK(s > 0.0);
        CHECK(s < 1.0);
    }
}

TEST_CASE("weighted word bank scales columns") {
    std::mt19937_64 rng(5);
    const WordBank e = bank(random_tensor(rng, Shape{3, 4}), 4);
    auto scores_of = [](const Tensor& s) { return WordPartScores{ag::constant(s), std::vector<bool>(4, true)}; };
    CHECK(weight_text(e, scores_of(Tensor(Shape{2, 4}, 1.0)), 1).matrix.value() == e.matrix.value());
    const Tensor half = weight_text(e, scores_of(Tensor(Shape{2, 4}, 0.5)), 0).matrix.value();
    for (std::size_t i = 0; i < 12; ++i) CHECK(half[i] == e.matrix.value()[i] / 2.0);

    const Tensor s = random_tensor(rng, Shape{2, 4}, 0.0, 1.0);
    const Tensor w1 = weight_text(e, scores_of(s), 1).matrix.value();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i) CHECK(w1.at(c, i) == doctest::Approx(e.matrix.value().at(c, i) * s.at(1, i)));
    CHECK_THROWS(weight_text(e, scores_of(s), 2));
}

TEST_CASE("identity part projection on one word gives s e") {
    ParameterStore store(6);
    Linear proj(store, "p", 3, 3);
    set_identity(proj);
    const Tensor e = Tensor(Shape{3, 1}, std::vector<double>{0.2, -0.4, 0.9});
    const WordPartScores s{ag::constant(Tensor(Shape{1, 1}, 0.3)), {true}};
    const Tensor t = textual_part_feature(weight_text(bank(e, 1), s, 0), proj).value();
    for (std::size_t c = 0; c < 3; ++c) CHECK(t[c] == doctest::Approx(0.3 * e[c]));
}

TEST_CASE("row max of scaled columns matches a loop") {
    std::mt19937_64 rng(7);
    ParameterStore store(7);
    PartFeatureLearning pfl(store, 3, 4, 5);
    ag::Var w = pfl.attention().weight();
    randomize(w, rng);
    const WordBank e = bank(random_tensor(rng, Shape{4, 6}), 4);
    WordPartScores scores;
    const auto parts = pfl.textual(e, &scores);
    for (std::size_t k = 0; k < 3; ++k) {
        Vec pooled(4, -1e300);
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < 4; ++i) pooled[c] = std::max(pooled[c], e.matrix.value().at(c, i) * scores.at(k, i));
        Vec expected = ref::matvec(ref::to_mat(pfl.projection(k).weight().value()), pooled);
        const Vec b = ref::to_vec(pfl.projection(k).bias().value());
        for (std::size_t j = 0; j < 5; ++j) CHECK(parts[k].value()[j] == doctest::Approx(expected[j] + b[j]));
    }
}

TEST_CASE("part similarity") {
    std::mt19937_64 rng(8);
    const Tensor a = random_tensor(rng, Shape{9}), b = random_tensor(rng, Shape{9});
    CHECK(part_similarity(ag::constant(a), ag::constant(a)).item() == doctest::Approx(1.0));
    CHECK(part_similarity(ag::constant(a), ag::constant(b)).item() == doctest::Approx(ref::cosine(ref::to_vec(a), ref::to_vec(b))));
    // K = 1: the concatenation is the single part.
    const std::vector<ag::Var> one{ag::constant(a)}, other{ag::constant(b)};
    CHECK(part_similarity(ag::concat(one), ag::concat(other)).item() == doctest::Approx(cosine(a.values(), b.values())));
}

} // TEST_SUITE

TEST_SUITE("prl") {

TEST_CASE("softmax over hand-set cosines") {
    ParameterStore store(9);
    MultiViewNonLocal prl(store, 3, 2, 2, 2);
    for (std::size_t k = 0; k < 3; ++k) {
        set_identity(prl.theta(k));
        set_identity(prl.phi(k));
    }
    const double pi = std::acos(-1.0);
    auto unit = [](double angle) { return ag::constant(Tensor::vector({std::cos(angle), std::sin(angle)})); };
    std::vector<ag::Var> parts{unit(0.0), unit(pi / 3.0), unit(2.0 * pi / 3.0)};
    const Tensor a = prl.relation_weights(parts, 0).value();
    CHECK(a[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(a[1] == doctest::Approx(0.2689).epsilon(1e-4));

    std::vector<ag::Var> equal{unit(0.0), unit(pi / 2.0), unit(-pi / 2.0)};
    const Tensor u = prl.relation_weights(equal, 0).value();
    CHECK(u[0] == doctest::Approx(0.5));
    CHECK(u[1] == doctest::Approx(0.5));
}

TEST_CASE("aggregation cases") {
    std::mt19937_64 rng(10);
    ParameterStore store(10);
    MultiViewNonLocal prl(store, 3, 4, 3, 2);
    std::vector<ag::Var> parts;
    for (int i = 0; i < 3; ++i) parts.push_back(ag::constant(random_tensor(rng, Shape{4})));
    const Mat gamma1 = ref::to_mat(prl.gamma(1).weight().value());
    const Vec gbias = ref::to_vec(prl.gamma(1).bias().value());

    // One-hot on part 2 for query 1 (weights are ordered over parts {0, 2}).
    const Tensor got = prl.aggregate(parts, ag::constant(Tensor::vector({0.0, 1.0})), 1).value();
    const Vec key2 = ref::matvec(ref::to_mat(prl.phi(2).weight().value()), value(parts[2]));
    const Vec expected = ref::matvec(gamma1, key2);
    for (std::size_t j = 0; j < 4; ++j) CHECK(got[j] == doctest::Approx(expected[j] + gbias[j]));

    // Explicit weighted sum.
    const Tensor w = Tensor::vector({0.3, 0.7});
    const Vec k0 = ref::matvec(ref::to_mat(prl.phi(0).weight().value()), value(parts[0]));
    Vec mix(3);
    for (std::size_t j = 0; j < 3; ++j) mix[j] = 0.3 * k0[j] + 0.7 * key2[j];
    const Vec e2 = ref::matvec(gamma1, mix);
    const Tensor got2 = prl.aggregate(parts, ag::constant(w), 1).value();
    for (std::size_t j = 0; j < 4; ++j) CHECK(got2[j] == doctest::Approx(e2[j] + gbias[j]));

    CHECK_THROWS(prl.aggregate(parts, ag::constant(Tensor::vector({1.0})), 1));
}

TEST_CASE("uniform weights over identical parts and one shared key") {
    std::mt19937_64 rng(11);
    ParameterStore store(11);
    MultiViewNonLocal prl(store, 3, 4, 3, 2);
    ag::Var phi0 = prl.phi(0).weight();
    for (std::size_t k = 1; k < 3; ++k) {
        ag::Var p = prl.phi(k).weight();
        p.mutable_value() = phi0.value();
    }
    const ag::Var v = ag::constant(random_tensor(rng, Shape{4}));
    const std::vector<ag::Var> parts{v, v, v};
    const Tensor got = prl.aggregate(parts, ag::constant(Tensor::vector({0.5, 0.5})), 0).value();
    const Vec key = ref::matvec(ref::to_mat(phi0.value()), value(v));
    const Vec expected = ref::matvec(ref::to_mat(prl.gamma(0).weight().value()), key);
    for (std::size_t j = 0; j < 4; ++j) CHECK(got[j] == doctest::Approx(expected[j] + prl.gamma(0).bias().value()[j]));
}

TEST_CASE("relation feature is the output map of the residual sum") {
    std::mt19937_64 rng(12);
    ParameterStore store(12);
    MultiViewNonLocal prl(store, 2, 4, 3, 3);
    const ag::Var zero = ag::constant(Tensor(Shape{4}, 0.0));
    const Tensor a = random_tensor(rng, Shape{4}), b = random_tensor(rng, Shape{4});
    const Vec wa = ref::matvec(ref::to_mat(prl.output(1).weight().value()), ref::to_vec(a));
    const Tensor fa = prl.relation_feature(ag::constant(a), zero, 1).value();
    for (std::size_t j = 0; j < 3; ++j) CHECK(fa[j] == doctest::Approx(wa[j]));

    Tensor ab = a;
    for (std::size_t i = 0; i < 4; ++i) ab[i] += b[i];
    const Tensor fab = prl.relation_feature(ag::constant(ab), zero, 1).value();
    const Tensor fb = prl.relation_feature(ag::constant(b), zero, 1).value();
    for (std::size_t j = 0; j < 3; ++j) CHECK(fab[j] == doctest::Approx(fa[j] + fb[j]));

    const Tensor agg = random_tensor(rng, Shape{4});
    const Vec expected = ref::matvec(ref::to_mat(prl.output(0).weight().value()), ref::to_vec(ab));
    Tensor a_plus = a;
    Tensor rest = agg;
    for (std::size_t i = 0; i < 4; ++i) rest[i] = ab[i] - a[i];
    const Tensor got = prl.relation_feature(ag::constant(a_plus), ag::constant(rest), 0).value();
    for (std::size_t j = 0; j < 3; ++j) CHECK(got[j] == doctest::Approx(expected[j]));
}

TEST_CASE("relation similarity") {
    std::mt19937_64 rng(13);
    const Tensor a = random_tensor(rng, Shape{6}), b = random_tensor(rng, Shape{6});
    Tensor neg = a;
    for (double& x : neg.values()) x = -x;
    CHECK(relation_similarity(ag::constant(a), ag::constant(a)).item() == doctest::Approx(1.0));
    CHECK(relation_similarity(ag::constant(a), ag::constant(neg)).item() == doctest::Approx(-1.0));
    CHECK(relation_similarity(ag::constant(a), ag::constant(b)).item() ==
          doctest::Approx(ref::cosine(ref::to_vec(a), ref::to_vec(b))));
}

TEST_CASE("fewer than two parts is a configuration error") {
    ParameterStore store(14);
    CHECK_THROWS_AS(MultiViewNonLocal(store, 1, 4, 3, 2), ConfigError);
    ModelConfig m = ModelConfig::tiny();
    m.parts = 1;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m.use_prl = false;
    CHECK_NOTHROW(m.validate());
    CHECK(ModelConfig::reference().relation_dim == 512);
}

} // TEST_SUITE
