// Invariants of the losses, the training engine, retrieval evaluation and the command line.

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "ssankit/eval_retrieval.hpp"
#include "ssankit/losses.hpp"
#include "ssankit/mining.hpp"
#include "ssankit/train_engine.hpp"
#include "test_support.hpp"

using namespace ssankit;
using namespace testsupport;

namespace {

PairScores random_scores(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return {u(rng), u(rng), u(rng), u(rng), u(rng)};
}

ExperimentConfig micro_experiment(std::uint64_t seed) {
    ExperimentConfig c;
    c.model = micro_model();
    c.model.init_seed = seed;
    c.train.batch_size = 4;
    c.train.images_per_identity = 2;
    c.train.epochs = 1;
    c.train.seed = seed;
    return c;
}

DatasetSplits splits_of(const SyntheticDataset& d) { return {d.train, {}, d.test, {}}; }

FeatureTable random_table(std::mt19937_64& rng, std::size_t n, std::size_t ids) {
    FeatureTable t;
    for (std::size_t i = 0; i < n; ++i) {
        t.identities.push_back(static_cast<std::int64_t>(i % ids));
        t.refs.push_back("r" + std::to_string(i));
        t.global.push_back(random_vec(rng, 4));
        t.parts.push_back(random_vec(rng, 6));
        t.relations.push_back(random_vec(rng, 3));
    }
    return t;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace

TEST_SUITE("invariants") {

TEST_CASE("ranking and compound ranking losses are non-negative, and beta = 0 gives the ranking loss") {
    std::mt19937_64 rng(51);
    LossConfig cfg;
    for (int trial = 0; trial < 500; ++trial) {
        const PairScores s = random_scores(rng);
        cfg.margin = std::uniform_real_distribution<double>(0.01, 1.99)(rng);
        cfg.beta = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        CHECK(ranking_loss(s, cfg.margin) >= 0.0);
        CHECK(compound_ranking_loss(s, cfg) >= 0.0);
        LossConfig zero = cfg;
        zero.beta = 0.0;
        CHECK(compound_ranking_loss(s, zero) == ranking_loss(s, cfg.margin));
    }
}

TEST_CASE("compound ranking loss is monotone in the positive and negative scores") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> bump(0.0, 0.5);
    LossConfig cfg;
    for (int trial = 0; trial < 500; ++trial) {
        const PairScores s = random_scores(rng);
        const double base = compound_ranking_loss(s, cfg);
        // alpha_2 depends on S_pp, so the positive direction is checked with the strong pair only.
        PairScores up = s;
        up.pp += bump(rng);
        LossConfig strong = cfg;
        strong.beta = 0.0;
        CHECK(compound_ranking_loss(up, strong) <= compound_ranking_loss(s, strong));
        for (double PairScores::*neg : {&PairScores::pn, &PairScores::np, &PairScores::np_weak}) {
            PairScores n = s;
            n.*neg += bump(rng);
            CHECK(compound_ranking_loss(n, cfg) >= base);
        }
    }
}

TEST_CASE("adaptive margin stays within [alpha_1 / 2, alpha_1]") {
    std::mt19937_64 rng(57);
    std::uniform_real_distribution<double> u(-1.0, 1.0), a(0.01, 1.99);
    for (int trial = 0; trial < 2000; ++trial) {
        const double a1 = a(rng);
        const double pp = trial % 10 == 0 ? 0.0 : u(rng);
        const double a2 = adaptive_margin(pp, u(rng), a1);
        CHECK(a2 >= a1 / 2.0);
        CHECK(a2 <= a1);
    }
}

TEST_CASE("hardest negatives are the in-batch argmax over other identities, lowest index on ties") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t b = 4 + rng() % 6;
        std::vector<std::int64_t> ids(b);
        for (auto& id : ids) id = static_cast<std::int64_t>(rng() % 3);
        ids[0] = 0;
        ids[1] = 1;
        Tensor s(Shape{b, b});
        // Coarse values so ties are common.
        for (double& x : s.values()) x = static_cast<double>(static_cast<int>(rng() % 5)) / 4.0;
        const HardNegatives neg = mine_hard_negatives(s, ids);
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t text = b, image = b;
            for (std::size_t j = 0; j < b; ++j) {
                if (ids[j] == ids[i]) continue;
                if (text == b || s.at(i, j) > s.at(i, text)) text = j;
                if (image == b || s.at(j, i) > s.at(image, i)) image = j;
            }
            CHECK(neg.text[i] == text);
            CHECK(neg.image[i] == image);
            CHECK(ids[neg.text[i]] != ids[i]);
            CHECK(ids[neg.image[i]] != ids[i]);
        }
    }
}

TEST_CASE("seed, config and data determine the parameter trajectory") {
    const auto d = small_corpus();
    const auto a = train(micro_experiment(5), splits_of(d));
    const auto b = train(micro_experiment(5), splits_of(d));
    CHECK(a.trained.model.parameters().snapshot() == b.trained.model.parameters().snapshot());
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].total == b.steps[i].total);
    const auto c = train(micro_experiment(6), splits_of(d));
    CHECK_FALSE(a.trained.model.parameters().snapshot() == c.trained.model.parameters().snapshot());
}

TEST_CASE("checkpoint round trip reproduces the forward pass bit for bit") {
    const auto d = small_corpus();
    TempDir dir("ckpt");
    TrainOptions opts;
    opts.out_dir = dir.path();
    const auto r = train(micro_experiment(9), splits_of(d), opts);
    REQUIRE(r.checkpoint);
    const TrainedModel loaded = load_checkpoint(*r.checkpoint);
    CHECK(loaded.model.parameters().snapshot() == r.trained.model.parameters().snapshot());
    CHECK(loaded.vocab == r.trained.vocab);
    CHECK(loaded.identity_labels == r.trained.identity_labels);

    const auto& rec = d.test[0];
    const Tensor image = record_tensor(rec, {}, loaded.config.model.visual);
    const auto t = tokenize(rec.captions[0], loaded.vocab, loaded.config.model.text.max_length);
    ag::NoGradGuard guard;
    auto [v1, t1] = r.trained.model.forward(image, t);
    auto [v2, t2] = loaded.model.forward(image, t);
    CHECK(v1.global.value() == v2.global.value());
    CHECK(t1.global.value() == t2.global.value());
    CHECK(v1.part_concat().value() == v2.part_concat().value());
    CHECK(t1.relation_concat().value() == t2.relation_concat().value());
}

TEST_CASE("sampler batches hold distinct identity blocks and weak companions share the identity") {
    const auto d = small_corpus(12, 3, 2);
    for (std::size_t q : {1u, 2u, 3u}) {
        const std::size_t batch = 4 * q;
        const BatchSampler sampler(d.train, batch, q);
        std::mt19937_64 rng(q);
        const auto batches = sampler.epoch(rng);
        CHECK_FALSE(batches.empty());
        std::set<std::size_t> seen;
        for (const auto& b : batches) {
            CHECK(b.size() % q == 0);
            CHECK(b.size() <= batch);
            std::set<std::int64_t> ids;
            for (std::size_t i = 0; i < b.size(); i += q) {
                const std::int64_t id = d.train[b[i]].identity;
                CHECK(ids.insert(id).second);
                for (std::size_t j = i; j < i + q; ++j) CHECK(d.train[b[j]].identity == id);
            }
            CHECK(ids.size() >= 2);
            seen.insert(b.begin(), b.end());
        }
        CHECK(*seen.rbegin() < d.train.size());
        for (std::size_t r = 0; r < d.train.size(); ++r) {
            const std::size_t w = sampler.weak_companion(r, rng);
            CHECK(w != r);
            CHECK(d.train[w].identity == d.train[r].identity);
        }
    }
}

TEST_CASE("rank-k is non-decreasing in k") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 50; ++trial) {
        const auto q = random_table(rng, 12, 5), g = random_table(rng, 15, 5);
        const auto rankings = rank_gallery(score_matrix(q, g));
        double prev = 0.0;
        for (std::size_t k = 1; k <= 15; ++k) {
            const double r = rank_k(rankings, q.identities, g.identities, k);
            CHECK(r >= prev);
            prev = r;
        }
        CHECK(prev == 1.0);
    }
}

TEST_CASE("fused scores are pairwise and independent of gallery order") {
    std::mt19937_64 rng(67);
    const auto q = random_table(rng, 6, 3), g = random_table(rng, 9, 3);
    const Tensor s = score_matrix(q, g);
    std::vector<std::size_t> perm(9);
    for (std::size_t i = 0; i < 9; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureTable shuffled;
    for (std::size_t i : perm) {
        shuffled.identities.push_back(g.identities[i]);
        shuffled.refs.push_back(g.refs[i]);
        shuffled.global.push_back(g.global[i]);
        shuffled.parts.push_back(g.parts[i]);
        shuffled.relations.push_back(g.relations[i]);
    }
    const Tensor s2 = score_matrix(q, shuffled);
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t j = 0; j < 9; ++j) {
            CHECK(s2.at(a, j) == s.at(a, perm[j]));
            CHECK(s.at(a, perm[j]) == fuse_scores(pair_similarity(q, a, g, perm[j])));
        }
    for (std::size_t k : {1u, 3u, 5u})
        CHECK(rank_k(rank_gallery(s), q.identities, g.identities, k) ==
              rank_k(rank_gallery(s2), q.identities, shuffled.identities, k));
}

TEST_CASE("positive monotone transforms of the fused score keep every ranking") {
    std::mt19937_64 rng(71);
    const auto q = random_table(rng, 10, 4), g = random_table(rng, 12, 4);
    const Tensor s = score_matrix(q, g);
    Tensor t = s;
    for (double& x : t.values()) x = std::exp(3.0 * x) + 0.25 * x * x * x + 7.0;
    CHECK(rank_gallery(s) == rank_gallery(t));
}

#ifdef SSANKIT_CLI_PATH
TEST_CASE("command line is deterministic, writes run manifests and keeps its exit codes") {
    TempDir dir("cli");
    const std::string cli = SSANKIT_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    const auto a = dir / "a", b = dir / "b";
    const std::string synth = " --identities 4 --images 2 --test-identities 1 --seed 3";
    REQUIRE(run("gen-synth" + synth + " --out " + a.string()) == 0);
    REQUIRE(run("gen-synth" + synth + " --out " + b.string()) == 0);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    CHECK(slurp(a / "images/00000_00.png") == slurp(b / "images/00000_00.png"));
    CHECK(std::filesystem::exists(a / "run_manifest.json"));

    CHECK(run("build-vocab --manifest " + (a / "manifest.jsonl").string() + " --out " + (dir / "v.json").string()) == 0);
    CHECK(std::filesystem::exists(dir / "v.json.run.json"));
    CHECK(run("build-vocab --manifest " + (dir / "missing.jsonl").string() + " --out " + (dir / "w.json").string()) ==
          1);
    CHECK(run("build-vocab --no-such-flag") == 2);
    CHECK(run("gen-synth --colors 1 --identities 20 --out " + (dir / "big").string()) == 1);

    std::ofstream(dir / "bad.json") << R"({"model": {"parts": 4}})";
    CHECK(run("train --manifest " + (a / "manifest.jsonl").string() + " --config " + (dir / "bad.json").string() +
              " --out " + (dir / "run").string()) == 2);
    CHECK_FALSE(std::filesystem::exists(dir / "run" / "train_log.jsonl"));
}
#endif

} // TEST_SUITE
