// Acceptance suite. Prints one PASS/FAIL line per criterion; exit status is non-zero if any fails.
// Usage: ssankit_acceptance [--only N]...

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssankit/eval_retrieval.hpp"
#include "ssankit/train_engine.hpp"
#include "test_support.hpp"

using namespace ssankit;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

void report(int n, const Outcome& o) {
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
}

// Runs one doctest suite in-process.
Outcome run_suite(const char* suite, double limit_seconds) {
    const auto start = Clock::now();
    doctest::Context ctx;
    ctx.setOption("test-suite", suite);
    ctx.setOption("no-version", true);
    const int failed = ctx.run();
    const double t = seconds_since(start);
    return {failed == 0 && t < limit_seconds,
            std::string("suite '") + suite + "' " + (failed == 0 ? "passed" : "failed") + fmt(" in %.1f s", t) +
                fmt(" (limit %.0f s)", limit_seconds)};
}

enum class Variant { Global, GlobalPfl, Full };

const char* variant_name(Variant v) {
    switch (v) {
    case Variant::Global: return "global";
    case Variant::GlobalPfl: return "global+pfl";
    case Variant::Full: return "full";
    }
    return "?";
}

ExperimentConfig recipe(Variant v, std::uint64_t seed) {
    ExperimentConfig c = ExperimentConfig::desk_scale();
    c.model.init_seed = seed;
    c.train.seed = seed;
    if (v != Variant::Full) {
        c.model.use_prl = false;
        c.loss.beta = 0.0;
    }
    if (v == Variant::Global) c.model.use_pfl = false;
    return c;
}

struct Run {
    TrainResult result;
    RetrievalResult eval;
    double seconds = 0.0;
};

class Bench {
public:
    Bench() {
        SyntheticSpec spec;
        spec.identities = 50;
        spec.images_per_identity = 4;
        spec.test_identities = 10;
        spec.seed = 7;
        data_ = generate_synthetic(spec);
        splits_.train = data_.train;
        splits_.test = data_.test;
    }

    const std::vector<DatasetRecord>& test() const { return data_.test; }
    const DatasetSplits& splits() const { return splits_; }

    const Run& get(Variant v, std::uint64_t seed) {
        const auto key = std::make_pair(v, seed);
        if (auto it = runs_.find(key); it != runs_.end()) return it->second;
        return runs_.emplace(key, fresh(v, seed)).first->second;
    }

    Run fresh(Variant v, std::uint64_t seed, const TrainOptions& opts = {}) const {
        const auto start = Clock::now();
        TrainResult r = train(recipe(v, seed), splits_, opts);
        RetrievalResult e = evaluate(r.trained, data_.test, {});
        Run run{std::move(r), std::move(e), seconds_since(start)};
        std::cout << "  [" << variant_name(v) << " seed " << seed << "] rank1 " << fmt("%.3f", run.eval.rank1)
                  << fmt("  %.1f s", run.seconds) << std::endl;
        return run;
    }

private:
    SyntheticDataset data_;
    DatasetSplits splits_;
    std::map<std::pair<Variant, std::uint64_t>, Run> runs_;
};

Outcome criterion4(Bench& b) {
    std::vector<double> r1;
    double total = 0.0;
    for (std::uint64_t s : {1u, 2u, 3u}) {
        const Run& run = b.get(Variant::Full, s);
        r1.push_back(run.eval.rank1);
        total += run.seconds;
    }
    const double med = median(r1);
    const bool epochs_ok = recipe(Variant::Full, 1).train.epochs <= 30;
    return {med >= 0.90 && total < 600.0 && epochs_ok,
            "median Rank-1 " + fmt("%.3f", med) + " over seeds 1-3 (need >= 0.90), " + fmt("%.0f s", total) +
                " total (limit 600 s)"};
}

Outcome criterion5(Bench& b) {
    const std::vector<Variant> order{Variant::Global, Variant::GlobalPfl, Variant::Full};
    std::vector<double> med;
    for (Variant v : order) {
        std::vector<double> r1;
        for (std::uint64_t s = 1; s <= 5; ++s) r1.push_back(b.get(v, s).eval.rank1);
        med.push_back(median(r1));
    }
    const double band = 0.02 + 1e-12;
    const bool ok = med[1] >= med[0] - band && med[2] >= med[1] - band;
    return {ok, "median Rank-1 over 5 seeds: global " + fmt("%.3f", med[0]) + ", global+pfl " + fmt("%.3f", med[1]) +
                    ", full " + fmt("%.3f", med[2]) + " (2 pp band)"};
}

// Fraction of test captions whose first token from `words` has its attention argmax in `band`.
double band_fraction(const TrainedModel& tm, const std::vector<DatasetRecord>& test, const std::set<std::string>& words,
                     std::size_t band) {
    std::size_t seen = 0, hits = 0;
    for (const auto& r : test)
        for (const auto& c : r.captions) {
            const WamDump d = wam_inspect(tm, c);
            for (std::size_t i = 0; i < d.tokens.size(); ++i) {
                if (!words.contains(d.tokens[i])) continue;
                std::size_t best = 0;
                for (std::size_t k = 1; k < d.scores.size(); ++k)
                    if (d.scores[k][i] > d.scores[best][i]) best = k;
                ++seen;
                hits += best == band;
                break;
            }
        }
    return seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
}

Outcome criterion6(Bench& b) {
    std::vector<double> top, bottom;
    std::ostringstream per_seed;
    for (std::uint64_t s : {1u, 2u, 3u}) {
        const TrainedModel& tm = b.get(Variant::Full, s).result.trained;
        const std::size_t k = tm.config.model.parts;
        top.push_back(band_fraction(tm, b.test(), {"hat"}, 0));
        bottom.push_back(band_fraction(tm, b.test(), {"shoes", "boots"}, k - 1));
        per_seed << " s" << s << "=" << fmt("%.2f", top.back()) << "/" << fmt("%.2f", bottom.back());
    }
    const double t = median(top), f = median(bottom);
    return {t >= 0.80 && f >= 0.80, "head-word top-band " + fmt("%.3f", t) + ", feet-word bottom-band " +
                                        fmt("%.3f", f) + " (median over seeds, need >= 0.80; per seed" +
                                        per_seed.str() + ")"};
}

Outcome criterion7(Bench& b) {
    const Run& first = b.get(Variant::Full, 1);
    testsupport::TempDir dir("acceptance");
    TrainOptions opts;
    opts.out_dir = dir.path();
    opts.checkpoint_every = 0;
    const Run again = b.fresh(Variant::Full, 1, opts);
    const std::string a = first.eval.metrics().dump(), c = again.eval.metrics().dump();
    const bool rerun_ok = a == c;
    const std::string loaded = evaluate_checkpoint(*again.result.checkpoint, b.test(), {}).metrics().dump();
    const bool reload_ok = loaded == c;
    return {rerun_ok && reload_ok, std::string("rerun metrics ") + (rerun_ok ? "identical" : "differ") +
                                       ", save-load-evaluate metrics " + (reload_ok ? "identical" : "differ")};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only.insert(std::atoi(argv[++i]));
        else {
            std::cerr << "usage: " << argv[0] << " [--only N]..." << std::endl;
            return 2;
        }
    }
    auto wanted = [&](int n) { return only.empty() || only.contains(n); };

    std::map<int, Outcome> results;
    if (wanted(1)) results[1] = run_suite("invariants", 60.0);
    if (wanted(2)) results[2] = run_suite("gradients", 120.0);
    if (wanted(3)) results[3] = run_suite("oracles", 60.0);

    Bench bench;
    if (wanted(4)) results[4] = criterion4(bench);
    if (wanted(5)) results[5] = criterion5(bench);
    if (wanted(6)) results[6] = criterion6(bench);
    if (wanted(7)) results[7] = criterion7(bench);

    std::cout << "\n";
    bool all = true;
    for (const auto& [n, o] : results) {
        report(n, o);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
