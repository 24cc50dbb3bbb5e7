#pragma once

// Shared fixtures and reference implementations for the test binaries.
// Everything under `ref` is written from the definitions with plain loops and never calls into ssankit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ssankit/autograd.hpp"
#include "ssankit/config.hpp"
#include "ssankit/data_ingest.hpp"
#include "ssankit/tensor.hpp"

namespace testsupport {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, Mat[r][c]

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Vec v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline ssankit::Tensor random_tensor(std::mt19937_64& rng, ssankit::Shape shape, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = ssankit::shape_size(shape);
    return ssankit::Tensor(std::move(shape), random_vec(rng, n, lo, hi));
}

inline void randomize(ssankit::ag::Var& v, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    for (double& x : v.mutable_value().values()) x = std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Small but complete model geometry: 96x32 input, stride 16, H=6, K=3.
inline ssankit::ModelConfig micro_model(std::size_t vocab_rows = 12, std::size_t identities = 4) {
    ssankit::ModelConfig c = ssankit::ModelConfig::tiny();
    c.visual.channels = 8;
    c.text.embedding_dim = 6;
    c.text.max_length = 8;
    c.embed_dim = 8;
    c.relation_dim = 6;
    c.relation_out = 4;
    c.vocab_rows = vocab_rows;
    c.num_identities = identities;
    return c;
}

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("ssankit-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Small synthetic corpus with inline rasters.
inline ssankit::SyntheticDataset small_corpus(std::size_t identities = 6, std::size_t images = 2,
                                              std::size_t test_identities = 2, std::uint64_t seed = 7) {
    ssankit::SyntheticSpec spec;
    spec.identities = identities;
    spec.images_per_identity = images;
    spec.test_identities = test_identities;
    spec.seed = seed;
    return ssankit::generate_synthetic(spec);
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Relative error with a small floor so entries whose true derivative is ~0 are judged absolutely.
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Central differences of the scalar `f` against reverse-mode gradients, for every entry of `leaves`.
inline GradCheck grad_check(const std::function<ssankit::ag::Var()>& f, std::vector<ssankit::ag::Var> leaves,
                            double step = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    const ssankit::ag::Var root = f();
    ssankit::ag::backward(root);
    std::vector<ssankit::Tensor> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad().empty() ? ssankit::Tensor(l.shape(), 0.0) : l.grad());

    GradCheck out;
    ssankit::ag::NoGradGuard guard;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto values = leaves[li].mutable_value().values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = f().item();
            values[i] = saved - step;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[li][i], numeric));
            ++out.checked;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference implementations

namespace ref {

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double cosine(const Vec& a, const Vec& b) { return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b)); }

inline Vec matvec(const Mat& w, const Vec& x) {
    Vec y(w.size(), 0.0);
    for (std::size_t r = 0; r < w.size(); ++r)
        for (std::size_t c = 0; c < x.size(); ++c) y[r] += w[r][c] * x[c];
    return y;
}

inline Mat to_mat(const ssankit::Tensor& t) {
    Mat m(t.dim(0), Vec(t.dim(1)));
    for (std::size_t r = 0; r < t.dim(0); ++r)
        for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t[r * t.dim(1) + c];
    return m;
}

inline Vec to_vec(const ssankit::Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

inline Vec concat(const std::vector<Vec>& parts) {
    Vec out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

// Bidirectional hinge with margin a: [a - S(Ip,Dp) + S(Ip,Dn)]+ + [a - S(Ip,Dp) + S(In,Dp)]+.
inline double ranking(double pp, double pn, double np, double a) { return hinge(a - pp + pn) + hinge(a - pp + np); }

inline double adaptive_margin(double pp, double pp_weak, double a1, bool strict) {
    double lambda = pp_weak / pp;
    if (lambda > 1.0) lambda = 1.0;
    if (!strict) {
        if (std::fabs(pp) < 1e-6) lambda = 1.0;
        if (lambda < 0.0) lambda = 0.0;
    }
    return a1 * (lambda + 1.0) / 2.0;
}

inline double compound(double pp, double pn, double np, double pp_weak, double np_weak, double a1, double beta,
                       bool strict) {
    double loss = ranking(pp, pn, np, a1);
    if (beta != 0.0) {
        const double a2 = adaptive_margin(pp, pp_weak, a1, strict);
        loss += beta * (hinge(a2 - pp_weak + pn) + hinge(a2 - pp_weak + np_weak));
    }
    return loss;
}

// -log softmax(W x + b)[label], via a max-shifted log-sum-exp.
inline double id_loss(const Mat& w, const Vec& b, const Vec& x, std::size_t label) {
    Vec logits = matvec(w, x);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += b[i];
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    return m + std::log(z) - logits[label];
}

// Softmax over i != k of cos(theta_k v_k, phi_i v_i).
inline Vec relation_weights(const std::vector<Mat>& theta, const std::vector<Mat>& phi, const std::vector<Vec>& v,
                            std::size_t k) {
    const Vec q = matvec(theta[k], v[k]);
    Vec s;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (i != k) s.push_back(cosine(q, matvec(phi[i], v[i])));
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& x : s) z += (x = std::exp(x - m));
    for (double& x : s) x /= z;
    return s;
}

// Fraction of queries with a same-identity gallery item among the first k, ranking by descending score and
// breaking ties by gallery index. Positions are counted directly rather than by sorting.
inline double rank_k(const Mat& scores, const std::vector<std::int64_t>& qids, const std::vector<std::int64_t>& gids,
                     std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < scores.size(); ++q) {
        bool hit = false;
        for (std::size_t g = 0; g < gids.size() && !hit; ++g) {
            if (gids[g] != qids[q]) continue;
            std::size_t position = 0;
            for (std::size_t j = 0; j < gids.size(); ++j)
                if (scores[q][j] > scores[q][g] || (scores[q][j] == scores[q][g] && j < g)) ++position;
            hit = position < k;
        }
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

} // namespace ref

} // namespace testsupport
