#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssankit/autograd.hpp"
#include "ssankit/config.hpp"
#include "ssankit/parameters.hpp"

namespace ssankit {

// The five cosine scores of one anchor pair. `pp_weak` is S(I_p, D'_p), `np_weak` is S(I_n, D'_p).
struct PairScores {
    double pp = 0.0;
    double pn = 0.0;  // S(I_p, D_n)
    double np = 0.0;  // S(I_n, D_p)
    double pp_weak = 0.0;
    double np_weak = 0.0;
};

struct PairScoreVars {
    ag::Var pp, pn, np, pp_weak, np_weak;

    PairScores values() const;
};

double ranking_loss(const PairScores& s, double margin);
ag::Var ranking_loss(const PairScoreVars& s, double margin);

// alpha_2 = (lambda + 1) alpha_1 / 2 with lambda = min(S_pp' / S_pp, 1).
// Unless `strict`, lambda is clamped to [0, 1] and taken as 1 when |S_pp| < 1e-6.
double adaptive_margin(double s_pp, double s_pp_weak, double margin, bool strict = false);

double compound_ranking_loss(const PairScores& s, const LossConfig& cfg);
// alpha_2 enters as a constant.
ag::Var compound_ranking_loss(const PairScoreVars& s, const LossConfig& cfg);

// Softmax cross-entropy of classifier(feature) against `identity`.
ag::Var id_loss(const ag::Var& feature, std::size_t identity, const Linear& classifier);

// One similarity stream of a batch (global, PFL or PRL), one entry per anchor.
struct StreamBatch {
    std::string name;
    double weight = 1.0;
    std::vector<ag::Var> images;        // concatenated visual features of I_p
    std::vector<ag::Var> texts;         // concatenated textual features of D_p
    std::vector<ag::Var> weak_texts;    // concatenated textual features of D'_p
    std::vector<std::vector<ag::Var>> image_pieces;  // per anchor, per classifier position
    std::vector<std::vector<ag::Var>> text_pieces;
    std::span<const Linear> classifiers;             // one per position, shared by both modalities
};

struct LossBreakdown {
    std::size_t step = 0;
    std::map<std::string, double> terms;  // unweighted, e.g. "L_cr_global", "L_id_pfl"
    double total = 0.0;

    nlohmann::json to_json() const;
};

struct LossResult {
    ag::Var total;
    LossBreakdown breakdown;
};

// Stream-weighted sum of the compound ranking loss and the ID losses, each averaged over anchors.
// `labels` are classifier indices; `identities` drive hard-negative mining.
LossResult total_loss(std::span<const StreamBatch> streams, std::span<const std::int64_t> identities,
                      std::span<const std::size_t> labels, const LossConfig& cfg);

} // namespace ssankit
