#include "ssankit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssankit/global_branch.hpp"
#include "ssankit/mining.hpp"

namespace ssankit {

HardNegatives mine_hard_negatives(const Tensor& similarity, std::span<const std::int64_t> identities) {
    const std::size_t b = identities.size();
    if (similarity.rank() != 2 || similarity.dim(0) != b || similarity.dim(1) != b)
        throw std::invalid_argument("similarity matrix must be batch x batch");
    HardNegatives out;
    out.text.resize(b);
    out.image.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best_text = b, best_image = b;
        for (std::size_t j = 0; j < b; ++j) {
            if (identities[j] == identities[i]) continue;
            if (best_text == b || similarity.at(i, j) > similarity.at(i, best_text)) best_text = j;
            if (best_image == b || similarity.at(j, i) > similarity.at(best_image, i)) best_image = j;
        }
        if (best_text == b) throw std::invalid_argument("no negatives available");
        out.text[i] = best_text;
        out.image[i] = best_image;
    }
    return out;
}

PairScores PairScoreVars::values() const {
    return {pp.item(), pn.item(), np.item(), pp_weak.item(), np_weak.item()};
}

double ranking_loss(const PairScores& s, double margin) {
    return std::max(margin - s.pp + s.pn, 0.0) + std::max(margin - s.pp + s.np, 0.0);
}

namespace {

ag::Var hinge(double margin, const ag::Var& positive, const ag::Var& negative) {
    // max(margin - positive + negative, 0)
    const ag::Var shift = ag::constant(Tensor::scalar(margin));
    return ag::relu(ag::add(shift, ag::sub(negative, positive)));
}

} // namespace

ag::Var ranking_loss(const PairScoreVars& s, double margin) {
    return ag::add(hinge(margin, s.pp, s.pn), hinge(margin, s.pp, s.np));
}

double adaptive_margin(double s_pp, double s_pp_weak, double margin, bool strict) {
    double lambda;
    if (strict) {
        lambda = std::min(s_pp_weak / s_pp, 1.0);
    } else if (std::abs(s_pp) < 1e-6) {
        lambda = 1.0;
    } else {
        lambda = std::clamp(s_pp_weak / s_pp, 0.0, 1.0);
    }
    return (lambda + 1.0) * margin / 2.0;
}

double compound_ranking_loss(const PairScores& s, const LossConfig& cfg) {
    const double strong = ranking_loss(s, cfg.margin);
    if (cfg.beta == 0.0) return strong;
    const double a2 = adaptive_margin(s.pp, s.pp_weak, cfg.margin, cfg.strict_lambda);
    const double weak = std::max(a2 - s.pp_weak + s.pn, 0.0) + std::max(a2 - s.pp_weak + s.np_weak, 0.0);
    return strong + cfg.beta * weak;
}

ag::Var compound_ranking_loss(const PairScoreVars& s, const LossConfig& cfg) {
    ag::Var strong = ranking_loss(s, cfg.margin);
    if (cfg.beta == 0.0) return strong;
    const double a2 = adaptive_margin(s.pp.item(), s.pp_weak.item(), cfg.margin, cfg.strict_lambda);
    ag::Var weak = ag::add(hinge(a2, s.pp_weak, s.pn), hinge(a2, s.pp_weak, s.np_weak));
    return ag::add(strong, ag::scale(weak, cfg.beta));
}

ag::Var id_loss(const ag::Var& feature, std::size_t identity, const Linear& classifier) {
    return ag::cross_entropy(classifier(feature), identity);
}

nlohmann::json LossBreakdown::to_json() const {
    nlohmann::json j;
    j["step"] = step;
    for (const auto& [k, v] : terms) j[k] = v;
    j["total"] = total;
    return j;
}

namespace {

Tensor similarity_matrix(const StreamBatch& s) {
    const std::size_t b = s.images.size();
    Tensor out(Shape{b, b});
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t c = 0; c < b; ++c) out.at(r, c) = cosine(s.images[r].value().values(), s.texts[c].value().values());
    return out;
}

} // namespace

LossResult total_loss(std::span<const StreamBatch> streams, std::span<const std::int64_t> identities,
                      std::span<const std::size_t> labels, const LossConfig& cfg) {
    const std::size_t b = identities.size();
    if (b == 0) throw std::invalid_argument("empty batch");
    if (labels.size() != b) throw std::invalid_argument("label count mismatch");

    LossResult result;
    std::vector<ag::Var> weighted;
    for (const StreamBatch& s : streams) {
        if (s.images.size() != b || s.texts.size() != b || s.weak_texts.size() != b)
            throw std::invalid_argument("stream " + s.name + " does not match the batch size");

        const HardNegatives neg = mine_hard_negatives(similarity_matrix(s), identities);
        std::vector<ag::Var> cr_terms;
        for (std::size_t i = 0; i < b; ++i) {
            PairScoreVars p;
            p.pp = ag::cosine(s.images[i], s.texts[i]);
            p.pn = ag::cosine(s.images[i], s.texts[neg.text[i]]);
            p.np = ag::cosine(s.images[neg.image[i]], s.texts[i]);
            p.pp_weak = ag::cosine(s.images[i], s.weak_texts[i]);
            p.np_weak = ag::cosine(s.images[neg.image[i]], s.weak_texts[i]);
            cr_terms.push_back(compound_ranking_loss(p, cfg));
        }
        const ag::Var cr = ag::scale(ag::add_n(cr_terms), 1.0 / static_cast<double>(b));
        result.breakdown.terms["L_cr_" + s.name] = cr.item();
        ag::Var stream_loss = cr;

        if (cfg.use_id_loss && !s.classifiers.empty()) {
            std::vector<ag::Var> id_terms;
            for (std::size_t i = 0; i < b; ++i) {
                if (s.image_pieces.at(i).size() != s.classifiers.size() || s.text_pieces.at(i).size() != s.classifiers.size())
                    throw std::invalid_argument("stream " + s.name + " has mismatched classifier positions");
                for (std::size_t k = 0; k < s.classifiers.size(); ++k) {
                    id_terms.push_back(id_loss(s.image_pieces[i][k], labels[i], s.classifiers[k]));
                    id_terms.push_back(id_loss(s.text_pieces[i][k], labels[i], s.classifiers[k]));
                }
            }
            const ag::Var id = ag::scale(ag::add_n(id_terms), 1.0 / static_cast<double>(b));
            result.breakdown.terms["L_id_" + s.name] = id.item();
            stream_loss = ag::add(stream_loss, ag::scale(id, cfg.id_weight));
        }
        weighted.push_back(ag::scale(stream_loss, s.weight));
    }
    result.total = weighted.empty() ? ag::constant(Tensor::scalar(0.0)) : ag::add_n(weighted);
    result.breakdown.total = result.total.item();
    return result;
}

} // namespace ssankit
