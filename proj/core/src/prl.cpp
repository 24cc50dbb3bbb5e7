#include "ssankit/prl.hpp"

#include <stdexcept>
#include <string>

#include "ssankit/config.hpp"

namespace ssankit {

MultiViewNonLocal::MultiViewNonLocal(ParameterStore& store, std::size_t parts, std::size_t embed_dim,
                                     std::size_t relation_dim, std::size_t out_dim) {
    if (parts < 2) throw ConfigError("relation learning requires K >= 2");
    for (std::size_t k = 0; k < parts; ++k) {
        const std::string p = "prl." + std::to_string(k);
        theta_.emplace_back(store, p + ".theta", relation_dim, embed_dim, false);
        phi_.emplace_back(store, p + ".phi", relation_dim, embed_dim, false);
        gamma_.emplace_back(store, p + ".gamma", embed_dim, relation_dim);
        output_.emplace_back(store, p + ".output", out_dim, embed_dim);
    }
}

void MultiViewNonLocal::check_parts(std::span<const ag::Var> parts, std::size_t k) const {
    if (parts.size() < 2) throw ConfigError("relation learning requires K >= 2");
    if (parts.size() != theta_.size()) {
        throw std::invalid_argument("expected " + std::to_string(theta_.size()) + " parts, got " +
                                    std::to_string(parts.size()));
    }
    if (k >= parts.size()) throw std::out_of_range("query part out of range");
}

ag::Var MultiViewNonLocal::weights_from_keys(const ag::Var& query, std::span<const ag::Var> keys, std::size_t k) const {
    std::vector<ag::Var> sims;
    for (std::size_t i = 0; i < keys.size(); ++i)
        if (i != k) sims.push_back(ag::cosine(query, keys[i]));
    return ag::softmax(ag::concat(sims));
}

ag::Var MultiViewNonLocal::mix_keys(std::span<const ag::Var> keys, const ag::Var& weights, std::size_t k) const {
    std::vector<ag::Var> terms;
    std::size_t j = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i == k) continue;
        terms.push_back(ag::scalar_times(ag::element(weights, j++), keys[i]));
    }
    return gamma_[k](ag::add_n(terms));
}

ag::Var MultiViewNonLocal::relation_weights(std::span<const ag::Var> parts, std::size_t k) const {
    check_parts(parts, k);
    std::vector<ag::Var> keys;
    for (std::size_t i = 0; i < parts.size(); ++i) keys.push_back(phi_[i](parts[i]));
    return weights_from_keys(theta_[k](parts[k]), keys, k);
}

ag::Var MultiViewNonLocal::aggregate(std::span<const ag::Var> parts, const ag::Var& weights, std::size_t k) const {
    check_parts(parts, k);
    if (weights.size() != parts.size() - 1) throw std::invalid_argument("relation weights must cover K-1 parts");
    std::vector<ag::Var> keys;
    for (std::size_t i = 0; i < parts.size(); ++i) keys.push_back(i == k ? parts[i] : phi_[i](parts[i]));
    return mix_keys(keys, weights, k);
}

ag::Var MultiViewNonLocal::relation_feature(const ag::Var& part, const ag::Var& aggregated, std::size_t k) const {
    return output_.at(k)(ag::add(part, aggregated));
}

std::vector<ag::Var> MultiViewNonLocal::operator()(std::span<const ag::Var> parts) const {
    check_parts(parts, 0);
    std::vector<ag::Var> keys;
    for (std::size_t i = 0; i < parts.size(); ++i) keys.push_back(phi_[i](parts[i]));
    std::vector<ag::Var> out;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const ag::Var weights = weights_from_keys(theta_[k](parts[k]), keys, k);
        out.push_back(relation_feature(parts[k], mix_keys(keys, weights, k), k));
    }
    return out;
}

ag::Var relation_similarity(const ag::Var& visual_concat, const ag::Var& textual_concat) {
    return ag::cosine(visual_concat, textual_concat);
}

} // namespace ssankit
