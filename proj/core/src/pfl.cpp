#include "ssankit/pfl.hpp"

#include <stdexcept>
#include <string>

#include "ssankit/global_branch.hpp"

namespace ssankit {

WordAttention::WordAttention(ParameterStore& store, std::size_t parts, std::size_t channels)
    : weight_(store.create_zeros("pfl.word_attention.weight", Shape{parts, channels})),
      bias_(store.create_zeros("pfl.word_attention.bias", Shape{parts})) {}

WordPartScores WordAttention::operator()(const WordBank& words) const {
    // Padded columns get scores too; row max pooling never reads them.
    return {ag::sigmoid(ag::add_column_bias(ag::matmul(weight_, words.matrix), bias_)), words.mask};
}

WordBank weight_text(const WordBank& words, const WordPartScores& scores, std::size_t part) {
    if (part >= scores.parts()) throw std::out_of_range("part index " + std::to_string(part) + " out of range");
    const std::size_t n = scores.length();
    ag::Var row = ag::slice(ag::reshape(scores.scores, Shape{scores.parts() * n}), part * n, n);
    return {ag::scale_columns(words.matrix, row), words.mask};
}

ag::Var visual_part_feature(const ag::Var& visual_band, const Linear& shared_projection) {
    return shared_projection(ag::spatial_max(visual_band));
}

ag::Var textual_part_feature(const WordBank& weighted_words, const Linear& shared_projection) {
    return shared_projection(pool_text_global(weighted_words));
}

std::pair<ag::Var, ag::Var> part_features(const ag::Var& visual_band, const WordBank& weighted_words,
                                          const Linear& shared_projection) {
    return {visual_part_feature(visual_band, shared_projection), textual_part_feature(weighted_words, shared_projection)};
}

ag::Var part_similarity(const ag::Var& visual_concat, const ag::Var& textual_concat) {
    return ag::cosine(visual_concat, textual_concat);
}

PartFeatureLearning::PartFeatureLearning(ParameterStore& store, std::size_t parts, std::size_t channels,
                                         std::size_t embed_dim)
    : attention_(store, parts, channels) {
    for (std::size_t k = 0; k < parts; ++k) {
        projections_.emplace_back(store, "pfl.projection" + std::to_string(k), embed_dim, channels);
    }
}

std::vector<ag::Var> PartFeatureLearning::visual(const PartSlice& slices) const {
    if (slices.bands.size() != projections_.size()) throw std::invalid_argument("part count mismatch");
    std::vector<ag::Var> out;
    for (std::size_t k = 0; k < projections_.size(); ++k) out.push_back(visual_part_feature(slices.bands[k], projections_[k]));
    return out;
}

std::vector<ag::Var> PartFeatureLearning::textual(const WordBank& words, WordPartScores* scores_out) const {
    const WordPartScores scores = attention_(words);
    std::vector<ag::Var> out;
    for (std::size_t k = 0; k < projections_.size(); ++k) {
        out.push_back(textual_part_feature(weight_text(words, scores, k), projections_[k]));
    }
    if (scores_out) *scores_out = scores;
    return out;
}

} // namespace ssankit
