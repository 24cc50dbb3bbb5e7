#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ssankit/autograd.hpp"
#include "ssankit/encoders.hpp"
#include "ssankit/parameters.hpp"

namespace ssankit {

// s_i^k: probability that word i belongs to body part k. {K, n}, each entry a sigmoid output.
struct WordPartScores {
    ag::Var scores;
    std::vector<bool> mask;

    std::size_t parts() const { return scores.shape()[0]; }
    std::size_t length() const { return scores.shape()[1]; }
    double at(std::size_t k, std::size_t i) const { return scores.value().at(k, i); }
};

// Word Attention Module: one sigmoid scorer per part over the word representations.
class WordAttention {
public:
    WordAttention() = default;
    WordAttention(ParameterStore& store, std::size_t parts, std::size_t channels);

    WordPartScores operator()(const WordBank& words) const;

    const ag::Var& weight() const { return weight_; }  // {K, C}, row k is W_p^k
    const ag::Var& bias() const { return bias_; }

private:
    ag::Var weight_;
    ag::Var bias_;
};

// E_k: column i of E scaled by s_i^k. The mask carries over.
WordBank weight_text(const WordBank& words, const WordPartScores& scores, std::size_t part);

// Pooled-then-projected part features through the part's shared projection: (v_l^k, t_l^k).
std::pair<ag::Var, ag::Var> part_features(const ag::Var& visual_band, const WordBank& weighted_words,
                                          const Linear& shared_projection);
ag::Var visual_part_feature(const ag::Var& visual_band, const Linear& shared_projection);
ag::Var textual_part_feature(const WordBank& weighted_words, const Linear& shared_projection);

// Cosine of the concatenated K part features, concatenated top to bottom.
ag::Var part_similarity(const ag::Var& visual_concat, const ag::Var& textual_concat);

class PartFeatureLearning {
public:
    PartFeatureLearning() = default;
    PartFeatureLearning(ParameterStore& store, std::size_t parts, std::size_t channels, std::size_t embed_dim);

    std::vector<ag::Var> visual(const PartSlice& slices) const;
    std::vector<ag::Var> textual(const WordBank& words, WordPartScores* scores_out = nullptr) const;

    const WordAttention& attention() const { return attention_; }
    const Linear& projection(std::size_t part) const { return projections_.at(part); }
    std::size_t parts() const { return projections_.size(); }

private:
    WordAttention attention_;
    std::vector<Linear> projections_;
};

} // namespace ssankit
