#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ssankit/autograd.hpp"
#include "ssankit/config.hpp"
#include "ssankit/data_ingest.hpp"
#include "ssankit/encoders.hpp"
#include "ssankit/global_branch.hpp"
#include "ssankit/parameters.hpp"
#include "ssankit/pfl.hpp"
#include "ssankit/prl.hpp"

namespace ssankit {

// Everything one sample contributes in one modality: shapes (M, K x M, K x N).
// `parts` and `relations` are empty when the corresponding branch is disabled.
struct FeatureBundle {
    ag::Var global;
    std::vector<ag::Var> parts;
    std::vector<ag::Var> relations;

    ag::Var part_concat() const { return ag::concat(parts); }
    ag::Var relation_concat() const { return ag::concat(relations); }
};

struct SimilarityTriple {
    double global = 0.0;    // S_g
    double part = 0.0;      // S_l
    double relation = 0.0;  // S_n
};

// Full network: encoders, global branch, PFL, PRL and the ID classifiers.
class SsanModel {
public:
    explicit SsanModel(const ModelConfig& config);

    SsanModel(const SsanModel&) = delete;
    SsanModel& operator=(const SsanModel&) = delete;
    SsanModel(SsanModel&&) = default;
    SsanModel& operator=(SsanModel&&) = default;

    FeatureBundle encode_image(const Tensor& image) const;
    FeatureBundle encode_text(const TokenizedCaption& caption, WordPartScores* scores = nullptr) const;
    std::pair<FeatureBundle, FeatureBundle> forward(const Tensor& image, const TokenizedCaption& caption) const;

    // Cosines per enabled stream; disabled streams report 0.
    SimilarityTriple similarity(const FeatureBundle& visual, const FeatureBundle& textual) const;

    const ModelConfig& config() const { return config_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }

    const VisualEncoder& visual_encoder() const { return visual_; }
    VisualEncoder& visual_encoder() { return visual_; }
    const TextEncoder& text_encoder() const { return text_; }
    const GlobalBranch& global_branch() const { return global_; }
    const PartFeatureLearning& pfl() const { return pfl_; }
    const MultiViewNonLocal& prl() const { return prl_; }

    const std::vector<Linear>& global_classifier() const { return id_global_; }
    const std::vector<Linear>& pfl_classifiers() const { return id_pfl_; }
    const std::vector<Linear>& prl_classifiers() const { return id_prl_; }

private:
    ModelConfig config_;
    ParameterStore store_;
    VisualEncoder visual_;
    TextEncoder text_;
    GlobalBranch global_;
    PartFeatureLearning pfl_;
    MultiViewNonLocal prl_;
    std::vector<Linear> id_global_;
    std::vector<Linear> id_pfl_;
    std::vector<Linear> id_prl_;
};

} // namespace ssankit
