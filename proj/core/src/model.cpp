#include "ssankit/model.hpp"

#include <string>

namespace ssankit {

namespace {

const ModelConfig& validated(const ModelConfig& c) {
    c.validate();
    return c;
}

} // namespace

SsanModel::SsanModel(const ModelConfig& config)
    : config_(validated(config)),
      store_(config.init_seed),
      visual_(store_, config_.visual),
      text_(store_, config_.text, config_.vocab_rows, config_.visual.channels),
      global_(store_, config_.visual.channels, config_.embed_dim) {
    const std::size_t k = config_.parts;
    if (config_.use_pfl) pfl_ = PartFeatureLearning(store_, k, config_.visual.channels, config_.embed_dim);
    if (config_.use_prl)
        prl_ = MultiViewNonLocal(store_, k, config_.embed_dim, config_.relation_dim, config_.relation_out);

    // Classifiers come last so their class count does not perturb the other initial weights.
    id_global_.emplace_back(store_, "id.global", config_.num_identities, config_.embed_dim);
    if (config_.use_pfl)
        for (std::size_t p = 0; p < k; ++p)
            id_pfl_.emplace_back(store_, "id.pfl." + std::to_string(p), config_.num_identities, config_.embed_dim);
    if (config_.use_prl)
        for (std::size_t p = 0; p < k; ++p)
            id_prl_.emplace_back(store_, "id.prl." + std::to_string(p), config_.num_identities, config_.relation_out);
}

FeatureBundle SsanModel::encode_image(const Tensor& image) const {
    const VisualFeatureMap f = visual_(image);
    FeatureBundle out;
    out.global = global_.visual(f).vector;
    if (config_.use_pfl) {
        out.parts = pfl_.visual(partition(f, config_.parts));
        if (config_.use_prl) out.relations = prl_(out.parts);
    }
    return out;
}

FeatureBundle SsanModel::encode_text(const TokenizedCaption& caption, WordPartScores* scores) const {
    const WordBank e = text_(caption);
    FeatureBundle out;
    out.global = global_.textual(e).vector;
    if (config_.use_pfl) {
        out.parts = pfl_.textual(e, scores);
        if (config_.use_prl) out.relations = prl_(out.parts);
    }
    return out;
}

std::pair<FeatureBundle, FeatureBundle> SsanModel::forward(const Tensor& image, const TokenizedCaption& caption) const {
    return {encode_image(image), encode_text(caption)};
}

SimilarityTriple SsanModel::similarity(const FeatureBundle& visual, const FeatureBundle& textual) const {
    SimilarityTriple s;
    s.global = cosine(visual.global.value().values(), textual.global.value().values());
    if (!visual.parts.empty())
        s.part = cosine(visual.part_concat().value().values(), textual.part_concat().value().values());
    if (!visual.relations.empty())
        s.relation = cosine(visual.relation_concat().value().values(), textual.relation_concat().value().values());
    return s;
}

} // namespace ssankit
