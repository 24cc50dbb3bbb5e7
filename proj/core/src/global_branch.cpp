#include "ssankit/global_branch.hpp"

#include <cmath>
#include <stdexcept>

namespace ssankit {

ag::Var pool_visual_global(const VisualFeatureMap& features) { return ag::spatial_max(features.map); }

ag::Var pool_text_global(const WordBank& words) { return ag::masked_row_max(words.matrix, words.mask); }

ag::Var project_global(const ag::Var& pooled, const Linear& shared_projection) { return shared_projection(pooled); }

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::domain_error("degenerate feature");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

GlobalBranch::GlobalBranch(ParameterStore& store, std::size_t channels, std::size_t embed_dim)
    : projection_(store, "global.projection", embed_dim, channels) {}

GlobalFeature GlobalBranch::visual(const VisualFeatureMap& features) const {
    return {project_global(pool_visual_global(features), projection_), Modality::Visual};
}

GlobalFeature GlobalBranch::textual(const WordBank& words) const {
    return {project_global(pool_text_global(words), projection_), Modality::Textual};
}

} // namespace ssankit
