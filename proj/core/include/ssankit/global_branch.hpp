#pragma once

#include <span>

#include "ssankit/autograd.hpp"
#include "ssankit/encoders.hpp"
#include "ssankit/parameters.hpp"

namespace ssankit {

enum class Modality { Visual, Textual };

struct GlobalFeature {
    ag::Var vector;  // v_g or t_g, length M
    Modality modality;
};

// Channel-wise max over every spatial position of F.
ag::Var pool_visual_global(const VisualFeatureMap& features);
// Per-channel max over the valid word columns of E.
ag::Var pool_text_global(const WordBank& words);
ag::Var project_global(const ag::Var& pooled, const Linear& shared_projection);

// Cosine similarity; a zero vector is a "degenerate feature" error.
double cosine(std::span<const double> a, std::span<const double> b);

// Global feature extraction. One projection serves both modalities.
class GlobalBranch {
public:
    GlobalBranch() = default;
    GlobalBranch(ParameterStore& store, std::size_t channels, std::size_t embed_dim);

    GlobalFeature visual(const VisualFeatureMap& features) const;
    GlobalFeature textual(const WordBank& words) const;

    const Linear& projection() const { return projection_; }

private:
    Linear projection_;
};

} // namespace ssankit
