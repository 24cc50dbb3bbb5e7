#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssankit/autograd.hpp"
#include "ssankit/parameters.hpp"

namespace ssankit {

// Multi-view non-local network over the K part features of one modality.
//
// Each part owns its own query projection theta_k and key projection phi_k (M' x M, no bias),
// an output map gamma_k (M x M') and a final projection W_n^k (N x M). For query part k:
//   S_ki   = cos(theta_k v_k, phi_i v_i),              i != k
//   a_ki   = softmax_i(S_ki)
//   in_k   = gamma_k(sum_i a_ki phi_i v_i)
//   out_k  = W_n^k (v_k + in_k)
// The same parameters serve the visual and the textual parts.
class MultiViewNonLocal {
public:
    MultiViewNonLocal() = default;
    MultiViewNonLocal(ParameterStore& store, std::size_t parts, std::size_t embed_dim, std::size_t relation_dim,
                      std::size_t out_dim);

    // Softmax weights of query `k` over the other K-1 parts, in increasing part order.
    ag::Var relation_weights(std::span<const ag::Var> parts, std::size_t k) const;
    // gamma_k applied to the weighted sum of key projections.
    ag::Var aggregate(std::span<const ag::Var> parts, const ag::Var& weights, std::size_t k) const;
    // W_n^k (v_k + in_k).
    ag::Var relation_feature(const ag::Var& part, const ag::Var& aggregated, std::size_t k) const;

    std::vector<ag::Var> operator()(std::span<const ag::Var> parts) const;

    std::size_t parts() const { return theta_.size(); }
    const Linear& theta(std::size_t k) const { return theta_.at(k); }
    const Linear& phi(std::size_t k) const { return phi_.at(k); }
    const Linear& gamma(std::size_t k) const { return gamma_.at(k); }
    const Linear& output(std::size_t k) const { return output_.at(k); }

private:
    void check_parts(std::span<const ag::Var> parts, std::size_t k) const;
    ag::Var weights_from_keys(const ag::Var& query, std::span<const ag::Var> keys, std::size_t k) const;
    ag::Var mix_keys(std::span<const ag::Var> keys, const ag::Var& weights, std::size_t k) const;

    std::vector<Linear> theta_;
    std::vector<Linear> phi_;
    std::vector<Linear> gamma_;
    std::vector<Linear> output_;
};

// Cosine of the concatenated relation features.
ag::Var relation_similarity(const ag::Var& visual_concat, const ag::Var& textual_concat);

} // namespace ssankit
