#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ssankit/tensor.hpp"

namespace ssankit {

// Hardest in-batch negatives per anchor pair (I_p, D_p) at batch position i.
struct HardNegatives {
    std::vector<std::size_t> text;   // D_n: most similar caption of another identity to image i
    std::vector<std::size_t> image;  // I_n: most similar image of another identity to caption i
};

// `similarity` is {B, B} with entry (r, c) = S(image r, caption c). Ties go to the lowest index.
HardNegatives mine_hard_negatives(const Tensor& similarity, std::span<const std::int64_t> identities);

} // namespace ssankit
