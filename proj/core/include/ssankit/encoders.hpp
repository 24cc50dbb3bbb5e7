#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ssankit/autograd.hpp"
#include "ssankit/config.hpp"
#include "ssankit/data_ingest.hpp"
#include "ssankit/parameters.hpp"

namespace ssankit {

// Backbone output F. Stored channel-first, {C, H, W}.
struct VisualFeatureMap {
    ag::Var map;

    std::size_t channels() const { return map.shape()[0]; }
    std::size_t height() const { return map.shape()[1]; }
    std::size_t width() const { return map.shape()[2]; }
    double at(std::size_t h, std::size_t w, std::size_t c) const { return map.value().at(c, h, w); }
};

// K horizontal row bands of F, top to bottom.
struct PartSlice {
    std::vector<ag::Var> bands;
};

PartSlice partition(const VisualFeatureMap& features, std::size_t parts);

// Word representations E, {C, n}. Column i is valid iff mask[i].
struct WordBank {
    ag::Var matrix;
    std::vector<bool> mask;

    std::size_t channels() const { return matrix.shape()[0]; }
    std::size_t length() const { return matrix.shape()[1]; }
};

class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(ParameterStore& store, const VisualEncoderConfig& config);

    // `image` is {3, H0, W0} and must match the configured input size.
    VisualFeatureMap operator()(const Tensor& image) const;

    // Expected output geometry {C, H0/stride, W0/stride}.
    Shape output_shape() const;
    const VisualEncoderConfig& config() const { return config_; }

    // Loads ResNet-50 weights keyed by torchvision layer names; batch-norm statistics are folded.
    void load_pretrained(const std::filesystem::path& path, ParameterStore& store) const;

private:
    struct ConvUnit {
        ag::Var weight;
        ag::Var bias;   // tiny-cnn only
        ag::Var scale;  // folded batch norm, resnet only
        ag::Var shift;
        std::size_t stride = 1;
        std::size_t pad = 0;
        ag::Var apply(const ag::Var& x) const;
    };
    struct Bottleneck {
        ConvUnit reduce, spatial, expand;
        bool has_downsample = false;
        ConvUnit downsample;
    };

    // Empty `bn_name` gives a biased conv; otherwise a bias-free conv followed by a folded batch norm.
    static ConvUnit conv_unit(ParameterStore& store, const std::string& conv_name, const std::string& bn_name,
                              std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
                              std::size_t pad, bool zero_scale = false);

    VisualEncoderConfig config_;
    std::vector<ConvUnit> tiny_blocks_;
    ConvUnit stem_;
    std::vector<Bottleneck> bottlenecks_;
};

class TextEncoder {
public:
    struct LstmWeights {
        ag::Var input_weight;      // {4H, V}, gates ordered i, f, g, o
        ag::Var recurrent_weight;  // {4H, H}
        ag::Var bias;              // {4H}
    };

    TextEncoder() = default;
    TextEncoder(ParameterStore& store, const TextEncoderConfig& config, std::size_t vocab_rows, std::size_t channels);

    // Word embeddings x_i; padded positions map to the zero vector.
    std::vector<ag::Var> embed_words(const TokenizedCaption& caption) const;
    // Bi-LSTM over the valid positions; e_i is the mean of both directions' hidden states.
    WordBank encode(std::span<const ag::Var> embeddings, const std::vector<bool>& mask) const;
    WordBank operator()(const TokenizedCaption& caption) const;

    const ag::Var& embedding_table() const { return table_; }
    const LstmWeights& forward_lstm() const { return forward_; }
    const LstmWeights& backward_lstm() const { return backward_; }
    std::size_t hidden() const { return hidden_; }

    // Swaps the two directions' weights (used to check direction symmetry).
    void swap_directions() { std::swap(forward_, backward_); }

private:
    std::vector<ag::Var> run_direction(const LstmWeights& w, std::span<const ag::Var> xs, bool reverse) const;

    TextEncoderConfig config_;
    ag::Var table_;  // {U + 2, V}
    LstmWeights forward_;
    LstmWeights backward_;
    std::size_t hidden_ = 0;
    std::size_t channels_ = 0;
    Linear projection_;  // only when hidden != channels
};

// One LSTM step, exposed for oracle tests. Returns (h, c).
std::pair<ag::Var, ag::Var> lstm_step(const TextEncoder::LstmWeights& w, const ag::Var& x, const ag::Var& h,
                                      const ag::Var& c);

} // namespace ssankit
