#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace ssankit {

// Invalid configuration or usage. Raised before any compute starts.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Bad or inconsistent input data (manifests, images, captions).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class VisualVariant { TinyCnn, ResNet50 };

std::string to_string(VisualVariant v);
VisualVariant visual_variant_from_string(const std::string& s);

struct VisualEncoderConfig {
    VisualVariant variant = VisualVariant::TinyCnn;
    std::size_t channels = 32;  // C
    std::size_t input_height = 96;
    std::size_t input_width = 32;
    std::string pretrained_path;

    std::size_t stride() const { return variant == VisualVariant::TinyCnn ? 16 : 32; }
    std::size_t feature_height() const { return input_height / stride(); }
    std::size_t feature_width() const { return input_width / stride(); }
    void validate() const;
};

struct TextEncoderConfig {
    std::size_t embedding_dim = 512;  // V
    std::size_t hidden = 0;           // 0 means "same as visual channels"
    std::size_t max_length = 64;      // n_max
};

struct ModelConfig {
    VisualEncoderConfig visual;
    TextEncoderConfig text;
    std::size_t parts = 6;            // K
    std::size_t embed_dim = 1024;     // M
    std::size_t relation_dim = 512;   // M'
    std::size_t relation_out = 512;   // N
    bool use_pfl = true;
    bool use_prl = true;
    std::size_t vocab_rows = 2;       // U + 2 (padding and unknown)
    std::size_t num_identities = 1;   // ID-classifier classes
    std::uint64_t init_seed = 0;

    std::size_t text_hidden() const { return text.hidden == 0 ? visual.channels : text.hidden; }

    // ResNet-50 geometry with full-size heads.
    static ModelConfig reference();
    // Desk-scale configuration used by the synthetic benchmark.
    static ModelConfig tiny();

    void validate() const;
};

struct LossConfig {
    double margin = 0.2;              // alpha_1
    double beta = 0.1;                // weak-term weight
    double weight_global = 1.0;
    double weight_pfl = 0.5;
    double weight_prl = 0.5;
    bool strict_lambda = false;
    bool use_id_loss = true;
    double id_weight = 1.0;           // scales every ID term relative to the ranking terms

    void validate() const;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 60;
    double learning_rate = 1e-3;
    std::size_t decay_epoch = 40;
    double decay_factor = 0.1;
    std::size_t images_per_identity = 2;  // Q in the P x Q sampler
    bool horizontal_flip = true;
    double grad_clip_norm = 5.0;          // <= 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;

    double learning_rate_at(std::size_t epoch) const;
    void validate() const;
};

struct ExperimentConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;

    // Tiny model and training recipe for the synthetic corpus. ID losses are off: with 40 identities
    // of 4 images they overfit the classifier and cut held-out Rank-1.
    static ExperimentConfig desk_scale();

    void validate() const;
};

void to_json(nlohmann::json& j, const VisualEncoderConfig& c);
void from_json(const nlohmann::json& j, VisualEncoderConfig& c);
void to_json(nlohmann::json& j, const TextEncoderConfig& c);
void from_json(const nlohmann::json& j, TextEncoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

} // namespace ssankit
