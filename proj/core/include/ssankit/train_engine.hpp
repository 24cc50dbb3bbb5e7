#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssankit/archive.hpp"
#include "ssankit/config.hpp"
#include "ssankit/data_ingest.hpp"
#include "ssankit/losses.hpp"
#include "ssankit/model.hpp"

namespace ssankit {

inline constexpr int kCheckpointFormatVersion = 1;

// Raised when a step produces a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Identity-balanced P x Q sampler over a record list.
class BatchSampler {
public:
    BatchSampler(std::span<const DatasetRecord> records, std::size_t batch_size, std::size_t images_per_identity);

    // Record indices for one epoch. Every batch holds distinct identities in blocks of Q, at least two of them.
    std::vector<std::vector<std::size_t>> epoch(std::mt19937_64& rng) const;
    // D'_p source: another record of the same identity, or `record` itself when it is the only one.
    std::size_t weak_companion(std::size_t record, std::mt19937_64& rng) const;

    std::size_t identities() const { return by_identity_.size(); }

private:
    std::vector<std::int64_t> identity_of_;
    std::map<std::int64_t, std::vector<std::size_t>> by_identity_;
    std::size_t batch_size_;
    std::size_t q_;
};

class Adam {
public:
    Adam() = default;
    Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    void step(ParameterStore& store, double learning_rate);
    std::size_t steps() const { return t_; }

    TensorArchive state() const;
    void load(const TensorArchive& archive);

private:
    double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Scales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

struct EpochSummary {
    std::size_t epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double learning_rate = 0.0;
    std::size_t steps = 0;
    std::optional<nlohmann::json> validation;

    nlohmann::json to_json() const;
};

struct TrainedModel {
    ExperimentConfig config;
    Vocabulary vocab;
    std::vector<std::int64_t> identity_labels;  // class index -> identity
    SsanModel model;
    std::size_t epoch = 0;
};

struct TrainOptions {
    std::filesystem::path out_dir;       // empty: nothing is written
    std::size_t checkpoint_every = 1;    // 0: only after the final epoch
    std::optional<std::filesystem::path> resume;
    // Runs after each epoch; may attach validation metrics to the summary.
    std::function<void(EpochSummary&, const TrainedModel&)> on_epoch;
};

struct TrainResult {
    TrainedModel trained;
    std::vector<EpochSummary> history;
    std::vector<LossBreakdown> steps;
    std::optional<std::filesystem::path> checkpoint;  // last written
};

// Builds the vocabulary from the training split unless one is given.
TrainResult train(const ExperimentConfig& config, const DatasetSplits& data, const TrainOptions& options = {},
                  const Vocabulary* vocab = nullptr);

// Checkpoint directory: params.ssk (parameters and optimizer state), config.json, vocab.json.
void save_checkpoint(const std::filesystem::path& dir, const TrainedModel& trained, const Adam& optimizer,
                     const std::mt19937_64& rng);
TrainedModel load_checkpoint(const std::filesystem::path& dir);
// Hash over the checkpoint's parameter archive and config.
std::uint64_t checkpoint_hash(const std::filesystem::path& dir);

// Preprocessed network input for a record.
Tensor record_tensor(const DatasetRecord& record, const std::filesystem::path& root, const VisualEncoderConfig& cfg,
                     bool flip = false);

} // namespace ssankit
