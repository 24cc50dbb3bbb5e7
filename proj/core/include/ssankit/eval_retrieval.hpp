#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssankit/data_ingest.hpp"
#include "ssankit/model.hpp"
#include "ssankit/pfl.hpp"
#include "ssankit/train_engine.hpp"

namespace ssankit {

// Flattened per-sample features of one modality. Empty part/relation rows mean the stream is off.
struct FeatureTable {
    std::vector<std::int64_t> identities;
    std::vector<std::string> refs;  // image path or caption text
    std::vector<std::vector<double>> global, parts, relations;

    std::size_t size() const { return identities.size(); }
};

using GalleryIndex = FeatureTable;

struct StreamMask {
    bool global = true;
    bool part = true;
    bool relation = true;
};

double fuse_scores(const SimilarityTriple& s);

// Similarity triple of query row q against gallery row g.
SimilarityTriple pair_similarity(const FeatureTable& queries, std::size_t q, const FeatureTable& gallery,
                                 std::size_t g);
// {Q, G} fused scores restricted to the selected streams.
Tensor score_matrix(const FeatureTable& queries, const FeatureTable& gallery, const StreamMask& mask = {});

// Gallery indices per query, by descending score; equal scores keep gallery order.
std::vector<std::vector<std::size_t>> rank_gallery(const Tensor& scores);

double rank_k(const std::vector<std::vector<std::size_t>>& rankings, std::span<const std::int64_t> query_ids,
              std::span<const std::int64_t> gallery_ids, std::size_t k);

struct RetrievalResult {
    std::vector<std::vector<std::size_t>> rankings;
    double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0;
    std::size_t num_queries = 0;
    nlohmann::json streams = nlohmann::json::object();
    std::vector<std::string> warnings;

    nlohmann::json metrics() const;
};

struct EvalOptions {
    // Gallery features are cached under this directory when set, keyed by checkpoint and split hashes.
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::uint64_t> checkpoint_hash;
    bool stream_report = true;
};

// Cache directory from SSANKIT_CACHE, if set.
std::optional<std::filesystem::path> cache_dir_from_env();

std::uint64_t split_hash(std::span<const DatasetRecord> records);

GalleryIndex encode_gallery(const TrainedModel& trained, std::span<const DatasetRecord> records,
                            const std::filesystem::path& root, const EvalOptions& options = {});
// One query per caption of every record.
FeatureTable encode_queries(const TrainedModel& trained, std::span<const DatasetRecord> records);

RetrievalResult evaluate(const TrainedModel& trained, std::span<const DatasetRecord> records,
                         const std::filesystem::path& root, const EvalOptions& options = {});
RetrievalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const DatasetRecord> records,
                                    const std::filesystem::path& root, EvalOptions options = {});

// Same pipeline on a split from another domain; unseen words fall back to the unknown token.
RetrievalResult cross_domain_evaluate(const TrainedModel& trained, std::span<const DatasetRecord> target,
                                      const std::filesystem::path& root, const EvalOptions& options = {});

struct RetrievedImage {
    std::string image;
    std::int64_t identity = 0;
    double score = 0.0;
};

std::vector<RetrievedImage> retrieve(const TrainedModel& trained, const GalleryIndex& gallery,
                                     const std::string& query, std::size_t k);

struct WamDump {
    std::vector<std::string> tokens;
    std::vector<std::vector<double>> scores;  // K x (token count)

    nlohmann::json to_json() const;
};

WamDump wam_inspect(const TrainedModel& trained, const std::string& caption);
// Heat grid: one cell per (part, token), darker is higher.
void write_wam_heatmap(const std::filesystem::path& path, const WamDump& dump, std::size_t cell = 16);

} // namespace ssankit
