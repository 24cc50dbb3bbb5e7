#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssankit/image.hpp"

namespace ssankit {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetRecord {
    std::int64_t identity = 0;
    std::string image;                 // path relative to the manifest, or a generated name
    std::vector<std::string> captions;
    Split split = Split::Train;
    std::optional<Image> pixels;       // inline synthetic raster; loaded lazily otherwise

    bool operator==(const DatasetRecord&) const = default;
};

struct DatasetSplits {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> val;
    std::vector<DatasetRecord> test;
    std::filesystem::path root;        // directory image paths are relative to
};

// Word inventory. Index 0 is padding, 1 is unknown, words start at 2.
class Vocabulary {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnknown = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnknownToken = "<unk>";

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> words, std::size_t min_count, std::size_t dim);

    // U: number of indexed training words (excludes padding and unknown).
    std::size_t size() const { return words_.size(); }
    std::size_t table_rows() const { return words_.size() + 2; }
    std::size_t min_count() const { return min_count_; }
    std::size_t dim() const { return dim_; }

    std::int32_t id(const std::string& word) const;
    const std::string& word(std::int32_t id) const;
    bool contains(const std::string& word) const { return index_.contains(word); }

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const {
        return words_ == other.words_ && min_count_ == other.min_count_ && dim_ == other.dim_;
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::int32_t> index_;
    std::size_t min_count_ = 1;
    std::size_t dim_ = 512;
};

struct TokenizedCaption {
    std::vector<std::int32_t> ids;  // padded to the tokenizer's n_max with Vocabulary::kPad
    std::size_t valid_length = 0;

    std::vector<bool> mask() const;
    bool operator==(const TokenizedCaption&) const = default;
};

// Lowercase, punctuation to whitespace, whitespace split.
std::vector<std::string> split_words(const std::string& text);

Vocabulary build_vocabulary(std::span<const DatasetRecord> records, std::size_t min_count = 1, std::size_t dim = 512);
TokenizedCaption tokenize(const std::string& text, const Vocabulary& vocab, std::size_t n_max);
std::string detokenize(const TokenizedCaption& caption, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Synthetic person/caption corpus

struct SyntheticSpec {
    std::size_t identities = 50;
    std::size_t images_per_identity = 4;
    std::size_t test_identities = 10;      // held out; the rest go to train
    std::size_t image_height = 96;
    std::size_t image_width = 32;
    std::size_t num_colors = 8;            // palette entries used, at most 10
    std::size_t num_templates = 4;
    double palette_shift = 0.0;            // tints rendered colours (domain-shift splits)
    std::uint64_t seed = 7;

    std::size_t capacity() const;          // number of distinct attribute tuples
    void validate() const;
};

// One identity's appearance; every field indexes into the fixed inventories.
struct AttributeTuple {
    std::size_t hat_color = 0;
    std::size_t upper_garment = 0;
    std::size_t upper_color = 0;
    std::size_t lower_garment = 0;
    std::size_t lower_color = 0;
    std::size_t feet_garment = 0;
    std::size_t feet_color = 0;
    std::size_t bag_color = 0;             // 0 means no bag, otherwise palette index + 1

    bool operator==(const AttributeTuple&) const = default;
};

enum class BodyZone { Head, Upper, Lower, Feet, Bag };

// A caption phrase and the body zone it describes.
struct AttributePhrase {
    BodyZone zone;
    std::string color;
    std::string text;
};

const std::vector<std::string>& synthetic_color_names();
AttributeTuple decode_attributes(std::size_t code, std::size_t num_colors);
std::vector<AttributePhrase> attribute_phrases(const AttributeTuple& attrs);
std::string render_caption(const AttributeTuple& attrs, std::size_t template_index, std::size_t num_templates,
                           std::uint64_t seed);
Image render_person(const AttributeTuple& attrs, const SyntheticSpec& spec, std::uint64_t image_seed);

struct SyntheticDataset {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> test;
    std::vector<AttributeTuple> attributes;  // indexed by identity id
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Manifests: JSON Lines, {"id", "image", "captions", "split"} per line.

// Loads the manifest and validates split disjointness and image existence.
DatasetSplits load_dataset(const std::filesystem::path& manifest_path);
// Writes `records` as a manifest in `dir`; inline pixels are written as PNG next to it.
void write_dataset(const std::filesystem::path& dir, std::span<const DatasetRecord> records,
                   const std::string& manifest_name = "manifest.jsonl");
// Throws DataError naming the first identity present in more than one split.
void check_split_disjoint(const DatasetSplits& splits);

// Pixels of a record, resized to the requested geometry.
Image load_record_image(const DatasetRecord& record, const std::filesystem::path& root, std::size_t height,
                        std::size_t width);

std::uint64_t splitmix64(std::uint64_t x);

} // namespace ssankit
