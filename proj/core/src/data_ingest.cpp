#include "ssankit/data_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ssankit/config.hpp"

namespace ssankit {

using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words, std::size_t min_count, std::size_t dim)
    : words_(std::move(words)), min_count_(min_count), dim_(dim) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<std::int32_t>(i + 2)).second) {
            throw DataError("duplicate vocabulary word '" + words_[i] + "'");
        }
    }
}

std::int32_t Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
    static const std::string pad = kPadToken;
    static const std::string unk = kUnknownToken;
    if (id == kPad) return pad;
    if (id == kUnknown) return unk;
    if (id < 0 || static_cast<std::size_t>(id) >= table_rows()) throw std::out_of_range("token id out of range");
    return words_[static_cast<std::size_t>(id) - 2];
}

json Vocabulary::to_json() const {
    std::vector<std::string> all{kPadToken, kUnknownToken};
    all.insert(all.end(), words_.begin(), words_.end());
    return json{{"words", all}, {"min_count", min_count_}, {"dim", dim_}};
}

Vocabulary Vocabulary::from_json(const json& j) {
    auto all = j.at("words").get<std::vector<std::string>>();
    if (all.size() < 2 || all[0] != kPadToken || all[1] != kUnknownToken) {
        throw DataError("vocabulary file must start with the padding and unknown tokens");
    }
    return Vocabulary(std::vector<std::string>(all.begin() + 2, all.end()), j.value("min_count", std::size_t{1}),
                      j.value("dim", std::size_t{512}));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw DataError("malformed vocabulary " + path.string() + ": " + e.what());
    }
}

std::vector<bool> TokenizedCaption::mask() const {
    std::vector<bool> m(ids.size(), false);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(valid_length), true);
    return m;
}

std::vector<std::string> split_words(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char ch : text) {
        if (std::ispunct(ch)) cleaned.push_back(' ');
        else cleaned.push_back(static_cast<char>(std::tolower(ch)));
    }
    std::istringstream is(cleaned);
    std::vector<std::string> words;
    for (std::string w; is >> w;) words.push_back(std::move(w));
    return words;
}

Vocabulary build_vocabulary(std::span<const DatasetRecord> records, std::size_t min_count, std::size_t dim) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records)
        for (const auto& caption : r.captions)
            for (auto& w : split_words(caption)) ++counts[w];
    if (counts.empty()) throw DataError("empty training corpus");

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [w, n] : counts)
        if (n >= std::max<std::size_t>(min_count, 1)) kept.emplace_back(w, n);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> words;
    words.reserve(kept.size());
    for (auto& [w, n] : kept) words.push_back(std::move(w));
    return Vocabulary(std::move(words), min_count, dim);
}

TokenizedCaption tokenize(const std::string& text, const Vocabulary& vocab, std::size_t n_max) {
    if (n_max == 0) throw ConfigError("n_max must be at least 1");
    const auto words = split_words(text);
    if (words.empty()) throw DataError("empty caption after tokenization");
    TokenizedCaption out;
    out.ids.assign(n_max, Vocabulary::kPad);
    out.valid_length = std::min(words.size(), n_max);
    for (std::size_t i = 0; i < out.valid_length; ++i) out.ids[i] = vocab.id(words[i]);
    return out;
}

std::string detokenize(const TokenizedCaption& caption, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < caption.valid_length; ++i) {
        if (i) out.push_back(' ');
        out += vocab.word(caption.ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Rgb {
    double r, g, b;
};

const std::vector<Rgb>& palette() {
    static const std::vector<Rgb> p = {
        {200, 30, 35},  {35, 70, 210},  {40, 160, 60},  {235, 215, 40}, {25, 25, 25},
        {240, 240, 240}, {130, 45, 170}, {245, 135, 25}, {245, 150, 190}, {125, 75, 35},
    };
    return p;
}

const std::vector<std::string> kUpperGarments = {"shirt", "jacket"};
const std::vector<std::string> kLowerGarments = {"pants", "shorts"};
const std::vector<std::string> kFeetGarments = {"shoes", "boots"};
const std::vector<std::string> kTemplates = {
    "the person is wearing {}.", "a pedestrian with {}.", "someone dressed in {}.",
    "this walker has {}.",       "the man wears {}.",     "a woman in {}.",
};

constexpr Rgb kSkin{225, 185, 150};

std::string join_phrases(const std::vector<std::string>& phrases) {
    std::string out;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        if (i > 0) out += (i + 1 == phrases.size()) ? " and " : ", ";
        out += phrases[i];
    }
    return out;
}

std::uint64_t attribute_hash(const AttributeTuple& a) {
    std::uint64_t h = 0;
    for (std::size_t v : {a.hat_color, a.upper_garment, a.upper_color, a.lower_garment, a.lower_color, a.feet_garment,
                          a.feet_color, a.bag_color}) {
        h = splitmix64(h ^ (v + 0x51ed270b27fULL));
    }
    return h;
}

class Canvas {
public:
    Canvas(Image& img, double dy, double dx, double brightness, double shift)
        : img_(img), dy_(dy), dx_(dx), brightness_(brightness), shift_(shift) {}

    // Fills rows [y0,y1) x cols [x0,x1) given as fractions of the image size.
    void rect(double y0, double y1, double x0, double x1, Rgb c) {
        const double h = static_cast<double>(img_.height), w = static_cast<double>(img_.width);
        const long r0 = std::lround(y0 * h + dy_), r1 = std::lround(y1 * h + dy_);
        const long c0 = std::lround(x0 * w + dx_), c1 = std::lround(x1 * w + dx_);
        for (long y = std::max(r0, 0L); y < std::min(r1, long(img_.height)); ++y)
            for (long x = std::max(c0, 0L); x < std::min(c1, long(img_.width)); ++x) put(y, x, c);
    }

    Rgb tint(Rgb c) const {
        return {c.r + 80.0 * shift_, c.g - 30.0 * shift_, c.b - 80.0 * shift_};
    }

    void put(long y, long x, Rgb c) {
        const Rgb t = tint(c);
        const double v[3] = {t.r, t.g, t.b};
        for (std::size_t ch = 0; ch < 3; ++ch) {
            img_.at(std::size_t(y), std::size_t(x), ch) =
                static_cast<std::uint8_t>(std::clamp(std::lround(v[ch] * brightness_), 0L, 255L));
        }
    }

private:
    Image& img_;
    double dy_, dx_, brightness_, shift_;
};

Rgb stripe_color(Rgb c) {
    const double lum = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
    if (lum > 80.0) return {c.r * 0.35, c.g * 0.35, c.b * 0.35};
    return {c.r + 150.0, c.g + 150.0, c.b + 150.0};
}

} // namespace

const std::vector<std::string>& synthetic_color_names() {
    static const std::vector<std::string> names = {"red",    "blue",   "green", "yellow", "black",
                                                   "white",  "purple", "orange", "pink",  "brown"};
    return names;
}

std::size_t SyntheticSpec::capacity() const {
    const std::size_t c = num_colors;
    return c * 2 * c * 2 * c * 2 * c * (c + 1);
}

void SyntheticSpec::validate() const {
    if (identities < 2) throw ConfigError("synthetic corpus needs at least 2 identities");
    if (images_per_identity < 2) throw ConfigError("synthetic corpus needs at least 2 images per identity");
    if (test_identities >= identities) throw ConfigError("test identities must leave at least one train identity");
    if (num_colors == 0 || num_colors > palette().size()) {
        throw ConfigError("num_colors must be within 1.." + std::to_string(palette().size()));
    }
    if (num_templates == 0 || num_templates > kTemplates.size()) {
        throw ConfigError("num_templates must be within 1.." + std::to_string(kTemplates.size()));
    }
    if (image_height < 16 || image_width < 8) throw ConfigError("synthetic images must be at least 16x8");
    if (identities > capacity()) {
        throw DataError("attribute inventory holds " + std::to_string(capacity()) + " distinct identities, " +
                        std::to_string(identities) + " requested");
    }
}

AttributeTuple decode_attributes(std::size_t code, std::size_t num_colors) {
    AttributeTuple a;
    auto take = [&code](std::size_t radix) {
        const std::size_t v = code % radix;
        code /= radix;
        return v;
    };
    a.hat_color = take(num_colors);
    a.upper_garment = take(2);
    a.upper_color = take(num_colors);
    a.lower_garment = take(2);
    a.lower_color = take(num_colors);
    a.feet_garment = take(2);
    a.feet_color = take(num_colors);
    a.bag_color = take(num_colors + 1);
    return a;
}

std::vector<AttributePhrase> attribute_phrases(const AttributeTuple& a) {
    const auto& colors = synthetic_color_names();
    std::vector<AttributePhrase> out;
    out.push_back({BodyZone::Head, colors[a.hat_color], "a " + colors[a.hat_color] + " hat"});
    out.push_back({BodyZone::Upper, colors[a.upper_color],
                   "a " + colors[a.upper_color] + " " + kUpperGarments[a.upper_garment]});
    out.push_back({BodyZone::Lower, colors[a.lower_color], colors[a.lower_color] + " " + kLowerGarments[a.lower_garment]});
    out.push_back({BodyZone::Feet, colors[a.feet_color], colors[a.feet_color] + " " + kFeetGarments[a.feet_garment]});
    if (a.bag_color > 0) {
        out.push_back({BodyZone::Bag, colors[a.bag_color - 1], "a " + colors[a.bag_color - 1] + " bag"});
    }
    return out;
}

std::string render_caption(const AttributeTuple& attrs, std::size_t template_index, std::size_t num_templates,
                           std::uint64_t seed) {
    const auto phrases = attribute_phrases(attrs);

    // Every phrase order, shuffled per (attributes, seed); template t takes the t-th, so orders differ.
    std::vector<std::size_t> order(phrases.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::vector<std::size_t>> perms;
    do perms.push_back(order);
    while (std::next_permutation(order.begin(), order.end()));
    std::mt19937_64 rng(splitmix64(seed ^ attribute_hash(attrs)));
    for (std::size_t i = perms.size() - 1; i > 0; --i) std::swap(perms[i], perms[rng() % (i + 1)]);

    const std::size_t t = template_index % num_templates;
    std::vector<std::string> ordered;
    for (std::size_t idx : perms[t % perms.size()]) ordered.push_back(phrases[idx].text);

    std::string caption = kTemplates[t];
    caption.replace(caption.find("{}"), 2, join_phrases(ordered));
    return caption;
}

Image render_person(const AttributeTuple& a, const SyntheticSpec& spec, std::uint64_t image_seed) {
    std::mt19937_64 rng(image_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double scale_y = static_cast<double>(spec.image_height) / 96.0;
    const double scale_x = static_cast<double>(spec.image_width) / 32.0;

    Image img(spec.image_height, spec.image_width);
    const double bg = 100.0 + 50.0 * unit(rng);
    const double dy = std::round((unit(rng) * 2.0 - 1.0) * scale_y);
    const double dx = std::round((unit(rng) * 4.0 - 2.0) * scale_x);
    const double brightness = 0.9 + 0.2 * unit(rng);
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(bg);

    Canvas canvas(img, dy, dx, brightness, spec.palette_shift);
    const auto& pal = palette();
    constexpr double cx = 0.5;

    // head and hat
    canvas.rect(0.09, 0.20, cx - 0.15, cx + 0.15, kSkin);
    canvas.rect(0.02, 0.10, cx - 0.19, cx + 0.19, pal[a.hat_color]);

    // upper garment with sleeves; jackets carry a contrasting centre stripe
    const Rgb upper = pal[a.upper_color];
    canvas.rect(0.20, 0.50, cx - 0.27, cx + 0.27, upper);
    canvas.rect(0.21, 0.44, cx - 0.37, cx - 0.27, upper);
    canvas.rect(0.21, 0.44, cx + 0.27, cx + 0.37, upper);
    canvas.rect(0.44, 0.48, cx - 0.37, cx - 0.27, kSkin);
    canvas.rect(0.44, 0.48, cx + 0.27, cx + 0.37, kSkin);
    if (a.upper_garment == 1) canvas.rect(0.20, 0.50, cx - 0.04, cx + 0.04, stripe_color(upper));

    // lower garment: pants run to the ankle, shorts stop at the knee
    const Rgb lower = pal[a.lower_color];
    const double lower_end = a.lower_garment == 0 ? 0.86 : 0.66;
    canvas.rect(0.50, 0.56, cx - 0.22, cx + 0.22, lower);
    canvas.rect(0.50, lower_end, cx - 0.22, cx - 0.02, lower);
    canvas.rect(0.50, lower_end, cx + 0.02, cx + 0.22, lower);
    if (lower_end < 0.86) {
        canvas.rect(lower_end, 0.86, cx - 0.20, cx - 0.04, kSkin);
        canvas.rect(lower_end, 0.86, cx + 0.04, cx + 0.20, kSkin);
    }

    // footwear: boots climb the shin
    const Rgb feet = pal[a.feet_color];
    const double feet_top = a.feet_garment == 0 ? 0.87 : 0.76;
    canvas.rect(feet_top, 0.97, cx - 0.25, cx - 0.02, feet);
    canvas.rect(feet_top, 0.97, cx + 0.02, cx + 0.25, feet);

    // bag at a per-image vertical position and side
    if (a.bag_color > 0) {
        const bool right = unit(rng) < 0.5;
        const double centre = 0.30 + 0.32 * unit(rng);
        const double x0 = right ? cx + 0.30 : cx - 0.48;
        canvas.rect(centre - 0.065, centre + 0.065, x0, x0 + 0.18, pal[a.bag_color - 1]);
    }

    std::normal_distribution<double> noise(0.0, 6.0);
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(std::clamp(std::lround(v + noise(rng)), 0L, 255L));
    return img;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(splitmix64(spec.seed));
    const std::size_t capacity = spec.capacity();

    std::set<std::size_t> used;
    std::vector<std::size_t> codes;
    while (codes.size() < spec.identities) {
        const std::size_t code = rng() % capacity;
        if (used.insert(code).second) codes.push_back(code);
    }

    SyntheticDataset out;
    const std::size_t train_ids = spec.identities - spec.test_identities;
    for (std::size_t id = 0; id < spec.identities; ++id) {
        const AttributeTuple attrs = decode_attributes(codes[id], spec.num_colors);
        out.attributes.push_back(attrs);
        const Split split = id < train_ids ? Split::Train : Split::Test;
        for (std::size_t j = 0; j < spec.images_per_identity; ++j) {
            DatasetRecord r;
            r.identity = static_cast<std::int64_t>(id);
            char name[64];
            std::snprintf(name, sizeof(name), "images/%05zu_%02zu.png", id, j);
            r.image = name;
            r.captions = {render_caption(attrs, j, spec.num_templates, spec.seed)};
            r.split = split;
            r.pixels = render_person(attrs, spec, splitmix64(spec.seed ^ splitmix64(id * 1000003ULL + j)));
            (split == Split::Train ? out.train : out.test).push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests

void check_split_disjoint(const DatasetSplits& splits) {
    std::map<std::int64_t, Split> owner;
    for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
        for (const auto& r : *part) {
            auto [it, inserted] = owner.emplace(r.identity, r.split);
            if (!inserted && it->second != r.split) {
                throw DataError("identity " + std::to_string(r.identity) + " appears in both the " +
                                to_string(it->second) + " and " + to_string(r.split) + " splits");
            }
        }
    }
}

DatasetSplits load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());

    DatasetSplits splits;
    splits.root = manifest_path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        DatasetRecord r;
        try {
            const json j = json::parse(line);
            r.identity = j.at("id").get<std::int64_t>();
            r.image = j.at("image").get<std::string>();
            r.captions = j.at("captions").get<std::vector<std::string>>();
            r.split = split_from_string(j.at("split").get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(manifest_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (r.identity < 0) throw DataError("negative identity on line " + std::to_string(line_no));
        if (r.captions.empty()) {
            throw DataError("record on line " + std::to_string(line_no) + " has no captions");
        }
        if (!std::filesystem::exists(splits.root / r.image)) {
            throw DataError("missing image file " + (splits.root / r.image).string());
        }
        switch (r.split) {
        case Split::Train: splits.train.push_back(std::move(r)); break;
        case Split::Val: splits.val.push_back(std::move(r)); break;
        case Split::Test: splits.test.push_back(std::move(r)); break;
        }
    }
    check_split_disjoint(splits);
    return splits;
}

void write_dataset(const std::filesystem::path& dir, std::span<const DatasetRecord> records,
                   const std::string& manifest_name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / manifest_name);
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    for (const auto& r : records) {
        if (r.pixels) {
            const auto path = dir / r.image;
            std::filesystem::create_directories(path.parent_path());
            write_png(path, *r.pixels);
        }
        const json j{{"id", r.identity}, {"image", r.image}, {"captions", r.captions}, {"split", to_string(r.split)}};
        out << j.dump() << '\n';
    }
}

Image load_record_image(const DatasetRecord& record, const std::filesystem::path& root, std::size_t height,
                        std::size_t width) {
    if (record.pixels) return resize_bilinear(*record.pixels, height, width);
    return resize_bilinear(read_png(root / record.image), height, width);
}

} // namespace ssankit
