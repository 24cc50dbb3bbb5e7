#include "ssankit/eval_retrieval.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ssankit/archive.hpp"
#include "ssankit/global_branch.hpp"
#include "ssankit/image.hpp"

namespace ssankit {

namespace fs = std::filesystem;

double fuse_scores(const SimilarityTriple& s) { return s.global + s.part + s.relation; }

SimilarityTriple pair_similarity(const FeatureTable& queries, std::size_t q, const FeatureTable& gallery,
                                 std::size_t g) {
    SimilarityTriple s;
    s.global = cosine(queries.global.at(q), gallery.global.at(g));
    if (!queries.parts.empty() && !queries.parts[q].empty()) s.part = cosine(queries.parts[q], gallery.parts.at(g));
    if (!queries.relations.empty() && !queries.relations[q].empty())
        s.relation = cosine(queries.relations[q], gallery.relations.at(g));
    return s;
}

Tensor score_matrix(const FeatureTable& queries, const FeatureTable& gallery, const StreamMask& mask) {
    Tensor out(Shape{queries.size(), gallery.size()});
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            SimilarityTriple s = pair_similarity(queries, q, gallery, g);
            if (!mask.global) s.global = 0.0;
            if (!mask.part) s.part = 0.0;
            if (!mask.relation) s.relation = 0.0;
            out.at(q, g) = fuse_scores(s);
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> rank_gallery(const Tensor& scores) {
    const std::size_t nq = scores.dim(0), ng = scores.dim(1);
    std::vector<std::vector<std::size_t>> out(nq);
    for (std::size_t q = 0; q < nq; ++q) {
        auto& order = out[q];
        order.resize(ng);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores.at(q, a) > scores.at(q, b); });
    }
    return out;
}

double rank_k(const std::vector<std::vector<std::size_t>>& rankings, std::span<const std::int64_t> query_ids,
              std::span<const std::int64_t> gallery_ids, std::size_t k) {
    if (k == 0) throw std::invalid_argument("k must be at least 1");
    if (gallery_ids.empty()) throw std::invalid_argument("empty gallery");
    if (rankings.size() != query_ids.size()) throw std::invalid_argument("ranking count does not match queries");
    if (rankings.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        const std::size_t depth = std::min(k, rankings[q].size());
        for (std::size_t r = 0; r < depth; ++r) {
            if (gallery_ids[rankings[q][r]] == query_ids[q]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

nlohmann::json RetrievalResult::metrics() const {
    return {{"rank1", rank1}, {"rank5", rank5}, {"rank10", rank10}, {"num_queries", num_queries}, {"streams", streams}};
}

std::optional<fs::path> cache_dir_from_env() {
    const char* dir = std::getenv("SSANKIT_CACHE");
    if (!dir || !*dir) return std::nullopt;
    return fs::path(dir);
}

std::uint64_t split_hash(std::span<const DatasetRecord> records) {
    std::uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& r : records) {
        const std::string key = std::to_string(r.identity) + "|" + r.image + "|" + to_string(r.split);
        h = fnv1a64(key.data(), key.size(), h);
        for (const auto& c : r.captions) h = fnv1a64(c.data(), c.size(), h);
        if (r.pixels) h = fnv1a64(r.pixels->rgb.data(), r.pixels->rgb.size(), h);
    }
    return h;
}

namespace {

std::vector<double> to_vector(const ag::Var& v) { return v.value().storage(); }

void append_bundle(FeatureTable& table, const FeatureBundle& b) {
    table.global.push_back(to_vector(b.global));
    table.parts.push_back(b.parts.empty() ? std::vector<double>{} : to_vector(b.part_concat()));
    table.relations.push_back(b.relations.empty() ? std::vector<double>{} : to_vector(b.relation_concat()));
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
    const std::size_t width = rows.empty() ? 0 : rows.front().size();
    Tensor out(Shape{rows.size(), width});
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), out.data() + r * width);
    return out;
}

std::vector<std::vector<double>> tensor_to_rows(const Tensor& t) {
    std::vector<std::vector<double>> rows(t.dim(0));
    const std::size_t width = t.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r].assign(t.data() + r * width, t.data() + (r + 1) * width);
    return rows;
}

double rank_at(const Tensor& scores, const FeatureTable& queries, const FeatureTable& gallery, std::size_t k) {
    return rank_k(rank_gallery(scores), queries.identities, gallery.identities, k);
}

nlohmann::json stream_entry(const Tensor& scores, const FeatureTable& queries, const FeatureTable& gallery) {
    return {{"rank1", rank_at(scores, queries, gallery, 1)},
            {"rank5", rank_at(scores, queries, gallery, 5)},
            {"rank10", rank_at(scores, queries, gallery, 10)}};
}

} // namespace

GalleryIndex encode_gallery(const TrainedModel& trained, std::span<const DatasetRecord> records, const fs::path& root,
                            const EvalOptions& options) {
    GalleryIndex gallery;
    for (const auto& r : records) {
        gallery.identities.push_back(r.identity);
        gallery.refs.push_back(r.image);
    }

    std::optional<fs::path> cache_file;
    if (options.cache_dir && options.checkpoint_hash) {
        cache_file = *options.cache_dir / (hex64(*options.checkpoint_hash) + "_" + hex64(split_hash(records)) + ".ssk");
        if (fs::exists(*cache_file)) {
            const TensorArchive a = read_archive(*cache_file);
            gallery.global = tensor_to_rows(a.at("global"));
            gallery.parts = tensor_to_rows(a.at("parts"));
            gallery.relations = tensor_to_rows(a.at("relations"));
            if (gallery.global.size() == records.size()) return gallery;
            gallery.global.clear();
            gallery.parts.clear();
            gallery.relations.clear();
        }
    }

    ag::NoGradGuard no_grad;
    for (const auto& r : records) append_bundle(gallery, trained.model.encode_image(record_tensor(r, root, trained.config.model.visual)));

    if (cache_file) {
        fs::create_directories(cache_file->parent_path());
        write_archive(*cache_file, {{"global", rows_to_tensor(gallery.global)},
                                    {"parts", rows_to_tensor(gallery.parts)},
                                    {"relations", rows_to_tensor(gallery.relations)}});
    }
    return gallery;
}

FeatureTable encode_queries(const TrainedModel& trained, std::span<const DatasetRecord> records) {
    ag::NoGradGuard no_grad;
    FeatureTable queries;
    const std::size_t n_max = trained.config.model.text.max_length;
    for (const auto& r : records) {
        for (const auto& c : r.captions) {
            queries.identities.push_back(r.identity);
            queries.refs.push_back(c);
            append_bundle(queries, trained.model.encode_text(tokenize(c, trained.vocab, n_max)));
        }
    }
    return queries;
}

RetrievalResult evaluate(const TrainedModel& trained, std::span<const DatasetRecord> records, const fs::path& root,
                         const EvalOptions& options) {
    if (records.empty()) throw DataError("evaluation split is empty");
    const GalleryIndex gallery = encode_gallery(trained, records, root, options);
    const FeatureTable queries = encode_queries(trained, records);

    RetrievalResult result;
    const std::set<std::int64_t> present(gallery.identities.begin(), gallery.identities.end());
    for (std::int64_t id : std::set<std::int64_t>(queries.identities.begin(), queries.identities.end()))
        if (!present.contains(id))
            result.warnings.push_back("identity " + std::to_string(id) + " has queries but no gallery image");

    const Tensor scores = score_matrix(queries, gallery);
    result.rankings = rank_gallery(scores);
    result.num_queries = queries.size();
    result.rank1 = rank_k(result.rankings, queries.identities, gallery.identities, 1);
    result.rank5 = rank_k(result.rankings, queries.identities, gallery.identities, 5);
    result.rank10 = rank_k(result.rankings, queries.identities, gallery.identities, 10);

    if (options.stream_report) {
        const ModelConfig& m = trained.config.model;
        result.streams["S_g"] = stream_entry(score_matrix(queries, gallery, {true, false, false}), queries, gallery);
        if (m.use_pfl)
            result.streams["S_g+S_l"] = stream_entry(score_matrix(queries, gallery, {true, true, false}), queries, gallery);
        if (m.use_prl) result.streams["S_g+S_l+S_n"] = stream_entry(scores, queries, gallery);
    }
    return result;
}

RetrievalResult evaluate_checkpoint(const fs::path& checkpoint, std::span<const DatasetRecord> records,
                                    const fs::path& root, EvalOptions options) {
    const TrainedModel trained = load_checkpoint(checkpoint);
    if (!options.checkpoint_hash) options.checkpoint_hash = checkpoint_hash(checkpoint);
    return evaluate(trained, records, root, options);
}

RetrievalResult cross_domain_evaluate(const TrainedModel& trained, std::span<const DatasetRecord> target,
                                      const fs::path& root, const EvalOptions& options) {
    return evaluate(trained, target, root, options);
}

std::vector<RetrievedImage> retrieve(const TrainedModel& trained, const GalleryIndex& gallery, const std::string& query,
                                     std::size_t k) {
    if (gallery.size() == 0) throw DataError("empty gallery");
    if (k == 0) throw ConfigError("k must be at least 1");
    FeatureTable q;
    {
        ag::NoGradGuard no_grad;
        q.identities.push_back(-1);
        q.refs.push_back(query);
        append_bundle(q, trained.model.encode_text(tokenize(query, trained.vocab, trained.config.model.text.max_length)));
    }
    const Tensor scores = score_matrix(q, gallery);
    const auto order = rank_gallery(scores).front();
    std::vector<RetrievedImage> out;
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r)
        out.push_back({gallery.refs[order[r]], gallery.identities[order[r]], scores.at(0, order[r])});
    return out;
}

nlohmann::json WamDump::to_json() const { return {{"tokens", tokens}, {"scores", scores}}; }

WamDump wam_inspect(const TrainedModel& trained, const std::string& caption) {
    if (!trained.config.model.use_pfl) throw ConfigError("model has no word attention module");
    const std::size_t n_max = trained.config.model.text.max_length;
    const TokenizedCaption tokens = tokenize(caption, trained.vocab, n_max);
    WordPartScores scores;
    {
        ag::NoGradGuard no_grad;
        trained.model.encode_text(tokens, &scores);
    }
    WamDump dump;
    const auto words = split_words(caption);
    dump.tokens.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(tokens.valid_length));
    dump.scores.assign(scores.parts(), {});
    for (std::size_t k = 0; k < scores.parts(); ++k)
        for (std::size_t i = 0; i < tokens.valid_length; ++i) dump.scores[k].push_back(scores.at(k, i));
    return dump;
}

void write_wam_heatmap(const fs::path& path, const WamDump& dump, std::size_t cell) {
    const std::size_t rows = dump.scores.size();
    const std::size_t cols = dump.tokens.size();
    if (rows == 0 || cols == 0 || cell == 0) throw std::invalid_argument("empty heat grid");
    Image img(rows * cell, cols * cell);
    for (std::size_t k = 0; k < rows; ++k) {
        for (std::size_t i = 0; i < cols; ++i) {
            const double s = std::clamp(dump.scores[k][i], 0.0, 1.0);
            const auto shade = static_cast<std::uint8_t>(255.0 * (1.0 - s));
            for (std::size_t y = k * cell; y < (k + 1) * cell; ++y)
                for (std::size_t x = i * cell; x < (i + 1) * cell; ++x) {
                    img.at(y, x, 0) = shade;
                    img.at(y, x, 1) = shade;
                    img.at(y, x, 2) = 255;
                }
        }
    }
    write_png(path, img);
}

} // namespace ssankit
