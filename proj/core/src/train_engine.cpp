#include "ssankit/train_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ssankit/image.hpp"

namespace ssankit {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// sampler

BatchSampler::BatchSampler(std::span<const DatasetRecord> records, std::size_t batch_size,
                           std::size_t images_per_identity)
    : batch_size_(batch_size), q_(images_per_identity) {
    if (q_ == 0 || batch_size_ % q_ != 0) throw ConfigError("batch size must be a multiple of images_per_identity");
    for (std::size_t i = 0; i < records.size(); ++i) {
        identity_of_.push_back(records[i].identity);
        by_identity_[records[i].identity].push_back(i);
    }
    if (by_identity_.size() < 2) throw DataError("training needs at least two identities");
}

std::vector<std::vector<std::size_t>> BatchSampler::epoch(std::mt19937_64& rng) const {
    struct Chunk {
        std::int64_t identity;
        std::vector<std::size_t> records;
    };
    std::vector<Chunk> chunks;
    for (const auto& [id, members] : by_identity_) {
        std::vector<std::size_t> order = members;
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t count = (order.size() + q_ - 1) / q_;
        for (std::size_t c = 0; c < count; ++c) {
            Chunk chunk{id, {}};
            // A short final chunk wraps around to the identity's first images.
            for (std::size_t j = 0; j < q_; ++j) chunk.records.push_back(order[(c * q_ + j) % order.size()]);
            chunks.push_back(std::move(chunk));
        }
    }
    std::shuffle(chunks.begin(), chunks.end(), rng);

    const std::size_t per_batch = batch_size_ / q_;
    std::vector<std::vector<std::size_t>> batches;
    std::vector<Chunk> pending(chunks.begin(), chunks.end());
    while (!pending.empty()) {
        std::vector<std::size_t> batch;
        std::set<std::int64_t> used;
        std::vector<Chunk> rest;
        for (auto& chunk : pending) {
            if (used.size() < per_batch && !used.contains(chunk.identity)) {
                used.insert(chunk.identity);
                batch.insert(batch.end(), chunk.records.begin(), chunk.records.end());
            } else {
                rest.push_back(std::move(chunk));
            }
        }
        if (used.size() < 2) break;  // leftovers of a single identity have no negatives
        batches.push_back(std::move(batch));
        pending = std::move(rest);
    }
    return batches;
}

std::size_t BatchSampler::weak_companion(std::size_t record, std::mt19937_64& rng) const {
    const auto& members = by_identity_.at(identity_of_.at(record));
    if (members.size() == 1) return record;
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 2);
    std::size_t j = pick(rng);
    if (members[j] == record) j = members.size() - 1;
    return members[j];
}

// ---------------------------------------------------------------------------
// optimizer

void Adam::step(ParameterStore& store, double learning_rate) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& p : store.all()) {
        const Tensor& g = p.var.grad();
        if (g.empty()) continue;
        auto [mit, m_new] = m_.try_emplace(p.name, p.var.shape(), 0.0);
        auto [vit, v_new] = v_.try_emplace(p.name, p.var.shape(), 0.0);
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        Tensor& w = const_cast<ag::Var&>(p.var).mutable_value();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
        }
    }
}

TensorArchive Adam::state() const {
    TensorArchive out;
    for (const auto& [k, t] : m_) out.emplace("adam.m/" + k, t);
    for (const auto& [k, t] : v_) out.emplace("adam.v/" + k, t);
    out.emplace("adam.t", Tensor::scalar(static_cast<double>(t_)));
    return out;
}

void Adam::load(const TensorArchive& archive) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& [k, t] : archive) {
        if (k.starts_with("adam.m/")) m_.emplace(k.substr(7), t);
        else if (k.starts_with("adam.v/")) v_.emplace(k.substr(7), t);
        else if (k == "adam.t") t_ = static_cast<std::size_t>(t.item());
    }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
    double sq = 0.0;
    for (const auto& p : store.all())
        for (double g : p.var.grad().values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (const auto& p : store.all())
            for (double& g : const_cast<ag::Var&>(p.var).mutable_grad().values()) g *= f;
    }
    return norm;
}

nlohmann::json EpochSummary::to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"mean_loss", mean_loss}, {"learning_rate", learning_rate}, {"steps", steps}};
    if (validation) j["validation"] = *validation;
    return j;
}

Tensor record_tensor(const DatasetRecord& record, const fs::path& root, const VisualEncoderConfig& cfg, bool flip) {
    Image img = load_record_image(record, root, cfg.input_height, cfg.input_width);
    if (flip) img = flip_horizontal(img);
    return image_to_tensor(img);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CheckpointMeta {
    nlohmann::json json;
    TensorArchive archive;
};

CheckpointMeta read_checkpoint_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("checkpoint directory not found: " + dir.string());
    CheckpointMeta meta;
    try {
        meta.json = nlohmann::json::parse(read_text(dir / "config.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint config: " + std::string(e.what()));
    }
    if (meta.json.value("format_version", 0) != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version");
    meta.archive = read_archive(dir / "params.ssk");
    return meta;
}

} // namespace

void save_checkpoint(const fs::path& dir, const TrainedModel& trained, const Adam& optimizer,
                     const std::mt19937_64& rng) {
    fs::create_directories(dir);
    TensorArchive archive = trained.model.parameters().snapshot("param/");
    archive.merge(optimizer.state());
    write_archive(dir / "params.ssk", archive);
    nlohmann::json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["config"] = trained.config;
    j["epoch"] = trained.epoch;
    j["rng_state"] = rng_to_string(rng);
    j["identity_labels"] = trained.identity_labels;
    write_text(dir / "config.json", j.dump(2) + "\n");
    trained.vocab.save(dir / "vocab.json");
}

TrainedModel load_checkpoint(const fs::path& dir) {
    CheckpointMeta meta = read_checkpoint_files(dir);
    ExperimentConfig cfg = meta.json.at("config").get<ExperimentConfig>();
    cfg.validate();
    TrainedModel out{cfg, Vocabulary::load(dir / "vocab.json"),
                     meta.json.at("identity_labels").get<std::vector<std::int64_t>>(), SsanModel(cfg.model),
                     meta.json.at("epoch").get<std::size_t>()};
    out.model.parameters().load(meta.archive, "param/");
    return out;
}

std::uint64_t checkpoint_hash(const fs::path& dir) {
    const std::string params = read_text(dir / "params.ssk");
    const std::string config = read_text(dir / "config.json");
    const std::string vocab = read_text(dir / "vocab.json");
    std::uint64_t h = fnv1a64(params.data(), params.size());
    h = fnv1a64(config.data(), config.size(), h);
    return fnv1a64(vocab.data(), vocab.size(), h);
}

// ---------------------------------------------------------------------------
// training loop

namespace {

std::string epoch_dir_name(std::size_t epoch) {
    std::ostringstream os;
    os << "epoch-" << std::setw(3) << std::setfill('0') << epoch;
    return os.str();
}

bool finite(double x) { return std::isfinite(x); }

struct Sample {
    std::size_t record;
    std::size_t caption;
    std::size_t weak_record;
    std::size_t weak_caption;
    bool flip;
};

void dump_bad_batch(const fs::path& out_dir, const std::vector<DatasetRecord>& records, const std::vector<Sample>& batch,
                    const LossBreakdown& breakdown, std::size_t epoch) {
    if (out_dir.empty()) return;
    nlohmann::json j;
    j["epoch"] = epoch;
    j["loss"] = breakdown.to_json();
    for (const Sample& s : batch) {
        j["samples"].push_back({{"identity", records[s.record].identity},
                                {"image", records[s.record].image},
                                {"caption", records[s.record].captions[s.caption]},
                                {"weak_image", records[s.weak_record].image},
                                {"weak_caption", records[s.weak_record].captions[s.weak_caption]},
                                {"flip", s.flip}});
    }
    fs::create_directories(out_dir);
    write_text(out_dir / "nonfinite_batch.json", j.dump(2) + "\n");
}

} // namespace

TrainResult train(const ExperimentConfig& config, const DatasetSplits& data, const TrainOptions& options,
                  const Vocabulary* vocab_in) {
    const std::vector<DatasetRecord>& records = data.train;
    if (records.empty()) throw DataError("training split is empty");
    for (const auto& r : records)
        if (r.captions.empty()) throw DataError("record " + r.image + " has no captions");

    ExperimentConfig cfg = config;
    std::optional<TrainedModel> resumed;
    std::mt19937_64 rng(cfg.train.seed);
    Adam adam(cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_epsilon);

    if (options.resume) {
        CheckpointMeta meta = read_checkpoint_files(*options.resume);
        resumed.emplace(load_checkpoint(*options.resume));
        const std::size_t epochs = cfg.train.epochs;
        cfg = resumed->config;
        cfg.train.epochs = epochs;
        adam = Adam(cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_epsilon);
        adam.load(meta.archive);
        std::istringstream is(meta.json.at("rng_state").get<std::string>());
        is >> rng;
    }

    Vocabulary vocab = resumed ? resumed->vocab
                               : (vocab_in ? *vocab_in : build_vocabulary(records, 1, cfg.model.text.embedding_dim));
    std::vector<std::int64_t> labels;
    if (resumed) {
        labels = resumed->identity_labels;
    } else {
        std::set<std::int64_t> ids;
        for (const auto& r : records) ids.insert(r.identity);
        labels.assign(ids.begin(), ids.end());
        cfg.model.vocab_rows = vocab.table_rows();
        cfg.model.num_identities = labels.size();
    }
    cfg.validate();

    std::map<std::int64_t, std::size_t> class_of;
    for (std::size_t i = 0; i < labels.size(); ++i) class_of[labels[i]] = i;
    for (const auto& r : records)
        if (!class_of.contains(r.identity))
            throw DataError("identity " + std::to_string(r.identity) + " is not in the checkpoint's label set");

    TrainResult result{resumed ? std::move(*resumed) : TrainedModel{cfg, vocab, labels, SsanModel(cfg.model), 0},
                       {}, {}, std::nullopt};
    TrainedModel& tm = result.trained;
    tm.config = cfg;
    SsanModel& model = tm.model;

    const std::size_t n_max = cfg.model.text.max_length;
    std::vector<std::vector<TokenizedCaption>> captions(records.size());
    std::vector<Tensor> plain(records.size()), flipped(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (const auto& c : records[i].captions) captions[i].push_back(tokenize(c, vocab, n_max));
        plain[i] = record_tensor(records[i], data.root, cfg.model.visual, false);
        if (cfg.train.horizontal_flip) flipped[i] = record_tensor(records[i], data.root, cfg.model.visual, true);
    }

    const BatchSampler sampler(records, cfg.train.batch_size, cfg.train.images_per_identity);
    const double clip = cfg.loss.strict_lambda ? 0.0 : cfg.train.grad_clip_norm;

    std::ofstream log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        log.open(options.out_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    }

    const bool pfl = cfg.model.use_pfl, prl = cfg.model.use_prl;
    std::size_t step = adam.steps();
    for (std::size_t epoch = tm.epoch; epoch < cfg.train.epochs; ++epoch) {
        const double lr = cfg.train.learning_rate_at(epoch);
        double loss_sum = 0.0;
        std::size_t loss_steps = 0;

        for (const auto& batch_records : sampler.epoch(rng)) {
            std::vector<Sample> batch;
            for (std::size_t r : batch_records) {
                Sample s{r, 0, 0, 0, false};
                s.caption = std::uniform_int_distribution<std::size_t>(0, captions[r].size() - 1)(rng);
                s.weak_record = sampler.weak_companion(r, rng);
                s.weak_caption = std::uniform_int_distribution<std::size_t>(0, captions[s.weak_record].size() - 1)(rng);
                if (cfg.train.horizontal_flip) s.flip = std::bernoulli_distribution(0.5)(rng);
                batch.push_back(s);
            }

            std::vector<StreamBatch> streams(1 + (pfl ? 1 : 0) + (prl ? 1 : 0));
            StreamBatch& g = streams[0];
            g.name = "global";
            g.weight = cfg.loss.weight_global;
            g.classifiers = model.global_classifier();
            if (pfl) {
                streams[1].name = "pfl";
                streams[1].weight = cfg.loss.weight_pfl;
                streams[1].classifiers = model.pfl_classifiers();
            }
            if (prl) {
                streams[2].name = "prl";
                streams[2].weight = cfg.loss.weight_prl;
                streams[2].classifiers = model.prl_classifiers();
            }

            std::vector<std::int64_t> identities;
            std::vector<std::size_t> classes;
            for (const Sample& s : batch) {
                identities.push_back(records[s.record].identity);
                classes.push_back(class_of.at(records[s.record].identity));
                const FeatureBundle v = model.encode_image(s.flip ? flipped[s.record] : plain[s.record]);
                const FeatureBundle t = model.encode_text(captions[s.record][s.caption]);
                const FeatureBundle w = model.encode_text(captions[s.weak_record][s.weak_caption]);

                g.images.push_back(v.global);
                g.texts.push_back(t.global);
                g.weak_texts.push_back(w.global);
                g.image_pieces.push_back({v.global});
                g.text_pieces.push_back({t.global});
                if (pfl) {
                    streams[1].images.push_back(v.part_concat());
                    streams[1].texts.push_back(t.part_concat());
                    streams[1].weak_texts.push_back(w.part_concat());
                    streams[1].image_pieces.push_back(v.parts);
                    streams[1].text_pieces.push_back(t.parts);
                }
                if (prl) {
                    streams[2].images.push_back(v.relation_concat());
                    streams[2].texts.push_back(t.relation_concat());
                    streams[2].weak_texts.push_back(w.relation_concat());
                    streams[2].image_pieces.push_back(v.relations);
                    streams[2].text_pieces.push_back(t.relations);
                }
            }

            LossResult loss = total_loss(streams, identities, classes, cfg.loss);
            loss.breakdown.step = ++step;
            bool ok = finite(loss.breakdown.total);
            for (const auto& [k, v] : loss.breakdown.terms) ok = ok && finite(v);
            if (!ok) {
                dump_bad_batch(options.out_dir, records, batch, loss.breakdown, epoch + 1);
                throw TrainingError("non-finite loss at step " + std::to_string(step) + ": " +
                                    loss.breakdown.to_json().dump());
            }

            model.parameters().zero_grad();
            ag::backward(loss.total);
            clip_grad_norm(model.parameters(), clip);
            adam.step(model.parameters(), lr);

            loss_sum += loss.breakdown.total;
            ++loss_steps;
            if (log.is_open()) log << loss.breakdown.to_json().dump() << "\n";
            result.steps.push_back(std::move(loss.breakdown));
        }

        tm.epoch = epoch + 1;
        EpochSummary summary{tm.epoch, loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0, lr, loss_steps,
                             std::nullopt};
        const bool last = tm.epoch == cfg.train.epochs;
        const bool save = !options.out_dir.empty() &&
                          (last || (options.checkpoint_every > 0 && tm.epoch % options.checkpoint_every == 0));
        if (save) {
            const fs::path dir = options.out_dir / epoch_dir_name(tm.epoch);
            save_checkpoint(dir, tm, adam, rng);
            write_text(options.out_dir / "latest.txt", dir.filename().string() + "\n");
            result.checkpoint = dir;
        }
        if (options.on_epoch) options.on_epoch(summary, tm);
        if (log.is_open()) log << nlohmann::json{{"epoch_summary", summary.to_json()}}.dump() << "\n";
        result.history.push_back(std::move(summary));
    }
    return result;
}

} // namespace ssankit
