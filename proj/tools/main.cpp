// ssankit command-line entry point.
//
// Exit codes: 0 success, 1 data or runtime error, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ssankit/archive.hpp"
#include "ssankit/config.hpp"
#include "ssankit/data_ingest.hpp"
#include "ssankit/eval_retrieval.hpp"
#include "ssankit/train_engine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssankit;

namespace {

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "";
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64(bytes.data(), bytes.size()));
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

// Provenance record written next to every output.
struct RunManifest {
    std::string command;
    json config = json::object();
    json inputs = json::object();
    json outputs = json::object();
    std::optional<std::uint64_t> seed;
    json hashes = json::object();

    void input(const std::string& name, const fs::path& p) {
        inputs[name] = p.string();
        if (fs::is_regular_file(p)) hashes[p.string()] = file_hash(p);
    }
    void output(const std::string& name, const fs::path& p) {
        outputs[name] = p.string();
        if (fs::is_regular_file(p)) hashes[p.string()] = file_hash(p);
    }
    void write(const fs::path& path) const {
        json j{{"command", command}, {"config", config}, {"inputs", inputs}, {"outputs", outputs}, {"hashes", hashes}};
        j["seed"] = seed ? json(*seed) : json(nullptr);
        write_json(path, j);
    }
};

fs::path manifest_path_for(const fs::path& output) {
    if (fs::is_directory(output)) return output / "run_manifest.json";
    return fs::path(output.string() + ".run.json");
}

ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig cfg = ExperimentConfig::desk_scale();
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
        json j = json::parse(in);
        from_json(j, cfg);
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
    return cfg;
}

const std::vector<DatasetRecord>& pick_split(const DatasetSplits& d, const std::string& name) {
    switch (split_from_string(name)) {
    case Split::Train: return d.train;
    case Split::Val: return d.val;
    case Split::Test: return d.test;
    }
    throw ConfigError("unknown split " + name);
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ssankit: text-to-image person retrieval toolkit"};
    app.require_subcommand(1);

    std::string manifest, out, config_path, vocab_path, checkpoint, query, caption, heatmap, split = "test";
    std::size_t min_count = 1, k = 10, identities = 40, images = 4, test_identities = 10, colors = 8, templates = 4;
    std::size_t epochs = 0, checkpoint_every = 1;
    std::uint64_t seed = 0;
    double palette_shift = 0.0;
    bool strict_lambda = false;
    std::string resume;

    auto* vocab_cmd = app.add_subcommand("build-vocab", "Build the word vocabulary from a manifest's train split");
    vocab_cmd->add_option("--manifest", manifest, "Dataset manifest (JSON lines)")->required();
    vocab_cmd->add_option("--out", out, "Vocabulary JSON output")->required();
    vocab_cmd->add_option("--min-count", min_count, "Drop words seen fewer times");
    vocab_cmd->add_option("--config", config_path, "Experiment config (embedding size)");

    auto* synth_cmd = app.add_subcommand("gen-synth", "Generate the synthetic pedestrian corpus");
    synth_cmd->add_option("--identities", identities, "Number of identities");
    synth_cmd->add_option("--images", images, "Images per identity");
    synth_cmd->add_option("--test-identities", test_identities, "Identities held out for the test split");
    synth_cmd->add_option("--colors", colors, "Palette size");
    synth_cmd->add_option("--templates", templates, "Caption templates");
    synth_cmd->add_option("--palette-shift", palette_shift, "Colour tint for domain-shift splits");
    synth_cmd->add_option("--seed", seed, "Generator seed");
    synth_cmd->add_option("--out", out, "Output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--manifest", manifest, "Dataset manifest")->required();
    train_cmd->add_option("--out", out, "Checkpoint directory")->required();
    train_cmd->add_option("--config", config_path, "Experiment config JSON");
    train_cmd->add_option("--vocab", vocab_path, "Prebuilt vocabulary");
    train_cmd->add_option("--seed", seed, "Training seed (overrides config)");
    train_cmd->add_option("--epochs", epochs, "Epoch count (overrides config)");
    train_cmd->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval in epochs, 0 for final only");
    train_cmd->add_option("--resume", resume, "Checkpoint directory to resume from");
    train_cmd->add_flag("--strict-lambda", strict_lambda, "Use the unclamped adaptive margin");

    auto* eval_cmd = app.add_subcommand("eval", "Rank-k evaluation of a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    eval_cmd->add_option("--manifest", manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--split", split, "Split to evaluate");
    eval_cmd->add_option("--out", out, "Metrics JSON output");

    auto* cross_cmd = app.add_subcommand("cross-eval", "Evaluate a checkpoint on another domain's split");
    cross_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    cross_cmd->add_option("--manifest", manifest, "Target-domain manifest")->required();
    cross_cmd->add_option("--split", split, "Split to evaluate");
    cross_cmd->add_option("--out", out, "Metrics JSON output");

    auto* retrieve_cmd = app.add_subcommand("retrieve", "Top-k images for a free-text query");
    retrieve_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    retrieve_cmd->add_option("--manifest", manifest, "Gallery manifest")->required();
    retrieve_cmd->add_option("--split", split, "Gallery split");
    retrieve_cmd->add_option("--query", query, "Query text")->required();
    retrieve_cmd->add_option("--k", k, "Number of results");
    retrieve_cmd->add_option("--out", out, "Result JSON output");

    auto* wam_cmd = app.add_subcommand("wam-inspect", "Dump word-to-part attention scores for a caption");
    wam_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    wam_cmd->add_option("--caption", caption, "Caption text")->required();
    wam_cmd->add_option("--out", out, "Score JSON output");
    wam_cmd->add_option("--heatmap", heatmap, "Heat-grid PNG output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunManifest run;
        run.command = app.get_subcommands().front()->get_name();

        if (*vocab_cmd) {
            const ExperimentConfig cfg = load_config(config_path);
            const DatasetSplits data = load_dataset(manifest);
            const Vocabulary vocab = build_vocabulary(data.train, min_count, cfg.model.text.embedding_dim);
            vocab.save(out);
            run.config = {{"min_count", min_count}, {"dim", cfg.model.text.embedding_dim}};
            run.input("manifest", manifest);
            run.output("vocab", out);
            run.write(manifest_path_for(out));
            std::cout << "vocabulary: " << vocab.size() << " words -> " << out << std::endl;
        } else if (*synth_cmd) {
            SyntheticSpec spec;
            spec.identities = identities;
            spec.images_per_identity = images;
            spec.test_identities = test_identities;
            spec.num_colors = colors;
            spec.num_templates = templates;
            spec.palette_shift = palette_shift;
            spec.seed = seed;
            spec.validate();
            const SyntheticDataset ds = generate_synthetic(spec);
            std::vector<DatasetRecord> all = ds.train;
            all.insert(all.end(), ds.test.begin(), ds.test.end());
            write_dataset(out, all);
            run.config = {{"identities", identities}, {"images", images}, {"test_identities", test_identities},
                          {"colors", colors}, {"templates", templates}, {"palette_shift", palette_shift}};
            run.seed = seed;
            run.output("manifest", fs::path(out) / "manifest.jsonl");
            run.write(fs::path(out) / "run_manifest.json");
            std::cout << "wrote " << all.size() << " records to " << out << std::endl;
        } else if (*train_cmd) {
            ExperimentConfig cfg = load_config(config_path);
            if (train_cmd->count("--seed")) cfg.train.seed = seed;
            if (train_cmd->count("--epochs")) cfg.train.epochs = epochs;
            if (strict_lambda) cfg.loss.strict_lambda = true;
            cfg.validate();
            const DatasetSplits data = load_dataset(manifest);
            std::optional<Vocabulary> vocab;
            if (!vocab_path.empty()) vocab = Vocabulary::load(vocab_path);

            TrainOptions options;
            options.out_dir = out;
            options.checkpoint_every = checkpoint_every;
            if (!resume.empty()) options.resume = fs::path(resume);
            options.on_epoch = [&](EpochSummary& s, const TrainedModel& m) {
                if (!data.val.empty()) {
                    EvalOptions eo;
                    eo.stream_report = false;
                    s.validation = evaluate(m, data.val, data.root, eo).metrics();
                }
                std::cout << s.to_json().dump() << std::endl;
            };
            TrainResult result = train(cfg, data, options, vocab ? &*vocab : nullptr);

            run.config = result.trained.config;
            run.seed = result.trained.config.train.seed;
            run.input("manifest", manifest);
            if (!vocab_path.empty()) run.input("vocab", vocab_path);
            if (!resume.empty()) run.input("resume", resume);
            if (result.checkpoint) {
                run.output("checkpoint", *result.checkpoint);
                run.hashes["checkpoint"] = hex64(checkpoint_hash(*result.checkpoint));
            }
            run.output("log", fs::path(out) / "train_log.jsonl");
            run.write(fs::path(out) / "run_manifest.json");
            if (result.checkpoint) std::cout << "checkpoint: " << result.checkpoint->string() << std::endl;
        } else if (*eval_cmd || *cross_cmd) {
            const DatasetSplits data = load_dataset(manifest);
            const auto& records = pick_split(data, split);
            EvalOptions eo;
            eo.cache_dir = cache_dir_from_env();
            const TrainedModel trained = load_checkpoint(checkpoint);
            eo.checkpoint_hash = checkpoint_hash(checkpoint);
            const RetrievalResult r = *cross_cmd ? cross_domain_evaluate(trained, records, data.root, eo)
                                                 : evaluate(trained, records, data.root, eo);
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << std::endl;
            const json metrics = r.metrics();
            print_json(metrics);
            if (!out.empty()) {
                write_json(out, metrics);
                run.config = trained.config;
                run.input("checkpoint", checkpoint);
                run.hashes["checkpoint"] = hex64(*eo.checkpoint_hash);
                run.input("manifest", manifest);
                run.inputs["split"] = split;
                run.output("metrics", out);
                run.write(manifest_path_for(out));
            }
        } else if (*retrieve_cmd) {
            const DatasetSplits data = load_dataset(manifest);
            const auto& records = pick_split(data, split);
            const TrainedModel trained = load_checkpoint(checkpoint);
            EvalOptions eo;
            eo.cache_dir = cache_dir_from_env();
            eo.checkpoint_hash = checkpoint_hash(checkpoint);
            const GalleryIndex gallery = encode_gallery(trained, records, data.root, eo);
            json results = json::array();
            for (const auto& hit : retrieve(trained, gallery, query, k))
                results.push_back({{"image", hit.image}, {"identity", hit.identity}, {"score", hit.score}});
            const json j{{"query", query}, {"k", k}, {"results", results}};
            print_json(j);
            if (!out.empty()) {
                write_json(out, j);
                run.input("checkpoint", checkpoint);
                run.input("manifest", manifest);
                run.config = {{"k", k}, {"split", split}};
                run.output("results", out);
                run.write(manifest_path_for(out));
            }
        } else if (*wam_cmd) {
            const TrainedModel trained = load_checkpoint(checkpoint);
            const WamDump dump = wam_inspect(trained, caption);
            print_json(dump.to_json());
            if (!heatmap.empty()) write_wam_heatmap(heatmap, dump);
            if (!out.empty()) {
                write_json(out, dump.to_json());
                run.input("checkpoint", checkpoint);
                run.config = {{"caption", caption}};
                run.output("scores", out);
                if (!heatmap.empty()) run.output("heatmap", heatmap);
                run.write(manifest_path_for(out));
            }
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
