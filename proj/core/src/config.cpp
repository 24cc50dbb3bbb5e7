#include "ssankit/config.hpp"

namespace ssankit {

using nlohmann::json;

std::string to_string(VisualVariant v) { return v == VisualVariant::TinyCnn ? "tiny-cnn" : "resnet50"; }

VisualVariant visual_variant_from_string(const std::string& s) {
    if (s == "tiny-cnn") return VisualVariant::TinyCnn;
    if (s == "resnet50" || s == "resnet50-like") return VisualVariant::ResNet50;
    throw ConfigError("unknown visual encoder variant '" + s + "'");
}

void VisualEncoderConfig::validate() const {
    if (channels == 0) throw ConfigError("visual channels must be positive");
    if (variant == VisualVariant::ResNet50 && channels != 2048) {
        throw ConfigError("resnet50 variant produces 2048 channels, config asks for " + std::to_string(channels));
    }
    if (variant == VisualVariant::TinyCnn && channels % 4 != 0) {
        throw ConfigError("tiny-cnn channels must be a multiple of 4");
    }
    if (input_height == 0 || input_width == 0 || input_height % stride() != 0 || input_width % stride() != 0) {
        throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                          " is not divisible by the encoder stride " + std::to_string(stride()));
    }
}

ModelConfig ModelConfig::reference() {
    ModelConfig c;
    c.visual.variant = VisualVariant::ResNet50;
    c.visual.channels = 2048;
    c.visual.input_height = 384;
    c.visual.input_width = 128;
    c.text.embedding_dim = 512;
    c.text.max_length = 64;
    c.parts = 6;
    c.embed_dim = 1024;
    c.relation_dim = 512;
    c.relation_out = 512;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.visual.variant = VisualVariant::TinyCnn;
    c.visual.channels = 32;
    c.visual.input_height = 96;
    c.visual.input_width = 32;
    c.text.embedding_dim = 32;
    c.text.max_length = 32;
    c.parts = 3;
    c.embed_dim = 32;
    c.relation_dim = 32;
    c.relation_out = 16;
    return c;
}

void ModelConfig::validate() const {
    visual.validate();
    if (parts == 0) throw ConfigError("number of parts K must be positive");
    const std::size_t h = visual.feature_height();
    if (h % parts != 0) {
        throw ConfigError("feature map height " + std::to_string(h) + " is not divisible by K=" +
                          std::to_string(parts));
    }
    if (use_prl && !use_pfl) throw ConfigError("part relation learning requires part feature learning");
    if (use_prl && parts < 2) throw ConfigError("relation learning requires K >= 2");
    if (text.embedding_dim == 0 || text.max_length == 0) throw ConfigError("text dimensions must be positive");
    if (embed_dim == 0 || relation_dim == 0 || relation_out == 0) throw ConfigError("head dimensions must be positive");
    if (vocab_rows < 2) throw ConfigError("vocabulary must reserve padding and unknown rows");
    if (num_identities == 0) throw ConfigError("at least one identity class is required");
}

void LossConfig::validate() const {
    if (!(margin > 0.0 && margin < 2.0)) throw ConfigError("margin alpha_1 must lie in (0, 2)");
    if (beta < 0.0) throw ConfigError("beta must be non-negative");
    if (id_weight < 0.0) throw ConfigError("id_weight must be non-negative");
    if (weight_global < 0.0 || weight_pfl < 0.0 || weight_prl < 0.0) {
        throw ConfigError("loss stream weights must be non-negative");
    }
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    return (decay_epoch > 0 && epoch >= decay_epoch) ? learning_rate * decay_factor : learning_rate;
}

void TrainConfig::validate() const {
    if (batch_size < 4) throw ConfigError("batch size must be at least 4 for hard-negative mining");
    if (images_per_identity == 0 || batch_size % images_per_identity != 0) {
        throw ConfigError("batch size must be a multiple of images_per_identity");
    }
    if (batch_size / images_per_identity < 2) throw ConfigError("a batch must hold at least two identities");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

ExperimentConfig ExperimentConfig::desk_scale() {
    ExperimentConfig c;
    c.model = ModelConfig::tiny();
    c.loss.use_id_loss = false;
    c.train.batch_size = 16;
    c.train.epochs = 30;
    c.train.learning_rate = 3e-3;
    c.train.decay_epoch = 20;
    return c;
}

void ExperimentConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
}

void to_json(json& j, const VisualEncoderConfig& c) {
    j = json{{"variant", to_string(c.variant)},
             {"channels", c.channels},
             {"input_height", c.input_height},
             {"input_width", c.input_width},
             {"pretrained_path", c.pretrained_path}};
}

void from_json(const json& j, VisualEncoderConfig& c) {
    if (j.contains("variant")) c.variant = visual_variant_from_string(j.at("variant").get<std::string>());
    c.channels = j.value("channels", c.channels);
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    c.pretrained_path = j.value("pretrained_path", c.pretrained_path);
}

void to_json(json& j, const TextEncoderConfig& c) {
    j = json{{"embedding_dim", c.embedding_dim}, {"hidden", c.hidden}, {"max_length", c.max_length}};
}

void from_json(const json& j, TextEncoderConfig& c) {
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.max_length = j.value("max_length", c.max_length);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"visual", c.visual},
             {"text", c.text},
             {"parts", c.parts},
             {"embed_dim", c.embed_dim},
             {"relation_dim", c.relation_dim},
             {"relation_out", c.relation_out},
             {"use_pfl", c.use_pfl},
             {"use_prl", c.use_prl},
             {"vocab_rows", c.vocab_rows},
             {"num_identities", c.num_identities},
             {"init_seed", c.init_seed}};
}

void from_json(const json& j, ModelConfig& c) {
    if (j.contains("visual")) j.at("visual").get_to(c.visual);
    if (j.contains("text")) j.at("text").get_to(c.text);
    c.parts = j.value("parts", c.parts);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.relation_dim = j.value("relation_dim", c.relation_dim);
    c.relation_out = j.value("relation_out", c.relation_out);
    c.use_pfl = j.value("use_pfl", c.use_pfl);
    c.use_prl = j.value("use_prl", c.use_prl);
    c.vocab_rows = j.value("vocab_rows", c.vocab_rows);
    c.num_identities = j.value("num_identities", c.num_identities);
    c.init_seed = j.value("init_seed", c.init_seed);
}

void to_json(json& j, const LossConfig& c) {
    j = json{{"margin", c.margin},
             {"beta", c.beta},
             {"weight_global", c.weight_global},
             {"weight_pfl", c.weight_pfl},
             {"weight_prl", c.weight_prl},
             {"strict_lambda", c.strict_lambda},
             {"use_id_loss", c.use_id_loss},
             {"id_weight", c.id_weight}};
}

void from_json(const json& j, LossConfig& c) {
    c.margin = j.value("margin", c.margin);
    c.beta = j.value("beta", c.beta);
    c.weight_global = j.value("weight_global", c.weight_global);
    c.weight_pfl = j.value("weight_pfl", c.weight_pfl);
    c.weight_prl = j.value("weight_prl", c.weight_prl);
    c.strict_lambda = j.value("strict_lambda", c.strict_lambda);
    c.use_id_loss = j.value("use_id_loss", c.use_id_loss);
    c.id_weight = j.value("id_weight", c.id_weight);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"learning_rate", c.learning_rate},
             {"decay_epoch", c.decay_epoch},
             {"decay_factor", c.decay_factor},
             {"images_per_identity", c.images_per_identity},
             {"horizontal_flip", c.horizontal_flip},
             {"grad_clip_norm", c.grad_clip_norm},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"adam_epsilon", c.adam_epsilon},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay_epoch = j.value("decay_epoch", c.decay_epoch);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.images_per_identity = j.value("images_per_identity", c.images_per_identity);
    c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
}

void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"model", c.model}, {"loss", c.loss}, {"train", c.train}};
}

void from_json(const json& j, ExperimentConfig& c) {
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("loss")) j.at("loss").get_to(c.loss);
    if (j.contains("train")) j.at("train").get_to(c.train);
}

} // namespace ssankit
