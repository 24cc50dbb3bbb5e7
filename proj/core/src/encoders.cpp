#include "ssankit/encoders.hpp"

#include <array>
#include <cmath>

#include "ssankit/archive.hpp"

namespace ssankit {

PartSlice partition(const VisualFeatureMap& features, std::size_t parts) {
    const std::size_t h = features.height();
    if (parts == 0 || h % parts != 0) {
        throw ConfigError("feature map height " + std::to_string(h) + " is not divisible by K=" +
                          std::to_string(parts));
    }
    const std::size_t band = h / parts;
    PartSlice out;
    for (std::size_t k = 0; k < parts; ++k) out.bands.push_back(ag::row_band(features.map, k * band, (k + 1) * band));
    return out;
}

// ---------------------------------------------------------------------------
// Visual encoder

ag::Var VisualEncoder::ConvUnit::apply(const ag::Var& x) const {
    ag::Var y = ag::conv2d(x, weight, bias, stride, pad);
    return scale.defined() ? ag::channel_affine(y, scale, shift) : y;
}

VisualEncoder::ConvUnit VisualEncoder::conv_unit(ParameterStore& store, const std::string& conv_name,
                                                 const std::string& bn_name, std::size_t cin, std::size_t cout,
                                                 std::size_t kernel, std::size_t stride, std::size_t pad,
                                                 bool zero_scale) {
    ConvUnit u;
    u.stride = stride;
    u.pad = pad;
    u.weight = store.create_he(conv_name + ".weight", Shape{cout, cin, kernel, kernel}, cin * kernel * kernel);
    if (bn_name.empty()) {
        u.bias = store.create_zeros(conv_name + ".bias", Shape{cout});
    } else {
        u.scale = store.create(bn_name + ".scale", Tensor(Shape{cout}, zero_scale ? 0.0 : 1.0));
        u.shift = store.create_zeros(bn_name + ".shift", Shape{cout});
    }
    return u;
}

VisualEncoder::VisualEncoder(ParameterStore& store, const VisualEncoderConfig& config) : config_(config) {
    config_.validate();
    if (config_.variant == VisualVariant::TinyCnn) {
        const std::size_t c = config_.channels;
        const std::array<std::size_t, 4> widths{c / 2, c, c, c};
        std::size_t cin = 3;
        for (std::size_t b = 0; b < widths.size(); ++b) {
            tiny_blocks_.push_back(
                conv_unit(store, "visual.block" + std::to_string(b) + ".conv", "", cin, widths[b], 3, 1, 1));
            cin = widths[b];
        }
        return;
    }

    stem_ = conv_unit(store, "visual.conv1", "visual.bn1", 3, 64, 7, 2, 3);
    const std::array<std::size_t, 4> depth{3, 4, 6, 3};
    const std::array<std::size_t, 4> width{64, 128, 256, 512};
    std::size_t cin = 64;
    for (std::size_t layer = 0; layer < 4; ++layer) {
        for (std::size_t i = 0; i < depth[layer]; ++i) {
            const std::string prefix = "visual.layer" + std::to_string(layer + 1) + "." + std::to_string(i);
            const std::size_t stride = (i == 0 && layer > 0) ? 2 : 1;
            const std::size_t w = width[layer];
            Bottleneck b;
            // The last scale of each residual branch starts at zero so the untrained net stays bounded.
            b.reduce = conv_unit(store, prefix + ".conv1", prefix + ".bn1", cin, w, 1, 1, 0);
            b.spatial = conv_unit(store, prefix + ".conv2", prefix + ".bn2", w, w, 3, stride, 1);
            b.expand = conv_unit(store, prefix + ".conv3", prefix + ".bn3", w, w * 4, 1, 1, 0, true);
            if (i == 0) {
                b.has_downsample = true;
                b.downsample =
                    conv_unit(store, prefix + ".downsample.0", prefix + ".downsample.1", cin, w * 4, 1, stride, 0);
            }
            bottlenecks_.push_back(std::move(b));
            cin = w * 4;
        }
    }
}

Shape VisualEncoder::output_shape() const {
    return Shape{config_.channels, config_.feature_height(), config_.feature_width()};
}

VisualFeatureMap VisualEncoder::operator()(const Tensor& image) const {
    const Shape expected{3, config_.input_height, config_.input_width};
    if (image.shape() != expected) {
        throw DataError("image tensor has shape " + shape_string(image.shape()) + ", expected " +
                        shape_string(expected));
    }
    ag::Var x = ag::constant(image);
    if (config_.variant == VisualVariant::TinyCnn) {
        // The last block stays linear so F is signed.
        for (std::size_t b = 0; b < tiny_blocks_.size(); ++b) {
            ag::Var y = tiny_blocks_[b].apply(x);
            x = ag::max_pool2d(b + 1 < tiny_blocks_.size() ? ag::relu(y) : y, 2, 2, 0);
        }
        return {x};
    }
    x = ag::max_pool2d(ag::relu(stem_.apply(x)), 3, 2, 1);
    for (const auto& b : bottlenecks_) {
        ag::Var y = ag::relu(b.reduce.apply(x));
        y = ag::relu(b.spatial.apply(y));
        y = b.expand.apply(y);
        x = ag::relu(ag::add(y, b.has_downsample ? b.downsample.apply(x) : x));
    }
    return {x};
}

void VisualEncoder::load_pretrained(const std::filesystem::path& path, ParameterStore& store) const {
    if (config_.variant != VisualVariant::ResNet50) throw ConfigError("pretrained weights are only defined for resnet50");
    const TensorArchive archive = read_archive(path);
    constexpr double kEps = 1e-5;
    for (const auto& p : store.all()) {
        if (!p.name.starts_with("visual.")) continue;
        const std::string key = p.name.substr(7);
        ag::Var var = p.var;
        if (key.ends_with(".weight")) {
            auto it = archive.find(key);
            if (it == archive.end()) throw DataError("pretrained archive lacks '" + key + "'");
            if (it->second.shape() != var.shape()) {
                throw DataError("pretrained '" + key + "' has shape " + shape_string(it->second.shape()) +
                                ", expected " + shape_string(var.shape()));
            }
            var.mutable_value() = it->second;
        } else if (key.ends_with(".scale") || key.ends_with(".shift")) {
            const std::string bn = key.substr(0, key.size() - 6);
            auto get = [&](const std::string& field) -> const Tensor& {
                auto it = archive.find(bn + "." + field);
                if (it == archive.end()) throw DataError("pretrained archive lacks '" + bn + "." + field + "'");
                return it->second;
            };
            const Tensor& gamma = get("weight");
            const Tensor& beta = get("bias");
            const Tensor& mean = get("running_mean");
            const Tensor& variance = get("running_var");
            Tensor& out = var.mutable_value();
            for (std::size_t c = 0; c < out.size(); ++c) {
                const double s = gamma[c] / std::sqrt(variance[c] + kEps);
                out[c] = key.ends_with(".scale") ? s : beta[c] - mean[c] * s;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Text encoder

TextEncoder::TextEncoder(ParameterStore& store, const TextEncoderConfig& config, std::size_t vocab_rows,
                         std::size_t channels)
    : config_(config), hidden_(config.hidden == 0 ? channels : config.hidden), channels_(channels) {
    const std::size_t v = config_.embedding_dim;
    table_ = store.create_normal("text.embedding", Shape{vocab_rows, v}, 1.0);
    for (std::size_t j = 0; j < v; ++j) table_.mutable_value().at(Vocabulary::kPad, j) = 0.0;

    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    auto make = [&](const std::string& dir) {
        return LstmWeights{store.create_uniform("text.lstm_" + dir + ".input_weight", Shape{4 * hidden_, v}, bound),
                           store.create_uniform("text.lstm_" + dir + ".recurrent_weight", Shape{4 * hidden_, hidden_},
                                                bound),
                           store.create_zeros("text.lstm_" + dir + ".bias", Shape{4 * hidden_})};
    };
    forward_ = make("forward");
    backward_ = make("backward");
    if (hidden_ != channels_) projection_ = Linear(store, "text.projection", channels_, hidden_);
}

std::vector<ag::Var> TextEncoder::embed_words(const TokenizedCaption& caption) const {
    std::vector<ag::Var> out;
    out.reserve(caption.ids.size());
    const std::size_t rows = table_.shape()[0];
    for (std::size_t i = 0; i < caption.ids.size(); ++i) {
        const auto id = caption.ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= rows) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside embedding table of " +
                                    std::to_string(rows) + " rows");
        }
        if (i >= caption.valid_length || id == Vocabulary::kPad) {
            out.push_back(ag::constant(Tensor(Shape{config_.embedding_dim}, 0.0)));
        } else {
            out.push_back(ag::embedding(table_, static_cast<std::size_t>(id)));
        }
    }
    return out;
}

std::pair<ag::Var, ag::Var> lstm_step(const TextEncoder::LstmWeights& w, const ag::Var& x, const ag::Var& h,
                                      const ag::Var& c) {
    const std::size_t hidden = h.size();
    const std::array<ag::Var, 3> terms{ag::matvec(w.input_weight, x), ag::matvec(w.recurrent_weight, h), w.bias};
    ag::Var gates = ag::add_n(terms);
    ag::Var in = ag::sigmoid(ag::slice(gates, 0, hidden));
    ag::Var forget = ag::sigmoid(ag::slice(gates, hidden, hidden));
    ag::Var cell = ag::tanh(ag::slice(gates, 2 * hidden, hidden));
    ag::Var out = ag::sigmoid(ag::slice(gates, 3 * hidden, hidden));
    ag::Var c_next = ag::add(ag::mul(forget, c), ag::mul(in, cell));
    ag::Var h_next = ag::mul(out, ag::tanh(c_next));
    return {h_next, c_next};
}

std::vector<ag::Var> TextEncoder::run_direction(const LstmWeights& w, std::span<const ag::Var> xs, bool reverse) const {
    std::vector<ag::Var> hs(xs.size());
    ag::Var h = ag::constant(Tensor(Shape{hidden_}, 0.0));
    ag::Var c = ag::constant(Tensor(Shape{hidden_}, 0.0));
    for (std::size_t step = 0; step < xs.size(); ++step) {
        const std::size_t i = reverse ? xs.size() - 1 - step : step;
        std::tie(h, c) = lstm_step(w, xs[i], h, c);
        hs[i] = h;
    }
    return hs;
}

WordBank TextEncoder::encode(std::span<const ag::Var> embeddings, const std::vector<bool>& mask) const {
    if (embeddings.size() != mask.size()) throw std::invalid_argument("embedding and mask lengths differ");
    std::size_t valid = 0;
    while (valid < mask.size() && mask[valid]) ++valid;
    if (valid == 0) throw DataError("caption has no valid positions");
    for (std::size_t i = valid; i < mask.size(); ++i)
        if (mask[i]) throw std::invalid_argument("valid positions must form a prefix");

    const auto xs = embeddings.subspan(0, valid);
    const auto fwd = run_direction(forward_, xs, false);
    const auto bwd = run_direction(backward_, xs, true);
    std::vector<ag::Var> columns;
    columns.reserve(valid);
    for (std::size_t i = 0; i < valid; ++i) {
        ag::Var e = ag::scale(ag::add(fwd[i], bwd[i]), 0.5);
        if (hidden_ != channels_) e = projection_(e);
        columns.push_back(e);
    }
    return WordBank{ag::stack_columns(columns, mask.size()), mask};
}

WordBank TextEncoder::operator()(const TokenizedCaption& caption) const {
    const auto xs = embed_words(caption);
    return encode(xs, caption.mask());
}

} // namespace ssankit
