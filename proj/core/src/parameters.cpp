#include "ssankit/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssankit/config.hpp"

namespace ssankit {

ag::Var ParameterStore::create(const std::string& name, Tensor init) {
    if (contains(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    params_.push_back({name, ag::leaf(std::move(init))});
    return params_.back().var;
}

ag::Var ParameterStore::create_he(const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1))));
    for (auto& v : t.values()) v = dist(rng_);
    return create(name, std::move(t));
}

ag::Var ParameterStore::create_zeros(const std::string& name, Shape shape) {
    return create(name, Tensor(std::move(shape), 0.0));
}

ag::Var ParameterStore::create_uniform(const std::string& name, Shape shape, double bound) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = dist(rng_);
    return create(name, std::move(t));
}

ag::Var ParameterStore::create_normal(const std::string& name, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng_);
    return create(name, std::move(t));
}

const ag::Var& ParameterStore::get(const std::string& name) const {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
    if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->var;
}

bool ParameterStore::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

TensorArchive ParameterStore::snapshot(const std::string& prefix) const {
    TensorArchive out;
    for (const auto& p : params_) out.emplace(prefix + p.name, p.var.value());
    return out;
}

void ParameterStore::load(const TensorArchive& archive, const std::string& prefix, bool allow_missing) {
    for (auto& p : params_) {
        auto it = archive.find(prefix + p.name);
        if (it == archive.end()) {
            if (allow_missing) continue;
            throw DataError("archive is missing parameter '" + prefix + p.name + "'");
        }
        if (it->second.shape() != p.var.shape()) {
            throw DataError("parameter '" + p.name + "' has shape " + shape_string(p.var.shape()) +
                            " but archive holds " + shape_string(it->second.shape()));
        }
        p.var.mutable_value() = it->second;
    }
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t out, std::size_t in, bool bias)
    : weight_(store.create_he(name + ".weight", Shape{out, in}, in)) {
    if (bias) bias_ = store.create_zeros(name + ".bias", Shape{out});
}

ag::Var Linear::operator()(const ag::Var& x) const {
    ++calls_;
    return ag::linear(weight_, x, bias_);
}

} // namespace ssankit
