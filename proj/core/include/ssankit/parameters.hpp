#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ssankit/archive.hpp"
#include "ssankit/autograd.hpp"

namespace ssankit {

struct Parameter {
    std::string name;
    ag::Var var;
};

// Owns every trainable tensor of a model, addressed by module path.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

    ag::Var create(const std::string& name, Tensor init);
    // He-normal init with the given fan-in.
    ag::Var create_he(const std::string& name, Shape shape, std::size_t fan_in);
    ag::Var create_zeros(const std::string& name, Shape shape);
    ag::Var create_uniform(const std::string& name, Shape shape, double bound);
    ag::Var create_normal(const std::string& name, Shape shape, double stddev);

    const ag::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<Parameter>& all() const { return params_; }
    std::size_t scalar_count() const;
    void zero_grad();

    TensorArchive snapshot(const std::string& prefix = "") const;
    // Copies values in; shapes must match. Missing keys are an error unless `allow_missing`.
    void load(const TensorArchive& archive, const std::string& prefix = "", bool allow_missing = false);

private:
    std::vector<Parameter> params_;
    std::mt19937_64 rng_;
};

// Dense affine map y = W x + b. Calls are counted so sharing can be audited.
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t out, std::size_t in, bool bias = true);

    ag::Var operator()(const ag::Var& x) const;

    const ag::Var& weight() const { return weight_; }
    const ag::Var& bias() const { return bias_; }
    std::size_t in_features() const { return weight_.shape()[1]; }
    std::size_t out_features() const { return weight_.shape()[0]; }

    std::size_t calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

private:
    ag::Var weight_;
    ag::Var bias_;
    mutable std::size_t calls_ = 0;
};

} // namespace ssankit
