#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ssankit/tensor.hpp"

namespace ssankit::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

// Handle to a node of the dynamic computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    double item() const { return node_->value.item(); }
    void zero_grad();

    bool same_node(const Var& other) const { return node_ == other.node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value);

// Reverse-mode sweep from a scalar root. Gradients accumulate into leaves.
void backward(const Var& root);

bool grad_enabled();

// Disables graph recording for its lifetime (evaluation paths).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Creates an op result; records `fn` only if some parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var scalar_times(const Var& s, const Var& v);
Var add_n(std::span<const Var> terms);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// ---- reductions ----
Var sum(const Var& a);
Var dot(const Var& a, const Var& b);
Var l2_norm(const Var& a);
Var cosine(const Var& a, const Var& b);
Var l2_normalize(const Var& a);

// ---- shape ----
Var concat(std::span<const Var> parts);
Var slice(const Var& a, std::size_t offset, std::size_t length);
Var element(const Var& a, std::size_t index);
Var element(const Var& a, std::size_t row, std::size_t col);
Var stack_rows(std::span<const Var> rows);
Var stack_columns(std::span<const Var> columns, std::size_t total_columns);
Var row_band(const Var& feature_map, std::size_t row_begin, std::size_t row_end);
Var reshape(const Var& a, Shape shape);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matvec(const Var& w, const Var& x);
Var linear(const Var& w, const Var& x, const Var& bias);
Var add_column_bias(const Var& x, const Var& bias);
Var scale_columns(const Var& x, const Var& column_scale);
Var embedding(const Var& table, std::size_t row);

// ---- pooling / conv ----
Var spatial_max(const Var& feature_map);
Var masked_row_max(const Var& matrix, const std::vector<bool>& column_mask);
Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad);
Var max_pool2d(const Var& input, std::size_t kernel, std::size_t stride, std::size_t pad);
Var channel_affine(const Var& input, const Var& scale, const Var& shift);

// ---- probability ----
Var softmax(const Var& logits);
Var cross_entropy(const Var& logits, std::size_t label);

} // namespace ssankit::ag
