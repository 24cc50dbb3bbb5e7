#include "ssankit/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace ssankit::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstVecMap as_vector(const Tensor& t) { return ConstVecMap(t.data(), static_cast<Eigen::Index>(t.size())); }
VecMap as_vector(Tensor& t) { return VecMap(t.data(), static_cast<Eigen::Index>(t.size())); }

// Gradient buffer of parent `i`, or nullptr when that parent is not differentiable.
Tensor* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

const Tensor& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.value().rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    shape_string(a.shape()));
    }
}

template <class F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> fn) {
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return make_result(std::move(out), {a}, std::move(fn));
}

} // namespace

Tensor& Node::ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var leaf(Tensor value) { return Var(std::move(value), true); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled) return Var(std::move(node));
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (!any) return Var(std::move(node));
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(fn);
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.size() != 1) throw std::invalid_argument("backward: root must be a scalar");

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    as_vector(out) += as_vector(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t i = 0; i < 2; ++i)
            if (Tensor* g = parent_grad(self, i)) as_vector(*g) += as_vector(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    as_vector(out) -= as_vector(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += as_vector(self.grad);
        if (Tensor* g = parent_grad(self, 1)) as_vector(*g) -= as_vector(self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    as_vector(out) = as_vector(a.value()).cwiseProduct(as_vector(b.value()));
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            as_vector(*g) += as_vector(self.grad).cwiseProduct(as_vector(parent_value(self, 1)));
        if (Tensor* g = parent_grad(self, 1))
            as_vector(*g) += as_vector(self.grad).cwiseProduct(as_vector(parent_value(self, 0)));
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    as_vector(out) *= factor;
    return make_result(std::move(out), {a}, [factor](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += factor * as_vector(self.grad);
    });
}

Var scalar_times(const Var& s, const Var& v) {
    if (s.size() != 1) throw std::invalid_argument("scalar_times: first operand must be a scalar");
    Tensor out = v.value();
    as_vector(out) *= s.item();
    return make_result(std::move(out), {s, v}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) (*g)[0] += as_vector(self.grad).dot(as_vector(parent_value(self, 1)));
        if (Tensor* g = parent_grad(self, 1)) as_vector(*g) += parent_value(self, 0)[0] * as_vector(self.grad);
    });
}

Var add_n(std::span<const Var> terms) {
    if (terms.empty()) throw std::invalid_argument("add_n: no terms");
    Tensor out(terms[0].shape(), 0.0);
    for (const auto& t : terms) {
        require_same_shape(terms[0], t, "add_n");
        as_vector(out) += as_vector(t.value());
    }
    return make_result(std::move(out), {terms.begin(), terms.end()}, [](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (Tensor* g = parent_grad(self, i)) as_vector(*g) += as_vector(self.grad);
    });
}

Var sigmoid(const Var& a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double y = self.value[i];
                (*g)[i] += self.grad[i] * y * (1.0 - y);
            }
    });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double y = self.value[i];
                (*g)[i] += self.grad[i] * (1.0 - y * y);
            }
    });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) {
            const Tensor& x = parent_value(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i)
                if (x[i] > 0.0) (*g)[i] += self.grad[i];
        }
    });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += as_vector(self.grad).cwiseProduct(as_vector(self.value));
    });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); }, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            as_vector(*g) += as_vector(self.grad).cwiseQuotient(as_vector(parent_value(self, 0)));
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
    return make_result(Tensor::scalar(as_vector(a.value()).sum()), {a}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g).array() += self.grad[0];
    });
}

Var dot(const Var& a, const Var& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    return make_result(Tensor::scalar(as_vector(a.value()).dot(as_vector(b.value()))), {a, b}, [](Node& self) {
        const double g0 = self.grad[0];
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += g0 * as_vector(parent_value(self, 1));
        if (Tensor* g = parent_grad(self, 1)) as_vector(*g) += g0 * as_vector(parent_value(self, 0));
    });
}

Var l2_norm(const Var& a) {
    const double n = as_vector(a.value()).norm();
    return make_result(Tensor::scalar(n), {a}, [n](Node& self) {
        if (n == 0.0) return;
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += (self.grad[0] / n) * as_vector(parent_value(self, 0));
    });
}

Var cosine(const Var& a, const Var& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
    const auto x = as_vector(a.value());
    const auto y = as_vector(b.value());
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 || ny == 0.0) throw std::domain_error("degenerate feature");
    const double c = x.dot(y) / (nx * ny);
    return make_result(Tensor::scalar(c), {a, b}, [nx, ny, c](Node& self) {
        const double g0 = self.grad[0];
        const auto x = as_vector(parent_value(self, 0));
        const auto y = as_vector(parent_value(self, 1));
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += g0 * (y / (nx * ny) - (c / (nx * nx)) * x);
        if (Tensor* g = parent_grad(self, 1)) as_vector(*g) += g0 * (x / (nx * ny) - (c / (ny * ny)) * y);
    });
}

Var l2_normalize(const Var& a) {
    const double n = as_vector(a.value()).norm();
    if (n == 0.0) throw std::domain_error("degenerate feature");
    Tensor out = a.value();
    as_vector(out) /= n;
    return make_result(std::move(out), {a}, [n](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) {
            const auto y = as_vector(self.value);
            const auto gy = as_vector(self.grad);
            as_vector(*g) += (gy - y * y.dot(gy)) / n;
        }
    });
}

// ---------------------------------------------------------------------------
// shape

Var concat(std::span<const Var> parts) {
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    Tensor out(Shape{total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.size(), out.data() + offset);
        offset += p.size();
    }
    return make_result(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            const std::size_t n = self.parents[i]->value.size();
            if (Tensor* g = parent_grad(self, i))
                for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[offset + j];
            offset += n;
        }
    });
}

Var slice(const Var& a, std::size_t offset, std::size_t length) {
    if (offset + length > a.size()) throw std::out_of_range("slice out of range");
    Tensor out(Shape{length});
    std::copy(a.value().data() + offset, a.value().data() + offset + length, out.data());
    return make_result(std::move(out), {a}, [offset, length](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t j = 0; j < length; ++j) (*g)[offset + j] += self.grad[j];
    });
}

Var element(const Var& a, std::size_t index) {
    if (index >= a.size()) throw std::out_of_range("element index out of range");
    return make_result(Tensor::scalar(a.value()[index]), {a}, [index](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) (*g)[index] += self.grad[0];
    });
}

Var element(const Var& a, std::size_t row, std::size_t col) {
    require_rank(a, 2, "element");
    if (row >= a.shape()[0] || col >= a.shape()[1]) throw std::out_of_range("element index out of range");
    return element(a, row * a.shape()[1] + col);
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const std::size_t d = rows[0].size();
    Tensor out(Shape{rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != d) throw std::invalid_argument("stack_rows: ragged rows");
        std::copy(rows[r].value().data(), rows[r].value().data() + d, out.data() + r * d);
    }
    return make_result(std::move(out), {rows.begin(), rows.end()}, [d](Node& self) {
        for (std::size_t r = 0; r < self.parents.size(); ++r)
            if (Tensor* g = parent_grad(self, r))
                for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[r * d + j];
    });
}

Var stack_columns(std::span<const Var> columns, std::size_t total_columns) {
    if (columns.empty()) throw std::invalid_argument("stack_columns: no columns");
    if (columns.size() > total_columns) throw std::invalid_argument("stack_columns: too many columns");
    const std::size_t rows = columns[0].size();
    Tensor out(Shape{rows, total_columns}, 0.0);
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].size() != rows) throw std::invalid_argument("stack_columns: ragged columns");
        for (std::size_t r = 0; r < rows; ++r) out.at(r, c) = columns[c].value()[r];
    }
    return make_result(std::move(out), {columns.begin(), columns.end()}, [rows, total_columns](Node& self) {
        for (std::size_t c = 0; c < self.parents.size(); ++c)
            if (Tensor* g = parent_grad(self, c))
                for (std::size_t r = 0; r < rows; ++r) (*g)[r] += self.grad[r * total_columns + c];
    });
}

Var row_band(const Var& feature_map, std::size_t row_begin, std::size_t row_end) {
    require_rank(feature_map, 3, "row_band");
    const auto& s = feature_map.shape();
    const std::size_t channels = s[0], height = s[1], width = s[2];
    if (row_begin >= row_end || row_end > height) throw std::out_of_range("row_band out of range");
    const std::size_t band = row_end - row_begin;
    Tensor out(Shape{channels, band, width});
    const Tensor& x = feature_map.value();
    for (std::size_t c = 0; c < channels; ++c)
        std::copy_n(x.data() + (c * height + row_begin) * width, band * width, out.data() + c * band * width);
    return make_result(std::move(out), {feature_map}, [=](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = 0; i < band * width; ++i)
                    g->data()[(c * height + row_begin) * width + i] += self.grad.data()[c * band * width + i];
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += as_vector(self.grad);
    });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor out(Shape{m, n});
    as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto gy = as_matrix(std::as_const(self.grad), m, n);
        if (Tensor* g = parent_grad(self, 0))
            as_matrix(*g, m, k).noalias() += gy * as_matrix(parent_value(self, 1), k, n).transpose();
        if (Tensor* g = parent_grad(self, 1))
            as_matrix(*g, k, n).noalias() += as_matrix(parent_value(self, 0), m, k).transpose() * gy;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.shape()[0], d = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != d) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    Tensor out(Shape{m, n});
    as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, d) * as_matrix(b.value(), n, d).transpose();
    return make_result(std::move(out), {a, b}, [m, d, n](Node& self) {
        const auto gy = as_matrix(std::as_const(self.grad), m, n);
        if (Tensor* g = parent_grad(self, 0))
            as_matrix(*g, m, d).noalias() += gy * as_matrix(parent_value(self, 1), n, d);
        if (Tensor* g = parent_grad(self, 1))
            as_matrix(*g, n, d).noalias() += gy.transpose() * as_matrix(parent_value(self, 0), m, d);
    });
}

Var matvec(const Var& w, const Var& x) {
    require_rank(w, 2, "matvec");
    const std::size_t m = w.shape()[0], k = w.shape()[1];
    if (x.size() != k) {
        throw std::invalid_argument("matvec: weight " + shape_string(w.shape()) + " vs input " +
                                    shape_string(x.shape()));
    }
    Tensor out(Shape{m});
    as_vector(out).noalias() = as_matrix(w.value(), m, k) * as_vector(x.value());
    return make_result(std::move(out), {w, x}, [m, k](Node& self) {
        const auto gy = as_vector(std::as_const(self.grad));
        if (Tensor* g = parent_grad(self, 0))
            as_matrix(*g, m, k).noalias() += gy * as_vector(parent_value(self, 1)).transpose();
        if (Tensor* g = parent_grad(self, 1))
            as_vector(*g).noalias() += as_matrix(parent_value(self, 0), m, k).transpose() * gy;
    });
}

Var linear(const Var& w, const Var& x, const Var& bias) {
    Var y = matvec(w, x);
    return bias.defined() ? add(y, bias) : y;
}

Var add_column_bias(const Var& x, const Var& bias) {
    require_rank(x, 2, "add_column_bias");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (bias.size() != m) throw std::invalid_argument("add_column_bias: bias size mismatch");
    Tensor out = x.value();
    as_matrix(out, m, n).colwise() += as_vector(bias.value());
    return make_result(std::move(out), {x, bias}, [m, n](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) as_vector(*g) += as_vector(self.grad);
        if (Tensor* g = parent_grad(self, 1)) as_vector(*g) += as_matrix(std::as_const(self.grad), m, n).rowwise().sum();
    });
}

Var scale_columns(const Var& x, const Var& column_scale) {
    require_rank(x, 2, "scale_columns");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (column_scale.size() != n) throw std::invalid_argument("scale_columns: scale size mismatch");
    Tensor out(x.shape());
    as_matrix(out, m, n) = as_matrix(x.value(), m, n) * as_vector(column_scale.value()).asDiagonal();
    return make_result(std::move(out), {x, column_scale}, [m, n](Node& self) {
        const auto gy = as_matrix(std::as_const(self.grad), m, n);
        if (Tensor* g = parent_grad(self, 0))
            as_matrix(*g, m, n) += gy * as_vector(parent_value(self, 1)).asDiagonal();
        if (Tensor* g = parent_grad(self, 1))
            as_vector(*g) += gy.cwiseProduct(as_matrix(parent_value(self, 0), m, n)).colwise().sum().transpose();
    });
}

Var embedding(const Var& table, std::size_t row) {
    require_rank(table, 2, "embedding");
    const std::size_t rows = table.shape()[0], dim = table.shape()[1];
    if (row >= rows) {
        throw std::out_of_range("token id " + std::to_string(row) + " outside embedding table of " +
                                std::to_string(rows) + " rows");
    }
    Tensor out(Shape{dim});
    std::copy(table.value().data() + row * dim, table.value().data() + (row + 1) * dim, out.data());
    return make_result(std::move(out), {table}, [row, dim](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t j = 0; j < dim; ++j) (*g)[row * dim + j] += self.grad[j];
    });
}

// ---------------------------------------------------------------------------
// pooling / convolution

Var spatial_max(const Var& feature_map) {
    require_rank(feature_map, 3, "spatial_max");
    const std::size_t channels = feature_map.shape()[0];
    const std::size_t plane = feature_map.shape()[1] * feature_map.shape()[2];
    Tensor out(Shape{channels});
    std::vector<std::size_t> argmax(channels);
    const double* x = feature_map.value().data();
    for (std::size_t c = 0; c < channels; ++c) {
        const double* p = x + c * plane;
        std::size_t best = 0;
        for (std::size_t i = 1; i < plane; ++i)
            if (p[i] > p[best]) best = i;
        argmax[c] = c * plane + best;
        out[c] = p[best];
    }
    return make_result(std::move(out), {feature_map}, [argmax = std::move(argmax)](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t c = 0; c < argmax.size(); ++c) (*g)[argmax[c]] += self.grad[c];
    });
}

Var masked_row_max(const Var& matrix, const std::vector<bool>& column_mask) {
    require_rank(matrix, 2, "masked_row_max");
    const std::size_t rows = matrix.shape()[0], cols = matrix.shape()[1];
    if (column_mask.size() != cols) throw std::invalid_argument("masked_row_max: mask length mismatch");
    if (std::none_of(column_mask.begin(), column_mask.end(), [](bool b) { return b; })) {
        throw std::invalid_argument("row max pooling over a fully masked word bank");
    }
    Tensor out(Shape{rows});
    std::vector<std::size_t> argmax(rows);
    const Tensor& x = matrix.value();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = cols;
        for (std::size_t c = 0; c < cols; ++c)
            if (column_mask[c] && (best == cols || x.at(r, c) > x.at(r, best))) best = c;
        argmax[r] = r * cols + best;
        out[r] = x.at(r, best);
    }
    return make_result(std::move(out), {matrix}, [argmax = std::move(argmax)](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t r = 0; r < argmax.size(); ++r) (*g)[argmax[r]] += self.grad[r];
    });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "conv2d");
    require_rank(weight, 4, "conv2d");
    const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    const std::size_t cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[1] != cin) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                                    std::to_string(weight.shape()[1]));
    }
    if (h + 2 * pad < kh || w + 2 * pad < kw) throw std::invalid_argument("conv2d: kernel larger than input");
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    const std::size_t patch = cin * kh * kw;
    const std::size_t npos = ho * wo;

    // im2col: rows index (c, ky, kx), columns index output positions.
    Tensor col(Shape{patch, npos}, 0.0);
    const double* x = input.value().data();
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* dst = col.data() + ((c * kh + ky) * kw + kx) * npos;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        dst[oy * wo + ox] = x[(c * h + iy) * w + ix];
                    }
                }
            }

    Tensor out(Shape{cout, ho, wo});
    auto out_m = as_matrix(out, cout, npos);
    out_m.noalias() = as_matrix(weight.value(), cout, patch) * as_matrix(col, patch, npos);
    if (bias.defined()) out_m.colwise() += as_vector(bias.value());

    std::vector<Var> parents{input, weight};
    if (bias.defined()) parents.push_back(bias);
    if (!grad_enabled()) col = Tensor();
    return make_result(std::move(out), std::move(parents),
                       [col = std::move(col), cin, h, w, cout, kh, kw, ho, wo, stride, pad, patch, npos](Node& self) {
        const auto gy = as_matrix(std::as_const(self.grad), cout, npos);
        if (Tensor* g = parent_grad(self, 1))
            as_matrix(*g, cout, patch).noalias() += gy * as_matrix(col, patch, npos).transpose();
        if (self.parents.size() > 2)
            if (Tensor* g = parent_grad(self, 2)) as_vector(*g) += gy.rowwise().sum();
        if (Tensor* g = parent_grad(self, 0)) {
            RowMat dcol = as_matrix(parent_value(self, 1), cout, patch).transpose() * gy;
            double* gx = g->data();
            for (std::size_t c = 0; c < cin; ++c)
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double* src = dcol.data() + ((c * kh + ky) * kw + kx) * npos;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                gx[(c * h + iy) * w + ix] += src[oy * wo + ox];
                            }
                        }
                    }
        }
    });
}

Var max_pool2d(const Var& input, std::size_t kernel, std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "max_pool2d");
    const std::size_t channels = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    if (h + 2 * pad < kernel || w + 2 * pad < kernel) throw std::invalid_argument("max_pool2d: kernel larger than input");
    const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
    Tensor out(Shape{channels, ho, wo});
    std::vector<std::size_t> argmax(out.size());
    const double* x = input.value().data();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const std::size_t idx = (c * h + iy) * w + ix;
                        if (x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (c * ho + oy) * wo + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
    return make_result(std::move(out), {input}, [argmax = std::move(argmax)](Node& self) {
        if (Tensor* g = parent_grad(self, 0))
            for (std::size_t o = 0; o < argmax.size(); ++o) (*g)[argmax[o]] += self.grad[o];
    });
}

Var channel_affine(const Var& input, const Var& scale, const Var& shift) {
    require_rank(input, 3, "channel_affine");
    const std::size_t channels = input.shape()[0];
    const std::size_t plane = input.shape()[1] * input.shape()[2];
    if (scale.size() != channels || shift.size() != channels) {
        throw std::invalid_argument("channel_affine: parameter size mismatch");
    }
    Tensor out(input.shape());
    as_matrix(out, channels, plane) =
        (as_vector(scale.value()).asDiagonal() * as_matrix(input.value(), channels, plane)).colwise() +
        as_vector(shift.value());
    return make_result(std::move(out), {input, scale, shift}, [channels, plane](Node& self) {
        const auto gy = as_matrix(std::as_const(self.grad), channels, plane);
        if (Tensor* g = parent_grad(self, 0))
            as_matrix(*g, channels, plane) += as_vector(parent_value(self, 1)).asDiagonal() * gy;
        if (Tensor* g = parent_grad(self, 1))
            as_vector(*g) += gy.cwiseProduct(as_matrix(parent_value(self, 0), channels, plane)).rowwise().sum();
        if (Tensor* g = parent_grad(self, 2)) as_vector(*g) += gy.rowwise().sum();
    });
}

// ---------------------------------------------------------------------------
// probability

Var softmax(const Var& logits) {
    const auto z = as_vector(logits.value());
    Tensor out(logits.shape());
    auto y = as_vector(out);
    y = (z.array() - z.maxCoeff()).exp();
    y /= y.sum();
    return make_result(std::move(out), {logits}, [](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) {
            const auto y = as_vector(self.value);
            const auto gy = as_vector(self.grad);
            as_vector(*g) += y.cwiseProduct((gy.array() - gy.dot(y)).matrix());
        }
    });
}

Var cross_entropy(const Var& logits, std::size_t label) {
    if (label >= logits.size()) {
        throw std::out_of_range("identity label " + std::to_string(label) + " outside " +
                                std::to_string(logits.size()) + " classes");
    }
    const auto z = as_vector(logits.value());
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    const double loss = lse - z[static_cast<Eigen::Index>(label)];
    return make_result(Tensor::scalar(loss), {logits}, [lse, label](Node& self) {
        if (Tensor* g = parent_grad(self, 0)) {
            const auto z = as_vector(parent_value(self, 0));
            auto gz = as_vector(*g);
            gz += self.grad[0] * (z.array() - lse).exp().matrix();
            gz[static_cast<Eigen::Index>(label)] -= self.grad[0];
        }
    });
}

} // namespace ssankit::ag
