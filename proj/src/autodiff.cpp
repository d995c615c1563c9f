#include "frematch/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace frematch {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> operands;
    GradRule rule;
};

namespace {
std::atomic<std::uint64_t> next_sequence{1};
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape.size()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape.str());
    }
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = next_sequence.fetch_add(1, std::memory_order_relaxed);
    return node;
}

}  // namespace detail

using detail::Node;

std::string Shape::str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(detail::make_node(shape, std::vector<double>(shape.size(), 0.0), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(detail::make_node(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1, 1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("matrix: ragged initializer");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from_values({r, c}, std::move(values), requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> operands,
                       GradRule rule) {
    const bool needs = std::any_of(operands.begin(), operands.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    auto node = detail::make_node(shape, std::move(values), needs);
    if (needs) {
        node->leaf = false;
        node->rule = std::move(rule);
        node->operands.reserve(operands.size());
        for (auto& t : operands) node->operands.push_back(t.node_);
    }
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->shape;
}

std::span<const double> Tensor::values() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->value;
}

double Tensor::at(std::size_t r, std::size_t c) const {
    const auto& s = shape();
    if (r >= s.rows || c >= s.cols) throw std::out_of_range("tensor: index outside " + s.str());
    return node_->value[r * s.cols + c];
}

double Tensor::item() const {
    if (!shape().is_scalar()) throw ShapeError("item: tensor of shape " + shape().str() + " is not scalar");
    return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
    if (!is_leaf()) throw std::logic_error("mutable_values: only leaves may be modified in place");
    return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

std::optional<std::span<const double>> Tensor::grad() const {
    if (!node_ || !node_->requires_grad || node_->grad.empty()) return std::nullopt;
    return std::span<const double>(node_->grad);
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    return from_values(shape(), node_->value, false);
}

std::uint64_t Tensor::sequence() const { return node_ ? node_->seq : 0; }

// --- Tape ------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{root.node()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto node = std::move(stack.back());
        stack.pop_back();
        for (const auto& op : node->operands) {
            if (op->requires_grad && seen.insert(op.get()).second) stack.push_back(op);
        }
        tape.nodes_.push_back(std::move(node));
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const auto& a, const auto& b) { return a->seq < b->seq; });
    return tape;
}

std::vector<std::uint64_t> Tape::sequence_ids() const {
    std::vector<std::uint64_t> ids;
    ids.reserve(nodes_.size());
    for (const auto& n : nodes_) ids.push_back(n->seq);
    return ids;
}

std::size_t Tape::run_backward(const Tensor& root) {
    if (nodes_.empty()) return 0;
    for (auto& n : nodes_) {
        if (!n->leaf) {
            n->grad.assign(n->value.size(), 0.0);
        } else if (n->grad.empty()) {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    root.node()->grad[0] += 1.0;

    std::vector<std::span<double>> operand_grads;
    std::size_t visited = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        ++visited;
        if (n.leaf || !n.rule) continue;
        operand_grads.clear();
        for (auto& op : n.operands) {
            operand_grads.push_back(op->requires_grad ? std::span<double>(op->grad) : std::span<double>());
        }
        n.rule(n.value, n.grad, operand_grads);
    }
    for (auto& n : nodes_) {
        if (!n->leaf) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
    return visited;
}

void backward(const Tensor& root) {
    if (!root.shape().is_scalar()) {
        throw ShapeError("backward: root must be scalar, got " + root.shape().str());
    }
    Tape tape = Tape::record(root);
    tape.run_backward(root);
}

// --- primitives ------------------------------------------------------------

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <class F>
std::vector<double> map_values(std::span<const double> x, F f) {
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), f);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa == sb) {
        std::vector<double> out(sa.size());
        auto va = a.values(), vb = b.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
        return Tensor::from_op(sa, std::move(out), {a, b},
                               [](auto, std::span<const double> g, auto grads) {
                                   for (auto& dst : grads)
                                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                               });
    }
    if (sb.rows != 1 || sb.cols != sa.cols) shape_mismatch("add", sa, sb);
    std::vector<double> out(sa.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t r = 0; r < sa.rows; ++r)
        for (std::size_t c = 0; c < sa.cols; ++c) out[r * sa.cols + c] = va[r * sa.cols + c] + vb[c];
    return Tensor::from_op(sa, std::move(out), {a, b},
                           [sa](auto, std::span<const double> g, auto grads) {
                               if (!grads[0].empty())
                                   for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                               if (!grads[1].empty())
                                   for (std::size_t r = 0; r < sa.rows; ++r)
                                       for (std::size_t c = 0; c < sa.cols; ++c)
                                           grads[1][c] += g[r * sa.cols + c];
                           });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa == sb) {
        std::vector<double> out(sa.size());
        auto va = a.values(), vb = b.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
        return Tensor::from_op(sa, std::move(out), {a, b},
                               [](auto, std::span<const double> g, auto grads) {
                                   if (!grads[0].empty())
                                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                                   if (!grads[1].empty())
                                       for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] -= g[i];
                               });
    }
    if (sb.rows != 1 || sb.cols != sa.cols) shape_mismatch("sub", sa, sb);
    std::vector<double> out(sa.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t r = 0; r < sa.rows; ++r)
        for (std::size_t c = 0; c < sa.cols; ++c) out[r * sa.cols + c] = va[r * sa.cols + c] - vb[c];
    return Tensor::from_op(sa, std::move(out), {a, b},
                           [sa](auto, std::span<const double> g, auto grads) {
                               if (!grads[0].empty())
                                   for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                               if (!grads[1].empty())
                                   for (std::size_t r = 0; r < sa.rows; ++r)
                                       for (std::size_t c = 0; c < sa.cols; ++c)
                                           grads[1][c] -= g[r * sa.cols + c];
                           });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
    std::vector<double> out(a.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    auto na = a.node(), nb = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {a, b},
                           [na, nb](auto, std::span<const double> g, auto grads) {
                               if (!grads[0].empty())
                                   for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * nb->value[i];
                               if (!grads[1].empty())
                                   for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] += g[i] * na->value[i];
                           });
}

Tensor scale(const Tensor& a, double k) {
    return Tensor::from_op(a.shape(), map_values(a.values(), [k](double x) { return k * x; }), {a},
                           [k](auto, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += k * g[i];
                           });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.cols != sb.rows) shape_mismatch("matmul", sa, sb);
    const std::size_t n = sa.rows, k = sa.cols, m = sb.cols;
    std::vector<double> out(n * m, 0.0);
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &vb[p * m];
            double* orow = &out[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    auto na = a.node(), nb = b.node();
    return Tensor::from_op({n, m}, std::move(out), {a, b},
                           [na, nb, n, k, m](auto, std::span<const double> g, auto grads) {
                               if (!grads[0].empty()) {
                                   // dA = G * B^T
                                   const auto& vb = nb->value;
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t p = 0; p < k; ++p) {
                                           double acc = 0.0;
                                           for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * vb[p * m + j];
                                           grads[0][i * k + p] += acc;
                                       }
                               }
                               if (!grads[1].empty()) {
                                   // dB = A^T * G
                                   const auto& va = na->value;
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t p = 0; p < k; ++p) {
                                           const double aip = va[i * k + p];
                                           if (aip == 0.0) continue;
                                           for (std::size_t j = 0; j < m; ++j) grads[1][p * m + j] += aip * g[i * m + j];
                                       }
                               }
                           });
}

Tensor transpose(const Tensor& a) {
    const Shape s = a.shape();
    std::vector<double> out(s.size());
    auto va = a.values();
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) out[c * s.rows + r] = va[r * s.cols + c];
    return Tensor::from_op({s.cols, s.rows}, std::move(out), {a},
                           [s](auto, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r)
                                   for (std::size_t c = 0; c < s.cols; ++c)
                                       grads[0][r * s.cols + c] += g[c * s.rows + r];
                           });
}

Tensor mean_rows(const Tensor& a) {
    const Shape s = a.shape();
    if (s.rows == 0) throw ShapeError("mean_rows: empty tensor " + s.str());
    std::vector<double> out(s.cols, 0.0);
    auto va = a.values();
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) out[c] += va[r * s.cols + c];
    const double inv = 1.0 / static_cast<double>(s.rows);
    for (auto& v : out) v *= inv;
    return Tensor::from_op({1, s.cols}, std::move(out), {a},
                           [s, inv](auto, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r)
                                   for (std::size_t c = 0; c < s.cols; ++c) grads[0][r * s.cols + c] += g[c] * inv;
                           });
}

Tensor mean_cols(const Tensor& a) {
    const Shape s = a.shape();
    if (s.cols == 0) throw ShapeError("mean_cols: empty tensor " + s.str());
    std::vector<double> out(s.rows, 0.0);
    auto va = a.values();
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) out[r] += va[r * s.cols + c];
    const double inv = 1.0 / static_cast<double>(s.cols);
    for (auto& v : out) v *= inv;
    return Tensor::from_op({s.rows, 1}, std::move(out), {a},
                           [s, inv](auto, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r)
                                   for (std::size_t c = 0; c < s.cols; ++c) grads[0][r * s.cols + c] += g[r] * inv;
                           });
}

Tensor relu(const Tensor& a) {
    auto na = a.node();
    return Tensor::from_op(a.shape(), map_values(a.values(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                           [na](auto, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   if (na->value[i] > 0.0) grads[0][i] += g[i];
                           });
}

Tensor sigmoid(const Tensor& a) {
    auto f = [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    };
    return Tensor::from_op(a.shape(), map_values(a.values(), f), {a},
                           [](std::span<const double> y, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * y[i] * (1.0 - y[i]);
                           });
}

namespace {

std::vector<double> row_log_softmax(std::span<const double> x, const Shape& s) {
    std::vector<double> out(s.size());
    for (std::size_t r = 0; r < s.rows; ++r) {
        const double* row = &x[r * s.cols];
        const double mx = *std::max_element(row, row + s.cols);
        double acc = 0.0;
        for (std::size_t c = 0; c < s.cols; ++c) acc += std::exp(row[c] - mx);
        const double lse = mx + std::log(acc);
        for (std::size_t c = 0; c < s.cols; ++c) out[r * s.cols + c] = row[c] - lse;
    }
    return out;
}

}  // namespace

Tensor softmax(const Tensor& a) {
    const Shape s = a.shape();
    if (s.cols == 0) throw ShapeError("softmax: empty rows " + s.str());
    auto out = row_log_softmax(a.values(), s);
    for (auto& v : out) v = std::exp(v);
    return Tensor::from_op(s, std::move(out), {a},
                           [s](std::span<const double> y, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t c = 0; c < s.cols; ++c) dot += g[r * s.cols + c] * y[r * s.cols + c];
                                   for (std::size_t c = 0; c < s.cols; ++c) {
                                       const std::size_t i = r * s.cols + c;
                                       grads[0][i] += y[i] * (g[i] - dot);
                                   }
                               }
                           });
}

Tensor log_softmax(const Tensor& a) {
    const Shape s = a.shape();
    if (s.cols == 0) throw ShapeError("log_softmax: empty rows " + s.str());
    return Tensor::from_op(s, row_log_softmax(a.values(), s), {a},
                           [s](std::span<const double> y, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r) {
                                   double gsum = 0.0;
                                   for (std::size_t c = 0; c < s.cols; ++c) gsum += g[r * s.cols + c];
                                   for (std::size_t c = 0; c < s.cols; ++c) {
                                       const std::size_t i = r * s.cols + c;
                                       grads[0][i] += g[i] - std::exp(y[i]) * gsum;
                                   }
                               }
                           });
}

Tensor log(const Tensor& a) {
    for (double x : a.values()) {
        if (!(x > 0.0)) throw DomainError("log: non-positive operand " + std::to_string(x));
    }
    auto na = a.node();
    return Tensor::from_op(a.shape(), map_values(a.values(), [](double x) { return std::log(x); }), {a},
                           [na](auto, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] / na->value[i];
                           });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.values()) acc += x;
    return Tensor::from_op({1, 1}, {acc}, {a},
                           [](auto, std::span<const double> g, auto grads) {
                               for (auto& v : grads[0]) v += g[0];
                           });
}

Tensor mean_square(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean_square: empty tensor");
    double acc = 0.0;
    for (double x : a.values()) acc += x * x;
    const double inv = 1.0 / static_cast<double>(a.size());
    auto na = a.node();
    return Tensor::from_op({1, 1}, {acc * inv}, {a},
                           [na, inv](auto, std::span<const double> g, auto grads) {
                               const double k = 2.0 * inv * g[0];
                               for (std::size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += k * na->value[i];
                           });
}

Tensor diag(const Tensor& v) {
    const Shape s = v.shape();
    if (s.rows != 1 && s.cols != 1) throw ShapeError("diag: expected a vector, got " + s.str());
    const std::size_t d = s.size();
    std::vector<double> out(d * d, 0.0);
    auto vv = v.values();
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = vv[i];
    return Tensor::from_op({d, d}, std::move(out), {v},
                           [d](auto, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < d; ++i) grads[0][i] += g[i * d + i];
                           });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const double> weights) {
    const Shape s = logits.shape();
    if (targets.size() != s.rows) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + s.str());
    }
    if (!weights.empty() && weights.size() != s.rows) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(weights.size()) +
                         " weights for logits " + s.str());
    }
    if (s.rows == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= s.cols) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(t) +
                                        " outside [0, " + std::to_string(s.cols) + ")");
        }
    }
    auto logp = row_log_softmax(logits.values(), s);
    const double inv_n = 1.0 / static_cast<double>(s.rows);
    double acc = 0.0;
    for (std::size_t r = 0; r < s.rows; ++r) {
        const double w = weights.empty() ? 1.0 : weights[r];
        if (w != 0.0) acc -= w * logp[r * s.cols + static_cast<std::size_t>(targets[r])];
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<double> wts(weights.begin(), weights.end());
    return Tensor::from_op({1, 1}, {acc * inv_n}, {logits},
                           [s, inv_n, logp = std::move(logp), tgt = std::move(tgt), wts = std::move(wts)](
                               auto, std::span<const double> g, auto grads) {
                               for (std::size_t r = 0; r < s.rows; ++r) {
                                   const double w = wts.empty() ? 1.0 : wts[r];
                                   if (w == 0.0) continue;
                                   const double k = g[0] * w * inv_n;
                                   for (std::size_t c = 0; c < s.cols; ++c) {
                                       const std::size_t i = r * s.cols + c;
                                       const double onehot = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
                                       grads[0][i] += k * (std::exp(logp[i]) - onehot);
                                   }
                               }
                           });
}

std::vector<int> argmax_rows(const Tensor& a) {
    const Shape s = a.shape();
    auto v = a.values();
    std::vector<int> out(s.rows, 0);
    for (std::size_t r = 0; r < s.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < s.cols; ++c)
            if (v[r * s.cols + c] > v[r * s.cols + best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

// --- grad_check ------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs,
                           double step, double tol) {
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw std::invalid_argument("grad_check: step " + std::to_string(step) + " outside [1e-7, 1e-3]");
    }
    for (auto& in : inputs) {
        if (!in.is_leaf() || !in.requires_grad()) {
            throw std::invalid_argument("grad_check: inputs must be leaves that require a gradient");
        }
        in.zero_grad();
    }
    const Tensor loss = loss_fn();
    const double again = loss_fn().item();
    if (loss.item() != again) {
        throw std::runtime_error("grad_check: loss_fn is not deterministic (" + std::to_string(loss.item()) +
                                 " vs " + std::to_string(again) + ")");
    }
    backward(loss);

    GradCheckReport report;
    report.tolerance = tol;
    for (auto& in : inputs) {
        std::vector<double> analytic(in.size(), 0.0);
        if (auto g = in.grad()) std::copy(g->begin(), g->end(), analytic.begin());
        auto vals = in.mutable_values();
        double worst = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double fp = loss_fn().item();
            vals[i] = saved - step;
            const double fm = loss_fn().item();
            vals[i] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
            double err = std::abs(analytic[i] - numeric) / denom;
            if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
            worst = std::max(worst, err);
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    report.passed = report.worst <= tol;
    return report;
}

}  // namespace frematch
