#pragma once

// Dense fp64 reverse-mode differentiation.
//
// Every tensor is a row-major matrix (scalars are 1x1). Operations record a
// gradient rule on the output node when at least one operand requires a
// gradient; backward() walks the recorded graph in reverse creation order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace frematch {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
    [[nodiscard]] bool is_scalar() const noexcept { return rows == 1 && cols == 1; }
    [[nodiscard]] std::string str() const;
    friend bool operator==(const Shape&, const Shape&) = default;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Raised when a value that must be finite is not. The message names where.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
}

// Gradient rule of a recorded operation. `out_value` and `out_grad` belong to
// the operation's output; `operand_grads[i]` is the accumulation buffer of
// operand i, or an empty span when that operand does not require a gradient.
using GradRule = std::function<void(std::span<const double> out_value,
                                    std::span<const double> out_grad,
                                    std::span<const std::span<double>> operand_grads)>;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // Row-major nested initializer, e.g. matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    // Builds the output of a custom operation. The rule is recorded only when
    // some operand requires a gradient.
    static Tensor from_op(Shape shape, std::vector<double> values,
                          std::vector<Tensor> operands, GradRule rule);

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t rows() const { return shape().rows; }
    [[nodiscard]] std::size_t cols() const { return shape().cols; }
    [[nodiscard]] std::size_t size() const { return shape().size(); }
    [[nodiscard]] std::span<const double> values() const;
    [[nodiscard]] double at(std::size_t r, std::size_t c) const;
    [[nodiscard]] double item() const;

    // In-place access to a leaf's values (used for finite differences and
    // for writing parameters back). Throws on non-leaf tensors.
    [[nodiscard]] std::span<double> mutable_values();

    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] bool is_leaf() const;
    // Empty until a backward pass reaches this tensor, and again after zero_grad().
    [[nodiscard]] std::optional<std::span<const double>> grad() const;
    void zero_grad();

    // A leaf sharing no graph with this tensor and never requiring a gradient.
    [[nodiscard]] Tensor detach() const;

    [[nodiscard]] std::uint64_t sequence() const;
    [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend class Tape;
};

// The operations reachable from a root, in creation (topological) order.
class Tape {
public:
    static Tape record(const Tensor& root);

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::span<const std::shared_ptr<detail::Node>> nodes() const { return nodes_; }
    [[nodiscard]] std::vector<std::uint64_t> sequence_ids() const;

    // Runs every gradient rule exactly once, last-recorded first. Returns the
    // number of nodes visited.
    std::size_t run_backward(const Tensor& root);

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Accumulates dRoot/dLeaf into every reachable leaf that requires a gradient.
void backward(const Tensor& root);

// --- primitives ----------------------------------------------------------

// b may be a 1 x cols row vector, broadcast over the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // 1 x cols: the mean of each column
Tensor mean_cols(const Tensor& a);  // rows x 1: the mean of each row
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);    // row-wise
Tensor log_softmax(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean_square(const Tensor& a);
Tensor diag(const Tensor& v);       // 1 x d or d x 1 -> d x d

// -(1/n) * sum_i w_i * log softmax(logits)_{i, target_i}, computed with a
// stabilized log-sum-exp. An empty weight span means all weights are 1.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const double> weights = {});

// Per-row argmax, lowest index on ties. Not differentiable.
std::vector<int> argmax_rows(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }

// --- finite-difference verification --------------------------------------

struct GradCheckReport {
    std::vector<double> max_rel_error;  // one entry per input
    double worst = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares analytic gradients of `loss_fn` with central differences taken on
// each element of `inputs` (leaves that loss_fn reads). The relative error of
// an element is |a - n| / max(|a|, |n|, 1e-4).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<Tensor> inputs, double step = 1e-5, double tol = 1e-4);

}  // namespace frematch
