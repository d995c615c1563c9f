#pragma once

// Feature extractor f(.) and classification head g(.) of a small MLP, plus the
// basic/empirical parameter pair and its momentum (EMA) update.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "frematch/autodiff.hpp"

namespace frematch {

struct NetSpec {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden_dims{64, 64};
    std::size_t feature_dim = 16;
    std::size_t num_classes = 2;

    void validate() const;
    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

struct ParamBlock {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
};

// Weights are stored input-major (fan_in x fan_out) so a layer computes x*W + b.
// Blocks: the hidden layers, then "feature" (-> d, relu), then "head" (d -> c).
class ParamLayout {
public:
    static ParamLayout for_spec(const NetSpec& spec);

    [[nodiscard]] std::span<const ParamBlock> blocks() const { return blocks_; }
    [[nodiscard]] std::size_t total_size() const noexcept { return total_; }
    [[nodiscard]] std::size_t num_layers() const noexcept { return blocks_.size() / 2; }

    friend bool operator==(const ParamLayout&, const ParamLayout&);

private:
    std::vector<ParamBlock> blocks_;
    std::size_t total_ = 0;
};

bool operator==(const ParamBlock& a, const ParamBlock& b);

struct DualModel {
    NetSpec spec;
    ParamLayout layout;
    std::vector<double> basic;      // theta, trained by gradient descent
    std::vector<double> empirical;  // theta', written only by ema_update
};

DualModel init_pair(const NetSpec& spec, std::uint64_t seed);

// Leaf tensors viewing a copy of a flat parameter vector.
class BoundParams {
public:
    BoundParams(const ParamLayout& layout, std::span<const double> flat, bool requires_grad);

    [[nodiscard]] const Tensor& weight(std::size_t layer) const { return tensors_.at(2 * layer); }
    [[nodiscard]] const Tensor& bias(std::size_t layer) const { return tensors_.at(2 * layer + 1); }
    [[nodiscard]] std::size_t num_layers() const noexcept { return tensors_.size() / 2; }
    [[nodiscard]] std::span<Tensor> tensors() { return tensors_; }

    // Flat gradient in layout order; zeros for blocks that received none.
    [[nodiscard]] std::vector<double> gather_grad() const;

private:
    const ParamLayout* layout_;
    std::vector<Tensor> tensors_;
};

// n x input_dim -> n x d
Tensor forward_features(const BoundParams& params, const Tensor& x);
// n x d -> n x c
Tensor forward_logits(const BoundParams& params, const Tensor& features);

// theta' <- m * theta' + (1 - m) * theta
void ema_update(DualModel& dual, double m);

// min(1 - 1/(iter + 1), m0)
double momentum_schedule(std::int64_t iter, double m0);

}  // namespace frematch
