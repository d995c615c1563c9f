#include "frematch/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "frematch/random.hpp"

namespace frematch {

void NetSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("NetSpec: input_dim must be positive");
    for (auto h : hidden_dims)
        if (h == 0) throw std::invalid_argument("NetSpec: hidden dimensions must be positive");
    if (feature_dim < 2) throw std::invalid_argument("NetSpec: feature_dim must be >= 2");
    if (num_classes < 2) throw std::invalid_argument("NetSpec: num_classes must be >= 2");
}

bool operator==(const ParamBlock& a, const ParamBlock& b) {
    return a.name == b.name && a.shape == b.shape && a.offset == b.offset;
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
    return a.total_ == b.total_ && a.blocks_ == b.blocks_;
}

ParamLayout ParamLayout::for_spec(const NetSpec& spec) {
    spec.validate();
    ParamLayout layout;
    auto push_layer = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
        layout.blocks_.push_back({name + ".weight", {fan_in, fan_out}, layout.total_});
        layout.total_ += fan_in * fan_out;
        layout.blocks_.push_back({name + ".bias", {1, fan_out}, layout.total_});
        layout.total_ += fan_out;
    };
    std::size_t width = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
        push_layer("hidden" + std::to_string(i), width, spec.hidden_dims[i]);
        width = spec.hidden_dims[i];
    }
    push_layer("feature", width, spec.feature_dim);
    push_layer("head", spec.feature_dim, spec.num_classes);
    return layout;
}

DualModel init_pair(const NetSpec& spec, std::uint64_t seed) {
    DualModel dual{spec, ParamLayout::for_spec(spec), {}, {}};
    dual.basic.resize(dual.layout.total_size());
    Rng rng(derive_seed(seed, 0x1417));
    const auto blocks = dual.layout.blocks();
    for (std::size_t b = 0; b < blocks.size(); b += 2) {
        // weight and bias of one layer share the layer's fan-in
        const double bound = 1.0 / std::sqrt(static_cast<double>(blocks[b].shape.rows));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t k = b; k < b + 2; ++k) {
            const auto& blk = blocks[k];
            for (std::size_t i = 0; i < blk.shape.size(); ++i) dual.basic[blk.offset + i] = dist(rng);
        }
    }
    dual.empirical = dual.basic;
    return dual;
}

BoundParams::BoundParams(const ParamLayout& layout, std::span<const double> flat, bool requires_grad)
    : layout_(&layout) {
    if (flat.size() != layout.total_size()) {
        throw ShapeError("BoundParams: " + std::to_string(flat.size()) + " parameters for a layout of " +
                         std::to_string(layout.total_size()));
    }
    for (const auto& blk : layout.blocks()) {
        std::vector<double> values(flat.begin() + static_cast<std::ptrdiff_t>(blk.offset),
                                   flat.begin() + static_cast<std::ptrdiff_t>(blk.offset + blk.shape.size()));
        tensors_.push_back(Tensor::from_values(blk.shape, std::move(values), requires_grad));
    }
}

std::vector<double> BoundParams::gather_grad() const {
    std::vector<double> flat(layout_->total_size(), 0.0);
    const auto blocks = layout_->blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (auto g = tensors_[i].grad()) {
            std::copy(g->begin(), g->end(), flat.begin() + static_cast<std::ptrdiff_t>(blocks[i].offset));
        }
    }
    return flat;
}

Tensor forward_features(const BoundParams& params, const Tensor& x) {
    const std::size_t expected = params.weight(0).rows();
    if (x.cols() != expected) {
        throw ShapeError("forward_features: input " + x.shape().str() + " does not match input_dim " +
                         std::to_string(expected));
    }
    Tensor h = x;
    // every layer except the head carries a relu
    for (std::size_t l = 0; l + 1 < params.num_layers(); ++l) {
        h = relu(add(matmul(h, params.weight(l)), params.bias(l)));
    }
    return h;
}

Tensor forward_logits(const BoundParams& params, const Tensor& features) {
    const std::size_t head = params.num_layers() - 1;
    if (features.cols() != params.weight(head).rows()) {
        throw ShapeError("forward_logits: features " + features.shape().str() + " do not match head " +
                         params.weight(head).shape().str());
    }
    return add(matmul(features, params.weight(head)), params.bias(head));
}

void ema_update(DualModel& dual, double m) {
    if (!(m >= 0.0 && m < 1.0)) {
        throw std::invalid_argument("ema_update: momentum " + std::to_string(m) + " outside [0, 1)");
    }
    if (dual.empirical.size() != dual.basic.size()) {
        throw std::invalid_argument("ema_update: " + std::to_string(dual.empirical.size()) + " empirical vs " +
                                    std::to_string(dual.basic.size()) + " basic parameters");
    }
    const double keep = 1.0 - m;
    for (std::size_t i = 0; i < dual.empirical.size(); ++i) {
        dual.empirical[i] = m * dual.empirical[i] + keep * dual.basic[i];
    }
}

double momentum_schedule(std::int64_t iter, double m0) {
    if (!(m0 >= 0.0 && m0 < 1.0)) {
        throw std::invalid_argument("momentum_schedule: m0 " + std::to_string(m0) + " outside [0, 1)");
    }
    if (iter < 0) throw std::invalid_argument("momentum_schedule: negative iteration");
    return std::min(1.0 - 1.0 / static_cast<double>(iter + 1), m0);
}

}  // namespace frematch
