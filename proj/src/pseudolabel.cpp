#include "frematch/pseudolabel.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace frematch {

double PseudoBatch::mask_rate() const {
    if (mask.empty()) return 0.0;
    return std::accumulate(mask.begin(), mask.end(), 0.0) / static_cast<double>(mask.size());
}

PseudoBatch make_pseudo_labels(const Tensor& logits_emp, double eta) {
    if (!(eta > 0.0 && eta < 1.0)) {
        throw std::invalid_argument("make_pseudo_labels: eta " + std::to_string(eta) + " outside (0, 1)");
    }
    PseudoBatch pb;
    pb.probs = softmax(logits_emp.detach());
    pb.labels = argmax_rows(pb.probs);
    const std::size_t n = pb.probs.rows(), c = pb.probs.cols();
    auto q = pb.probs.values();
    pb.mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double top = q[i * c + static_cast<std::size_t>(pb.labels[i])];
        pb.mask[i] = top > eta ? 1.0 : 0.0;
    }
    return pb;
}

Tensor pl_loss(const PseudoBatch& pb, const Tensor& logits_basic) {
    if (logits_basic.rows() != pb.size()) {
        throw ShapeError("pl_loss: " + std::to_string(pb.size()) + " pseudo-labels for logits " +
                         logits_basic.shape().str());
    }
    return softmax_cross_entropy(logits_basic, pb.labels, pb.mask);
}

Tensor sup_loss(const Tensor& logits, std::span<const int> labels) {
    return softmax_cross_entropy(logits, labels);
}

Tensor full_sup_loss(const Tensor& logits, std::span<const int> labels) {
    return softmax_cross_entropy(logits, labels);
}

Tensor total_loss(const Tensor& l_sup, const Tensor& l_fre, const Tensor& l_pl, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
    return add(l_sup, scale(add(l_fre, l_pl), lambda));
}

}  // namespace frematch
