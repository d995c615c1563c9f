#pragma once

#include <span>
#include <vector>

#include "frematch/autodiff.hpp"

namespace frematch {

struct PseudoBatch {
    Tensor probs;                // q: softmax of the empirical logits, detached
    std::vector<int> labels;     // q_hat: per-row argmax
    std::vector<double> mask;    // 1 where max(q_i) > eta, else 0

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] double mask_rate() const;
};

PseudoBatch make_pseudo_labels(const Tensor& logits_emp, double eta);

// (1/n) * sum_i mask_i * H(q_hat_i, softmax(logits_basic_i)); the denominator
// is the full batch size.
Tensor pl_loss(const PseudoBatch& pb, const Tensor& logits_basic);

// Mean cross-entropy of labelled logits.
Tensor sup_loss(const Tensor& logits, std::span<const int> labels);

// Fully-supervised baseline loss; same computation as sup_loss, fed by the
// whole labelled pool.
Tensor full_sup_loss(const Tensor& logits, std::span<const int> labels);

// l_sup + lambda * (l_fre + l_pl)
Tensor total_loss(const Tensor& l_sup, const Tensor& l_fre, const Tensor& l_pl, double lambda);

}  // namespace frematch
