#pragma once

// Feature space renormalization.
//
// The basic model's centralized features U (n x d) are mapped by a learnable
// d x d matrix C toward the empirical model's centralized features U', while
// C^T C is held near diag(eps). Both equality constraints
//
//     U'^T = C U^T,        C^T C = diag(eps_1, ..., eps_d)
//
// are turned into the penalty
//
//     l_fre = l_m(U'^T - C U^T) + beta * l_m(C^T C - diag(eps))
//
// where l_m is the mean of squared entries. eps_j = sigmoid(rho_j).

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "frematch/autodiff.hpp"

namespace frematch {

struct FsrParams {
    std::size_t dim = 0;
    std::vector<double> mapping;     // C, row-major d x d
    std::vector<double> eps_logits;  // rho, length d

    // C = I, rho_j = rho0.
    static FsrParams identity(std::size_t d, double rho0 = 4.0);
    [[nodiscard]] std::vector<double> tolerances() const;
};

// Leaf tensors for one iteration's use of FsrParams.
struct BoundFsr {
    Tensor mapping;     // d x d
    Tensor eps_logits;  // 1 x d

    BoundFsr(const FsrParams& params, bool requires_grad);
};

// Each column minus its mean. Differentiable.
Tensor centralize(const Tensor& x);

// Xc^T Xc for an already centralized Xc.
Tensor covariance(const Tensor& xc);

// Centralized basic/empirical features. The empirical side is detached.
struct FeaturePair {
    Tensor basic;
    Tensor empirical;

    static FeaturePair from_raw(const Tensor& basic_features, const Tensor& empirical_features);
};

Tensor fsr_loss(const FeaturePair& pair, const BoundFsr& fsr, double beta);

// Same penalty with the tolerance vector supplied directly (1 x d). Allows
// the eps = 1 boundary that the sigmoid parametrization only reaches in the limit.
Tensor fsr_loss_with_tolerances(const FeaturePair& pair, const Tensor& mapping, const Tensor& tolerances,
                                double beta);

// --- group-representation oracles ------------------------------------------

struct TraceWitness {
    double conjugated_trace = 0.0;  // tr(P^-1 sigma P)
    double trace = 0.0;             // tr(sigma)
    [[nodiscard]] double relative_gap() const;
};

// Rejects P with |det P| <= 1e-8 (LU determinant).
TraceWitness trace_conjugation_oracle(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& p);

struct InvarianceReport {
    double translation_max_abs_diff = 0.0;
    double rotation_trace_rel_diff = 0.0;
    bool passed = false;
};

// Checks that translating X leaves its covariance unchanged (1e-10 absolute)
// and that rotating X leaves the covariance trace unchanged (1e-9 relative),
// using centralize() and covariance(). R must satisfy R^T R = I within 1e-10.
InvarianceReport covariance_invariance_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                                              const Eigen::MatrixXd& r);

Tensor to_tensor(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_eigen(const Tensor& t);

// --- fault injection for negative controls ---------------------------------

namespace testing {

enum class Fault { none, fsr_residual_gradient_sign };

Fault active_fault();

// Installs a fault for the lifetime of the guard (process-wide).
class ScopedFault {
public:
    explicit ScopedFault(Fault f);
    ~ScopedFault();
    ScopedFault(const ScopedFault&) = delete;
    ScopedFault& operator=(const ScopedFault&) = delete;

private:
    Fault previous_;
};

}  // namespace testing

}  // namespace frematch
