#include "frematch/fsr.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace frematch {

FsrParams FsrParams::identity(std::size_t d, double rho0) {
    if (d == 0) throw std::invalid_argument("FsrParams: dimension must be positive");
    FsrParams p;
    p.dim = d;
    p.mapping.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) p.mapping[i * d + i] = 1.0;
    p.eps_logits.assign(d, rho0);
    return p;
}

std::vector<double> FsrParams::tolerances() const {
    const Tensor eps = sigmoid(Tensor::from_values({1, dim}, eps_logits));
    return {eps.values().begin(), eps.values().end()};
}

BoundFsr::BoundFsr(const FsrParams& params, bool requires_grad)
    : mapping(Tensor::from_values({params.dim, params.dim}, params.mapping, requires_grad)),
      eps_logits(Tensor::from_values({1, params.dim}, params.eps_logits, requires_grad)) {}

Tensor centralize(const Tensor& x) { return sub(x, mean_rows(x)); }

Tensor covariance(const Tensor& xc) { return matmul(transpose(xc), xc); }

FeaturePair FeaturePair::from_raw(const Tensor& basic_features, const Tensor& empirical_features) {
    if (basic_features.shape() != empirical_features.shape()) {
        throw ShapeError("FeaturePair: basic " + basic_features.shape().str() + " vs empirical " +
                         empirical_features.shape().str());
    }
    return {centralize(basic_features), centralize(empirical_features.detach()).detach()};
}

namespace testing {
namespace {
std::atomic<Fault> g_fault{Fault::none};
}

Fault active_fault() { return g_fault.load(std::memory_order_relaxed); }

ScopedFault::ScopedFault(Fault f) : previous_(g_fault.exchange(f)) {}
ScopedFault::~ScopedFault() { g_fault.store(previous_); }

}  // namespace testing

namespace {

// Identity forward; negated gradient. Only reachable under an injected fault.
Tensor flip_gradient(const Tensor& x) {
    return Tensor::from_op(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), {x},
                           [](auto, std::span<const double> g, auto grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] -= g[i];
                           });
}

}  // namespace

Tensor fsr_loss_with_tolerances(const FeaturePair& pair, const Tensor& mapping, const Tensor& tolerances,
                                double beta) {
    if (beta < 0.0) throw std::invalid_argument("fsr_loss: beta must be >= 0");
    const std::size_t d = mapping.rows();
    if (mapping.cols() != d) throw ShapeError("fsr_loss: mapping " + mapping.shape().str() + " is not square");
    if (pair.basic.cols() != d || pair.empirical.shape() != pair.basic.shape()) {
        throw ShapeError("fsr_loss: features " + pair.basic.shape().str() + " / " +
                         pair.empirical.shape().str() + " vs mapping " + mapping.shape().str());
    }
    if (tolerances.size() != d) {
        throw ShapeError("fsr_loss: tolerances " + tolerances.shape().str() + " vs mapping " +
                         mapping.shape().str());
    }

    Tensor residual = sub(transpose(pair.empirical), matmul(mapping, transpose(pair.basic)));
    if (testing::active_fault() == testing::Fault::fsr_residual_gradient_sign) residual = flip_gradient(residual);
    const Tensor orth = sub(matmul(transpose(mapping), mapping), diag(tolerances));
    return add(mean_square(residual), scale(mean_square(orth), beta));
}

Tensor fsr_loss(const FeaturePair& pair, const BoundFsr& fsr, double beta) {
    return fsr_loss_with_tolerances(pair, fsr.mapping, sigmoid(fsr.eps_logits), beta);
}

// --- oracles -----------------------------------------------------------------

double TraceWitness::relative_gap() const {
    return std::abs(conjugated_trace - trace) / std::max({std::abs(conjugated_trace), std::abs(trace), 1e-300});
}

TraceWitness trace_conjugation_oracle(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& p) {
    if (sigma.rows() != sigma.cols() || p.rows() != p.cols() || p.rows() != sigma.rows()) {
        throw ShapeError("trace_conjugation_oracle: sigma and P must be square and of equal size");
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(p);
    if (!(std::abs(lu.determinant()) > 1e-8)) {
        throw std::invalid_argument("trace_conjugation_oracle: P is near-singular (|det| <= 1e-8)");
    }
    const Eigen::MatrixXd conjugated = lu.solve(sigma * p);
    return {conjugated.trace(), sigma.trace()};
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
    std::vector<double> values(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return Tensor::from_values({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                               std::move(values));
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
    auto v = t.values();
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * t.cols() + c];
    return m;
}

InvarianceReport covariance_invariance_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                                              const Eigen::MatrixXd& r) {
    const auto d = x.cols();
    if (t.size() != d || r.rows() != d || r.cols() != d) {
        throw ShapeError("covariance_invariance_oracle: X, t and R disagree on dimension");
    }
    const double orth_err = (r.transpose() * r - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
    if (!(orth_err <= 1e-10)) {
        throw std::invalid_argument("covariance_invariance_oracle: R is not orthogonal (|R^T R - I| = " +
                                    std::to_string(orth_err) + ")");
    }
    const Eigen::MatrixXd base = to_eigen(covariance(centralize(to_tensor(x))));
    const Eigen::MatrixXd shifted_x = x.rowwise() + t.transpose();
    const Eigen::MatrixXd shifted = to_eigen(covariance(centralize(to_tensor(shifted_x))));
    const Eigen::MatrixXd rotated = to_eigen(covariance(centralize(to_tensor(x * r))));

    InvarianceReport rep;
    rep.translation_max_abs_diff = (shifted - base).cwiseAbs().maxCoeff();
    const double tr0 = base.trace(), tr1 = rotated.trace();
    rep.rotation_trace_rel_diff = std::abs(tr1 - tr0) / std::max({std::abs(tr0), std::abs(tr1), 1e-300});
    rep.passed = rep.translation_max_abs_diff <= 1e-10 && rep.rotation_trace_rel_diff <= 1e-9;
    return rep;
}

}  // namespace frematch
