#include "frematch/propcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "frematch/autodiff.hpp"
#include "frematch/fsr.hpp"
#include "frematch/nets.hpp"
#include "frematch/pseudolabel.hpp"
#include "frematch/random.hpp"
#include "frematch/trainer.hpp"

namespace frematch {

bool PropertyReport::all_passed() const {
    return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

std::vector<std::string> PropertyReport::failed_names() const {
    std::vector<std::string> out;
    for (const auto& r : results)
        if (!r.passed) out.push_back(r.name);
    return out;
}

std::string PropertyReport::text() const {
    std::string out;
    for (const auto& r : results) out += (r.passed ? "PASS " : "FAIL ") + r.name + "  " + r.detail + "\n";
    return out;
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr int kPrimitiveSeeds = 100;

std::string fmt(const char* format, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, format, a, b);
    return buf;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo, double hi, bool requires_grad) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(r * c);
    for (auto& x : v) x = u(rng);
    return Tensor::from_values({r, c}, std::move(v), requires_grad);
}

// Values bounded away from zero, so relu kinks stay out of the difference stencil.
Tensor away_from_zero(Rng& rng, std::size_t r, std::size_t c) {
    std::uniform_real_distribution<double> mag(0.05, 2.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(r * c);
    for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor::from_values({r, c}, std::move(v), true);
}

// Scalar probe of a non-scalar output: sum(out .* W) with W fixed.
Tensor probe(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

struct PrimitiveCase {
    const char* name;
    std::function<GradCheckReport(Rng&)> check;
};

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

GradCheckReport check_unary(Rng& rng, Tensor x, const std::function<Tensor(const Tensor&)>& op) {
    const Tensor out_shape = op(x.detach());
    const Tensor w = random_tensor(rng, out_shape.rows(), out_shape.cols(), -1.0, 1.0, false);
    std::vector<Tensor> in{x};
    return grad_check([&] { return probe(op(x), w); }, in, kStep, kGradTol);
}

GradCheckReport check_binary(Rng& rng, Tensor a, Tensor b,
                             const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    const Tensor out_shape = op(a.detach(), b.detach());
    const Tensor w = random_tensor(rng, out_shape.rows(), out_shape.cols(), -1.0, 1.0, false);
    std::vector<Tensor> in{a, b};
    return grad_check([&] { return probe(op(a, b), w); }, in, kStep, kGradTol);
}

std::vector<PrimitiveCase> primitive_cases() {
    std::vector<PrimitiveCase> cases;
    cases.push_back({"add", [](Rng& rng) {
        const auto r = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, c, -2, 2, true), random_tensor(rng, r, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return add(a, b); });
    }});
    cases.push_back({"add_row_broadcast", [](Rng& rng) {
        const auto r = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, c, -2, 2, true), random_tensor(rng, 1, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return add(a, b); });
    }});
    cases.push_back({"sub", [](Rng& rng) {
        const auto r = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, c, -2, 2, true), random_tensor(rng, r, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    }});
    cases.push_back({"sub_row_broadcast", [](Rng& rng) {
        const auto r = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, c, -2, 2, true), random_tensor(rng, 1, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    }});
    cases.push_back({"mul", [](Rng& rng) {
        const auto r = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, c, -2, 2, true), random_tensor(rng, r, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    }});
    cases.push_back({"scale", [](Rng& rng) {
        const double k = std::uniform_real_distribution<double>(-3, 3)(rng);
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), -2, 2, true),
                           [k](const Tensor& a) { return scale(a, k); });
    }});
    cases.push_back({"matmul", [](Rng& rng) {
        const auto r = dim(rng), k = dim(rng), c = dim(rng);
        return check_binary(rng, random_tensor(rng, r, k, -2, 2, true), random_tensor(rng, k, c, -2, 2, true),
                            [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
    }});
    cases.push_back({"transpose", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), -2, 2, true),
                           [](const Tensor& a) { return transpose(a); });
    }});
    cases.push_back({"mean_rows", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), -2, 2, true),
                           [](const Tensor& a) { return mean_rows(a); });
    }});
    cases.push_back({"mean_cols", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), -2, 2, true),
                           [](const Tensor& a) { return mean_cols(a); });
    }});
    cases.push_back({"relu", [](Rng& rng) {
        return check_unary(rng, away_from_zero(rng, dim(rng), dim(rng)), [](const Tensor& a) { return relu(a); });
    }});
    cases.push_back({"sigmoid", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), -4, 4, true),
                           [](const Tensor& a) { return sigmoid(a); });
    }});
    cases.push_back({"softmax", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng, 2, 5), -3, 3, true),
                           [](const Tensor& a) { return softmax(a); });
    }});
    cases.push_back({"log_softmax", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng, 2, 5), -3, 3, true),
                           [](const Tensor& a) { return log_softmax(a); });
    }});
    cases.push_back({"log", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, dim(rng), dim(rng), 0.5, 3, true),
                           [](const Tensor& a) { return log(a); });
    }});
    cases.push_back({"sum", [](Rng& rng) {
        Tensor x = random_tensor(rng, dim(rng), dim(rng), -2, 2, true);
        std::vector<Tensor> in{x};
        return grad_check([&] { return sum(x); }, in, kStep, kGradTol);
    }});
    cases.push_back({"mean_square", [](Rng& rng) {
        Tensor x = random_tensor(rng, dim(rng), dim(rng), -2, 2, true);
        std::vector<Tensor> in{x};
        return grad_check([&] { return mean_square(x); }, in, kStep, kGradTol);
    }});
    cases.push_back({"diag", [](Rng& rng) {
        return check_unary(rng, random_tensor(rng, 1, dim(rng), -2, 2, true), [](const Tensor& a) { return diag(a); });
    }});
    cases.push_back({"softmax_cross_entropy", [](Rng& rng) {
        const auto n = dim(rng), c = dim(rng, 2, 5);
        Tensor logits = random_tensor(rng, n, c, -3, 3, true);
        std::vector<int> targets(n);
        std::vector<double> weights(n);
        std::uniform_int_distribution<int> cls(0, static_cast<int>(c) - 1);
        std::uniform_real_distribution<double> u(0, 1);
        for (std::size_t i = 0; i < n; ++i) {
            targets[i] = cls(rng);
            weights[i] = u(rng);
        }
        std::vector<Tensor> in{logits};
        return grad_check([&] { return softmax_cross_entropy(logits, targets, weights); }, in, kStep, kGradTol);
    }});
    return cases;
}

PropertyResult primitive_gradients(std::uint64_t seed) {
    PropertyResult r{"autodiff.primitive_gradients", true, ""};
    double worst = 0.0;
    std::string worst_name;
    const auto cases = primitive_cases();
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        for (int s = 0; s < kPrimitiveSeeds; ++s) {
            Rng rng(derive_seed(seed, 0x10000 + ci * 1000 + static_cast<std::uint64_t>(s)));
            const auto rep = cases[ci].check(rng);
            if (rep.worst > worst) {
                worst = rep.worst;
                worst_name = cases[ci].name;
            }
            if (!rep.passed) r.passed = false;
        }
    }
    r.detail = std::to_string(cases.size()) + " primitives x " + std::to_string(kPrimitiveSeeds) +
               " seeds, worst rel err " + fmt("%.3g", worst) + " (" + worst_name + ")";
    return r;
}

PropertyResult backward_linearity(std::uint64_t seed) {
    PropertyResult r{"autodiff.backward_linearity", true, ""};
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        Rng rng(derive_seed(seed, 0x20000 + static_cast<std::uint64_t>(s)));
        const auto n = dim(rng, 2, 5), c = dim(rng, 2, 5);
        Tensor x = random_tensor(rng, n, c, -2, 2, true);
        const Tensor w = random_tensor(rng, c, c, -1, 1, false);
        const double a = std::uniform_real_distribution<double>(-3, 3)(rng);
        const double b = std::uniform_real_distribution<double>(-3, 3)(rng);
        auto l1 = [&] { return mean_square(matmul(sigmoid(x), w)); };
        auto l2 = [&] { return sum(log_softmax(x)); };

        backward(l1());
        const std::vector<double> g1(x.grad()->begin(), x.grad()->end());
        x.zero_grad();
        backward(l2());
        const std::vector<double> g2(x.grad()->begin(), x.grad()->end());
        x.zero_grad();
        backward(add(scale(l1(), a), scale(l2(), b)));
        const auto g = *x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double expect = a * g1[i] + b * g2[i];
            const double err = std::abs(g[i] - expect) / (1.0 + std::abs(expect));
            worst = std::max(worst, err);
        }
    }
    r.passed = worst <= 1e-13;
    r.detail = "100 seeds, worst rel deviation " + fmt("%.3g", worst);
    return r;
}

PropertyResult detachment(std::uint64_t seed) {
    PropertyResult r{"autodiff.detachment", true, ""};
    int failures = 0;
    for (int s = 0; s < 100; ++s) {
        Rng rng(derive_seed(seed, 0x30000 + static_cast<std::uint64_t>(s)));
        const auto n = dim(rng, 2, 4), c = dim(rng, 2, 4);
        Tensor live = random_tensor(rng, n, c, -2, 2, true);
        Tensor frozen = random_tensor(rng, n, c, -2, 2, false);
        Tensor cut = random_tensor(rng, n, c, -2, 2, true);
        // frozen and cut.detach() feed every kind of graph position.
        const Tensor mixed = mul(add(live, frozen), softmax(cut.detach()));
        const Tensor root = s % 2 ? mean_square(matmul(transpose(mixed), frozen)) : sum(sigmoid(mixed));
        backward(root);
        if (frozen.grad() || cut.grad() || !live.grad()) ++failures;
    }
    r.passed = failures == 0;
    r.detail = "100 graphs, " + std::to_string(failures) + " leaked gradients";
    return r;
}

PropertyResult softmax_rows(std::uint64_t seed) {
    PropertyResult r{"autodiff.softmax_rows", true, ""};
    double worst = 0.0;
    for (int s = 0; s < 200; ++s) {
        Rng rng(derive_seed(seed, 0x40000 + static_cast<std::uint64_t>(s)));
        const double spread = std::pow(10.0, std::uniform_real_distribution<double>(-2, 3)(rng));
        const Tensor p = softmax(random_tensor(rng, dim(rng, 1, 8), dim(rng, 2, 10), -spread, spread, false));
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) total += p.at(i, j);
            worst = std::max(worst, std::abs(total - 1.0));
        }
    }
    r.passed = worst <= 1e-12;
    r.detail = "200 matrices, worst |row sum - 1| " + fmt("%.3g", worst);
    return r;
}

// --- loss gradients on a tiny network ---------------------------------------

struct LossFixture {
    NetSpec spec;
    ParamLayout layout;
    DualModel dual;
    FsrParams fsr;
    Tensor x_labelled;
    std::vector<int> labels;
    UnlabelledViews views;
    double eta = 0.5;
};

LossFixture make_fixture(std::uint64_t seed) {
    LossFixture f;
    f.spec = NetSpec{2, {8}, 4, 3};
    f.layout = ParamLayout::for_spec(f.spec);
    f.dual = init_pair(f.spec, seed);
    Rng rng(derive_seed(seed, 0x50000));
    std::normal_distribution<double> g(0.0, 0.3);
    // An empirical model a few EMA steps behind, with a sharper head.
    for (std::size_t i = 0; i < f.dual.empirical.size(); ++i) f.dual.empirical[i] = 2.0 * f.dual.basic[i] + g(rng);
    f.fsr = FsrParams::identity(f.spec.feature_dim);
    for (auto& c : f.fsr.mapping) c += g(rng);
    for (auto& e : f.fsr.eps_logits) e = std::uniform_real_distribution<double>(-1, 2)(rng);
    f.x_labelled = random_tensor(rng, 6, 2, -1.5, 1.5, false);
    f.labels.resize(6);
    for (auto& y : f.labels) y = std::uniform_int_distribution<int>(0, 2)(rng);
    f.views.weak = random_tensor(rng, 8, 2, -1.5, 1.5, false);
    f.views.strong = random_tensor(rng, 8, 2, -1.5, 1.5, false);

    // Threshold halfway between two confidences, so the mask is mixed.
    const BoundParams emp(f.layout, f.dual.empirical, false);
    const PseudoBatch pb = make_pseudo_labels(forward_logits(emp, forward_features(emp, f.views.weak)), 0.5);
    std::vector<double> conf;
    for (std::size_t i = 0; i < pb.size(); ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < pb.probs.cols(); ++j) m = std::max(m, pb.probs.at(i, j));
        conf.push_back(m);
    }
    std::sort(conf.begin(), conf.end());
    f.eta = 0.5 * (conf[conf.size() / 2 - 1] + conf[conf.size() / 2]);
    return f;
}

using LossBuilder = std::function<Tensor(const BoundParams& basic, const BoundParams& emp, const BoundFsr& fsr,
                                         const LossFixture& f)>;

double loss_gradient_worst(std::uint64_t seed, int trials, bool with_fsr_params, const LossBuilder& build,
                           bool& passed) {
    double worst = 0.0;
    for (int s = 0; s < trials; ++s) {
        const LossFixture f = make_fixture(derive_seed(seed, 0x60000 + static_cast<std::uint64_t>(s)));
        BoundParams basic(f.layout, f.dual.basic, true);
        const BoundParams emp(f.layout, f.dual.empirical, false);
        BoundFsr fsr(f.fsr, true);
        std::vector<Tensor> inputs(basic.tensors().begin(), basic.tensors().end());
        if (with_fsr_params) {
            inputs.push_back(fsr.mapping);
            inputs.push_back(fsr.eps_logits);
        }
        const auto rep = grad_check([&] { return build(basic, emp, fsr, f); }, inputs, kStep, kGradTol);
        worst = std::max(worst, rep.worst);
        if (!rep.passed) passed = false;
    }
    return worst;
}

PropertyResult sup_gradient(std::uint64_t seed) {
    PropertyResult r{"loss.sup_gradient", true, ""};
    const double worst = loss_gradient_worst(seed, 10, false, [](const BoundParams& basic, const BoundParams&,
                                                                  const BoundFsr&, const LossFixture& f) {
        const Tensor logits = forward_logits(basic, forward_features(basic, f.x_labelled));
        return add(sup_loss(logits, f.labels), full_sup_loss(logits, f.labels));
    }, r.passed);
    r.detail = "10 nets, worst rel err " + fmt("%.3g", worst);
    return r;
}

PropertyResult pl_gradient(std::uint64_t seed) {
    PropertyResult r{"loss.pl_gradient", true, ""};
    const double worst = loss_gradient_worst(seed, 10, false, [](const BoundParams& basic, const BoundParams& emp,
                                                                  const BoundFsr&, const LossFixture& f) {
        const PseudoBatch pb = make_pseudo_labels(forward_logits(emp, forward_features(emp, f.views.weak)), f.eta);
        return pl_loss(pb, forward_logits(basic, forward_features(basic, f.views.strong)));
    }, r.passed);
    r.detail = "10 nets, worst rel err " + fmt("%.3g", worst);
    return r;
}

PropertyResult fsr_gradient(std::uint64_t seed) {
    PropertyResult r{"loss.fsr_gradient", true, ""};
    // Through the network: theta, C and rho.
    double worst = loss_gradient_worst(seed, 10, true, [](const BoundParams& basic, const BoundParams& emp,
                                                          const BoundFsr& fsr, const LossFixture& f) {
        return fsr_loss(FeaturePair::from_raw(forward_features(basic, f.views.strong),
                                              forward_features(emp, f.views.weak)),
                        fsr, 1.0);
    }, r.passed);
    // Directly on raw feature matrices: U_basic, C and rho.
    for (int s = 0; s < 20; ++s) {
        Rng rng(derive_seed(seed, 0x61000 + static_cast<std::uint64_t>(s)));
        const std::size_t n = 4 + static_cast<std::size_t>(s % 3), d = 3 + static_cast<std::size_t>(s % 2);
        Tensor u = random_tensor(rng, n, d, -1, 1, true);
        const Tensor u_emp = random_tensor(rng, n, d, -1, 1, false);
        FsrParams p = FsrParams::identity(d);
        for (auto& c : p.mapping) c += std::normal_distribution<double>(0.0, 0.3)(rng);
        for (auto& e : p.eps_logits) e = std::uniform_real_distribution<double>(-2, 2)(rng);
        BoundFsr fsr(p, true);
        std::vector<Tensor> in{u, fsr.mapping, fsr.eps_logits};
        const double beta = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        const auto rep = grad_check([&] { return fsr_loss(FeaturePair::from_raw(u, u_emp), fsr, beta); }, in,
                                    kStep, kGradTol);
        worst = std::max(worst, rep.worst);
        if (!rep.passed) r.passed = false;
    }
    r.detail = "10 nets + 20 raw feature pairs, worst rel err " + fmt("%.3g", worst);
    return r;
}

PropertyResult total_gradient(std::uint64_t seed, TrainMode mode) {
    PropertyResult r{"loss.total_gradient." + to_string(mode), true, ""};
    const double worst = loss_gradient_worst(seed, 5, true, [mode](const BoundParams& basic, const BoundParams& emp,
                                                                   const BoundFsr& fsr, const LossFixture& f) {
        TrainConfig cfg;
        cfg.mode = mode;
        cfg.eta = f.eta;
        return build_losses(basic, emp, fsr, f.x_labelled, f.labels, f.views, cfg).total;
    }, r.passed);
    r.detail = "5 nets, lambda 20, worst rel err " + fmt("%.3g", worst);
    return r;
}

// --- oracles -------------------------------------------------------------------

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

PropertyResult trace_conjugation(std::uint64_t seed) {
    PropertyResult r{"fsr.trace_conjugation", true, ""};
    double worst = 0.0;
    for (int s = 0; s < 500; ++s) {
        Rng rng(derive_seed(seed, 0x70000 + static_cast<std::uint64_t>(s)));
        const auto d = static_cast<Eigen::Index>(2 + s % 7);
        const Eigen::MatrixXd a = random_matrix(rng, d, d);
        const Eigen::MatrixXd sigma = a.transpose() * a;
        Eigen::MatrixXd p = random_matrix(rng, d, d);
        while (std::abs(p.determinant()) <= 1e-3) p = random_matrix(rng, d, d);
        worst = std::max(worst, trace_conjugation_oracle(sigma, p).relative_gap());
    }
    r.passed = worst <= 1e-9;
    r.detail = "500 trials d=2..8, worst rel gap " + fmt("%.3g", worst);
    return r;
}

PropertyResult covariance_invariance(std::uint64_t seed) {
    PropertyResult r{"fsr.covariance_invariance", true, ""};
    double worst_t = 0.0, worst_r = 0.0;
    int failures = 0;
    for (int s = 0; s < 300; ++s) {
        Rng rng(derive_seed(seed, 0x80000 + static_cast<std::uint64_t>(s)));
        const auto d = static_cast<Eigen::Index>(2 + s % 7);
        const auto n = static_cast<Eigen::Index>(2 + (s * 7) % 19);
        const Eigen::MatrixXd x = random_matrix(rng, n, d, -2, 2);
        const Eigen::VectorXd t = random_matrix(rng, d, 1, -5, 5);
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(rng, d, d)).householderQ();
        const auto rep = covariance_invariance_oracle(x, t, q);
        worst_t = std::max(worst_t, rep.translation_max_abs_diff);
        worst_r = std::max(worst_r, rep.rotation_trace_rel_diff);
        if (!rep.passed) ++failures;
    }
    r.passed = failures == 0;
    r.detail = "300 trials, worst translation diff " + fmt("%.3g", worst_t) + ", worst rotation trace gap " +
               fmt("%.3g", worst_r);
    return r;
}

// Smallest eigenvalue of a symmetric matrix by two power iterations: the
// first finds the spectral radius, the second runs on sigma - radius * I.
double power_iteration_min_eigen(const Eigen::MatrixXd& sigma, Rng& rng) {
    auto dominant = [&](const Eigen::MatrixXd& a) {
        Eigen::VectorXd v = random_matrix(rng, a.rows(), 1);
        v.normalize();
        double lambda = 0.0;
        for (int it = 0; it < 5000; ++it) {
            Eigen::VectorXd w = a * v;
            const double norm = w.norm();
            if (norm == 0.0) return 0.0;
            v = w / norm;
            lambda = v.dot(a * v);
        }
        return lambda;
    };
    const double top = dominant(sigma);
    const Eigen::MatrixXd shifted = sigma - top * Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols());
    return dominant(shifted) + top;
}

PropertyResult covariance_symmetric_psd(std::uint64_t seed) {
    PropertyResult r{"fsr.covariance_symmetric_psd", true, ""};
    double worst_asym = 0.0, lowest = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 200; ++s) {
        Rng rng(derive_seed(seed, 0x90000 + static_cast<std::uint64_t>(s)));
        const auto n = dim(rng, 1, 12), d = dim(rng, 2, 8);
        const Tensor cov = covariance(centralize(random_tensor(rng, n, d, -3, 3, false)));
        const Eigen::MatrixXd sigma = to_eigen(cov);
        worst_asym = std::max(worst_asym, (sigma - sigma.transpose()).cwiseAbs().maxCoeff());
        lowest = std::min(lowest, power_iteration_min_eigen(sigma, rng));
    }
    r.passed = worst_asym == 0.0 && lowest >= -1e-10;
    r.detail = "200 matrices, max |S - S^T| " + fmt("%.3g", worst_asym) + ", lowest eigenvalue " + fmt("%.3g", lowest);
    return r;
}

// --- EMA -----------------------------------------------------------------------

PropertyResult ema_closed_form(std::uint64_t seed) {
    PropertyResult r{"nets.ema_closed_form", true, ""};
    double worst = 0.0;
    bool basic_touched = false;
    for (double m : {0.0, 0.5, 0.9, 0.97}) {
        DualModel dual = init_pair(NetSpec{2, {8}, 4, 3}, seed);
        Rng rng(derive_seed(seed, 0xA0000));
        for (auto& v : dual.empirical) v = std::uniform_real_distribution<double>(-2, 2)(rng);
        const std::vector<double> theta = dual.basic, start = dual.empirical;
        for (int k = 1; k <= 100; ++k) {
            ema_update(dual, m);
            const double mk = std::pow(m, k);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                worst = std::max(worst, std::abs(dual.empirical[i] - (mk * start[i] + (1.0 - mk) * theta[i])));
            }
        }
        basic_touched |= dual.basic != theta;
    }
    r.passed = worst <= 1e-12 && !basic_touched;
    r.detail = "m in {0, 0.5, 0.9, 0.97}, k <= 100, worst abs err " + fmt("%.3g", worst) +
               (basic_touched ? ", theta modified" : ", theta untouched");
    return r;
}

PropertyResult momentum_schedule_property() {
    PropertyResult r{"nets.momentum_schedule", true, ""};
    std::string why;
    for (double m0 : {0.0, 0.5, 0.9, 0.97, 0.99}) {
        if (momentum_schedule(0, m0) != 0.0) why = "iter 0 not 0";
        const auto settle = static_cast<std::int64_t>(std::ceil(1.0 / (1.0 - m0)));
        double prev = -1.0;
        for (std::int64_t t = 0; t <= 10 * settle + 10; ++t) {
            const double v = momentum_schedule(t, m0);
            if (v < prev) why = "not monotone";
            if (v > m0) why = "exceeds m0";
            if (t >= settle - 1 && v != m0) why = "not m0 past the knee";
            prev = v;
        }
    }
    r.passed = why.empty();
    r.detail = why.empty() ? "m0 in {0, 0.5, 0.9, 0.97, 0.99}" : why;
    return r;
}

// --- zero cases ---------------------------------------------------------------

PropertyResult loss_zero_cases(std::uint64_t seed) {
    PropertyResult r{"loss.zero_cases", true, ""};
    std::vector<std::string> failed;
    Rng rng(derive_seed(seed, 0xB0000));

    // Both FSR constraints satisfied: C = Q diag(sqrt(eps)), U' = U C^T.
    double worst_zero = 0.0, least_bump = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 20; ++s) {
        const Eigen::Index d = 2 + s % 5, n = 5 + s % 4;
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(rng, d, d)).householderQ();
        const Eigen::VectorXd eps = random_matrix(rng, d, 1, 0.2, 1.0);
        const Eigen::MatrixXd c = q * eps.cwiseSqrt().asDiagonal();
        Eigen::MatrixXd u = random_matrix(rng, n, d, -2, 2);
        u.rowwise() -= u.colwise().mean();
        const Eigen::MatrixXd u_emp = u * c.transpose();
        const FeaturePair pair = FeaturePair::from_raw(to_tensor(u), to_tensor(u_emp));
        const Tensor tol = to_tensor(eps.transpose());
        worst_zero = std::max(worst_zero, fsr_loss_with_tolerances(pair, to_tensor(c), tol, 1.0).item());
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
                Eigen::MatrixXd bumped = c;
                bumped(i, j) += 1e-3;
                least_bump = std::min(least_bump, fsr_loss_with_tolerances(pair, to_tensor(bumped), tol, 1.0).item());
            }
        }
    }
    if (!(worst_zero < 1e-24)) failed.push_back("fsr zero");
    if (!(least_bump > 0.0)) failed.push_back("fsr perturbation");

    // Confident correct logits: cross-entropy vanishes.
    const Tensor sure = Tensor::matrix({{1000, 0, 0}, {0, 0, 1000}});
    const std::vector<int> right{0, 2};
    if (sup_loss(sure, right).item() != 0.0 || full_sup_loss(sure, right).item() != 0.0) failed.push_back("sup");

    // All pseudo-labels masked out: zero loss, zero gradient.
    Tensor basic_logits = random_tensor(rng, 4, 3, -2, 2, true);
    const PseudoBatch none = make_pseudo_labels(random_tensor(rng, 4, 3, -0.1, 0.1, false), 0.95);
    const Tensor pl = pl_loss(none, basic_logits);
    backward(pl);
    const auto g = basic_logits.grad();
    const bool zero_grad = !g || std::all_of(g->begin(), g->end(), [](double v) { return v == 0.0; });
    if (pl.item() != 0.0 || !zero_grad) failed.push_back("pl");

    // lambda = 0 leaves the supervised term alone.
    const Tensor ls = Tensor::scalar(0.731), lf = Tensor::scalar(0.5), lp = Tensor::scalar(0.25);
    if (total_loss(ls, lf, lp, 0.0).item() != 0.731) failed.push_back("total lambda=0");
    if (total_loss(Tensor::scalar(1.0), lf, lp, 20.0).item() != 16.0) failed.push_back("total lambda=20");

    r.passed = failed.empty();
    r.detail = "fsr zero " + fmt("%.3g", worst_zero) + ", smallest perturbed " + fmt("%.3g", least_bump);
    for (const auto& f : failed) r.detail += "; failed: " + f;
    return r;
}

// lambda = 0 frematch and supervised take the same gradient on one batch.
PropertyResult lambda_zero_gradient(std::uint64_t seed) {
    PropertyResult r{"trainer.lambda_zero_gradient", true, ""};
    double worst = 0.0;
    for (int s = 0; s < 10; ++s) {
        const LossFixture f = make_fixture(derive_seed(seed, 0xC0000 + static_cast<std::uint64_t>(s)));
        auto grad_for = [&](TrainMode mode) {
            TrainConfig cfg;
            cfg.mode = mode;
            cfg.lambda = 0.0;
            cfg.eta = f.eta;
            BoundParams basic(f.layout, f.dual.basic, true);
            const BoundParams emp(f.layout, f.dual.empirical, false);
            const BoundFsr fsr(f.fsr, true);
            backward(build_losses(basic, emp, fsr, f.x_labelled, f.labels, f.views, cfg).total);
            return basic.gather_grad();
        };
        const auto a = grad_for(TrainMode::frematch), b = grad_for(TrainMode::supervised);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    r.passed = worst <= 1e-12;
    r.detail = "10 batches, max |g_frematch - g_supervised| " + fmt("%.3g", worst);
    return r;
}

}  // namespace

std::vector<std::string> property_names() {
    std::vector<std::string> names{"autodiff.primitive_gradients", "autodiff.backward_linearity",
                                   "autodiff.detachment",          "autodiff.softmax_rows",
                                   "loss.sup_gradient",            "loss.pl_gradient",
                                   "loss.fsr_gradient"};
    for (auto mode : {TrainMode::frematch, TrainMode::fsr_only, TrainMode::pl_only, TrainMode::supervised,
                      TrainMode::fully_supervised})
        names.push_back("loss.total_gradient." + to_string(mode));
    for (const char* n : {"loss.zero_cases", "fsr.trace_conjugation", "fsr.covariance_invariance",
                          "fsr.covariance_symmetric_psd", "nets.ema_closed_form", "nets.momentum_schedule",
                          "trainer.lambda_zero_gradient"})
        names.emplace_back(n);
    return names;
}

PropertyReport run_property_suite(std::uint64_t seed) {
    PropertyReport report;
    auto guarded = [&](const std::string& name, const std::function<PropertyResult()>& fn) {
        try {
            report.results.push_back(fn());
        } catch (const std::exception& e) {
            report.results.push_back({name, false, std::string("threw: ") + e.what()});
        }
    };
    guarded("autodiff.primitive_gradients", [&] { return primitive_gradients(seed); });
    guarded("autodiff.backward_linearity", [&] { return backward_linearity(seed); });
    guarded("autodiff.detachment", [&] { return detachment(seed); });
    guarded("autodiff.softmax_rows", [&] { return softmax_rows(seed); });
    guarded("loss.sup_gradient", [&] { return sup_gradient(seed); });
    guarded("loss.pl_gradient", [&] { return pl_gradient(seed); });
    guarded("loss.fsr_gradient", [&] { return fsr_gradient(seed); });
    for (auto mode : {TrainMode::frematch, TrainMode::fsr_only, TrainMode::pl_only, TrainMode::supervised,
                      TrainMode::fully_supervised}) {
        guarded("loss.total_gradient." + to_string(mode), [&] { return total_gradient(seed, mode); });
    }
    guarded("loss.zero_cases", [&] { return loss_zero_cases(seed); });
    guarded("fsr.trace_conjugation", [&] { return trace_conjugation(seed); });
    guarded("fsr.covariance_invariance", [&] { return covariance_invariance(seed); });
    guarded("fsr.covariance_symmetric_psd", [&] { return covariance_symmetric_psd(seed); });
    guarded("nets.ema_closed_form", [&] { return ema_closed_form(seed); });
    guarded("nets.momentum_schedule", [] { return momentum_schedule_property(); });
    guarded("trainer.lambda_zero_gradient", [&] { return lambda_zero_gradient(seed); });
    return report;
}

}  // namespace frematch
