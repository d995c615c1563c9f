#include <doctest.h>

#include <cmath>
#include <random>

#include "frematch/pseudolabel.hpp"
#include "frematch/random.hpp"

using namespace frematch;

namespace {

Tensor random_logits(std::uint64_t seed, std::size_t n, std::size_t c, double spread, bool requires_grad = false) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, spread);
    std::vector<double> v(n * c);
    for (auto& x : v) x = g(rng);
    return Tensor::from_values({n, c}, std::move(v), requires_grad);
}

double row_ce(const Tensor& logits, std::size_t row, int target) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits.at(row, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(row, j) - mx);
    return -(logits.at(row, static_cast<std::size_t>(target)) - mx - std::log(z));
}

}  // namespace

TEST_CASE("pseudo-labels from confident and uniform rows") {
    // log(0.97/0.03) separates the two classes
    const Tensor confident = Tensor::matrix({{std::log(0.97 / 0.03), 0.0}});
    const PseudoBatch pb = make_pseudo_labels(confident, 0.95);
    CHECK(pb.probs.at(0, 0) == doctest::Approx(0.97).epsilon(1e-14));
    CHECK(pb.labels[0] == 0);
    CHECK(pb.mask[0] == 1.0);

    const PseudoBatch uniform = make_pseudo_labels(Tensor::zeros({1, 10}), 0.95);
    CHECK(uniform.mask[0] == 0.0);
    CHECK(uniform.labels[0] == 0);
    CHECK(uniform.mask_rate() == 0.0);
}

TEST_CASE("pseudo-label invariants on random logits") {
    const Tensor logits = random_logits(1, 50, 4, 3.0);
    const PseudoBatch pb = make_pseudo_labels(logits, 0.8);
    const auto argmax = argmax_rows(logits);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < pb.size(); ++i) {
        double s = 0.0, mx = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            s += pb.probs.at(i, j);
            mx = std::max(mx, pb.probs.at(i, j));
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
        CHECK(pb.labels[i] == argmax[i]);
        CHECK(pb.mask[i] == (mx > 0.8 ? 1.0 : 0.0));
        kept += pb.mask[i] > 0.0;
    }
    CHECK(pb.mask_rate() == doctest::Approx(kept / 50.0));
    CHECK(kept > 0);
    CHECK(kept < 50);
}

TEST_CASE("mask is antitone in eta, argmax is scale invariant") {
    const Tensor logits = random_logits(2, 80, 3, 2.0);
    std::vector<double> prev = make_pseudo_labels(logits, 0.35).mask;
    for (double eta : {0.5, 0.7, 0.9, 0.95, 0.99}) {
        const auto mask = make_pseudo_labels(logits, eta).mask;
        for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] <= prev[i]);
        prev = mask;
    }
    const auto base = make_pseudo_labels(logits, 0.9).labels;
    for (double k : {0.01, 0.5, 7.0}) CHECK(make_pseudo_labels(k * logits, 0.9).labels == base);
}

TEST_CASE("eta outside (0, 1) is rejected") {
    const Tensor logits = Tensor::zeros({2, 2});
    CHECK_THROWS_AS((void)make_pseudo_labels(logits, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)make_pseudo_labels(logits, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)make_pseudo_labels(logits, -0.5), std::invalid_argument);
}

TEST_CASE("pl loss with nothing masked in is zero with zero gradient") {
    const PseudoBatch pb = make_pseudo_labels(Tensor::zeros({3, 4}), 0.95);
    const Tensor basic = random_logits(3, 3, 4, 1.0, true);
    const Tensor loss = pl_loss(pb, basic);
    CHECK(loss.item() == 0.0);
    backward(loss);
    if (const auto grad = basic.grad())
        for (double g : *grad) CHECK(g == 0.0);
}

TEST_CASE("pl loss direct evaluations") {
    const PseudoBatch one = make_pseudo_labels(Tensor::matrix({{10.0, 0.0}}), 0.95);
    CHECK(pl_loss(one, Tensor::zeros({1, 2})).item() == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(pl_loss(one, Tensor::zeros({1, 2})).item() == doctest::Approx(-std::log(0.5)).epsilon(1e-15));

    // row 0 confident, row 1 not: the batch of two halves row 0's cross-entropy
    const PseudoBatch two = make_pseudo_labels(Tensor::matrix({{0.0, 10.0}, {0.1, 0.0}}), 0.95);
    const Tensor basic = Tensor::matrix({{0.3, -1.2}, {2.0, 0.5}});
    CHECK(two.mask == std::vector<double>{1.0, 0.0});
    CHECK(pl_loss(two, basic).item() == doctest::Approx(0.5 * row_ce(basic, 0, 1)).epsilon(1e-15));
}

TEST_CASE("appending a masked-out sample never raises pl loss") {
    const Tensor emp = random_logits(4, 6, 3, 4.0);
    const Tensor basic = random_logits(5, 6, 3, 1.0);
    const double base = pl_loss(make_pseudo_labels(emp, 0.9), basic).item();
    std::vector<double> e(emp.values().begin(), emp.values().end()), b(basic.values().begin(), basic.values().end());
    e.insert(e.end(), {0.0, 0.0, 0.0});
    b.insert(b.end(), {1.0, -1.0, 3.0});
    const double grown = pl_loss(make_pseudo_labels(Tensor::from_values({7, 3}, e), 0.9), Tensor::from_values({7, 3}, b)).item();
    CHECK(grown <= base);
    CHECK(grown == doctest::Approx(base * 6.0 / 7.0).epsilon(1e-14));
}

TEST_CASE("pl loss sends no gradient to empirical logits") {
    const Tensor emp = random_logits(6, 5, 3, 4.0, true);
    const Tensor basic = random_logits(7, 5, 3, 1.0, true);
    backward(pl_loss(make_pseudo_labels(emp, 0.5), basic));
    if (const auto grad = emp.grad())
        for (double g : *grad) CHECK(g == 0.0);
    REQUIRE(basic.grad().has_value());
}

TEST_CASE("pl loss rejects a length mismatch") {
    const PseudoBatch pb = make_pseudo_labels(Tensor::zeros({3, 2}), 0.9);
    CHECK_THROWS_AS((void)pl_loss(pb, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("supervised losses") {
    const std::vector<int> labels{0, 2, 1};
    const Tensor perfect = Tensor::matrix({{800, 0, 0}, {0, 0, 800}, {0, 800, 0}});
    CHECK(sup_loss(perfect, labels).item() == 0.0);
    CHECK(full_sup_loss(perfect, labels).item() == 0.0);

    const std::vector<int> ten{3, 9};
    CHECK(sup_loss(Tensor::zeros({2, 10}), ten).item() == doctest::Approx(2.302585).epsilon(1e-6));
    CHECK(full_sup_loss(Tensor::zeros({2, 10}), ten).item() == doctest::Approx(std::log(10.0)).epsilon(1e-15));

    const std::vector<int> bad{0, 3, 1};
    CHECK_THROWS((void)sup_loss(Tensor::zeros({3, 3}), bad));
    CHECK_THROWS((void)full_sup_loss(Tensor::zeros({3, 3}), bad));
    const std::vector<int> negative{0, -1, 1};
    CHECK_THROWS((void)sup_loss(Tensor::zeros({3, 3}), negative));
}

TEST_CASE("supervised loss gradients") {
    Tensor logits = random_logits(8, 6, 4, 1.5, true);
    const std::vector<int> labels{0, 1, 2, 3, 3, 1};
    std::vector<Tensor> inputs{logits};
    CHECK(grad_check([&] { return sup_loss(logits, labels); }, inputs).passed);
    CHECK(grad_check([&] { return full_sup_loss(logits, labels); }, inputs).passed);
}

TEST_CASE("total loss") {
    const Tensor s = Tensor::scalar(1.0), f = Tensor::scalar(0.5), p = Tensor::scalar(0.25);
    CHECK(total_loss(s, f, p, 20.0).item() == 16.0);
    CHECK(total_loss(s, f, p, 0.0).item() == 1.0);
    CHECK_THROWS_AS((void)total_loss(s, f, p, -1.0), std::invalid_argument);

    // affine in each component
    const double base = total_loss(s, f, p, 3.0).item();
    CHECK(total_loss(Tensor::scalar(1.5), f, p, 3.0).item() - base == doctest::Approx(0.5));
    CHECK(total_loss(s, Tensor::scalar(0.75), p, 3.0).item() - base == doctest::Approx(0.75));
    CHECK(total_loss(s, f, Tensor::scalar(-0.25), 3.0).item() - base == doctest::Approx(-1.5));
}
