#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "frematch/nets.hpp"
#include "frematch/random.hpp"

using namespace frematch;

namespace {

const NetSpec kSmall{2, {5, 4}, 3, 2};

Tensor random_input(std::uint64_t seed, std::size_t n, std::size_t dim) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n * dim);
    for (auto& x : v) x = g(rng);
    return Tensor::from_values({n, dim}, std::move(v));
}

// Plain Eigen forward pass read straight from the flat layout.
Eigen::MatrixXd reference_logits(const ParamLayout& layout, const std::vector<double>& flat, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd h = x;
    const auto blocks = layout.blocks();
    for (std::size_t l = 0; l < layout.num_layers(); ++l) {
        const auto& wb = blocks[2 * l];
        const auto& bb = blocks[2 * l + 1];
        Eigen::MatrixXd w(wb.shape.rows, wb.shape.cols);
        for (std::size_t i = 0; i < wb.shape.rows; ++i)
            for (std::size_t j = 0; j < wb.shape.cols; ++j) w(i, j) = flat[wb.offset + i * wb.shape.cols + j];
        Eigen::RowVectorXd b(bb.shape.cols);
        for (std::size_t j = 0; j < bb.shape.cols; ++j) b(j) = flat[bb.offset + j];
        h = (h * w).rowwise() + b;
        if (l + 1 < layout.num_layers()) h = h.cwiseMax(0.0);
    }
    return h;
}

}  // namespace

TEST_CASE("NetSpec validation") {
    CHECK_NOTHROW(kSmall.validate());
    CHECK_THROWS_AS((NetSpec{2, {4}, 1, 2}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((NetSpec{2, {4}, 3, 1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((NetSpec{0, {4}, 3, 2}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((NetSpec{2, {0}, 3, 2}.validate()), std::invalid_argument);
}

TEST_CASE("layout covers hidden, feature and head blocks") {
    const auto layout = ParamLayout::for_spec(kSmall);
    // 2*5+5 + 5*4+4 + 4*3+3 + 3*2+2
    CHECK(layout.total_size() == 15 + 24 + 15 + 8);
    CHECK(layout.num_layers() == 4);
    const auto blocks = layout.blocks();
    CHECK(blocks[4].name == "feature.weight");
    CHECK(blocks[6].name == "head.weight");
    CHECK(blocks[6].shape == Shape{3, 2});
}

TEST_CASE("init_pair: empirical equals basic, deterministic per seed") {
    const DualModel a = init_pair(kSmall, 42);
    CHECK(a.empirical == a.basic);
    const DualModel b = init_pair(kSmall, 42);
    CHECK(a.basic == b.basic);
    const DualModel c = init_pair(kSmall, 43);
    CHECK(a.basic != c.basic);
}

TEST_CASE("init_pair draws within +-1/sqrt(fan_in)") {
    const DualModel m = init_pair(NetSpec{2, {64, 64}, 16, 2}, 7);
    const auto blocks = m.layout.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::size_t fan_in = blocks[b - b % 2].shape.rows;  // the layer's weight block
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < blocks[b].shape.size(); ++i)
            CHECK(std::abs(m.basic[blocks[b].offset + i]) <= bound);
    }
}

TEST_CASE("zero weights give zero features and uniform class probabilities") {
    const auto layout = ParamLayout::for_spec(kSmall);
    const std::vector<double> zeros(layout.total_size(), 0.0);
    const BoundParams p(layout, zeros, false);
    const Tensor x = random_input(1, 4, 2);
    const Tensor f = forward_features(p, x);
    CHECK(f.shape() == Shape{4, 3});
    for (double v : f.values()) CHECK(v == 0.0);
    const Tensor probs = softmax(forward_logits(p, f));
    for (double v : probs.values()) CHECK(v == 0.5);
}

TEST_CASE("an identity head passes features through") {
    const NetSpec spec{2, {3}, 2, 2};
    const auto layout = ParamLayout::for_spec(spec);
    std::vector<double> flat(layout.total_size(), 0.0);
    const auto& head = layout.blocks()[4];
    flat[head.offset + 0] = 1.0;
    flat[head.offset + 3] = 1.0;
    const BoundParams p(layout, flat, false);
    const Tensor feats = Tensor::matrix({{0.25, 2.0}, {1.5, 0.0}});
    const Tensor logits = forward_logits(p, feats);
    for (std::size_t i = 0; i < 4; ++i) CHECK(logits.values()[i] == feats.values()[i]);
}

TEST_CASE("forward agrees with an independent Eigen implementation") {
    const DualModel m = init_pair(kSmall, 5);
    const BoundParams p(m.layout, m.basic, false);
    const Tensor x = random_input(9, 7, 2);
    const Tensor logits = forward_logits(p, forward_features(p, x));
    Eigen::MatrixXd ex(7, 2);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 2; ++j) ex(i, j) = x.at(i, j);
    const Eigen::MatrixXd ref = reference_logits(m.layout, m.basic, ex);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 2; ++j) CHECK(logits.at(i, j) == doctest::Approx(ref(i, j)).epsilon(1e-13));
}

TEST_CASE("forward is batch independent and pure") {
    const DualModel m = init_pair(kSmall, 3);
    const BoundParams p(m.layout, m.basic, false);
    const Tensor two = random_input(4, 2, 2);
    const Tensor one = Tensor::from_values({1, 2}, {two.at(0, 0), two.at(0, 1)});
    const Tensor f2 = forward_features(p, two), f1 = forward_features(p, one);
    for (std::size_t j = 0; j < 3; ++j) CHECK(f1.at(0, j) == f2.at(0, j));
    const Tensor again = forward_features(p, two);
    CHECK(std::equal(again.values().begin(), again.values().end(), f2.values().begin()));
}

TEST_CASE("forward rejects mismatched input width") {
    const DualModel m = init_pair(kSmall, 3);
    const BoundParams p(m.layout, m.basic, false);
    CHECK_THROWS_AS((void)forward_features(p, Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS((void)forward_logits(p, Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("feature and head gradients match central differences") {
    const DualModel m = init_pair(kSmall, 12);
    BoundParams p(m.layout, m.basic, true);
    Tensor x = random_input(13, 5, 2);
    std::vector<Tensor> inputs(p.tensors().begin(), p.tensors().end());
    const auto feat = grad_check([&] { return mean_square(forward_features(p, x)); }, inputs);
    CHECK(feat.passed);
    const std::vector<int> labels{0, 1, 1, 0, 1};
    const auto head = grad_check(
        [&] { return softmax_cross_entropy(forward_logits(p, forward_features(p, x)), labels); }, inputs);
    CHECK(head.passed);
}

TEST_CASE("gather_grad returns zeros for untouched blocks") {
    const DualModel m = init_pair(kSmall, 1);
    BoundParams p(m.layout, m.basic, true);
    backward(sum(p.bias(3)));
    const auto g = p.gather_grad();
    CHECK(g.size() == m.layout.total_size());
    const auto& head_bias = m.layout.blocks()[7];
    for (std::size_t i = 0; i < g.size(); ++i) {
        const bool in_bias = i >= head_bias.offset && i < head_bias.offset + head_bias.shape.size();
        CHECK(g[i] == (in_bias ? 1.0 : 0.0));
    }
}

TEST_CASE("ema_update follows the momentum formula") {
    DualModel m = init_pair(NetSpec{2, {2}, 2, 2}, 0);
    std::fill(m.empirical.begin(), m.empirical.end(), 1.0);
    std::fill(m.basic.begin(), m.basic.end(), 2.0);
    ema_update(m, 0.9);
    for (double v : m.empirical) CHECK(v == doctest::Approx(1.1).epsilon(1e-15));
    for (double v : m.basic) CHECK(v == 2.0);
    ema_update(m, 0.0);
    CHECK(m.empirical == m.basic);
}

TEST_CASE("ema_update closed form over 100 steps") {
    for (double mom : {0.0, 0.5, 0.9, 0.97}) {
        DualModel m = init_pair(kSmall, 8);
        Rng rng(99);
        for (auto& v : m.empirical) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        const auto theta = m.basic, start = m.empirical;
        for (int k = 1; k <= 100; ++k) {
            ema_update(m, mom);
            const double mk = std::pow(mom, k);
            for (std::size_t i = 0; i < theta.size(); ++i)
                CHECK(std::abs(m.empirical[i] - (mk * start[i] + (1 - mk) * theta[i])) <= 1e-12);
        }
        CHECK(m.basic == theta);
    }
}

TEST_CASE("ema_update rejects momentum outside [0, 1)") {
    DualModel m = init_pair(kSmall, 0);
    CHECK_THROWS_AS(ema_update(m, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ema_update(m, -0.1), std::invalid_argument);
    DualModel broken = m;
    broken.empirical.pop_back();
    CHECK_THROWS(ema_update(broken, 0.5));
}

TEST_CASE("momentum schedule") {
    CHECK(momentum_schedule(0, 0.97) == 0.0);
    CHECK(momentum_schedule(9, 0.97) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(momentum_schedule(1000000, 0.97) == 0.97);
    // knee at ceil(1 / (1 - m0)) - 1
    CHECK(momentum_schedule(32, 0.97) < 0.97);
    CHECK(momentum_schedule(33, 0.97) == 0.97);
    double prev = 0.0;
    for (std::int64_t t = 0; t < 200; ++t) {
        const double v = momentum_schedule(t, 0.97);
        CHECK(v >= prev);
        CHECK(v <= 0.97);
        prev = v;
    }
    CHECK_THROWS(momentum_schedule(-1, 0.9));
    CHECK_THROWS(momentum_schedule(0, 1.0));
}
