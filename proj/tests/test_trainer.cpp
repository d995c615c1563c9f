#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "frematch/trainer.hpp"

using namespace frematch;

namespace {

TrainConfig small_config(TrainMode mode, std::size_t epochs = 2) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = epochs;
    cfg.hidden_dims = {8};
    cfg.feature_dim = 4;
    cfg.labelled_bs = 4;
    cfg.mu = 2.0;
    cfg.seed = 3;
    return cfg;
}

struct Toy {
    Dataset ds = make_two_moons(120, 0.1, 1);
    SslSplit split = split_ssl(ds, 2, 0.25, 1);
};

TrainState small_state(const TrainConfig& cfg) { return init_state(NetSpec{2, cfg.hidden_dims, cfg.feature_dim, 2}, cfg); }

Gradients zero_grads(const TrainState& st) {
    return {std::vector<double>(st.dual.basic.size(), 0.0), std::vector<double>(st.fsr.mapping.size(), 0.0),
            std::vector<double>(st.fsr.eps_logits.size(), 0.0)};
}

}  // namespace

TEST_CASE("cosine learning rate") {
    CHECK(cosine_lr(0, 100, 0.01, 1e-4) == 0.01);
    CHECK(cosine_lr(100, 100, 0.01, 1e-4) == 1e-4);
    CHECK(cosine_lr(50, 100, 0.01, 1e-4) == doctest::Approx((0.01 + 1e-4) / 2).epsilon(1e-14));
    double prev = 1.0;
    for (int t = 0; t <= 100; ++t) {
        const double lr = cosine_lr(t, 100, 0.01, 1e-4);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS((void)cosine_lr(-1, 100, 0.01, 1e-4), std::invalid_argument);
}

TEST_CASE("sgd step with zero gradients and no decay changes nothing") {
    TrainConfig cfg = small_config(TrainMode::frematch);
    cfg.weight_decay = 0.0;
    TrainState st = small_state(cfg);
    const TrainState before = st;
    sgd_step(st, zero_grads(st), 0.1, cfg);
    CHECK(st.dual.basic == before.dual.basic);
    CHECK(st.fsr.mapping == before.fsr.mapping);
    CHECK(st.fsr.eps_logits == before.fsr.eps_logits);
}

TEST_CASE("two momentum steps match the hand expansion") {
    TrainConfig cfg = small_config(TrainMode::frematch);
    cfg.sgd_momentum = 0.9;
    cfg.weight_decay = 0.01;
    TrainState st = small_state(cfg);
    const double lr = 0.05, g1 = 0.7, g2 = -0.3;
    const double p0 = st.dual.basic[0];
    Gradients g = zero_grads(st);
    g.theta[0] = g1;
    sgd_step(st, g, lr, cfg);
    g.theta[0] = g2;
    sgd_step(st, g, lr, cfg);
    // v1 = g1 + wd p0; p1 = p0 - lr v1; v2 = 0.9 v1 + g2 + wd p1; p2 = p1 - lr v2
    const double v1 = g1 + 0.01 * p0;
    const double p1 = p0 - lr * v1;
    const double v2 = 0.9 * v1 + g2 + 0.01 * p1;
    const double p2 = p1 - lr * v2;
    CHECK(std::abs(st.dual.basic[0] - p2) <= 1e-15);
    CHECK(st.opt.steps == 2);
}

TEST_CASE("weight decay touches theta but not C or rho") {
    TrainConfig cfg = small_config(TrainMode::frematch);
    cfg.weight_decay = 0.5;
    TrainState st = small_state(cfg);
    const TrainState before = st;
    sgd_step(st, zero_grads(st), 0.1, cfg);
    CHECK(st.dual.basic != before.dual.basic);
    CHECK(st.fsr.mapping == before.fsr.mapping);
    CHECK(st.fsr.eps_logits == before.fsr.eps_logits);
}

TEST_CASE("a non-finite gradient aborts naming the block") {
    const TrainConfig cfg = small_config(TrainMode::frematch);
    TrainState st = small_state(cfg);
    Gradients g = zero_grads(st);
    const auto& head = st.dual.layout.blocks()[4];
    g.theta[head.offset + 1] = std::numeric_limits<double>::quiet_NaN();
    try {
        sgd_step(st, g, 0.1, cfg);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find(head.name) != std::string::npos);
    }
    Gradients h = zero_grads(st);
    h.eps_logits[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(sgd_step(st, h, 0.1, cfg), NumericalError);
}

TEST_CASE("supervised mode has zero unlabelled terms") {
    const Toy toy;
    const RunResult r = run(small_config(TrainMode::supervised, 3), toy.ds, toy.split);
    REQUIRE_FALSE(r.aborted);
    for (const auto& it : r.iterations) {
        CHECK(it.losses.l_fre == 0.0);
        CHECK(it.losses.l_pl == 0.0);
        CHECK(it.losses.mask_rate == 0.0);
        CHECK(it.losses.total == it.losses.l_sup);
    }
}

TEST_CASE("lambda = 0 frematch gradient equals the supervised gradient") {
    TrainConfig fm = small_config(TrainMode::frematch);
    fm.lambda = 0.0;
    TrainConfig sup = fm;
    sup.mode = TrainMode::supervised;
    const TrainState st = small_state(fm);
    const Toy toy;
    const Batcher b(toy.ds, toy.split, 4, 2.0, 0);
    const auto batch = b.epoch(0).front();
    const Tensor xl = Tensor::from_values({4, 2}, batch.labelled.samples);
    const Tensor xu = Tensor::from_values({8, 2}, batch.unlabelled.samples);

    auto grad = [&](const TrainConfig& cfg) {
        BoundParams basic(st.dual.layout, st.dual.basic, true);
        const BoundParams emp(st.dual.layout, st.dual.empirical, false);
        const BoundFsr fsr(st.fsr, true);
        backward(build_losses(basic, emp, fsr, xl, batch.labelled.labels, UnlabelledViews{xu, xu}, cfg).total);
        return basic.gather_grad();
    };
    const auto a = grad(fm), s = grad(sup);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - s[i]) <= 1e-12);
}

TEST_CASE("evaluate: perfect, adversarial and tied parameters") {
    Dataset ds;
    ds.name = "axes";
    ds.geometry = SampleGeometry::points(2);
    ds.num_classes = 2;
    ds.samples = {1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 3.0};
    ds.labels = {0, 0, 1, 1};
    const std::vector<std::size_t> all{0, 1, 2, 3};

    // every layer an identity map
    const NetSpec spec{2, {2}, 2, 2};
    const auto layout = ParamLayout::for_spec(spec);
    std::vector<double> flat(layout.total_size(), 0.0);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& w = layout.blocks()[2 * l];
        flat[w.offset] = 1.0;
        flat[w.offset + 3] = 1.0;
    }
    CHECK(evaluate(layout, flat, ds, all) == 0.0);

    std::vector<double> swapped = flat;
    const auto& head = layout.blocks()[4];
    swapped[head.offset] = 0.0;
    swapped[head.offset + 3] = 0.0;
    swapped[head.offset + 1] = 1.0;
    swapped[head.offset + 2] = 1.0;
    CHECK(evaluate(layout, swapped, ds, all) == 1.0);

    const std::vector<double> zeros(layout.total_size(), 0.0);
    CHECK(evaluate(layout, zeros, ds, all) == 0.5);
    CHECK_THROWS_AS((void)evaluate(layout, flat, ds, {}), std::invalid_argument);
}

TEST_CASE("zero epochs gives a single evaluation row") {
    const Toy toy;
    const RunResult r = run(small_config(TrainMode::frematch, 0), toy.ds, toy.split);
    CHECK(r.epochs.size() == 1);
    CHECK(r.iterations.empty());
    CHECK(r.epochs[0].epoch == 0);
    const std::string csv = metrics_csv(r.epochs);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("same config and seed give identical metrics") {
    const Toy toy;
    for (TrainMode mode : {TrainMode::frematch, TrainMode::supervised, TrainMode::fully_supervised}) {
        const TrainConfig cfg = small_config(mode, 3);
        const RunResult a = run(cfg, toy.ds, toy.split), b = run(cfg, toy.ds, toy.split);
        CHECK(metrics_csv(a.epochs) == metrics_csv(b.epochs));
        CHECK(a.state.dual.basic == b.state.dual.basic);
    }
    TrainConfig other = small_config(TrainMode::frematch, 3);
    other.seed = 4;
    CHECK(metrics_csv(run(other, toy.ds, toy.split).epochs) !=
          metrics_csv(run(small_config(TrainMode::frematch, 3), toy.ds, toy.split).epochs));
}

TEST_CASE("every iteration's total is the weighted sum of its parts; lr follows the cosine schedule") {
    const Toy toy;
    for (TrainMode mode : {TrainMode::frematch, TrainMode::fsr_only, TrainMode::pl_only}) {
        TrainConfig cfg = small_config(mode, 4);
        cfg.eta = 0.6;
        const RunResult r = run(cfg, toy.ds, toy.split);
        REQUIRE_FALSE(r.aborted);
        CHECK(static_cast<std::int64_t>(r.iterations.size()) == r.total_iterations);
        for (const auto& it : r.iterations) {
            const auto& l = it.losses;
            CHECK(std::abs(l.total - (l.l_sup + cfg.lambda * l.l_fre + cfg.lambda * l.l_pl)) <=
                  1e-12 * (1.0 + std::abs(l.total)));
            CHECK(it.lr == cosine_lr(it.iter, r.total_iterations, cfg.lr0, cfg.min_lr));
            CHECK(it.m == cfg.m);
        }
    }
}

TEST_CASE("the empirical model moves only by the EMA") {
    const Toy toy;
    const TrainConfig cfg = small_config(TrainMode::frematch);
    TrainState st = small_state(cfg);
    const Batcher b(toy.ds, toy.split, 4, 2.0, 0);
    Rng rng(1);
    for (const auto& pair : b.epoch(0)) {
        std::vector<double> expect = st.dual.empirical;
        for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = cfg.m * expect[i] + (1 - cfg.m) * st.dual.basic[i];
        (void)train_iteration(st, pair.labelled, pair.unlabelled, toy.ds.geometry, cfg, 0.05, rng);
        CHECK(st.dual.empirical == expect);
    }
}

TEST_CASE("checkpoint round trip") {
    const Toy toy;
    const RunResult r = run(small_config(TrainMode::frematch, 2), toy.ds, toy.split);
    const auto path = std::filesystem::temp_directory_path() / "frematch_test_ckpt.fmc";
    save_checkpoint(path, r.state);
    const TrainState back = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(back.dual.spec == r.state.dual.spec);
    CHECK(back.dual.basic == r.state.dual.basic);
    CHECK(back.dual.empirical == r.state.dual.empirical);
    CHECK(back.fsr.mapping == r.state.fsr.mapping);
    CHECK(back.fsr.eps_logits == r.state.fsr.eps_logits);
    CHECK(back.iteration == r.state.iteration);
    CHECK_THROWS((void)load_checkpoint(path));
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    TrainConfig c;
    c.eta = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.m = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.mu = 0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.lr0 = c.min_lr;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(train_mode_from_string(to_string(TrainMode::pl_only)) == TrainMode::pl_only);
    CHECK_THROWS_AS((void)train_mode_from_string("fixmatch"), std::invalid_argument);
}
