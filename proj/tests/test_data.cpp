#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "frematch/data.hpp"
#include "frematch/trainer.hpp"

using namespace frematch;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("frematch_test_" + name);
}

// Least-squares linear discriminant on [x, 1] with +-1 targets; returns test error.
double linear_classifier_error(const Dataset& ds, const SslSplit& split) {
    std::vector<std::size_t> train = split.labelled;
    train.insert(train.end(), split.unlabelled.begin(), split.unlabelled.end());
    Eigen::MatrixXd a(static_cast<Eigen::Index>(train.size()), 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto s = ds.sample(train[i]);
        a.row(static_cast<Eigen::Index>(i)) << s[0], s[1], 1.0;
        y(static_cast<Eigen::Index>(i)) = ds.labels[train[i]] == 1 ? 1.0 : -1.0;
    }
    const Eigen::Vector3d w = a.colPivHouseholderQr().solve(y);
    std::size_t wrong = 0;
    for (std::size_t idx : split.test) {
        const auto s = ds.sample(idx);
        const int pred = w(0) * s[0] + w(1) * s[1] + w(2) > 0.0 ? 1 : 0;
        wrong += pred != ds.labels[idx];
    }
    return static_cast<double>(wrong) / static_cast<double>(split.test.size());
}

}  // namespace

TEST_CASE("noise-free two moons: class 0 lies on the upper unit arc") {
    const Dataset ds = make_two_moons(200, 0.0, 1);
    CHECK(ds.size() == 200);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] != 0) continue;
        ++zeros;
        const auto s = ds.sample(i);
        CHECK(std::abs(std::hypot(s[0], s[1]) - 1.0) < 1e-15);
        CHECK(s[1] >= -1e-15);  // sin(pi) rounds to -3e-16
    }
    CHECK(zeros == 100);
}

TEST_CASE("two moons is deterministic per seed and rejects odd n") {
    const Dataset a = make_two_moons(300, 0.1, 4), b = make_two_moons(300, 0.1, 4), c = make_two_moons(300, 0.1, 5);
    CHECK(a.samples == b.samples);
    CHECK(a.labels == b.labels);
    CHECK(a.samples != c.samples);
    CHECK_THROWS_AS((void)make_two_moons(301, 0.1, 0), std::invalid_argument);
    CHECK_THROWS_AS((void)make_two_moons(100, -0.1, 0), std::invalid_argument);
}

TEST_CASE("two moons difficulty: linear model above 10%, fully supervised MLP below 3%") {
    const Dataset ds = make_two_moons(1000, 0.1, 0);
    const SslSplit split = split_ssl(ds, 2, 0.3, 0);
    const double linear = linear_classifier_error(ds, split);
    CHECK(linear > 0.10);

    TrainConfig cfg;
    cfg.mode = TrainMode::fully_supervised;
    cfg.epochs = 60;
    cfg.labelled_bs = 32;
    cfg.lr0 = 0.05;
    const RunResult r = run(cfg, ds, split);
    REQUIRE_FALSE(r.aborted);
    MESSAGE("linear " << linear << ", mlp " << r.final_error());
    CHECK(r.final_error() < 0.03);
}

TEST_CASE("blobs") {
    const std::vector<std::vector<double>> centers{{0, 0}, {5, 0}, {0, 5}};
    const Dataset exact = make_blobs(30, centers, 0.0, 2);
    for (std::size_t i = 0; i < exact.size(); ++i) {
        const auto s = exact.sample(i);
        const auto& c = centers[static_cast<std::size_t>(exact.labels[i])];
        CHECK(s[0] == c[0]);
        CHECK(s[1] == c[1]);
    }

    // pairwise distance 5 > 10 * 0.4
    const Dataset noisy = make_blobs(600, centers, 0.4, 3);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        const auto s = noisy.sample(i);
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const double d = std::hypot(s[0] - centers[k][0], s[1] - centers[k][1]);
            if (d < best_d) best_d = d, best = k;
        }
        wrong += static_cast<int>(best) != noisy.labels[i];
    }
    CHECK(wrong == 0);

    CHECK(make_blobs(50, centers, 0.4, 3).samples == make_blobs(50, centers, 0.4, 3).samples);
    CHECK_THROWS_AS((void)make_blobs(10, {{0, 0}}, 0.1, 0), std::invalid_argument);
}

TEST_CASE("split sizes and stratification") {
    const Dataset ds = make_two_moons(1000, 0.1, 0);
    const SslSplit s = split_ssl(ds, 2, 0.3, 0);
    CHECK(s.labelled.size() == 4);
    CHECK(s.test.size() == 300);
    CHECK(s.unlabelled.size() == 696);
    std::map<int, int> per_class;
    for (auto i : s.labelled) ++per_class[ds.labels[i]];
    CHECK(per_class[0] == 2);
    CHECK(per_class[1] == 2);
}

TEST_CASE("split sets are disjoint for 100 seeds") {
    const Dataset ds = make_blobs(120, {{0, 0}, {3, 0}, {0, 3}}, 0.5, 1);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const SslSplit s = split_ssl(ds, 3, 0.25, seed);
        std::set<std::size_t> all;
        for (const auto* part : {&s.labelled, &s.unlabelled, &s.test})
            for (auto i : *part) {
                CHECK(i < ds.size());
                CHECK(all.insert(i).second);
            }
        CHECK(all.size() == ds.size());
        CHECK(s.labelled.size() == 9);
    }
}

TEST_CASE("split rejects a class without enough samples, naming it") {
    Dataset ds = make_blobs(20, {{0, 0}, {4, 4}}, 0.1, 0);
    // leave class 1 with a single sample
    bool kept = false;
    Dataset thin;
    thin.name = "thin";
    thin.geometry = ds.geometry;
    thin.num_classes = 2;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] == 1) {
            if (kept) continue;
            kept = true;
        }
        const auto s = ds.sample(i);
        thin.samples.insert(thin.samples.end(), s.begin(), s.end());
        thin.labels.push_back(ds.labels[i]);
    }
    try {
        (void)split_ssl(thin, 2, 0.0, 0);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
}

TEST_CASE("batcher with mu = 1 covers the unlabelled pool once per epoch") {
    const Dataset ds = make_two_moons(200, 0.1, 0);
    SslSplit s = split_ssl(ds, 2, 0.2, 0);
    s.unlabelled.resize(152);  // 19 * 8
    const Batcher b(ds, s, 8, 1.0, 7);
    CHECK(b.iterations_per_epoch() == 19);
    const auto epoch = b.epoch(0);
    std::map<std::size_t, int> seen;
    const std::set<std::size_t> test(s.test.begin(), s.test.end());
    for (const auto& pair : epoch) {
        CHECK(pair.unlabelled.size() == 8);
        CHECK(pair.labelled.size() == 8);
        CHECK(pair.unlabelled.samples.size() == 16);
        for (auto i : pair.unlabelled.indices) {
            ++seen[i];
            CHECK(test.count(i) == 0);
        }
        for (auto i : pair.labelled.indices) CHECK(test.count(i) == 0);
        for (std::size_t j = 0; j < pair.labelled.size(); ++j)
            CHECK(pair.labelled.labels[j] == ds.labels[pair.labelled.indices[j]]);
    }
    CHECK(seen.size() == 152);
    for (const auto& [idx, count] : seen) CHECK(count == 1);
}

TEST_CASE("batcher is deterministic per (seed, epoch)") {
    const Dataset ds = make_two_moons(200, 0.1, 0);
    const SslSplit s = split_ssl(ds, 2, 0.2, 0);
    const Batcher a(ds, s, 4, 3.0, 11), b(ds, s, 4, 3.0, 11);
    CHECK(a.unlabelled_batch_size() == 12);
    const auto ea = a.epoch(3), eb = b.epoch(3), other = a.epoch(4);
    REQUIRE(ea.size() == eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i) {
        CHECK(ea[i].labelled.indices == eb[i].labelled.indices);
        CHECK(ea[i].unlabelled.indices == eb[i].unlabelled.indices);
    }
    CHECK(ea[0].unlabelled.indices != other[0].unlabelled.indices);
}

TEST_CASE("batcher rejects bad arguments") {
    const Dataset ds = make_two_moons(100, 0.1, 0);
    SslSplit s = split_ssl(ds, 2, 0.2, 0);
    CHECK_THROWS_AS(Batcher(ds, s, 0, 1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(Batcher(ds, s, 4, 0.5, 0), std::invalid_argument);
    SslSplit no_unlabelled = s;
    no_unlabelled.unlabelled.clear();
    CHECK_THROWS_AS(Batcher(ds, no_unlabelled, 4, 1.0, 0), std::invalid_argument);
    SslSplit no_labelled = s;
    no_labelled.labelled.clear();
    CHECK_THROWS_AS(Batcher(ds, no_labelled, 4, 1.0, 0), std::invalid_argument);
}

TEST_CASE("dataset file round trip") {
    const Dataset ds = make_blobs(40, {{0, 0, 1}, {2, 2, 2}}, 0.3, 9);
    const auto path = temp_path("roundtrip.fmd");
    save_dataset(path, ds);
    const Dataset back = load_dataset(path);
    std::filesystem::remove(path);
    CHECK(back.name == ds.name);
    CHECK(back.samples == ds.samples);
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == 2);
    CHECK(back.geometry.dim == 3);
    CHECK_THROWS((void)load_dataset(temp_path("missing.fmd")));
}

TEST_CASE("split file round trip") {
    const Dataset ds = make_two_moons(100, 0.1, 0);
    const SslSplit s = split_ssl(ds, 3, 0.2, 4);
    const auto path = temp_path("split.json");
    save_split(path, s);
    const SslSplit back = load_split(path);
    std::filesystem::remove(path);
    CHECK(back.labelled == s.labelled);
    CHECK(back.unlabelled == s.unlabelled);
    CHECK(back.test == s.test);
    CHECK_THROWS((void)load_split(temp_path("no_split.json")));
}

TEST_CASE("bundled digits") {
    const Dataset ds = load_dataset(bundled_digits_path());
    CHECK(ds.size() == 1797);
    CHECK(ds.num_classes == 10);
    CHECK(ds.geometry.modality == Modality::image);
    CHECK(ds.geometry.height == 8);
    CHECK(ds.geometry.width == 8);
    CHECK_NOTHROW(ds.validate());
    const auto [lo, hi] = std::minmax_element(ds.samples.begin(), ds.samples.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
}

TEST_CASE("dataset validation") {
    Dataset ds = make_two_moons(10, 0.0, 0);
    ds.labels[0] = 2;
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
    Dataset missing = make_two_moons(10, 0.0, 0);
    std::fill(missing.labels.begin(), missing.labels.end(), 0);
    CHECK_THROWS_AS(missing.validate(), std::invalid_argument);
}
