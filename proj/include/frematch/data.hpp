#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "frematch/augment.hpp"

namespace frematch {

struct Dataset {
    std::string name;
    SampleGeometry geometry;
    std::vector<double> samples;  // num_samples x geometry.dim, row-major
    std::vector<int> labels;
    std::size_t num_classes = 0;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::span<const double> sample(std::size_t i) const;
    // Labels in range and every class present.
    void validate() const;
};

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed);
Dataset make_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double sigma,
                   std::uint64_t seed);

// JSON header line, then fp64 samples, then int32 labels (little-endian).
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// The bundled 8x8 grayscale digit set (10 classes).
std::filesystem::path bundled_digits_path();

struct SslSplit {
    std::vector<std::size_t> labelled;
    std::vector<std::size_t> unlabelled;
    std::vector<std::size_t> test;
};

// Test set: floor(test_frac * N) samples chosen at random. Labelled set:
// exactly labels_per_class samples of each class from the remainder. Every
// other sample is unlabelled.
SslSplit split_ssl(const Dataset& ds, std::size_t labels_per_class, double test_frac, std::uint64_t seed);

// {"labelled": [...], "unlabelled": [...], "test": [...]}
void save_split(const std::filesystem::path& path, const SslSplit& split);
SslSplit load_split(const std::filesystem::path& path);

struct LabelledBatch {
    std::vector<std::size_t> indices;
    std::vector<double> samples;
    std::vector<int> labels;
    [[nodiscard]] std::size_t size() const noexcept { return indices.size(); }
};

// Carries no labels.
struct UnlabelledBatch {
    std::vector<std::size_t> indices;
    std::vector<double> samples;
    [[nodiscard]] std::size_t size() const noexcept { return indices.size(); }
};

struct BatchPair {
    LabelledBatch labelled;
    UnlabelledBatch unlabelled;
};

// Per epoch: B = ceil(|U| / floor(mu * labelled_bs)) iterations. The
// unlabelled pool is permuted once per epoch and consumed in order (the last
// batch wraps); the labelled pool is reshuffled whenever it is exhausted.
// A labelled-only batcher covers the labelled pool once per epoch instead.
class Batcher {
public:
    Batcher(const Dataset& ds, const SslSplit& split, std::size_t labelled_bs, double mu, std::uint64_t seed);
    static Batcher labelled_only(const Dataset& ds, const SslSplit& split, std::size_t labelled_bs,
                                 std::uint64_t seed);

    [[nodiscard]] std::size_t iterations_per_epoch() const noexcept { return iterations_; }
    [[nodiscard]] std::size_t unlabelled_batch_size() const noexcept { return unlabelled_bs_; }
    [[nodiscard]] std::vector<BatchPair> epoch(std::size_t epoch_index) const;

private:
    Batcher() = default;
    const Dataset* ds_ = nullptr;
    std::vector<std::size_t> labelled_;
    std::vector<std::size_t> unlabelled_;
    std::size_t labelled_bs_ = 0;
    std::size_t unlabelled_bs_ = 0;
    std::size_t iterations_ = 0;
    std::uint64_t seed_ = 0;
};

}  // namespace frematch
