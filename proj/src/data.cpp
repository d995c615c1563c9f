#include "frematch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "frematch/binio.hpp"
#include "frematch/random.hpp"

namespace frematch {

std::span<const double> Dataset::sample(std::size_t i) const {
    const std::size_t d = geometry.dim;
    return std::span<const double>(samples).subspan(i * d, d);
}

void Dataset::validate() const {
    if (num_classes < 2) throw std::invalid_argument("dataset '" + name + "': needs at least two classes");
    if (samples.size() != labels.size() * geometry.dim) {
        throw std::invalid_argument("dataset '" + name + "': sample block does not match label count");
    }
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::invalid_argument("dataset '" + name + "': label " + std::to_string(y) + " out of range");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = 0; k < num_classes; ++k)
        if (counts[k] == 0) throw std::invalid_argument("dataset '" + name + "': class " + std::to_string(k) + " is empty");
}

namespace {

void shuffle_dataset(Dataset& ds, Rng& rng) {
    std::vector<std::size_t> perm(ds.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t d = ds.geometry.dim;
    std::vector<double> samples(ds.samples.size());
    std::vector<int> labels(ds.labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        std::copy_n(ds.samples.begin() + static_cast<std::ptrdiff_t>(perm[i] * d), d,
                    samples.begin() + static_cast<std::ptrdiff_t>(i * d));
        labels[i] = ds.labels[perm[i]];
    }
    ds.samples = std::move(samples);
    ds.labels = std::move(labels);
}

}  // namespace

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n == 0 || n % 2 != 0) throw std::invalid_argument("make_two_moons: n must be even and positive");
    if (noise < 0.0) throw std::invalid_argument("make_two_moons: noise must be >= 0");
    Dataset ds;
    ds.name = "two_moons";
    ds.geometry = SampleGeometry::points(2);
    ds.num_classes = 2;
    const std::size_t half = n / 2;
    ds.samples.reserve(2 * n);
    for (int cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < half; ++i) {
            const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
            if (cls == 0) {
                ds.samples.push_back(std::cos(t));
                ds.samples.push_back(std::sin(t));
            } else {
                ds.samples.push_back(1.0 - std::cos(t));
                ds.samples.push_back(0.5 - std::sin(t));
            }
            ds.labels.push_back(cls);
        }
    }
    Rng rng(derive_seed(seed, 0x300));
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (noise > 0.0)
        for (auto& v : ds.samples) v += noise * gauss(rng);
    shuffle_dataset(ds, rng);
    return ds;
}

Dataset make_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double sigma,
                   std::uint64_t seed) {
    if (centers.size() < 2) throw std::invalid_argument("make_blobs: need at least two centers");
    if (n < centers.size()) throw std::invalid_argument("make_blobs: fewer samples than centers");
    if (sigma < 0.0) throw std::invalid_argument("make_blobs: sigma must be >= 0");
    const std::size_t dim = centers.front().size();
    if (dim == 0) throw std::invalid_argument("make_blobs: empty center");
    for (const auto& c : centers)
        if (c.size() != dim) throw std::invalid_argument("make_blobs: centers differ in dimension");

    Dataset ds;
    ds.name = "blobs";
    ds.geometry = SampleGeometry::points(dim);
    ds.num_classes = centers.size();
    Rng rng(derive_seed(seed, 0x301));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % centers.size();
        for (std::size_t j = 0; j < dim; ++j) ds.samples.push_back(centers[k][j] + sigma * gauss(rng));
        ds.labels.push_back(static_cast<int>(k));
    }
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
    nlohmann::json header;
    header["format"] = "frematch-dataset";
    header["version"] = 1;
    header["name"] = ds.name;
    header["N"] = ds.size();
    header["modality"] = to_string(ds.geometry.modality);
    header["shape"] = ds.geometry.modality == Modality::image
                          ? std::vector<std::size_t>{ds.geometry.height, ds.geometry.width}
                          : std::vector<std::size_t>{ds.geometry.dim};
    header["c"] = ds.num_classes;
    binio::write_header(out, header);
    binio::write_f64(out, ds.samples);
    std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
    binio::write_i32(out, labels);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
    const auto header = binio::read_header(in);
    if (header.value("format", "") != "frematch-dataset") {
        throw std::runtime_error("load_dataset: " + path.string() + " is not a dataset file");
    }
    Dataset ds;
    ds.name = header.at("name").get<std::string>();
    const auto n = header.at("N").get<std::size_t>();
    const auto shape = header.at("shape").get<std::vector<std::size_t>>();
    const auto modality = modality_from_string(header.at("modality").get<std::string>());
    if (modality == Modality::image) {
        if (shape.size() != 2) throw std::runtime_error("load_dataset: image shape must be [H, W]");
        ds.geometry = SampleGeometry::image(shape[0], shape[1]);
    } else {
        if (shape.size() != 1) throw std::runtime_error("load_dataset: point shape must be [dim]");
        ds.geometry = SampleGeometry::points(shape[0]);
    }
    ds.num_classes = header.at("c").get<std::size_t>();
    ds.samples = binio::read_f64(in, n * ds.geometry.dim);
    const auto labels = binio::read_i32(in, n);
    ds.labels.assign(labels.begin(), labels.end());
    ds.validate();
    return ds;
}

std::filesystem::path bundled_digits_path() {
    return std::filesystem::path(FREMATCH_DATA_DIR) / "digits8x8.fmd";
}

SslSplit split_ssl(const Dataset& ds, std::size_t labels_per_class, double test_frac, std::uint64_t seed) {
    if (!(test_frac >= 0.0 && test_frac < 1.0)) throw std::invalid_argument("split_ssl: test_frac outside [0, 1)");
    const std::size_t n = ds.size();
    const auto n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
    if (labels_per_class * ds.num_classes + n_test > n) {
        throw std::invalid_argument("split_ssl: " + std::to_string(labels_per_class) + " labels per class and " +
                                    std::to_string(n_test) + " test samples exceed dataset size " +
                                    std::to_string(n));
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, 0x500));
    std::shuffle(perm.begin(), perm.end(), rng);

    SslSplit split;
    split.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> taken(ds.num_classes, 0);
    for (std::size_t k = n_test; k < n; ++k) {
        const std::size_t idx = perm[k];
        auto& cnt = taken[static_cast<std::size_t>(ds.labels[idx])];
        if (cnt < labels_per_class) {
            split.labelled.push_back(idx);
            ++cnt;
        } else {
            split.unlabelled.push_back(idx);
        }
    }
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (taken[c] < labels_per_class) {
            throw std::invalid_argument("split_ssl: class " + std::to_string(c) + " has only " +
                                        std::to_string(taken[c]) + " non-test samples, " +
                                        std::to_string(labels_per_class) + " requested");
        }
    }
    return split;
}

void save_split(const std::filesystem::path& path, const SslSplit& split) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_split: cannot open " + path.string());
    const nlohmann::json j = {{"labelled", split.labelled}, {"unlabelled", split.unlabelled}, {"test", split.test}};
    out << j.dump() << "\n";
}

SslSplit load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_split: cannot open " + path.string());
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        SslSplit split;
        j.at("labelled").get_to(split.labelled);
        j.at("unlabelled").get_to(split.unlabelled);
        j.at("test").get_to(split.test);
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_split: " + path.string() + ": " + e.what());
    }
}

// --- Batcher -------------------------------------------------------------------

Batcher::Batcher(const Dataset& ds, const SslSplit& split, std::size_t labelled_bs, double mu, std::uint64_t seed)
    : ds_(&ds), labelled_(split.labelled), unlabelled_(split.unlabelled), labelled_bs_(labelled_bs), seed_(seed) {
    if (labelled_bs == 0) throw std::invalid_argument("Batcher: labelled_bs must be >= 1");
    if (!(mu >= 1.0)) throw std::invalid_argument("Batcher: mu must be >= 1");
    if (labelled_.empty()) throw std::invalid_argument("Batcher: empty labelled pool");
    if (unlabelled_.empty()) throw std::invalid_argument("Batcher: empty unlabelled pool");
    unlabelled_bs_ = static_cast<std::size_t>(std::floor(mu * static_cast<double>(labelled_bs)));
    iterations_ = (unlabelled_.size() + unlabelled_bs_ - 1) / unlabelled_bs_;
}

Batcher Batcher::labelled_only(const Dataset& ds, const SslSplit& split, std::size_t labelled_bs,
                               std::uint64_t seed) {
    if (labelled_bs == 0) throw std::invalid_argument("Batcher: labelled_bs must be >= 1");
    if (split.labelled.empty()) throw std::invalid_argument("Batcher: empty labelled pool");
    Batcher b;
    b.ds_ = &ds;
    b.labelled_ = split.labelled;
    b.labelled_bs_ = labelled_bs;
    b.seed_ = seed;
    b.iterations_ = (b.labelled_.size() + labelled_bs - 1) / labelled_bs;
    return b;
}

std::vector<BatchPair> Batcher::epoch(std::size_t epoch_index) const {
    Rng rng(derive_seed(seed_, 0x10000 + epoch_index));
    std::vector<std::size_t> lab = labelled_;
    std::vector<std::size_t> unl = unlabelled_;
    std::shuffle(unl.begin(), unl.end(), rng);
    std::shuffle(lab.begin(), lab.end(), rng);
    std::size_t lab_pos = 0;

    std::vector<BatchPair> out(iterations_);
    for (std::size_t it = 0; it < iterations_; ++it) {
        auto& lb = out[it].labelled;
        for (std::size_t j = 0; j < labelled_bs_; ++j) {
            if (lab_pos == lab.size()) {
                std::shuffle(lab.begin(), lab.end(), rng);
                lab_pos = 0;
            }
            const std::size_t idx = lab[lab_pos++];
            lb.indices.push_back(idx);
            lb.labels.push_back(ds_->labels[idx]);
            auto s = ds_->sample(idx);
            lb.samples.insert(lb.samples.end(), s.begin(), s.end());
        }
        auto& ub = out[it].unlabelled;
        for (std::size_t j = 0; j < unlabelled_bs_; ++j) {
            const std::size_t idx = unl[(it * unlabelled_bs_ + j) % unl.size()];
            ub.indices.push_back(idx);
            auto s = ds_->sample(idx);
            ub.samples.insert(ub.samples.end(), s.begin(), s.end());
        }
    }
    return out;
}

}  // namespace frematch
