#include "frematch/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace frematch {

std::string to_string(Modality m) { return m == Modality::point ? "point" : "image"; }

Modality modality_from_string(const std::string& s) {
    if (s == "point") return Modality::point;
    if (s == "image") return Modality::image;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

SampleGeometry SampleGeometry::points(std::size_t dim) { return {Modality::point, 0, 0, dim}; }

SampleGeometry SampleGeometry::image(std::size_t height, std::size_t width) {
    return {Modality::image, height, width, height * width};
}

AugPolicy AugPolicy::defaults(AugKind kind, Modality modality) {
    AugPolicy p;
    p.kind = kind;
    p.modality = modality;
    return p;
}

void AugPolicy::validate() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(translate_frac, 0.0, 0.5)) throw std::invalid_argument("AugPolicy: translate_frac outside [0, 0.5]");
    if (!in(cutout_frac, 0.0, 0.5)) throw std::invalid_argument("AugPolicy: cutout_frac outside [0, 0.5]");
    if (!in(flip_prob, 0.0, 1.0)) throw std::invalid_argument("AugPolicy: flip_prob outside [0, 1]");
    if (!in(coordinate_drop_prob, 0.0, 1.0))
        throw std::invalid_argument("AugPolicy: coordinate_drop_prob outside [0, 1]");
    if (weak_jitter_sigma < 0.0 || strong_jitter_sigma < 0.0)
        throw std::invalid_argument("AugPolicy: jitter sigmas must be >= 0");
    if (strong_ops_per_sample < 0) throw std::invalid_argument("AugPolicy: strong_ops_per_sample must be >= 0");
    if (kind == AugKind::strong && modality == Modality::point && !(strong_jitter_sigma > weak_jitter_sigma))
        throw std::invalid_argument("AugPolicy: strong_jitter_sigma must exceed weak_jitter_sigma");
}

namespace {

void check_sample(std::span<const double> x, const SampleGeometry& geom, const AugPolicy& policy) {
    if (geom.modality != policy.modality) {
        throw std::invalid_argument("augment: policy modality " + to_string(policy.modality) +
                                    " does not match sample modality " + to_string(geom.modality));
    }
    if (x.size() != geom.dim) {
        throw std::invalid_argument("augment: sample has " + std::to_string(x.size()) + " values, expected " +
                                    std::to_string(geom.dim));
    }
    if (geom.modality == Modality::image && geom.height * geom.width != geom.dim) {
        throw std::invalid_argument("augment: image geometry does not match dim");
    }
}

void clip01(std::vector<double>& img) {
    for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
}

void flip_horizontal(std::vector<double>& img, std::size_t h, std::size_t w) {
    for (std::size_t r = 0; r < h; ++r) std::reverse(img.begin() + static_cast<std::ptrdiff_t>(r * w),
                                                     img.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
}

std::vector<double> translate(const std::vector<double>& img, std::size_t h, std::size_t w, long dy, long dx) {
    std::vector<double> out(img.size(), 0.0);
    const long H = static_cast<long>(h), W = static_cast<long>(w);
    for (long r = 0; r < H; ++r) {
        const long sr = r - dy;
        if (sr < 0 || sr >= H) continue;
        for (long c = 0; c < W; ++c) {
            const long sc = c - dx;
            if (sc < 0 || sc >= W) continue;
            out[static_cast<std::size_t>(r * W + c)] = img[static_cast<std::size_t>(sr * W + sc)];
        }
    }
    return out;
}

// Nearest-neighbour rotation about the image centre, zero fill outside.
std::vector<double> rotate(const std::vector<double>& img, std::size_t h, std::size_t w, double radians) {
    std::vector<double> out(img.size(), 0.0);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cs = std::cos(radians), sn = std::sin(radians);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double y = static_cast<double>(r) - cy, x = static_cast<double>(c) - cx;
            const long sr = std::lround(cs * y + sn * x + cy);
            const long sc = std::lround(-sn * y + cs * x + cx);
            if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) continue;
            out[r * w + c] = img[static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)];
        }
    return out;
}

std::vector<double> weak_image(std::span<const double> x, const SampleGeometry& g, const AugPolicy& p, Rng& rng) {
    std::vector<double> img(x.begin(), x.end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < p.flip_prob) flip_horizontal(img, g.height, g.width);
    const long shift = static_cast<long>(std::floor(p.translate_frac * static_cast<double>(g.height)));
    std::uniform_int_distribution<long> offset(-shift, shift);
    const long dy = offset(rng);
    const long dx = offset(rng);
    if (dy != 0 || dx != 0) img = translate(img, g.height, g.width, dy, dx);
    return img;
}

}  // namespace

std::vector<double> weak_augment(std::span<const double> x, const SampleGeometry& geom, const AugPolicy& policy,
                                 Rng& rng) {
    check_sample(x, geom, policy);
    if (geom.modality == Modality::image) return weak_image(x, geom, policy, rng);
    std::vector<double> out(x.begin(), x.end());
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& v : out) v += policy.weak_jitter_sigma * noise(rng);
    return out;
}

std::vector<double> strong_augment(std::span<const double> x, const SampleGeometry& geom,
                                   const AugPolicy& policy, Rng& rng) {
    check_sample(x, geom, policy);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (geom.modality == Modality::point) {
        std::vector<double> out(x.begin(), x.end());
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& v : out) v += policy.strong_jitter_sigma * noise(rng);
        const bool drop = unit(rng) < policy.coordinate_drop_prob;
        std::uniform_int_distribution<std::size_t> which(0, out.size() - 1);
        const std::size_t k = which(rng);
        if (drop) out[k] = 0.0;
        return out;
    }

    std::vector<double> img = weak_image(x, geom, policy, rng);
    std::uniform_int_distribution<int> pick(0, 3);
    for (int i = 0; i < policy.strong_ops_per_sample; ++i) {
        const int op = pick(rng);
        const double u = unit(rng);
        switch (op) {
            case 0:
                img = rotate(img, geom.height, geom.width, (-30.0 + 60.0 * u) * std::numbers::pi / 180.0);
                break;
            case 1:
                for (auto& v : img) v = 1.0 - v;
                break;
            case 2: {
                const double k = 0.5 + u;
                double mean = 0.0;
                for (double v : img) mean += v;
                mean /= static_cast<double>(img.size());
                for (auto& v : img) v = mean + k * (v - mean);
                break;
            }
            default: {
                const double b = -0.3 + 0.6 * u;
                for (auto& v : img) v += b;
                break;
            }
        }
        clip01(img);
    }

    const auto side = static_cast<std::size_t>(std::floor(policy.cutout_frac * static_cast<double>(geom.height)));
    if (side > 0 && side <= geom.height && side <= geom.width) {
        std::uniform_int_distribution<std::size_t> row(0, geom.height - side), col(0, geom.width - side);
        const std::size_t r0 = row(rng), c0 = col(rng);
        for (std::size_t r = r0; r < r0 + side; ++r)
            for (std::size_t c = c0; c < c0 + side; ++c) img[r * geom.width + c] = 0.0;
    }
    return img;
}

std::vector<double> augment(std::span<const double> x, const SampleGeometry& geom, const AugPolicy& policy,
                            Rng& rng) {
    return policy.kind == AugKind::weak ? weak_augment(x, geom, policy, rng)
                                        : strong_augment(x, geom, policy, rng);
}

}  // namespace frematch
