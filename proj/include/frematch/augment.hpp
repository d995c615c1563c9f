#pragma once

// Weak augmentation a(.) and strong augmentation A(.).
//
// Images (H x W, values in [0,1]): weak = horizontal flip (p = flip_prob) then
// an integer translation of up to floor(translate_frac * H) pixels per axis,
// zero padded. Strong = weak, then strong_ops_per_sample ops drawn uniformly
// from {rotate +-30 deg, invert, contrast x[0.5,1.5], brightness +[-0.3,0.3]},
// then one zero-filled square cutout of side floor(cutout_frac * H).
//
// Points: weak = Gaussian jitter (weak_jitter_sigma); strong = Gaussian jitter
// (strong_jitter_sigma) then, with probability 0.25, one coordinate zeroed.

#include <span>
#include <string>
#include <vector>

#include "frematch/random.hpp"

namespace frematch {

enum class Modality { point, image };
enum class AugKind { weak, strong };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct SampleGeometry {
    Modality modality = Modality::point;
    std::size_t height = 0;  // images only
    std::size_t width = 0;   // images only
    std::size_t dim = 2;     // number of values per sample

    static SampleGeometry points(std::size_t dim);
    static SampleGeometry image(std::size_t height, std::size_t width);
};

struct AugPolicy {
    AugKind kind = AugKind::weak;
    Modality modality = Modality::point;
    double weak_jitter_sigma = 0.05;
    double strong_jitter_sigma = 0.20;
    double translate_frac = 0.125;
    double flip_prob = 0.5;
    double cutout_frac = 0.25;
    int strong_ops_per_sample = 2;
    double coordinate_drop_prob = 0.25;

    static AugPolicy defaults(AugKind kind, Modality modality);
    void validate() const;
};

std::vector<double> weak_augment(std::span<const double> x, const SampleGeometry& geom, const AugPolicy& policy,
                                 Rng& rng);
std::vector<double> strong_augment(std::span<const double> x, const SampleGeometry& geom,
                                   const AugPolicy& policy, Rng& rng);

// Dispatches on policy.kind.
std::vector<double> augment(std::span<const double> x, const SampleGeometry& geom, const AugPolicy& policy,
                            Rng& rng);

}  // namespace frematch
