#pragma once

#include <array>
#include <optional>
#include <utility>

#include "rcps/volume_io.hpp"

namespace rcps::augment {

/// Closed real interval [lo, hi].
struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool ordered() const { return lo <= hi; }
    friend bool operator==(const Range&, const Range&) = default;
};

/// Intensity-only transform family used to build the two views.
struct IntensityAugmentConfig {
    Range scale{0.9, 1.1};
    Range shift{-0.1, 0.1};
    Range noise_sigma{0.0, 0.1};
    double probability = 0.8;

    void validate() const;
};

struct GridDistortConfig {
    int grid_cells = 4;
    double max_displacement = 2.0;
    double probability = 0.5;

    void validate() const;
};

/// Parameters actually drawn for one view, for inspection in tests.
struct IntensityDraw {
    double scale = 1.0;
    double shift = 0.0;
    double noise_sigma = 0.0;
};

Volume apply_intensity(const Volume& x, const IntensityAugmentConfig& cfg, Rng& rng, IntensityDraw* draw = nullptr);

/// Two independently parameterized intensity views of `x`; geometry untouched.
std::pair<Volume, Volume> make_views(const Volume& x, const IntensityAugmentConfig& cfg, Rng& rng);

/// Per-voxel displacement (in voxels) along each axis.
struct DisplacementField {
    std::array<Grid<float>, 3> component;
};

/// Random control-point offsets in [-max, max] on a (cells+1)^3 lattice, trilinearly upsampled.
DisplacementField sample_displacement_field(Shape3 shape, const GridDistortConfig& cfg, Rng& rng);

/// Samples the image trilinearly and the labels by nearest neighbour at p + d(p), edge-clamped.
Volume warp(const Volume& x, const DisplacementField& field);
LabelMap warp(const LabelMap& y, const DisplacementField& field);

std::pair<Volume, std::optional<LabelMap>> grid_distort(const Volume& x, const LabelMap* y,
                                                        const GridDistortConfig& cfg, Rng& rng);

} // namespace rcps::augment
