#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rcps/grid.hpp"

namespace rcps {

using Rng = std::mt19937_64;

/// Derives an independent 64-bit seed from a base seed and a stream index (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

/// Spatial metadata carried through from NIfTI headers. Voxels are used in stored
/// order; these fields are preserved on write but never applied.
struct NiftiGeometry {
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float quatern_b = 0.f, quatern_c = 0.f, quatern_d = 0.f;
    float qoffset_x = 0.f, qoffset_y = 0.f, qoffset_z = 0.f;
    float qfac = 1.f;
    std::array<std::array<float, 4>, 3> srow{};
    friend bool operator==(const NiftiGeometry&, const NiftiGeometry&) = default;
};

struct Volume {
    Grid<float> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string id;
    NiftiGeometry geometry;

    const Shape3& shape() const { return data.shape; }
};

struct LabelMap {
    Grid<std::int32_t> data;
    int num_classes = 2;

    const Shape3& shape() const { return data.shape; }
};

struct LabeledCase {
    Volume image;
    LabelMap label;
};

struct PhantomSpec {
    Shape3 volume_shape{64, 64, 64};
    int num_classes = 3;
    std::array<int, 2> shapes_per_class{1, 2};
    std::vector<double> intensity_means{0.0, 0.6, -0.6};
    double noise_sigma = 0.15;
    double bias_field_strength = 0.3;
    /// Ellipsoid semi-axis range as a fraction of the smallest volume extent.
    std::array<double, 2> radius_fraction{0.10, 0.22};
    std::uint64_t seed = 7;

    void validate() const;
};

struct Dataset {
    std::vector<LabeledCase> labeled;
    std::vector<Volume> unlabeled;
    /// Held-out labeled cases used for evaluation only.
    std::vector<LabeledCase> test;
    std::optional<PhantomSpec> phantom_spec;

    /// Throws ArgumentError when identifiers repeat across or within splits.
    void check_disjoint() const;
};

// ---- NIfTI-1 -------------------------------------------------------------

struct NiftiImage {
    Volume volume;
    /// Present when the header carries the label intent or when loading was forced as label.
    std::optional<LabelMap> label;
};

/// Reads a .nii or .nii.gz file. Label files (NIFTI_INTENT_LABEL, or `as_label`)
/// additionally yield a LabelMap with num_classes = max + 1.
NiftiImage load_nifti(const std::filesystem::path& path, bool as_label = false);

LabelMap load_label(const std::filesystem::path& path);

/// Writes float32 data; gzip-compressed when the path ends in ".gz".
void save_nifti(const std::filesystem::path& path, const Volume& volume);

/// Writes uint8 (C <= 256) or int16 data tagged with the label intent.
void save_nifti(const std::filesystem::path& path, const LabelMap& labels, const Volume& reference);

// ---- preprocessing -------------------------------------------------------

Volume window_hu(const Volume& v, double level, double width);

struct ZScoreOptions {
    bool allow_constant = false;
};

Volume normalize_zscore(const Volume& v, ZScoreOptions opts = {});

/// Inclusive voxel bounding box.
struct Box3 {
    Index3 lo{};
    Index3 hi{};
    Shape3 extent() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
};

Box3 foreground_box(const LabelMap& y);

std::pair<Volume, LabelMap> crop_roi_with_margin(const Volume& v, const LabelMap& y, int margin);

template <typename T>
Grid<T> crop(const Grid<T>& g, const Box3& box);

/// Edge-replicating pad so every axis reaches at least `min_shape`; padding is split
/// before/after with the extra voxel after.
template <typename T>
Grid<T> pad_to_at_least(const Grid<T>& g, Shape3 min_shape, Index3* offset_out = nullptr);

struct Patch {
    Volume image;
    std::optional<LabelMap> label;
    Index3 origin{};
};

/// Uniform random patch; undersized axes are edge-padded first.
Patch extract_patch(const Volume& v, const LabelMap* y, Shape3 patch_size, Rng& rng);

/// Resamples to the target spacing: trilinear for images.
Volume resample_to_spacing(const Volume& v, std::array<double, 3> target);
/// Nearest-neighbour counterpart for labels, aligned with `resample_to_spacing`.
LabelMap resample_to_spacing(const LabelMap& y, std::array<double, 3> source_spacing,
                             std::array<double, 3> target);

// ---- phantoms ------------------------------------------------------------

struct Phantom {
    LabeledCase data;
    /// Ellipsoid descriptors per painted shape: class, center, semi-axes, rotation about z.
    struct Ellipsoid {
        int cls;
        std::array<double, 3> center;
        std::array<double, 3> radii;
        double angle;
        bool contains(double x, double y, double z) const;
    };
    std::vector<Ellipsoid> ellipsoids;
};

/// One phantom; deterministic in (spec.seed, index).
Phantom make_phantom(const PhantomSpec& spec, std::uint64_t index);

/// Identifiers are `phantom_NNNN`, numbered labeled, then unlabeled, then test.
Dataset generate_phantoms(const PhantomSpec& spec, int count_labeled, int count_unlabeled,
                          int count_test = 0);

// ---- manifest ------------------------------------------------------------

/// Writes every case as NIfTI plus `manifest.json` into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Loads a dataset written by save_dataset (or hand-authored with the same manifest layout).
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace rcps
