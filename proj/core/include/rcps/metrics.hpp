#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcps/volume_io.hpp"

namespace rcps::metrics {

/// 2|P∩G| / (|P|+|G|) for class `cls`; 1 when both are empty, 0 when exactly one is.
double dsc(const LabelMap& pred, const LabelMap& gt, int cls);

Grid<std::uint8_t> class_mask(const LabelMap& y, int cls);

/// Foreground voxels with at least one 6-neighbour outside the mask (grid border counts as outside).
std::vector<Index3> boundary_voxels(const Grid<std::uint8_t>& mask);

/// Exact Euclidean distance from every voxel to the nearest site (separable lower-envelope
/// transform); `spacing` scales each axis.
Grid<double> distance_to_sites(const Grid<std::uint8_t>& sites, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

/// Inclusive linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct SurfaceDistances {
    double hd95 = 0.0;
    double asd = 0.0;
};

/// Pools directed boundary distances pred->gt and gt->pred. nullopt when either mask is empty.
std::optional<SurfaceDistances> surface_distances(const LabelMap& pred, const LabelMap& gt, int cls,
                                                  std::array<double, 3> spacing = {1.0, 1.0, 1.0});

struct ClassMetrics {
    int cls = 0;
    double dsc = 0.0;
    std::optional<double> hd95;
    std::optional<double> asd;
};

struct CaseMetrics {
    std::string id;
    std::vector<ClassMetrics> classes; ///< foreground classes 1..C-1
};

struct Summary {
    double mean = 0.0;
    double stddev = 0.0; ///< population standard deviation
    int count = 0;       ///< defined values aggregated
    int excluded = 0;    ///< undefined values skipped
};

struct ClassSummary {
    int cls = 0; ///< 0 denotes the mean over foreground classes
    Summary dsc, hd95, asd;
};

struct EvaluationTable {
    std::vector<CaseMetrics> cases;
    std::vector<ClassSummary> per_class;
    ClassSummary overall;
};

CaseMetrics evaluate_case(const std::string& id, const LabelMap& pred, const LabelMap& gt, int num_classes,
                          std::array<double, 3> spacing = {1.0, 1.0, 1.0});

EvaluationTable summarize(std::vector<CaseMetrics> cases, int num_classes);

/// Columns: case_id,class,dsc,hd95,asd. Undefined distances are written as "nan";
/// summary rows use case ids "mean" and "std", class "all" for the foreground mean.
void write_csv(const std::filesystem::path& path, const EvaluationTable& table);

} // namespace rcps::metrics
