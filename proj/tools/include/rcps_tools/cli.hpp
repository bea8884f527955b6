#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rcps/config.hpp"

namespace rcps::cli {

/// Values given on the command line; unset members leave lower layers untouched.
struct TrainOverrides {
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<double> temp_T;
    std::optional<double> temp_tau;
    std::optional<int> negatives;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    bool supervised_only = false;
};

/// Command-line overrides as a configuration overlay.
nlohmann::json overrides_to_json(const TrainOverrides& o);

/// defaults < configuration file < command line.
RunConfig resolve_config(const RunConfig& defaults, const std::optional<std::filesystem::path>& config_file,
                         const TrainOverrides& overrides);

/// Keeps round(ratio * (labeled + unlabeled)) labeled cases; the remaining labeled cases join
/// the unlabeled split without their labels.
Dataset apply_labeled_ratio(Dataset ds, double ratio);

/// Output root from the RCPS_OUTPUT_ROOT environment variable, else "runs".
std::filesystem::path output_root(const std::optional<std::filesystem::path>& flag);

/// UTC timestamp of the form YYYYMMDD-HHMMSS.
std::string timestamp();

/// Creates `dir`, refusing an existing non-empty directory unless `force` (which clears it).
void prepare_output_dir(const std::filesystem::path& dir, bool force);

/// Maps an exception to the process exit code: 1 validation, 2 I/O.
int exit_code_for(const std::exception& e);

} // namespace rcps::cli
