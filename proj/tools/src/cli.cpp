#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>

#include "rcps/error.hpp"
#include "rcps_tools/cli.hpp"

namespace rcps::cli {

nlohmann::json overrides_to_json(const TrainOverrides& o)
{
    nlohmann::json train = nlohmann::json::object();
    nlohmann::json loss = nlohmann::json::object();
    nlohmann::json contrastive = nlohmann::json::object();
    if (o.alpha)
        train["alpha_max"] = *o.alpha;
    if (o.beta)
        train["beta_max"] = *o.beta;
    if (o.epochs)
        train["epochs"] = *o.epochs;
    if (o.seed)
        train["seed"] = *o.seed;
    if (o.supervised_only)
        train["supervised_only"] = true;
    if (o.temp_T)
        loss["temperature_T"] = *o.temp_T;
    if (o.temp_tau)
        loss["temperature_tau"] = *o.temp_tau;
    if (o.negatives)
        contrastive["num_negatives"] = *o.negatives;
    if (!loss.empty())
        train["loss"] = loss;
    if (!contrastive.empty())
        train["contrastive"] = contrastive;
    nlohmann::json out = nlohmann::json::object();
    if (!train.empty())
        out["train"] = train;
    return out;
}

RunConfig resolve_config(const RunConfig& defaults, const std::optional<std::filesystem::path>& config_file,
                         const TrainOverrides& overrides)
{
    RunConfig cfg = defaults;
    if (config_file)
        cfg = load_config_file(config_file->string(), cfg);
    cfg = merge_config(cfg, overrides_to_json(overrides));
    if (cfg.train.supervised_only) {
        cfg.train.alpha_max = 0.0;
        cfg.train.beta_max = 0.0;
    }
    cfg.validate();
    return cfg;
}

Dataset apply_labeled_ratio(Dataset ds, double ratio)
{
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw ArgumentError("--labeled-ratio must lie in (0, 1]");
    const auto total = ds.labeled.size() + ds.unlabeled.size();
    const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
    if (keep < 1)
        throw ArgumentError("--labeled-ratio leaves no labeled case");
    if (keep > ds.labeled.size())
        throw ArgumentError("--labeled-ratio asks for " + std::to_string(keep) + " labeled cases, dataset has " +
                            std::to_string(ds.labeled.size()));
    std::vector<Volume> demoted;
    for (std::size_t i = keep; i < ds.labeled.size(); ++i)
        demoted.push_back(std::move(ds.labeled[i].image));
    ds.labeled.resize(keep);
    ds.unlabeled.insert(ds.unlabeled.begin(), demoted.begin(), demoted.end());
    return ds;
}

std::filesystem::path output_root(const std::optional<std::filesystem::path>& flag)
{
    if (flag)
        return *flag;
    if (const char* env = std::getenv("RCPS_OUTPUT_ROOT"); env && *env)
        return env;
    return "runs";
}

std::string timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

void prepare_output_dir(const std::filesystem::path& dir, bool force)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::exists(dir, ec)) {
        if (!fs::is_directory(dir, ec))
            throw IoError("output path exists and is not a directory: " + dir.string());
        if (!fs::is_empty(dir, ec)) {
            if (!force)
                throw IoError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
            for (const auto& entry : fs::directory_iterator(dir))
                fs::remove_all(entry.path(), ec);
        }
    }
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e))
        return 2;
    return 1;
}

} // namespace rcps::cli
