#include <fstream>

#include "rcps/config.hpp"

namespace rcps {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& dst)
{
    if (j.contains(key))
        j.at(key).get_to(dst);
}

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigError(what);
}

} // namespace

void NetworkConfig::validate() const
{
    require(in_channels >= 1, "network.in_channels must be >= 1");
    require(num_classes >= 2, "network.num_classes must be >= 2");
    require(base_channels >= 1, "network.base_channels must be >= 1");
    require(depth >= 3, "network.depth must be >= 3");
    require(embedding_dim >= 8, "network.embedding_dim must be >= 8");
    require(projection_tap >= 1 && projection_tap <= depth,
            "network.projection_tap must lie in [1, depth]");
}

void LossWeights::validate() const
{
    require(alpha >= 0.0 && beta >= 0.0, "loss weights alpha and beta must be >= 0");
    require(temperature_T > 0.0, "temperature T must be > 0");
    require(temperature_tau > 0.0, "temperature tau must be > 0");
    require(epsilon > 0.0 && epsilon <= 1e-4, "epsilon must lie in (0, 1e-4]");
    require(dice_smooth > 0.0, "dice_smooth must be > 0");
    require(consistency_weight >= 0.0, "consistency_weight must be >= 0");
}

void ContrastiveConfig::validate() const
{
    require(num_negatives >= 1, "contrastive.num_negatives must be >= 1");
    require(anchors_per_image >= 0, "contrastive.anchors_per_image must be >= 0");
}

void SlidingWindowConfig::validate() const
{
    require(patch_size.valid(), "inference.patch_size must be >= 1 per axis");
    require(overlap >= 0.0 && overlap < 1.0, "inference.overlap must lie in [0, 1)");
}

int TrainConfig::warmup_epochs() const
{
    return std::max(1, static_cast<int>(std::lround(warmup_fraction * epochs)));
}

void TrainConfig::validate() const
{
    require(epochs >= 1, "train.epochs must be >= 1");
    require(batch_labeled >= 1, "train.batch_labeled must be >= 1");
    require(batch_unlabeled >= 1, "train.batch_unlabeled must be >= 1");
    require(lr0 > 0.0, "train.lr0 must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "train.momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    require(poly_power >= 0.0, "train.poly_power must be >= 0");
    require(warmup_fraction > 0.0 && warmup_fraction <= 1.0, "train.warmup_fraction must lie in (0, 1]");
    require(alpha_max >= 0.0 && beta_max >= 0.0, "train.alpha_max and train.beta_max must be >= 0");
    require(patch_size.valid(), "train.patch_size must be >= 1 per axis");
    require(checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
    loss.validate();
    contrastive.validate();
    try {
        intensity.validate();
        distortion.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

void RunConfig::validate() const
{
    try {
        phantom.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    network.validate();
    train.validate();
    inference.validate();
    for (int a = 0; a < 3; ++a) {
        require(train.patch_size[a] % network.max_stride() == 0,
                "train.patch_size axis " + std::to_string(a) + " must be divisible by " +
                    std::to_string(network.max_stride()));
        require(inference.patch_size[a] % network.max_stride() == 0,
                "inference.patch_size axis " + std::to_string(a) + " must be divisible by " +
                    std::to_string(network.max_stride()));
    }
}

std::vector<std::string> unknown_keys(const json& user, const json& schema, const std::string& prefix)
{
    std::vector<std::string> out;
    if (!user.is_object() || !schema.is_object())
        return out;
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.contains(key)) {
            out.push_back(path);
            continue;
        }
        const auto nested = unknown_keys(value, schema.at(key), path);
        out.insert(out.end(), nested.begin(), nested.end());
    }
    return out;
}

RunConfig merge_config(const RunConfig& base, const json& user)
{
    if (!user.is_object())
        throw ConfigError("configuration root must be an object");
    const auto unknown = unknown_keys(user, json(base));
    if (!unknown.empty()) {
        std::string msg = "unknown configuration keys:";
        for (const auto& k : unknown)
            msg += " " + k;
        throw ConfigError(msg);
    }
    RunConfig out = base;
    try {
        from_json(user, out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid configuration value: ") + e.what());
    }
    return out;
}

RunConfig load_config_file(const std::string& path, const RunConfig& base)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read configuration file " + path);
    json user;
    try {
        user = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("configuration file " + path + " is not valid JSON: " + e.what());
    }
    return merge_config(base, user);
}

// ---- conversions ---------------------------------------------------------

void to_json(json& j, const Shape3& s) { j = json::array({s.nx, s.ny, s.nz}); }

void from_json(const json& j, Shape3& s)
{
    if (j.is_number_integer()) {
        s = {j.get<std::int64_t>(), j.get<std::int64_t>(), j.get<std::int64_t>()};
        return;
    }
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("shape must be an integer or an array of three integers");
    s = {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

void to_json(json& j, const PhantomSpec& s)
{
    j = json{{"volume_shape", s.volume_shape},
             {"num_classes", s.num_classes},
             {"shapes_per_class", s.shapes_per_class},
             {"intensity_means", s.intensity_means},
             {"noise_sigma", s.noise_sigma},
             {"bias_field_strength", s.bias_field_strength},
             {"radius_fraction", s.radius_fraction},
             {"seed", s.seed}};
}

void from_json(const json& j, PhantomSpec& s)
{
    read(j, "volume_shape", s.volume_shape);
    read(j, "num_classes", s.num_classes);
    read(j, "shapes_per_class", s.shapes_per_class);
    read(j, "intensity_means", s.intensity_means);
    read(j, "noise_sigma", s.noise_sigma);
    read(j, "bias_field_strength", s.bias_field_strength);
    read(j, "radius_fraction", s.radius_fraction);
    read(j, "seed", s.seed);
}

void to_json(json& j, const NetworkConfig& c)
{
    j = json{{"in_channels", c.in_channels},       {"num_classes", c.num_classes},
             {"base_channels", c.base_channels},   {"depth", c.depth},
             {"embedding_dim", c.embedding_dim},   {"projection_tap", c.projection_tap}};
}

void from_json(const json& j, NetworkConfig& c)
{
    read(j, "in_channels", c.in_channels);
    read(j, "num_classes", c.num_classes);
    read(j, "base_channels", c.base_channels);
    read(j, "depth", c.depth);
    read(j, "embedding_dim", c.embedding_dim);
    read(j, "projection_tap", c.projection_tap);
}

void to_json(json& j, const LossWeights& c)
{
    j = json{{"alpha", c.alpha},
             {"beta", c.beta},
             {"temperature_T", c.temperature_T},
             {"temperature_tau", c.temperature_tau},
             {"epsilon", c.epsilon},
             {"dice_smooth", c.dice_smooth},
             {"dice_include_background", c.dice_include_background},
             {"consistency_weight", c.consistency_weight}};
}

void from_json(const json& j, LossWeights& c)
{
    read(j, "alpha", c.alpha);
    read(j, "beta", c.beta);
    read(j, "temperature_T", c.temperature_T);
    read(j, "temperature_tau", c.temperature_tau);
    read(j, "epsilon", c.epsilon);
    read(j, "dice_smooth", c.dice_smooth);
    read(j, "dice_include_background", c.dice_include_background);
    read(j, "consistency_weight", c.consistency_weight);
}

void to_json(json& j, const ContrastiveConfig& c)
{
    j = json{{"num_negatives", c.num_negatives},
             {"anchors_per_image", c.anchors_per_image},
             {"detach_negatives", c.detach_negatives}};
}

void from_json(const json& j, ContrastiveConfig& c)
{
    read(j, "num_negatives", c.num_negatives);
    read(j, "anchors_per_image", c.anchors_per_image);
    read(j, "detach_negatives", c.detach_negatives);
}

void to_json(json& j, const SlidingWindowConfig& c)
{
    j = json{{"patch_size", c.patch_size}, {"overlap", c.overlap}};
}

void from_json(const json& j, SlidingWindowConfig& c)
{
    read(j, "patch_size", c.patch_size);
    read(j, "overlap", c.overlap);
}

void to_json(json& j, const TrainConfig& c)
{
    j = json{{"epochs", c.epochs},
             {"batch_labeled", c.batch_labeled},
             {"batch_unlabeled", c.batch_unlabeled},
             {"lr0", c.lr0},
             {"momentum", c.momentum},
             {"weight_decay", c.weight_decay},
             {"poly_power", c.poly_power},
             {"warmup_fraction", c.warmup_fraction},
             {"alpha_max", c.alpha_max},
             {"beta_max", c.beta_max},
             {"seed", c.seed},
             {"patch_size", c.patch_size},
             {"supervised_only", c.supervised_only},
             {"checkpoint_every", c.checkpoint_every},
             {"loss", c.loss},
             {"contrastive", c.contrastive},
             {"intensity", c.intensity},
             {"distortion", c.distortion}};
}

void from_json(const json& j, TrainConfig& c)
{
    read(j, "epochs", c.epochs);
    read(j, "batch_labeled", c.batch_labeled);
    read(j, "batch_unlabeled", c.batch_unlabeled);
    read(j, "lr0", c.lr0);
    read(j, "momentum", c.momentum);
    read(j, "weight_decay", c.weight_decay);
    read(j, "poly_power", c.poly_power);
    read(j, "warmup_fraction", c.warmup_fraction);
    read(j, "alpha_max", c.alpha_max);
    read(j, "beta_max", c.beta_max);
    read(j, "seed", c.seed);
    read(j, "patch_size", c.patch_size);
    read(j, "supervised_only", c.supervised_only);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "loss", c.loss);
    read(j, "contrastive", c.contrastive);
    read(j, "intensity", c.intensity);
    read(j, "distortion", c.distortion);
}

void to_json(json& j, const EvalConfig& c) { j = json{{"spacing_aware", c.spacing_aware}}; }

void from_json(const json& j, EvalConfig& c) { read(j, "spacing_aware", c.spacing_aware); }

void to_json(json& j, const RunConfig& c)
{
    j = json{{"phantom", c.phantom},
             {"network", c.network},
             {"train", c.train},
             {"inference", c.inference},
             {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c)
{
    read(j, "phantom", c.phantom);
    read(j, "network", c.network);
    read(j, "train", c.train);
    read(j, "inference", c.inference);
    read(j, "eval", c.eval);
}

namespace augment {

void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }

void from_json(const json& j, Range& r)
{
    if (!j.is_array() || j.size() != 2)
        throw ConfigError("range must be an array [lo, hi]");
    r = {j[0].get<double>(), j[1].get<double>()};
}

void to_json(json& j, const IntensityAugmentConfig& c)
{
    j = json{{"scale", c.scale}, {"shift", c.shift}, {"noise_sigma", c.noise_sigma}, {"probability", c.probability}};
}

void from_json(const json& j, IntensityAugmentConfig& c)
{
    read(j, "scale", c.scale);
    read(j, "shift", c.shift);
    read(j, "noise_sigma", c.noise_sigma);
    read(j, "probability", c.probability);
}

void to_json(json& j, const GridDistortConfig& c)
{
    j = json{{"grid_cells", c.grid_cells}, {"max_displacement", c.max_displacement}, {"probability", c.probability}};
}

void from_json(const json& j, GridDistortConfig& c)
{
    read(j, "grid_cells", c.grid_cells);
    read(j, "max_displacement", c.max_displacement);
    read(j, "probability", c.probability);
}

} // namespace augment

} // namespace rcps
