#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcps/augment.hpp"
#include "rcps/volume_io.hpp"

namespace rcps {

struct NetworkConfig {
    int in_channels = 1;
    int num_classes = 3;
    int base_channels = 8;
    /// Encoder levels, including the bottleneck; inputs must be divisible by 2^(depth-1).
    int depth = 4;
    int embedding_dim = 64;
    /// Upsampling block feeding the projection head, counted upward from the bottleneck
    /// block (tap 1). Output stride is 2^(depth - tap).
    int projection_tap = 2;

    int projection_stride() const { return 1 << (depth - projection_tap); }
    int max_stride() const { return 1 << (depth - 1); }
    void validate() const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct LossWeights {
    double alpha = 0.1;
    double beta = 0.1;
    double temperature_T = 0.5;
    double temperature_tau = 0.1;
    double epsilon = 1e-8;
    double dice_smooth = 1e-5;
    bool dice_include_background = false;
    /// Multiplier on the cosine consistency term inside the rectified pseudo loss.
    double consistency_weight = 1.0;

    void validate() const;
};

struct ContrastiveConfig {
    int num_negatives = 400;
    /// 0 means every embedding location is an anchor.
    int anchors_per_image = 0;
    bool detach_negatives = true;

    void validate() const;
};

struct SlidingWindowConfig {
    Shape3 patch_size{64, 64, 64};
    double overlap = 0.5;

    void validate() const;
};

struct TrainConfig {
    int epochs = 200;
    int batch_labeled = 2;
    int batch_unlabeled = 2;
    double lr0 = 1e-2;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    double warmup_fraction = 0.2;
    double alpha_max = 0.1;
    double beta_max = 0.1;
    std::uint64_t seed = 1337;
    Shape3 patch_size{64, 64, 64};
    /// alpha = beta = 0 and the unlabeled split is never read.
    bool supervised_only = false;
    /// Checkpoint period in epochs; the final checkpoint is always written.
    int checkpoint_every = 10;
    LossWeights loss;
    ContrastiveConfig contrastive;
    augment::IntensityAugmentConfig intensity;
    augment::GridDistortConfig distortion;

    int warmup_epochs() const;
    void validate() const;
};

struct EvalConfig {
    /// Report surface distances in millimetres instead of voxels.
    bool spacing_aware = false;
};

/// Complete declarative configuration for every command.
struct RunConfig {
    PhantomSpec phantom;
    NetworkConfig network;
    TrainConfig train;
    SlidingWindowConfig inference;
    EvalConfig eval;

    void validate() const;
};

/// Dotted paths of keys in `user` that the schema does not define.
std::vector<std::string> unknown_keys(const nlohmann::json& user, const nlohmann::json& schema,
                                      const std::string& prefix = "");

/// Overlays `user` on top of `base`, rejecting unknown keys with a ConfigError that lists them.
RunConfig merge_config(const RunConfig& base, const nlohmann::json& user);

RunConfig load_config_file(const std::string& path, const RunConfig& base = {});

void to_json(nlohmann::json& j, const Shape3& s);
void from_json(const nlohmann::json& j, Shape3& s);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const LossWeights& c);
void from_json(const nlohmann::json& j, LossWeights& c);
void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);
void to_json(nlohmann::json& j, const SlidingWindowConfig& c);
void from_json(const nlohmann::json& j, SlidingWindowConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

namespace augment {
void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);
void to_json(nlohmann::json& j, const IntensityAugmentConfig& c);
void from_json(const nlohmann::json& j, IntensityAugmentConfig& c);
void to_json(nlohmann::json& j, const GridDistortConfig& c);
void from_json(const nlohmann::json& j, GridDistortConfig& c);
} // namespace augment

} // namespace rcps
