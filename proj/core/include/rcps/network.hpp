#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rcps/config.hpp"

namespace rcps::net {

/// Outputs of one forward pass over a batch shaped (B, in_channels, z, y, x).
struct ForwardOutput {
    torch::Tensor logits;     ///< (B, C, z, y, x)
    torch::Tensor probs;      ///< softmax over dim 1
    torch::Tensor embeddings; ///< (B, E, z/s, y/s, x/s), unit L2 norm over dim 1; undefined when skipped
};

/// Two 3x3x3 convolutions, each followed by instance normalization and LeakyReLU.
struct ConvBlockImpl : torch::nn::Module {
    ConvBlockImpl(int in_channels, int out_channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    torch::nn::InstanceNorm3d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ConvBlock);

/// 1x1x1 conv -> instance norm -> LeakyReLU -> 1x1x1 conv -> L2 normalization.
struct ProjectionHeadImpl : torch::nn::Module {
    ProjectionHeadImpl(int in_channels, int embedding_dim);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    torch::nn::InstanceNorm3d norm{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// 3D U-Net with max-pool downsampling, trilinear upsampling and skip concatenation.
class UNet3dImpl : public torch::nn::Module {
public:
    explicit UNet3dImpl(NetworkConfig cfg);

    /// Throws ShapeError naming the first spatial axis (0 = z/depth axis of the tensor)
    /// not divisible by 2^(depth-1).
    void check_input(const torch::Tensor& x) const;

    ForwardOutput forward(const torch::Tensor& x, bool with_embeddings = true);
    torch::Tensor predict_probs(const torch::Tensor& x);

    const NetworkConfig& config() const { return cfg_; }
    std::int64_t parameter_count() const;

    /// Per-channel feature widths of encoder level `level`.
    int width(int level) const { return cfg_.base_channels << level; }

private:
    NetworkConfig cfg_;
    std::vector<ConvBlock> encoders_;
    std::vector<ConvBlock> decoders_;
    torch::nn::Conv3d output_{nullptr};
    ProjectionHead projection_{nullptr};
};
TORCH_MODULE(UNet3d);

/// Closed-form parameter count for a NetworkConfig.
std::int64_t expected_parameter_count(const NetworkConfig& cfg);

/// FNV-1a over every parameter and buffer in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

// ---- checkpoints ---------------------------------------------------------

struct CheckpointInfo {
    NetworkConfig network;
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    std::uint64_t seed = 0;
    /// Full resolved run configuration, when written by the trainer.
    nlohmann::json run_config;
};

/// Writes `model.pt`, optionally `optimizer.pt`, and `manifest.json` into `dir`
/// atomically (temp directory + rename).
void save_checkpoint(const std::filesystem::path& dir, UNet3d& model, const CheckpointInfo& info,
                     torch::optim::Optimizer* optimizer = nullptr);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Restores parameters into a model built from the checkpoint's NetworkConfig. When
/// `expected` is given, a differing configuration raises CompatibilityError.
UNet3d load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr,
                       const NetworkConfig* expected = nullptr, torch::optim::Optimizer* optimizer = nullptr);

void load_parameters(const std::filesystem::path& dir, UNet3d& model, torch::optim::Optimizer* optimizer = nullptr);

} // namespace rcps::net
