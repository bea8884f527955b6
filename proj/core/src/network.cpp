#include <fstream>

#include "rcps/network.hpp"

namespace rcps::net {

namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.01;

torch::nn::Conv3d conv(int in, int out, int kernel, bool bias)
{
    return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, kernel).padding(kernel / 2).bias(bias));
}

torch::nn::InstanceNorm3d instance_norm(int channels)
{
    return torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(channels).affine(true).track_running_stats(false));
}

torch::Tensor leaky(const torch::Tensor& x)
{
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

} // namespace

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels)
    : conv1(register_module("conv1", conv(in_channels, out_channels, 3, false))),
      conv2(register_module("conv2", conv(out_channels, out_channels, 3, false))),
      norm1(register_module("norm1", instance_norm(out_channels))),
      norm2(register_module("norm2", instance_norm(out_channels)))
{
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x)
{
    auto h = leaky(norm1(conv1(x)));
    return leaky(norm2(conv2(h)));
}

ProjectionHeadImpl::ProjectionHeadImpl(int in_channels, int embedding_dim)
    : conv1(register_module("conv1", conv(in_channels, in_channels, 1, false))),
      conv2(register_module("conv2", conv(in_channels, embedding_dim, 1, true))),
      norm(register_module("norm", instance_norm(in_channels)))
{
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& x)
{
    auto h = conv2(leaky(norm(conv1(x))));
    return F::normalize(h, F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

UNet3dImpl::UNet3dImpl(NetworkConfig cfg) : cfg_(cfg)
{
    cfg_.validate();
    int in = cfg_.in_channels;
    for (int level = 0; level < cfg_.depth; ++level) {
        encoders_.push_back(register_module("enc" + std::to_string(level), ConvBlock(in, width(level))));
        in = width(level);
    }
    for (int stage = 1; stage < cfg_.depth; ++stage) {
        const int skip_level = cfg_.depth - 1 - stage;
        decoders_.push_back(register_module("dec" + std::to_string(stage),
                                            ConvBlock(width(skip_level + 1) + width(skip_level), width(skip_level))));
    }
    output_ = register_module("head", conv(width(0), cfg_.num_classes, 1, true));
    const int tap_channels = width(cfg_.depth - cfg_.projection_tap);
    projection_ = register_module("projection", ProjectionHead(tap_channels, cfg_.embedding_dim));
}

void UNet3dImpl::check_input(const torch::Tensor& x) const
{
    if (x.dim() != 5)
        throw ShapeError("network input must be 5D (batch, channel, z, y, x), got " + std::to_string(x.dim()) + "D");
    if (x.size(1) != cfg_.in_channels)
        throw ShapeError("network expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                         std::to_string(x.size(1)));
    const int m = cfg_.max_stride();
    for (int axis = 0; axis < 3; ++axis)
        if (x.size(axis + 2) % m != 0)
            throw ShapeError("input spatial axis " + std::to_string(axis) + " has extent " +
                             std::to_string(x.size(axis + 2)) + ", not divisible by " + std::to_string(m));
}

ForwardOutput UNet3dImpl::forward(const torch::Tensor& x, bool with_embeddings)
{
    check_input(x);
    std::vector<torch::Tensor> skips;
    torch::Tensor h = x;
    for (int level = 0; level < cfg_.depth; ++level) {
        if (level > 0)
            h = F::max_pool3d(h, F::MaxPool3dFuncOptions(2));
        h = encoders_[static_cast<std::size_t>(level)](h);
        skips.push_back(h);
    }
    torch::Tensor tap;
    if (cfg_.projection_tap == 1)
        tap = h;
    for (int stage = 1; stage < cfg_.depth; ++stage) {
        const auto& skip = skips[static_cast<std::size_t>(cfg_.depth - 1 - stage)];
        auto up = F::interpolate(h, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{skip.size(2), skip.size(3), skip.size(4)})
                                        .mode(torch::kTrilinear)
                                        .align_corners(false));
        h = decoders_[static_cast<std::size_t>(stage - 1)](torch::cat({up, skip}, 1));
        if (stage + 1 == cfg_.projection_tap)
            tap = h;
    }
    ForwardOutput out;
    out.logits = output_(h);
    out.probs = torch::softmax(out.logits, 1);
    if (with_embeddings)
        out.embeddings = projection_(tap);
    return out;
}

torch::Tensor UNet3dImpl::predict_probs(const torch::Tensor& x)
{
    return forward(x, false).probs;
}

std::int64_t UNet3dImpl::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : parameters())
        n += p.numel();
    return n;
}

std::int64_t expected_parameter_count(const NetworkConfig& cfg)
{
    auto block = [](std::int64_t in, std::int64_t out) {
        return 27 * in * out + 2 * out + 27 * out * out + 2 * out;
    };
    auto w = [&](int level) { return static_cast<std::int64_t>(cfg.base_channels) << level; };
    std::int64_t n = 0;
    std::int64_t in = cfg.in_channels;
    for (int level = 0; level < cfg.depth; ++level) {
        n += block(in, w(level));
        in = w(level);
    }
    for (int stage = 1; stage < cfg.depth; ++stage) {
        const int skip = cfg.depth - 1 - stage;
        n += block(w(skip + 1) + w(skip), w(skip));
    }
    n += w(0) * cfg.num_classes + cfg.num_classes;
    const std::int64_t tap = w(cfg.depth - cfg.projection_tap);
    n += tap * tap + 2 * tap + tap * cfg.embedding_dim + cfg.embedding_dim;
    return n;
}

std::uint64_t parameter_hash(const torch::nn::Module& module)
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const torch::Tensor& t) {
        const auto c = t.detach().to(torch::kCPU).contiguous();
        const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
        const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : module.parameters())
        mix(p);
    for (const auto& b : module.buffers())
        mix(b);
    return h;
}

// ---- checkpoints ---------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, UNet3d& model, const CheckpointInfo& info,
                     torch::optim::Optimizer* optimizer)
{
    namespace fs = std::filesystem;
    const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp, ec);
    if (ec)
        throw IoError("cannot create checkpoint directory " + tmp.string() + ": " + ec.message());
    try {
        torch::save(model, (tmp / "model.pt").string());
        if (optimizer)
            torch::save(*optimizer, (tmp / "optimizer.pt").string());
    } catch (const c10::Error& e) {
        throw IoError("failed to serialize checkpoint: " + std::string(e.what_without_backtrace()));
    }
    nlohmann::json manifest;
    manifest["format"] = "rcps-checkpoint";
    manifest["version"] = 1;
    manifest["network"] = info.network;
    manifest["step"] = info.step;
    manifest["epoch"] = info.epoch;
    manifest["seed"] = info.seed;
    manifest["has_optimizer"] = optimizer != nullptr;
    if (!info.run_config.is_null())
        manifest["run_config"] = info.run_config;
    {
        std::ofstream out(tmp / "manifest.json");
        out << manifest.dump(2) << '\n';
        if (!out)
            throw IoError("cannot write checkpoint manifest in " + tmp.string());
    }
    fs::remove_all(dir, ec);
    fs::rename(tmp, dir, ec);
    if (ec)
        throw IoError("cannot move checkpoint into place at " + dir.string() + ": " + ec.message());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw IoError("missing checkpoint manifest in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    if (m.value("format", "") != "rcps-checkpoint")
        throw FormatError("not an rcps checkpoint: " + dir.string());
    CheckpointInfo info;
    info.network = m.at("network").get<NetworkConfig>();
    info.step = m.at("step").get<std::int64_t>();
    info.epoch = m.at("epoch").get<std::int64_t>();
    info.seed = m.at("seed").get<std::uint64_t>();
    if (m.contains("run_config"))
        info.run_config = m.at("run_config");
    return info;
}

void load_parameters(const std::filesystem::path& dir, UNet3d& model, torch::optim::Optimizer* optimizer)
{
    try {
        torch::load(model, (dir / "model.pt").string());
        if (optimizer) {
            if (!std::filesystem::exists(dir / "optimizer.pt"))
                throw IoError("checkpoint " + dir.string() + " has no optimizer state");
            torch::load(*optimizer, (dir / "optimizer.pt").string());
        }
    } catch (const c10::Error& e) {
        throw FormatError("failed to load checkpoint " + dir.string() + ": " + e.what_without_backtrace());
    }
}

UNet3d load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info_out, const NetworkConfig* expected,
                       torch::optim::Optimizer* optimizer)
{
    const CheckpointInfo info = read_checkpoint_info(dir);
    if (expected && !(*expected == info.network))
        throw CompatibilityError("checkpoint " + dir.string() + " was trained with network config " +
                                 nlohmann::json(info.network).dump() + ", requested " + nlohmann::json(*expected).dump());
    UNet3d model(info.network);
    load_parameters(dir, model, optimizer);
    if (info_out)
        *info_out = info;
    return model;
}

} // namespace rcps::net
