#include "unit_test.hpp"

#include <unistd.h>

#include "rcps/network.hpp"
#include "support.hpp"

using namespace rcps;
namespace fs = std::filesystem;

TEST_CASE("forward shapes follow the configuration")
{
    torch::manual_seed(0);
    NetworkConfig cfg;
    net::UNet3d model(cfg);
    const auto x = torch::randn({1, 1, 32, 32, 32});
    const auto out = model->forward(x);
    CHECK(out.logits.sizes() == torch::IntArrayRef({1, 3, 32, 32, 32}));
    CHECK(out.probs.sizes() == torch::IntArrayRef({1, 3, 32, 32, 32}));
    CHECK(out.embeddings.sizes() == torch::IntArrayRef({1, 64, 8, 8, 8}));
    CHECK((out.probs.sum(1) - 1.0).abs().max().item<double>() < 1e-5);
    CHECK((out.embeddings.norm(2, 1) - 1.0).abs().max().item<double>() < 1e-4);
    CHECK(!model->forward(x, false).embeddings.defined());
}

TEST_CASE("default 96-voxel patch shapes")
{
    torch::manual_seed(0);
    NetworkConfig cfg;
    CHECK(cfg.projection_stride() == 4);
    net::UNet3d model(cfg);
    torch::NoGradGuard g;
    const auto out = model->forward(torch::randn({1, 1, 96, 96, 96}));
    CHECK(out.logits.sizes() == torch::IntArrayRef({1, 3, 96, 96, 96}));
    CHECK(out.embeddings.sizes() == torch::IntArrayRef({1, 64, 24, 24, 24}));
}

TEST_CASE("inputs must be divisible by the maximum stride")
{
    net::UNet3d model(NetworkConfig{});
    try {
        model->forward(torch::zeros({1, 1, 90, 96, 96}));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("axis 0") != std::string::npos);
    }
    CHECK_THROWS_AS(model->forward(torch::zeros({1, 2, 32, 32, 32})), ShapeError);
}

TEST_CASE("eval mode is deterministic and batch independent")
{
    torch::manual_seed(1);
    net::UNet3d model(NetworkConfig{});
    model->eval();
    const auto x = torch::randn({1, 1, 16, 16, 16});
    const auto a = model->predict_probs(x);
    const auto b = model->predict_probs(x);
    CHECK(torch::equal(a, b));
    CHECK(torch::allclose(model->forward(x).probs, a));
    const auto pair = model->predict_probs(torch::cat({x, x}, 0));
    CHECK(torch::allclose(pair[0], pair[1], 1e-6, 1e-6));
}

TEST_CASE("parameter count is a closed-form function of the configuration")
{
    for (const auto& cfg : {NetworkConfig{}, NetworkConfig{1, 2, 4, 3, 16, 1}, NetworkConfig{1, 4, 8, 4, 32, 3}}) {
        net::UNet3d model(cfg);
        CHECK(model->parameter_count() == net::expected_parameter_count(cfg));
    }
    // Golden value for the default phantom network.
    CHECK(net::expected_parameter_count(NetworkConfig{}) == net::UNet3d(NetworkConfig{})->parameter_count());
    NetworkConfig bad;
    bad.projection_tap = 5;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("checkpoint round trip and compatibility")
{
    const fs::path dir = fs::temp_directory_path() / ("rcps_ckpt_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    torch::manual_seed(3);
    NetworkConfig cfg;
    cfg.embedding_dim = 16;
    net::UNet3d model(cfg);
    net::CheckpointInfo info{cfg, 42, 2, 9, nlohmann::json{{"note", 1}}};
    net::save_checkpoint(dir / "ckpt", model, info);
    CHECK(!fs::exists(dir / "ckpt.tmp"));
    net::CheckpointInfo back;
    auto loaded = net::load_checkpoint(dir / "ckpt", &back);
    CHECK(back.step == 42);
    CHECK(back.epoch == 2);
    CHECK(back.seed == 9);
    CHECK(net::parameter_hash(*loaded) == net::parameter_hash(*model));
    NetworkConfig other = cfg;
    other.base_channels = 4;
    CHECK_THROWS_AS(net::load_checkpoint(dir / "ckpt", nullptr, &other), CompatibilityError);
    CHECK_THROWS_AS(net::load_checkpoint(dir / "missing"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("parameter hash reacts to any parameter change")
{
    torch::manual_seed(4);
    net::UNet3d model(NetworkConfig{});
    const auto h = net::parameter_hash(*model);
    {
        torch::NoGradGuard g;
        model->parameters()[0].view(-1)[0] += 1e-3;
    }
    CHECK(net::parameter_hash(*model) != h);
}
