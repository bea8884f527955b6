#include "unit_test.hpp"

#include "rcps/losses.hpp"
#include "support.hpp"

using namespace rcps;
using namespace testing_support;

namespace {

torch::Tensor softmax1(const torch::Tensor& z) { return torch::softmax(z, 1); }

} // namespace

TEST_CASE("seg_loss matches the brute-force oracle")
{
    std::mt19937_64 rng(11);
    LossWeights w;
    for (int trial = 0; trial < 25; ++trial) {
        const auto C = 2 + trial % 2;
        const auto spatial = random_spatial(rng, 2, 4);
        const auto p = softmax1(random_logits(rng, 2, C, spatial));
        const auto y = random_labels(rng, 2, C, spatial);
        for (bool bg : {false, true}) {
            w.dice_include_background = bg;
            const double got = loss::seg_loss(p, y, w).total.item<double>();
            const double want = oracle::seg_loss(to_field(p), to_ints(y), w.dice_smooth, w.epsilon, bg);
            CHECK(got == doctest::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("seg_loss of a perfect one-hot prediction is near zero")
{
    auto y = torch::tensor({0, 1, 2, 1, 0, 2, 2, 1}, torch::kLong).reshape({1, 2, 2, 2});
    auto p = torch::one_hot(y, 3).movedim(-1, 1).to(torch::kDouble);
    const auto parts = loss::seg_loss(p, y);
    CHECK(parts.cross_entropy.item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.dice.item<double>() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("seg_loss rejects mismatched or out-of-range labels")
{
    auto p = torch::full({1, 2, 2, 2, 2}, 0.5, torch::kDouble);
    CHECK_THROWS_AS(loss::seg_loss(p, torch::zeros({1, 2, 2, 3}, torch::kLong)), ArgumentError);
    CHECK_THROWS_AS(loss::seg_loss(p, torch::full({1, 2, 2, 2}, 2, torch::kLong)), ArgumentError);
}

TEST_CASE("sharpen, pseudo supervision and KL maps match the oracle")
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        const auto C = 2 + trial % 2;
        const auto spatial = random_spatial(rng, 2, 4);
        const auto z = random_logits(rng, 2, C, spatial);
        const auto view = softmax1(random_logits(rng, 2, C, spatial));
        const double T = 0.5;

        const auto sharp = loss::sharpen(z, T);
        const auto sharp_o = oracle::softmax(to_field(z), T);
        const auto sharp_f = to_field(sharp);
        for (std::size_t i = 0; i < sharp_o.v.size(); ++i)
            REQUIRE(sharp_f.v[i] == doctest::Approx(sharp_o.v[i]).epsilon(1e-12));

        const auto target = to_field(sharp);
        const auto vf = to_field(view);
        const auto lp = to_doubles(loss::pseudo_sup_map(view, sharp, 1e-8));
        const auto kl = to_doubles(loss::kl_map(view, softmax1(z), 1e-8));
        const auto ref = oracle::softmax(to_field(z));
        for (int b = 0; b < vf.B; ++b)
            for (int i = 0; i < vf.V; ++i) {
                const auto k = static_cast<std::size_t>(b * vf.V + i);
                REQUIRE(lp[k] == doctest::Approx(oracle::pseudo_sup(vf, target, b, i, 1e-8)).epsilon(1e-10));
                REQUIRE(kl[k] == doctest::Approx(oracle::kl(vf, ref, b, i, 1e-8)).epsilon(1e-10));
            }
    }
}

TEST_CASE("KL map is non-negative and zero for identical distributions")
{
    std::mt19937_64 rng(13);
    const auto p = softmax1(random_logits(rng, 2, 3, {3, 3, 3}));
    const auto q = softmax1(random_logits(rng, 2, 3, {3, 3, 3}));
    CHECK(loss::kl_map(p, q).min().item<double>() >= -1e-12);
    CHECK(loss::kl_map(p, p).abs().max().item<double>() < 1e-12);
}

TEST_CASE("rectified pseudo loss and consistency match the oracle")
{
    std::mt19937_64 rng(14);
    LossWeights w;
    for (int trial = 0; trial < 25; ++trial) {
        const auto C = 2 + trial % 2;
        const auto spatial = random_spatial(rng, 2, 4);
        const auto z = random_logits(rng, 2, C, spatial);
        const auto p1 = softmax1(random_logits(rng, 2, C, spatial));
        const auto p2 = softmax1(random_logits(rng, 2, C, spatial));
        const auto parts = loss::rectified_pseudo_loss(p1, p2, z, w);
        const double want = oracle::rectified_pseudo(to_field(p1), to_field(p2), to_field(z), w.temperature_T,
                                                     w.epsilon, w.consistency_weight);
        CHECK(parts.total.item<double>() == doctest::Approx(want).epsilon(1e-10));
        CHECK(loss::consistency_loss(p1, p2).item<double>() ==
              doctest::Approx(oracle::consistency(to_field(p1), to_field(p2), 1e-8)).epsilon(1e-10));
    }
}

TEST_CASE("rectified single-voxel hand value")
{
    auto target = torch::tensor({0.9, 0.1}, torch::kDouble).reshape({1, 2, 1});
    auto view = torch::tensor({0.5, 0.5}, torch::kDouble).reshape({1, 2, 1});
    const double v = loss::uncertainty_rectified_loss(view, target, target, 0.0).item<double>();
    CHECK(v == doctest::Approx(std::exp(-0.3680642071684971) * std::log(2.0) + 0.3680642071684971).epsilon(1e-12));
}

TEST_CASE("losses have correct gradients")
{
    std::mt19937_64 rng(15);
    const std::vector<std::int64_t> sp{2, 2, 2};
    LossWeights w;
    const auto z = random_logits(rng, 1, 3, sp);
    const auto other = softmax1(random_logits(rng, 1, 3, sp));
    const auto y = random_labels(rng, 1, 3, sp);

    auto check = [](auto f, const torch::Tensor& x) {
        const auto a = analytic_gradient(f, x);
        const auto n = finite_difference(f, x);
        CHECK(relative_error(a, n) < 1e-3);
    };
    check([&](const torch::Tensor& x) { return loss::seg_loss(softmax1(x), y, w).total; }, z);
    check([&](const torch::Tensor& x) { return loss::consistency_loss(softmax1(x), other); }, z);
    check([&](const torch::Tensor& x) { return loss::kl_map(softmax1(x), other).mean(); }, z);
    check([&](const torch::Tensor& x) { return loss::pseudo_sup_map(softmax1(x), other).mean(); }, z);
    check([&](const torch::Tensor& x) { return loss::uncertainty_rectified_loss(softmax1(x), z, 0.5); }, z);
    check([&](const torch::Tensor& x) { return loss::rectified_pseudo_loss(softmax1(x), other, z, w).total; }, z);
}

TEST_CASE("no gradient reaches the original-input branch of the rectified loss")
{
    std::mt19937_64 rng(16);
    const std::vector<std::int64_t> sp{2, 2, 2};
    auto z = random_logits(rng, 1, 2, sp).requires_grad_(true);
    auto v1 = random_logits(rng, 1, 2, sp).requires_grad_(true);
    auto v2 = random_logits(rng, 1, 2, sp).requires_grad_(true);
    const auto total = loss::rectified_pseudo_loss(softmax1(v1), softmax1(v2), z).total;
    const auto grads = torch::autograd::grad({total}, {z, v1, v2}, {}, false, false, true);
    CHECK(!grads[0].defined());
    CHECK(grads[1].norm().item<double>() > 0.0);
    CHECK(grads[2].norm().item<double>() > 0.0);
}

TEST_CASE("loss totals")
{
    const auto seg = torch::tensor(1.0);
    const auto rp = torch::tensor(2.0);
    const auto bc = torch::tensor(4.0);
    CHECK(loss::supervised_total(seg, rp, bc, 0.5, 0.25).item<double>() == doctest::Approx(3.0));
    CHECK(loss::unsupervised_total(rp, {}, 0.5, 0.25).item<double>() == doctest::Approx(1.0));
    CHECK(loss::unsupervised_total({}, {}, 0.5, 0.25).item<double>() == 0.0);
    CHECK_THROWS_AS(loss::supervised_total({}, rp, bc, 0.5, 0.25), ArgumentError);
}

TEST_CASE("loss argument validation")
{
    auto a = torch::ones({1, 2, 2, 2, 2});
    auto b = torch::ones({1, 3, 2, 2, 2});
    CHECK_THROWS_AS(loss::kl_map(a, b), ArgumentError);
    CHECK_THROWS_AS(loss::consistency_loss(a, b), ArgumentError);
    CHECK_THROWS_AS(loss::sharpen(a, 0.0), ArgumentError);
}
