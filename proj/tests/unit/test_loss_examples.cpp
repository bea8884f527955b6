#include "unit_test.hpp"

#include "rcps/losses.hpp"
#include "support.hpp"

using namespace rcps;
using namespace testing_support;

namespace {

torch::Tensor voxel(std::initializer_list<double> p) { return torch::tensor(std::vector<double>(p), torch::kDouble).reshape({1, -1, 1}); }

} // namespace

TEST_CASE("uniform two-class prediction has cross-entropy ln 2")
{
    auto p = torch::full({2, 2, 2, 2, 2}, 0.5, torch::kDouble);
    std::mt19937_64 rng(1);
    const auto y = random_labels(rng, 2, 2, {2, 2, 2});
    CHECK(loss::seg_loss(p, y).cross_entropy.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sharpen examples")
{
    std::mt19937_64 rng(2);
    const auto z = random_logits(rng, 2, 3, {3, 3, 3});
    CHECK(torch::allclose(loss::sharpen(z, 1.0), torch::softmax(z, 1)));
    CHECK(torch::equal(loss::sharpen(z, 0.5).argmax(1), torch::softmax(z, 1).argmax(1)));
    const auto s = loss::sharpen(torch::tensor({1.0, 0.0}, torch::kDouble).reshape({1, 2, 1}), 0.5);
    CHECK(s[0][0][0].item<double>() == doctest::Approx(0.8807970779778824).epsilon(1e-12));
    CHECK(s[0][1][0].item<double>() == doctest::Approx(0.11920292202211755).epsilon(1e-12));
    auto entropy = [](const torch::Tensor& p) { return -(p * p.log()).sum(1); };
    CHECK((entropy(loss::sharpen(z, 0.5)) < entropy(torch::softmax(z, 1))).all().item<bool>());
}

TEST_CASE("pseudo supervision examples")
{
    const auto t = voxel({0.7, 0.3});
    CHECK(loss::pseudo_sup_map(t, t).item<double>() ==
          doctest::Approx(-(0.7 * std::log(0.7) + 0.3 * std::log(0.3))).epsilon(1e-12));
    CHECK(loss::pseudo_sup_map(voxel({0.9, 0.1}), voxel({1.0, 0.0})).item<double>() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-9));
    CHECK(loss::pseudo_sup_map(voxel({0.5, 0.5}), voxel({0.5, 0.5})).item<double>() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("KL examples")
{
    CHECK(loss::kl_map(voxel({0.5, 0.5}), voxel({0.9, 0.1})).item<double>() ==
          doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-7));
    CHECK(loss::kl_map(voxel({0.5, 0.5}), voxel({1.0, 0.0})).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-7));
}

TEST_CASE("rectified loss bounds and zero-divergence case")
{
    std::mt19937_64 rng(3);
    const auto z = random_logits(rng, 2, 3, {3, 3, 3});
    const auto view = torch::softmax(random_logits(rng, 2, 3, {3, 3, 3}), 1);
    torch::Tensor kl_mean;
    const auto l = loss::uncertainty_rectified_loss(view, z, 0.5, 1e-8, &kl_mean);
    CHECK(l.item<double>() >= kl_mean.item<double>());

    const auto t = loss::sharpen(z, 0.5);
    const double h = (-(t * t.log()).sum(1)).mean().item<double>();
    CHECK(loss::uncertainty_rectified_loss(t, t, t, 1e-8).item<double>() == doctest::Approx(h).epsilon(1e-7));
}

TEST_CASE("consistency examples")
{
    CHECK(loss::consistency_loss(voxel({0.3, 0.7}), voxel({0.3, 0.7})).item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss::consistency_loss(voxel({1.0, 0.0}), voxel({0.0, 1.0})).item<double>() == doctest::Approx(1.0));
    CHECK(loss::consistency_loss(voxel({0.8, 0.2}), voxel({0.6, 0.4})).item<double>() ==
          doctest::Approx(1.0 - 0.56 / (std::sqrt(0.68) * std::sqrt(0.52))).epsilon(1e-12));
    std::mt19937_64 rng(4);
    const auto a = torch::softmax(random_logits(rng, 2, 3, {3, 3, 3}), 1);
    const auto b = torch::softmax(random_logits(rng, 2, 3, {3, 3, 3}), 1);
    const double c = loss::consistency_loss(a, b).item<double>();
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
}

TEST_CASE("rectified pseudo loss composition and symmetry")
{
    std::mt19937_64 rng(5);
    const auto z = random_logits(rng, 1, 3, {2, 2, 2});
    const auto t = loss::sharpen(z, 0.5);
    LossWeights w;
    const double h = (-(t * t.log()).sum(1)).mean().item<double>();
    const double two_views = loss::uncertainty_rectified_loss(t, t, t, 1e-8).item<double>() * 2.0 +
                             loss::consistency_loss(t, t).item<double>();
    CHECK(two_views == doctest::Approx(2.0 * h).epsilon(1e-7));
    const auto parts = loss::rectified_pseudo_loss(t, t, z, w);
    CHECK(parts.consistency.item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.urp_first.item<double>() == parts.urp_second.item<double>());

    const auto p1 = torch::softmax(random_logits(rng, 1, 3, {2, 2, 2}), 1);
    const auto p2 = torch::softmax(random_logits(rng, 1, 3, {2, 2, 2}), 1);
    CHECK(loss::rectified_pseudo_loss(p1, p2, z, w).total.item<double>() ==
          doctest::Approx(loss::rectified_pseudo_loss(p2, p1, z, w).total.item<double>()).epsilon(1e-12));
}

TEST_CASE("total weighting examples")
{
    const auto seg = torch::tensor(1.0), rp = torch::tensor(2.0), bc = torch::tensor(3.0);
    CHECK(loss::supervised_total(seg, rp, bc, 0.1, 0.1).item<double>() == doctest::Approx(1.5));
    CHECK(loss::supervised_total(seg, rp, bc, 0.0, 0.0).item<double>() == 1.0);
    CHECK(loss::unsupervised_total(rp, bc, 0.0, 0.0).item<double>() == 0.0);
}
