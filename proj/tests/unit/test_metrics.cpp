#include "unit_test.hpp"

#include <fstream>

#include "rcps/metrics.hpp"
#include "support.hpp"

using namespace rcps;
using namespace testing_support;

namespace {

oracle::Mask cube(int n, int x0, int y0, int z0, int side)
{
    oracle::Mask m(n, n, n);
    for (int z = z0; z < z0 + side; ++z)
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x)
                m.set(x, y, z, true);
    return m;
}

} // namespace

TEST_CASE("dsc conventions and the shifted cube")
{
    const auto a = label_map(cube(6, 1, 1, 1, 2));
    const auto b = label_map(cube(6, 2, 1, 1, 2));
    CHECK(metrics::dsc(a, a, 1) == 1.0);
    CHECK(metrics::dsc(a, b, 1) == 0.5);
    CHECK(metrics::dsc(a, label_map(cube(6, 4, 4, 4, 2)), 1) == 0.0);
    const auto empty = label_map(oracle::Mask(6, 6, 6));
    CHECK(metrics::dsc(empty, empty, 1) == 1.0);
    CHECK(metrics::dsc(a, empty, 1) == 0.0);
    CHECK_THROWS_AS(metrics::dsc(a, label_map(oracle::Mask(5, 6, 6)), 1), ArgumentError);
}

TEST_CASE("surface distances of simple configurations")
{
    const auto a = label_map(cube(8, 2, 2, 2, 3));
    const auto same = metrics::surface_distances(a, a, 1);
    REQUIRE(same);
    CHECK(same->hd95 == 0.0);
    CHECK(same->asd == 0.0);

    oracle::Mask p(8, 8, 8), g(8, 8, 8);
    p.set(1, 4, 4, true);
    g.set(4, 4, 4, true);
    const auto d = metrics::surface_distances(label_map(p), label_map(g), 1);
    REQUIRE(d);
    CHECK(d->hd95 == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(d->asd == doctest::Approx(3.0).epsilon(1e-12));

    CHECK(!metrics::surface_distances(a, label_map(oracle::Mask(8, 8, 8)), 1));
}

TEST_CASE("a cube and its one-voxel dilation are one voxel apart")
{
    const auto inner = label_map(cube(10, 3, 3, 3, 3));
    oracle::Mask dil(10, 10, 10);
    const auto c = cube(10, 3, 3, 3, 3);
    for (int z = 0; z < 10; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x)
                dil.set(x, y, z, c.at(x, y, z) || c.at(x - 1, y, z) || c.at(x + 1, y, z) || c.at(x, y - 1, z) ||
                                     c.at(x, y + 1, z) || c.at(x, y, z - 1) || c.at(x, y, z + 1));
    const auto o = oracle::surface(c, dil);
    const auto d = metrics::surface_distances(inner, label_map(dil), 1);
    REQUIRE(d);
    CHECK(d->hd95 == doctest::Approx(o.hd95).epsilon(1e-12));
    CHECK(d->asd == doctest::Approx(o.asd).epsilon(1e-12));
}

TEST_CASE("metrics match all-pairs oracles on random masks")
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> side(3, 12);
        const int nx = side(rng), ny = side(rng), nz = side(rng);
        const double density = 0.05 + 0.5 * std::generate_canonical<double, 53>(rng);
        const auto p = random_mask(rng, nx, ny, nz, density);
        const auto g = random_mask(rng, nx, ny, nz, density);
        const std::array<double, 3> spacing = trial % 3 == 0 ? std::array<double, 3>{0.7, 1.3, 2.0}
                                                             : std::array<double, 3>{1.0, 1.0, 1.0};
        const auto lp = label_map(p), lg = label_map(g);
        CHECK(metrics::dsc(lp, lg, 1) == doctest::Approx(oracle::dsc(p, g)).epsilon(1e-12));
        CHECK(metrics::dsc(lp, lg, 1) == metrics::dsc(lg, lp, 1));
        const auto o = oracle::surface(p, g, spacing);
        const auto d = metrics::surface_distances(lp, lg, 1, spacing);
        REQUIRE(o.defined == d.has_value());
        if (d) {
            CHECK(std::abs(d->hd95 - o.hd95) < 1e-6);
            CHECK(std::abs(d->asd - o.asd) < 1e-6);
            const auto swapped = metrics::surface_distances(lg, lp, 1, spacing);
            CHECK(std::abs(swapped->hd95 - d->hd95) < 1e-12);
            CHECK(std::abs(swapped->asd - d->asd) < 1e-12);
        }
    }
}

TEST_CASE("percentile interpolates linearly between order statistics")
{
    CHECK(metrics::percentile({1.0, 2.0, 3.0, 4.0, 5.0}, 95.0) == doctest::Approx(4.8));
    CHECK(metrics::percentile({3.0}, 95.0) == 3.0);
    CHECK(metrics::percentile({5.0, 1.0}, 0.0) == 1.0);
    CHECK_THROWS_AS(metrics::percentile({}, 50.0), ArgumentError);
}

TEST_CASE("summaries use population std and count excluded cases")
{
    metrics::CaseMetrics a{"a", {{1, 1.0, 0.0, 0.0}}};
    metrics::CaseMetrics b{"b", {{1, 0.5, std::nullopt, std::nullopt}}};
    const auto t = metrics::summarize({a, b}, 2);
    REQUIRE(t.per_class.size() == 1);
    CHECK(t.per_class[0].dsc.mean == doctest::Approx(0.75));
    CHECK(t.per_class[0].dsc.stddev == doctest::Approx(0.25));
    CHECK(t.per_class[0].hd95.count == 1);
    CHECK(t.per_class[0].hd95.excluded == 1);
    const auto single = metrics::summarize({a}, 2);
    CHECK(single.overall.dsc.stddev == 0.0);
}

TEST_CASE("metrics CSV layout")
{
    metrics::CaseMetrics a{"case_a", {{1, 1.0, 0.0, 0.0}, {2, 0.25, std::nullopt, std::nullopt}}};
    const auto path = std::filesystem::temp_directory_path() / "rcps_metrics_test.csv";
    metrics::write_csv(path, metrics::summarize({a}, 3));
    std::ifstream in(path);
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "case_id,class,dsc,hd95,asd");
    CHECK(row1 == "case_a,1,1.000000,0.000000,0.000000");
    CHECK(row2 == "case_a,2,0.250000,nan,nan");
    std::filesystem::remove(path);
}
