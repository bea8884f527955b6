#include <algorithm>
#include <cmath>

#include "rcps/augment.hpp"

namespace rcps::augment {

void IntensityAugmentConfig::validate() const
{
    if (!scale.ordered() || !shift.ordered() || !noise_sigma.ordered())
        throw ArgumentError("intensity augmentation ranges must satisfy lo <= hi");
    if (noise_sigma.lo < 0.0)
        throw ArgumentError("noise sigma range must be non-negative");
    if (!(probability >= 0.0 && probability <= 1.0))
        throw ArgumentError("augmentation probability must lie in [0, 1]");
}

void GridDistortConfig::validate() const
{
    if (grid_cells < 2)
        throw ArgumentError("grid distortion needs grid_cells >= 2");
    if (!(max_displacement >= 0.0))
        throw ArgumentError("grid distortion max_displacement must be >= 0");
    if (!(probability >= 0.0 && probability <= 1.0))
        throw ArgumentError("grid distortion probability must lie in [0, 1]");
}

namespace {

double draw_in(const Range& r, Rng& rng)
{
    if (r.lo == r.hi)
        return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

} // namespace

Volume apply_intensity(const Volume& x, const IntensityAugmentConfig& cfg, Rng& rng, IntensityDraw* draw)
{
    cfg.validate();
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    IntensityDraw d;
    // Every gate and parameter is drawn unconditionally so the stream layout is fixed.
    const bool do_scale = coin(rng) < cfg.probability;
    const double scale = draw_in(cfg.scale, rng);
    const bool do_shift = coin(rng) < cfg.probability;
    const double shift = draw_in(cfg.shift, rng);
    const bool do_noise = coin(rng) < cfg.probability;
    const double sigma = draw_in(cfg.noise_sigma, rng);
    if (do_scale)
        d.scale = scale;
    if (do_shift)
        d.shift = shift;
    if (do_noise)
        d.noise_sigma = sigma;
    if (draw)
        *draw = d;

    Volume out = x;
    const bool identity = d.scale == 1.0 && d.shift == 0.0 && d.noise_sigma == 0.0;
    if (identity)
        return out;
    std::normal_distribution<double> noise(0.0, d.noise_sigma > 0.0 ? d.noise_sigma : 1.0);
    for (auto& v : out.data.values) {
        double value = v * d.scale + d.shift;
        if (d.noise_sigma > 0.0)
            value += noise(rng);
        v = static_cast<float>(value);
    }
    return out;
}

std::pair<Volume, Volume> make_views(const Volume& x, const IntensityAugmentConfig& cfg, Rng& rng)
{
    Volume first = apply_intensity(x, cfg, rng);
    Volume second = apply_intensity(x, cfg, rng);
    return {std::move(first), std::move(second)};
}

DisplacementField sample_displacement_field(Shape3 shape, const GridDistortConfig& cfg, Rng& rng)
{
    cfg.validate();
    const int n = cfg.grid_cells + 1;
    std::uniform_real_distribution<double> offset(-cfg.max_displacement, cfg.max_displacement);
    DisplacementField field;
    for (int a = 0; a < 3; ++a) {
        std::vector<double> lattice(static_cast<std::size_t>(n * n * n));
        for (auto& v : lattice)
            v = cfg.max_displacement > 0.0 ? offset(rng) : 0.0;
        Grid<float> comp(shape);
        auto coord = [&](std::int64_t i, std::int64_t extent, int& c0, int& c1, double& w) {
            const double pos = extent > 1 ? static_cast<double>(i) * cfg.grid_cells / static_cast<double>(extent - 1) : 0.0;
            c0 = std::min(static_cast<int>(std::floor(pos)), cfg.grid_cells - 1);
            c1 = c0 + 1;
            w = pos - c0;
        };
        auto at = [&](int x, int y, int z) { return lattice[static_cast<std::size_t>(x + n * (y + n * z))]; };
        for (std::int64_t z = 0; z < shape.nz; ++z) {
            int z0, z1;
            double wz;
            coord(z, shape.nz, z0, z1, wz);
            for (std::int64_t y = 0; y < shape.ny; ++y) {
                int y0, y1;
                double wy;
                coord(y, shape.ny, y0, y1, wy);
                for (std::int64_t x = 0; x < shape.nx; ++x) {
                    int x0, x1;
                    double wx;
                    coord(x, shape.nx, x0, x1, wx);
                    const double c00 = at(x0, y0, z0) * (1 - wx) + at(x1, y0, z0) * wx;
                    const double c10 = at(x0, y1, z0) * (1 - wx) + at(x1, y1, z0) * wx;
                    const double c01 = at(x0, y0, z1) * (1 - wx) + at(x1, y0, z1) * wx;
                    const double c11 = at(x0, y1, z1) * (1 - wx) + at(x1, y1, z1) * wx;
                    comp(x, y, z) = static_cast<float>((c00 * (1 - wy) + c10 * wy) * (1 - wz) + (c01 * (1 - wy) + c11 * wy) * wz);
                }
            }
        }
        field.component[static_cast<std::size_t>(a)] = std::move(comp);
    }
    return field;
}

namespace {

void check_field(const Shape3& s, const DisplacementField& f)
{
    for (const auto& c : f.component)
        if (!(c.shape == s))
            throw ArgumentError("displacement field shape " + c.shape.str() + " differs from image " + s.str());
}

} // namespace

Volume warp(const Volume& x, const DisplacementField& field)
{
    const Shape3& s = x.shape();
    check_field(s, field);
    Volume out = x;
    for (std::int64_t z = 0; z < s.nz; ++z)
        for (std::int64_t y = 0; y < s.ny; ++y)
            for (std::int64_t xx = 0; xx < s.nx; ++xx) {
                const std::size_t i = s.index(xx, y, z);
                const std::array<double, 3> p{
                    std::clamp(xx + static_cast<double>(field.component[0].values[i]), 0.0, static_cast<double>(s.nx - 1)),
                    std::clamp(y + static_cast<double>(field.component[1].values[i]), 0.0, static_cast<double>(s.ny - 1)),
                    std::clamp(z + static_cast<double>(field.component[2].values[i]), 0.0, static_cast<double>(s.nz - 1))};
                std::array<std::int64_t, 3> lo{}, hi{};
                std::array<double, 3> w{};
                for (int a = 0; a < 3; ++a) {
                    const auto ai = static_cast<std::size_t>(a);
                    lo[ai] = static_cast<std::int64_t>(std::floor(p[ai]));
                    hi[ai] = std::min(lo[ai] + 1, s[a] - 1);
                    w[ai] = p[ai] - static_cast<double>(lo[ai]);
                }
                const auto& g = x.data;
                const double c00 = g(lo[0], lo[1], lo[2]) * (1 - w[0]) + g(hi[0], lo[1], lo[2]) * w[0];
                const double c10 = g(lo[0], hi[1], lo[2]) * (1 - w[0]) + g(hi[0], hi[1], lo[2]) * w[0];
                const double c01 = g(lo[0], lo[1], hi[2]) * (1 - w[0]) + g(hi[0], lo[1], hi[2]) * w[0];
                const double c11 = g(lo[0], hi[1], hi[2]) * (1 - w[0]) + g(hi[0], hi[1], hi[2]) * w[0];
                out.data.values[i] = static_cast<float>((c00 * (1 - w[1]) + c10 * w[1]) * (1 - w[2]) +
                                                        (c01 * (1 - w[1]) + c11 * w[1]) * w[2]);
            }
    return out;
}

LabelMap warp(const LabelMap& y, const DisplacementField& field)
{
    const Shape3& s = y.shape();
    check_field(s, field);
    LabelMap out = y;
    for (std::int64_t z = 0; z < s.nz; ++z)
        for (std::int64_t yy = 0; yy < s.ny; ++yy)
            for (std::int64_t x = 0; x < s.nx; ++x) {
                const std::size_t i = s.index(x, yy, z);
                const auto sx = std::clamp<std::int64_t>(std::llround(x + static_cast<double>(field.component[0].values[i])), 0, s.nx - 1);
                const auto sy = std::clamp<std::int64_t>(std::llround(yy + static_cast<double>(field.component[1].values[i])), 0, s.ny - 1);
                const auto sz = std::clamp<std::int64_t>(std::llround(z + static_cast<double>(field.component[2].values[i])), 0, s.nz - 1);
                out.data.values[i] = y.data(sx, sy, sz);
            }
    return out;
}

std::pair<Volume, std::optional<LabelMap>> grid_distort(const Volume& x, const LabelMap* y, const GridDistortConfig& cfg,
                                                        Rng& rng)
{
    cfg.validate();
    if (y && !(y->shape() == x.shape()))
        throw ArgumentError("grid_distort: image shape " + x.shape().str() + " differs from label " + y->shape().str());
    std::optional<LabelMap> label;
    if (y)
        label = *y;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) >= cfg.probability || cfg.max_displacement == 0.0)
        return {x, std::move(label)};
    const auto field = sample_displacement_field(x.shape(), cfg, rng);
    Volume warped = warp(x, field);
    if (y)
        label = warp(*y, field);
    return {std::move(warped), std::move(label)};
}

} // namespace rcps::augment
