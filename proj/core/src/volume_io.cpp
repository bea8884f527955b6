#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "rcps/config.hpp"
#include "rcps/volume_io.hpp"

namespace rcps {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream)
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

void PhantomSpec::validate() const
{
    if (!volume_shape.valid())
        throw ArgumentError("phantom volume_shape must be positive, got " + volume_shape.str());
    if (num_classes < 2)
        throw ArgumentError("phantom num_classes must be >= 2");
    if (static_cast<int>(intensity_means.size()) != num_classes)
        throw ArgumentError("phantom intensity_means needs one entry per class (" + std::to_string(num_classes) +
                            "), got " + std::to_string(intensity_means.size()));
    for (std::size_t a = 0; a < intensity_means.size(); ++a)
        for (std::size_t b = a + 1; b < intensity_means.size(); ++b)
            if (intensity_means[a] == intensity_means[b])
                throw ArgumentError("phantom intensity_means must be pairwise distinct (classes " + std::to_string(a) +
                                    " and " + std::to_string(b) + ")");
    if (!(noise_sigma >= 0.0))
        throw ArgumentError("phantom noise_sigma must be >= 0");
    if (!(bias_field_strength >= 0.0))
        throw ArgumentError("phantom bias_field_strength must be >= 0");
    if (shapes_per_class[0] < 0 || shapes_per_class[1] < shapes_per_class[0])
        throw ArgumentError("phantom shapes_per_class must be an ordered non-negative range");
    if (!(radius_fraction[0] > 0.0) || radius_fraction[1] < radius_fraction[0] || radius_fraction[1] > 0.5)
        throw ArgumentError("phantom radius_fraction must satisfy 0 < lo <= hi <= 0.5");
}

void Dataset::check_disjoint() const
{
    std::set<std::string> seen;
    auto add = [&](const std::string& id) {
        if (!seen.insert(id).second)
            throw ArgumentError("dataset identifier appears more than once: " + id);
    };
    for (const auto& c : labeled)
        add(c.image.id);
    for (const auto& v : unlabeled)
        add(v.id);
    for (const auto& c : test)
        add(c.image.id);
}

Volume window_hu(const Volume& v, double level, double width)
{
    if (!(width > 0.0))
        throw ArgumentError("window width must be > 0, got " + std::to_string(width));
    const auto lo = static_cast<float>(level - width / 2.0);
    const auto hi = static_cast<float>(level + width / 2.0);
    Volume out = v;
    for (auto& x : out.data.values)
        x = std::clamp(x, lo, hi);
    return out;
}

Volume normalize_zscore(const Volume& v, ZScoreOptions opts)
{
    const auto n = static_cast<double>(v.data.size());
    double mean = 0.0;
    for (float x : v.data.values) {
        if (!std::isfinite(x))
            throw DegenerateInputError("volume " + v.id + " contains non-finite values");
        mean += x;
    }
    mean /= n;
    double var = 0.0;
    for (float x : v.data.values)
        var += (x - mean) * (x - mean);
    var /= n;

    Volume out = v;
    if (var <= 0.0) {
        if (!opts.allow_constant)
            throw DegenerateInputError("cannot z-score normalize constant volume " + v.id);
        std::fill(out.data.values.begin(), out.data.values.end(), 0.f);
        return out;
    }
    const double inv_std = 1.0 / std::sqrt(var);
    for (auto& x : out.data.values)
        x = static_cast<float>((x - mean) * inv_std);
    return out;
}

Box3 foreground_box(const LabelMap& y)
{
    const auto& s = y.shape();
    Box3 box{{s.nx, s.ny, s.nz}, {-1, -1, -1}};
    for (std::int64_t z = 0; z < s.nz; ++z)
        for (std::int64_t yy = 0; yy < s.ny; ++yy)
            for (std::int64_t x = 0; x < s.nx; ++x)
                if (y.data(x, yy, z) != 0) {
                    const Index3 p{x, yy, z};
                    for (int a = 0; a < 3; ++a) {
                        box.lo[a] = std::min(box.lo[a], p[a]);
                        box.hi[a] = std::max(box.hi[a], p[a]);
                    }
                }
    if (box.hi[0] < 0)
        throw DegenerateInputError("label map has no foreground voxels");
    return box;
}

template <typename T>
Grid<T> crop(const Grid<T>& g, const Box3& box)
{
    for (int a = 0; a < 3; ++a)
        if (box.lo[a] < 0 || box.hi[a] >= g.shape[a] || box.hi[a] < box.lo[a])
            throw ArgumentError("crop box outside grid on axis " + std::to_string(a));
    Grid<T> out(box.extent());
    for (std::int64_t z = 0; z < out.shape.nz; ++z)
        for (std::int64_t y = 0; y < out.shape.ny; ++y) {
            const auto* src = &g(box.lo[0], box.lo[1] + y, box.lo[2] + z);
            std::copy(src, src + out.shape.nx, &out(0, y, z));
        }
    return out;
}

template Grid<float> crop(const Grid<float>&, const Box3&);
template Grid<std::int32_t> crop(const Grid<std::int32_t>&, const Box3&);

std::pair<Volume, LabelMap> crop_roi_with_margin(const Volume& v, const LabelMap& y, int margin)
{
    if (!(v.shape() == y.shape()))
        throw ArgumentError("volume shape " + v.shape().str() + " differs from label shape " + y.shape().str());
    if (margin < 0)
        throw ArgumentError("margin must be >= 0");
    Box3 box = foreground_box(y);
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::max<std::int64_t>(0, box.lo[a] - margin);
        box.hi[a] = std::min<std::int64_t>(v.shape()[a] - 1, box.hi[a] + margin);
    }
    Volume vc = v;
    vc.data = crop(v.data, box);
    LabelMap yc = y;
    yc.data = crop(y.data, box);
    return {std::move(vc), std::move(yc)};
}

template <typename T>
Grid<T> pad_to_at_least(const Grid<T>& g, Shape3 min_shape, Index3* offset_out)
{
    Shape3 target = g.shape;
    Index3 before{};
    for (int a = 0; a < 3; ++a) {
        if (g.shape[a] < min_shape[a]) {
            target[a] = min_shape[a];
            before[a] = (min_shape[a] - g.shape[a]) / 2;
        }
    }
    if (offset_out)
        *offset_out = before;
    if (target == g.shape)
        return g;
    Grid<T> out(target);
    for (std::int64_t z = 0; z < target.nz; ++z) {
        const auto sz = std::clamp<std::int64_t>(z - before[2], 0, g.shape.nz - 1);
        for (std::int64_t y = 0; y < target.ny; ++y) {
            const auto sy = std::clamp<std::int64_t>(y - before[1], 0, g.shape.ny - 1);
            for (std::int64_t x = 0; x < target.nx; ++x) {
                const auto sx = std::clamp<std::int64_t>(x - before[0], 0, g.shape.nx - 1);
                out(x, y, z) = g(sx, sy, sz);
            }
        }
    }
    return out;
}

template Grid<float> pad_to_at_least(const Grid<float>&, Shape3, Index3*);
template Grid<std::int32_t> pad_to_at_least(const Grid<std::int32_t>&, Shape3, Index3*);

Patch extract_patch(const Volume& v, const LabelMap* y, Shape3 patch_size, Rng& rng)
{
    if (!patch_size.valid())
        throw ArgumentError("patch size must be >= 1 per axis, got " + patch_size.str());
    if (y && !(y->shape() == v.shape()))
        throw ArgumentError("volume shape " + v.shape().str() + " differs from label shape " + y->shape().str());
    const Grid<float> img = pad_to_at_least(v.data, patch_size);
    Box3 box;
    for (int a = 0; a < 3; ++a) {
        std::uniform_int_distribution<std::int64_t> pick(0, img.shape[a] - patch_size[a]);
        box.lo[a] = pick(rng);
        box.hi[a] = box.lo[a] + patch_size[a] - 1;
    }
    Patch p;
    p.origin = box.lo;
    p.image = v;
    p.image.data = crop(img, box);
    if (y) {
        LabelMap yl = *y;
        yl.data = crop(pad_to_at_least(y->data, patch_size), box);
        p.label = std::move(yl);
    }
    return p;
}

namespace {

Shape3 resampled_shape(const Shape3& s, const std::array<double, 3>& from, const std::array<double, 3>& to)
{
    Shape3 out;
    for (int a = 0; a < 3; ++a) {
        const auto idx = static_cast<std::size_t>(a);
        if (!(to[idx] > 0.0) || !(from[idx] > 0.0))
            throw ArgumentError("spacing must be positive");
        out[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(s[a]) * from[idx] / to[idx]));
    }
    return out;
}

} // namespace

Volume resample_to_spacing(const Volume& v, std::array<double, 3> target)
{
    const Shape3 ns = resampled_shape(v.shape(), v.spacing, target);
    Volume out = v;
    out.spacing = target;
    out.data = Grid<float>(ns);
    const auto& src = v.data;
    auto sample_axis = [&](std::int64_t i, int a, std::int64_t& i0, std::int64_t& i1, double& w) {
        const double pos = static_cast<double>(i) * target[static_cast<std::size_t>(a)] /
                           v.spacing[static_cast<std::size_t>(a)];
        const double clamped = std::clamp(pos, 0.0, static_cast<double>(src.shape[a] - 1));
        i0 = static_cast<std::int64_t>(std::floor(clamped));
        i1 = std::min(i0 + 1, src.shape[a] - 1);
        w = clamped - static_cast<double>(i0);
    };
    for (std::int64_t z = 0; z < ns.nz; ++z) {
        std::int64_t z0, z1;
        double wz;
        sample_axis(z, 2, z0, z1, wz);
        for (std::int64_t y = 0; y < ns.ny; ++y) {
            std::int64_t y0, y1;
            double wy;
            sample_axis(y, 1, y0, y1, wy);
            for (std::int64_t x = 0; x < ns.nx; ++x) {
                std::int64_t x0, x1;
                double wx;
                sample_axis(x, 0, x0, x1, wx);
                const double c00 = src(x0, y0, z0) * (1 - wx) + src(x1, y0, z0) * wx;
                const double c10 = src(x0, y1, z0) * (1 - wx) + src(x1, y1, z0) * wx;
                const double c01 = src(x0, y0, z1) * (1 - wx) + src(x1, y0, z1) * wx;
                const double c11 = src(x0, y1, z1) * (1 - wx) + src(x1, y1, z1) * wx;
                const double c0 = c00 * (1 - wy) + c10 * wy;
                const double c1 = c01 * (1 - wy) + c11 * wy;
                out.data(x, y, z) = static_cast<float>(c0 * (1 - wz) + c1 * wz);
            }
        }
    }
    return out;
}

LabelMap resample_to_spacing(const LabelMap& y, std::array<double, 3> source_spacing, std::array<double, 3> target)
{
    const Shape3 ns = resampled_shape(y.shape(), source_spacing, target);
    LabelMap out;
    out.num_classes = y.num_classes;
    out.data = Grid<std::int32_t>(ns);
    auto nearest = [&](std::int64_t i, int a) {
        const double pos = static_cast<double>(i) * target[static_cast<std::size_t>(a)] /
                           source_spacing[static_cast<std::size_t>(a)];
        return std::clamp<std::int64_t>(std::llround(pos), 0, y.shape()[a] - 1);
    };
    for (std::int64_t z = 0; z < ns.nz; ++z)
        for (std::int64_t yy = 0; yy < ns.ny; ++yy)
            for (std::int64_t x = 0; x < ns.nx; ++x)
                out.data(x, yy, z) = y.data(nearest(x, 0), nearest(yy, 1), nearest(z, 2));
    return out;
}

// ---- phantoms ------------------------------------------------------------

bool Phantom::Ellipsoid::contains(double x, double y, double z) const
{
    const double dx = x - center[0];
    const double dy = y - center[1];
    const double dz = z - center[2];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    const double q = (u * u) / (radii[0] * radii[0]) + (v * v) / (radii[1] * radii[1]) + (dz * dz) / (radii[2] * radii[2]);
    return q <= 1.0;
}

Phantom make_phantom(const PhantomSpec& spec, std::uint64_t index)
{
    spec.validate();
    Rng rng(mix_seed(spec.seed, index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Shape3& s = spec.volume_shape;
    const double min_extent = static_cast<double>(std::min({s.nx, s.ny, s.nz}));

    Phantom ph;
    for (int cls = 1; cls < spec.num_classes; ++cls) {
        std::uniform_int_distribution<int> count(spec.shapes_per_class[0], spec.shapes_per_class[1]);
        const int k = count(rng);
        for (int e = 0; e < k; ++e) {
            Phantom::Ellipsoid el{};
            el.cls = cls;
            for (auto& r : el.radii)
                r = min_extent * (spec.radius_fraction[0] + unit(rng) * (spec.radius_fraction[1] - spec.radius_fraction[0]));
            el.radii = {std::max(el.radii[0], 1.0), std::max(el.radii[1], 1.0), std::max(el.radii[2], 1.0)};
            const double reach = std::max({el.radii[0], el.radii[1], el.radii[2]});
            for (int a = 0; a < 3; ++a) {
                const double n = static_cast<double>(s[a]);
                const double lo = std::min(reach, n / 2.0);
                const double hi = std::max(n - 1.0 - reach, lo);
                el.center[static_cast<std::size_t>(a)] = lo + unit(rng) * (hi - lo);
            }
            el.angle = unit(rng) * std::numbers::pi;
            ph.ellipsoids.push_back(el);
        }
    }

    // Smooth multiplicative bias: exp(strength * sum of low-frequency planar cosines).
    struct Wave {
        std::array<double, 3> dir;
        double freq, phase, amp;
    };
    std::vector<Wave> waves(3);
    double amp_total = 0.0;
    for (auto& w : waves) {
        std::normal_distribution<double> g(0.0, 1.0);
        double norm = 0.0;
        for (auto& d : w.dir) {
            d = g(rng);
            norm += d * d;
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (auto& d : w.dir)
            d /= norm;
        w.freq = 0.5 + 0.5 * unit(rng);
        w.phase = 2.0 * std::numbers::pi * unit(rng);
        w.amp = unit(rng);
        amp_total += w.amp;
    }
    for (auto& w : waves)
        w.amp /= std::max(amp_total, 1e-12);

    LabelMap y;
    y.num_classes = spec.num_classes;
    y.data = Grid<std::int32_t>(s, 0);
    for (const auto& el : ph.ellipsoids) {
        std::array<std::int64_t, 3> lo{}, hi{};
        const double reach = std::max({el.radii[0], el.radii[1], el.radii[2]});
        for (int a = 0; a < 3; ++a) {
            lo[static_cast<std::size_t>(a)] =
                std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(el.center[static_cast<std::size_t>(a)] - reach)));
            hi[static_cast<std::size_t>(a)] = std::min<std::int64_t>(
                s[a] - 1, static_cast<std::int64_t>(std::ceil(el.center[static_cast<std::size_t>(a)] + reach)));
        }
        for (auto z = lo[2]; z <= hi[2]; ++z)
            for (auto yy = lo[1]; yy <= hi[1]; ++yy)
                for (auto x = lo[0]; x <= hi[0]; ++x)
                    if (el.contains(static_cast<double>(x), static_cast<double>(yy), static_cast<double>(z)))
                        y.data(x, yy, z) = el.cls;
    }

    Volume v;
    v.data = Grid<float>(s);
    v.id = "phantom_" + std::string(4 - std::min<std::size_t>(4, std::to_string(index).size()), '0') + std::to_string(index);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    for (std::int64_t z = 0; z < s.nz; ++z)
        for (std::int64_t yy = 0; yy < s.ny; ++yy)
            for (std::int64_t x = 0; x < s.nx; ++x) {
                double value = spec.intensity_means[static_cast<std::size_t>(y.data(x, yy, z))];
                if (spec.bias_field_strength > 0.0) {
                    const std::array<double, 3> p{x / static_cast<double>(s.nx), yy / static_cast<double>(s.ny),
                                                  z / static_cast<double>(s.nz)};
                    double field = 0.0;
                    for (const auto& w : waves)
                        field += w.amp * std::cos(2.0 * std::numbers::pi * w.freq *
                                                      (w.dir[0] * p[0] + w.dir[1] * p[1] + w.dir[2] * p[2]) +
                                                  w.phase);
                    value *= std::exp(spec.bias_field_strength * field);
                }
                if (spec.noise_sigma > 0.0)
                    value += noise(rng);
                v.data(x, yy, z) = static_cast<float>(value);
            }
    ph.data = {std::move(v), std::move(y)};
    return ph;
}

Dataset generate_phantoms(const PhantomSpec& spec, int count_labeled, int count_unlabeled, int count_test)
{
    spec.validate();
    if (count_labeled < 0 || count_unlabeled < 0 || count_test < 0)
        throw ArgumentError("phantom counts must be >= 0");
    if (count_labeled + count_unlabeled < 1)
        throw ArgumentError("at least one labeled or unlabeled phantom is required");
    Dataset ds;
    ds.phantom_spec = spec;
    std::uint64_t index = 0;
    for (int i = 0; i < count_labeled; ++i)
        ds.labeled.push_back(make_phantom(spec, index++).data);
    for (int i = 0; i < count_unlabeled; ++i)
        ds.unlabeled.push_back(make_phantom(spec, index++).data.image);
    for (int i = 0; i < count_test; ++i)
        ds.test.push_back(make_phantom(spec, index++).data);
    return ds;
}

// ---- manifest ------------------------------------------------------------

void save_dataset(const std::filesystem::path& dir, const Dataset& ds)
{
    ds.check_disjoint();
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "labels", ec);
    if (ec)
        throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["format"] = "rcps-dataset";
    manifest["version"] = 1;
    if (ds.phantom_spec)
        manifest["phantom_spec"] = *ds.phantom_spec;
    auto cases = nlohmann::json::array();
    auto write_case = [&](const Volume& img, const LabelMap* label, const char* split) {
        nlohmann::json entry;
        entry["id"] = img.id;
        entry["split"] = split;
        const auto image_rel = std::filesystem::path("images") / (img.id + ".nii.gz");
        save_nifti(dir / image_rel, img);
        entry["image"] = image_rel.string();
        if (label) {
            const auto label_rel = std::filesystem::path("labels") / (img.id + ".nii.gz");
            save_nifti(dir / label_rel, *label, img);
            entry["label"] = label_rel.string();
        }
        cases.push_back(std::move(entry));
    };
    for (const auto& c : ds.labeled)
        write_case(c.image, &c.label, "labeled");
    for (const auto& v : ds.unlabeled)
        write_case(v, nullptr, "unlabeled");
    for (const auto& c : ds.test)
        write_case(c.image, &c.label, "test");
    manifest["cases"] = std::move(cases);

    std::ofstream out(dir / "manifest.json");
    if (!out)
        throw IoError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in)
        throw IoError("missing dataset manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "rcps-dataset")
        throw FormatError("manifest is not an rcps dataset: " + manifest_path.string());

    Dataset ds;
    if (manifest.contains("phantom_spec"))
        ds.phantom_spec = manifest.at("phantom_spec").get<PhantomSpec>();
    for (const auto& entry : manifest.at("cases")) {
        const auto split = entry.at("split").get<std::string>();
        const auto id = entry.at("id").get<std::string>();
        Volume img = load_nifti(dir / entry.at("image").get<std::string>()).volume;
        img.id = id;
        if (split == "unlabeled") {
            ds.unlabeled.push_back(std::move(img));
            continue;
        }
        if (split != "labeled" && split != "test")
            throw FormatError("unknown split '" + split + "' for case " + id);
        if (!entry.contains("label"))
            throw FormatError("case " + id + " in split " + split + " has no label file");
        LabelMap y = load_label(dir / entry.at("label").get<std::string>());
        if (!(y.shape() == img.shape()))
            throw FormatError("label/image shape mismatch for case " + id);
        if (ds.phantom_spec)
            y.num_classes = std::max(y.num_classes, ds.phantom_spec->num_classes);
        (split == "labeled" ? ds.labeled : ds.test).push_back({std::move(img), std::move(y)});
    }
    ds.check_disjoint();
    return ds;
}

} // namespace rcps
