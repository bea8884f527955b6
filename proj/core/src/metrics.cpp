#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "rcps/metrics.hpp"

namespace rcps::metrics {

namespace {

void check_pair(const LabelMap& a, const LabelMap& b)
{
    if (!(a.shape() == b.shape()))
        throw ArgumentError("prediction shape " + a.shape().str() + " differs from ground truth " + b.shape().str());
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas for one line: f holds squared distances at positions i*h.
void envelope_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z, std::vector<double>& d)
{
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf)
            continue;
        const double pq = q * h;
        while (k >= 0) {
            const int r = v[static_cast<std::size_t>(k)];
            const double pr = r * h;
            const double s = ((f[static_cast<std::size_t>(q)] + pq * pq) - (f[static_cast<std::size_t>(r)] + pr * pr)) /
                             (2.0 * (pq - pr));
            if (s <= z[static_cast<std::size_t>(k)])
                --k;
            else {
                ++k;
                v[static_cast<std::size_t>(k)] = q;
                z[static_cast<std::size_t>(k)] = s;
                z[static_cast<std::size_t>(k) + 1] = kInf;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
        }
    }
    if (k < 0)
        return; // no sites on this line
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double pq = q * h;
        while (z[static_cast<std::size_t>(j) + 1] < pq)
            ++j;
        const int r = v[static_cast<std::size_t>(j)];
        const double diff = pq - r * h;
        d[static_cast<std::size_t>(q)] = diff * diff + f[static_cast<std::size_t>(r)];
    }
    std::copy(d.begin(), d.begin() + n, f.begin());
}

} // namespace

double dsc(const LabelMap& pred, const LabelMap& gt, int cls)
{
    check_pair(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool in_p = pred.data.values[i] == cls;
        const bool in_g = gt.data.values[i] == cls;
        p += in_p;
        g += in_g;
        both += in_p && in_g;
    }
    if (p == 0 && g == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

Grid<std::uint8_t> class_mask(const LabelMap& y, int cls)
{
    Grid<std::uint8_t> m(y.shape(), 0);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        m.values[i] = y.data.values[i] == cls;
    return m;
}

std::vector<Index3> boundary_voxels(const Grid<std::uint8_t>& mask)
{
    const Shape3& s = mask.shape;
    std::vector<Index3> out;
    auto inside = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return x >= 0 && y >= 0 && z >= 0 && x < s.nx && y < s.ny && z < s.nz && mask(x, y, z);
    };
    for (std::int64_t z = 0; z < s.nz; ++z)
        for (std::int64_t y = 0; y < s.ny; ++y)
            for (std::int64_t x = 0; x < s.nx; ++x) {
                if (!mask(x, y, z))
                    continue;
                if (!inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) || !inside(x, y + 1, z) ||
                    !inside(x, y, z - 1) || !inside(x, y, z + 1))
                    out.push_back({x, y, z});
            }
    return out;
}

Grid<double> distance_to_sites(const Grid<std::uint8_t>& sites, std::array<double, 3> spacing)
{
    const Shape3& s = sites.shape;
    Grid<double> g(s, kInf);
    for (std::size_t i = 0; i < sites.size(); ++i)
        if (sites.values[i])
            g.values[i] = 0.0;
    const auto longest = static_cast<std::size_t>(std::max({s.nx, s.ny, s.nz}));
    std::vector<double> f(longest), d(longest), z(longest + 1);
    std::vector<int> v(longest);
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t n = s[axis];
        const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? s.nx : s.nx * s.ny;
        f.resize(static_cast<std::size_t>(n));
        for (std::size_t base = 0; base < g.size(); ++base) {
            // Visit each line once, from its first element.
            const auto coord = static_cast<std::int64_t>(base) / stride % n;
            if (coord != 0)
                continue;
            for (std::int64_t i = 0; i < n; ++i)
                f[static_cast<std::size_t>(i)] = g.values[base + static_cast<std::size_t>(i * stride)];
            envelope_1d(f, spacing[static_cast<std::size_t>(axis)], v, z, d);
            for (std::int64_t i = 0; i < n; ++i)
                g.values[base + static_cast<std::size_t>(i * stride)] = f[static_cast<std::size_t>(i)];
        }
        f.resize(longest);
    }
    for (auto& x : g.values)
        x = std::sqrt(x);
    return g;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty())
        throw ArgumentError("percentile of an empty set");
    if (!(q >= 0.0 && q <= 100.0))
        throw ArgumentError("percentile rank must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

std::optional<SurfaceDistances> surface_distances(const LabelMap& pred, const LabelMap& gt, int cls,
                                                  std::array<double, 3> spacing)
{
    check_pair(pred, gt);
    const auto mp = class_mask(pred, cls);
    const auto mg = class_mask(gt, cls);
    const auto bp = boundary_voxels(mp);
    const auto bg = boundary_voxels(mg);
    if (bp.empty() || bg.empty())
        return std::nullopt;

    auto sites_of = [&](const std::vector<Index3>& pts) {
        Grid<std::uint8_t> s(pred.shape(), 0);
        for (const auto& p : pts)
            s(p[0], p[1], p[2]) = 1;
        return s;
    };
    const auto dist_to_g = distance_to_sites(sites_of(bg), spacing);
    const auto dist_to_p = distance_to_sites(sites_of(bp), spacing);
    std::vector<double> pooled;
    pooled.reserve(bp.size() + bg.size());
    for (const auto& p : bp)
        pooled.push_back(dist_to_g(p[0], p[1], p[2]));
    for (const auto& p : bg)
        pooled.push_back(dist_to_p(p[0], p[1], p[2]));
    SurfaceDistances out;
    double sum = 0.0;
    for (double d : pooled)
        sum += d;
    out.asd = sum / static_cast<double>(pooled.size());
    out.hd95 = percentile(std::move(pooled), 95.0);
    return out;
}

CaseMetrics evaluate_case(const std::string& id, const LabelMap& pred, const LabelMap& gt, int num_classes,
                          std::array<double, 3> spacing)
{
    CaseMetrics cm;
    cm.id = id;
    for (int c = 1; c < num_classes; ++c) {
        ClassMetrics m;
        m.cls = c;
        m.dsc = dsc(pred, gt, c);
        if (const auto sd = surface_distances(pred, gt, c, spacing)) {
            m.hd95 = sd->hd95;
            m.asd = sd->asd;
        }
        cm.classes.push_back(m);
    }
    return cm;
}

namespace {

Summary summarize_values(const std::vector<std::optional<double>>& values)
{
    Summary s;
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) {
            ++s.excluded;
            continue;
        }
        sum += *v;
        ++s.count;
    }
    if (s.count == 0) {
        s.mean = std::numeric_limits<double>::quiet_NaN();
        s.stddev = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.mean = sum / s.count;
    double var = 0.0;
    for (const auto& v : values)
        if (v)
            var += (*v - s.mean) * (*v - s.mean);
    s.stddev = std::sqrt(var / s.count);
    return s;
}

} // namespace

EvaluationTable summarize(std::vector<CaseMetrics> cases, int num_classes)
{
    EvaluationTable t;
    t.cases = std::move(cases);
    std::vector<std::optional<double>> all_dsc, all_hd, all_asd;
    for (int c = 1; c < num_classes; ++c) {
        std::vector<std::optional<double>> d, h, a;
        for (const auto& cm : t.cases)
            for (const auto& m : cm.classes)
                if (m.cls == c) {
                    d.emplace_back(m.dsc);
                    h.push_back(m.hd95);
                    a.push_back(m.asd);
                }
        t.per_class.push_back({c, summarize_values(d), summarize_values(h), summarize_values(a)});
    }
    // Overall: per-case mean over foreground classes, then mean/std across cases.
    for (const auto& cm : t.cases) {
        double d = 0.0, h = 0.0, a = 0.0;
        int nh = 0;
        for (const auto& m : cm.classes) {
            d += m.dsc;
            if (m.hd95) {
                h += *m.hd95;
                a += *m.asd;
                ++nh;
            }
        }
        const auto n = static_cast<double>(std::max<std::size_t>(1, cm.classes.size()));
        all_dsc.emplace_back(d / n);
        all_hd.push_back(nh ? std::optional<double>(h / nh) : std::nullopt);
        all_asd.push_back(nh ? std::optional<double>(a / nh) : std::nullopt);
    }
    t.overall = {0, summarize_values(all_dsc), summarize_values(all_hd), summarize_values(all_asd)};
    return t;
}

void write_csv(const std::filesystem::path& path, const EvaluationTable& table)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write metrics CSV " + path.string());
    auto num = [](double v) {
        if (std::isnan(v))
            return std::string("nan");
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("nan"); };
    out << "case_id,class,dsc,hd95,asd\n";
    for (const auto& cm : table.cases)
        for (const auto& m : cm.classes)
            out << cm.id << ',' << m.cls << ',' << num(m.dsc) << ',' << opt(m.hd95) << ',' << opt(m.asd) << '\n';
    auto summary_rows = [&](const ClassSummary& s, const std::string& cls) {
        out << "mean," << cls << ',' << num(s.dsc.mean) << ',' << num(s.hd95.mean) << ',' << num(s.asd.mean) << '\n';
        out << "std," << cls << ',' << num(s.dsc.stddev) << ',' << num(s.hd95.stddev) << ',' << num(s.asd.stddev) << '\n';
    };
    for (const auto& s : table.per_class)
        summary_rows(s, std::to_string(s.cls));
    summary_rows(table.overall, "all");
    if (!out)
        throw IoError("write failed: " + path.string());
}

} // namespace rcps::metrics
