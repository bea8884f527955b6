#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <zlib.h>

#include "rcps/error.hpp"
#include "rcps_tools/plot.hpp"

namespace rcps::plot {

namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path);
    out << text;
    if (!out)
        throw IoError("cannot write " + path.string());
}

} // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series)
{
    constexpr double W = 720, H = 420, left = 70, right = 170, top = 40, bottom = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i]))
                continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) {
        x0 = 0;
        x1 = 1;
        y0 = 0;
        y1 = 1;
    }
    if (x1 == x0)
        x1 = x0 + 1;
    if (y1 == y0)
        y1 = y0 + 1;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
        svg << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
            << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
        svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
            << "\" stroke=\"#ddd\"/>\n";
    }
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % kPalette.size()];
        svg << "<polyline class=\"series\" data-name=\"" << s.name << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (std::isfinite(s.y[i]))
                svg << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
        svg << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        svg << "<line x1=\"" << W - right + 12 << "\" x2=\"" << W - right + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << W - right + 42 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_log_plots(const std::vector<train::LogRow>& log, const std::filesystem::path& out_dir)
{
    if (log.empty())
        throw IoError("training log has no rows");
    std::vector<double> steps;
    for (const auto& r : log)
        steps.push_back(static_cast<double>(r.step));
    auto column = [&](const std::string& name, auto get) {
        Series s{name, steps, {}};
        for (const auto& r : log)
            s.y.push_back(get(r));
        return s;
    };
    const std::vector<Series> losses{
        column("seg", [](const train::LogRow& r) { return r.report.seg; }),
        column("rp", [](const train::LogRow& r) { return r.report.rectified_pseudo; }),
        column("bc", [](const train::LogRow& r) { return r.report.contrastive; }),
        column("sup_total", [](const train::LogRow& r) { return r.report.total_supervised; }),
        column("unsup_total", [](const train::LogRow& r) { return r.report.total_unsupervised; }),
        column("kl_mean", [](const train::LogRow& r) { return r.report.uncertainty_mean; }),
    };
    const std::vector<Series> schedules{
        column("alpha", [](const train::LogRow& r) { return r.alpha; }),
        column("beta", [](const train::LogRow& r) { return r.beta; }),
    };
    const std::vector<Series> lr{column("lr", [](const train::LogRow& r) { return r.lr; })};
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "loss_curves.svg", line_chart_svg("Training losses", "step", losses));
    write_text(out_dir / "weight_schedule.svg", line_chart_svg("Unsupervised weights", "step", schedules));
    write_text(out_dir / "lr_schedule.svg", line_chart_svg("Learning rate", "step", lr));
}

std::vector<std::uint8_t> encode_png(const Image& img)
{
    if (img.width < 1 || img.height < 1 || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
        throw ArgumentError("image dimensions do not match pixel count");
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * static_cast<std::size_t>(img.width)));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < img.width; ++x) {
            const auto& p = img.pixels[static_cast<std::size_t>(y) * img.width + x];
            raw.insert(raw.end(), {p.r, p.g, p.b});
        }
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("PNG compression failed");
    packed.resize(packed_size);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    auto be32 = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
        v.insert(v.end(), {static_cast<std::uint8_t>(x >> 24), static_cast<std::uint8_t>(x >> 16),
                           static_cast<std::uint8_t>(x >> 8), static_cast<std::uint8_t>(x)});
    };
    auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
        be32(out, static_cast<std::uint32_t>(data.size()));
        std::vector<std::uint8_t> body(type, type + 4);
        body.insert(body.end(), data.begin(), data.end());
        out.insert(out.end(), body.begin(), body.end());
        be32(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
    };
    std::vector<std::uint8_t> ihdr;
    be32(ihdr, static_cast<std::uint32_t>(img.width));
    be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    chunk("IHDR", ihdr);
    chunk("IDAT", packed);
    chunk("IEND", {});
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img)
{
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("cannot write " + path.string());
}

Image overlay_mid_slice(const Volume& image, const LabelMap* gt, const LabelMap* pred, int scale)
{
    if (scale < 1)
        throw ArgumentError("overlay scale must be >= 1");
    const auto& s = image.shape();
    for (const LabelMap* y : {gt, pred})
        if (y && !(y->shape() == s))
            throw ShapeError("label map shape " + y->shape().str() + " differs from image " + s.str());
    const std::int64_t z = s.nz / 2;
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (std::int64_t y = 0; y < s.ny; ++y)
        for (std::int64_t x = 0; x < s.nx; ++x) {
            lo = std::min(lo, image.data(x, y, z));
            hi = std::max(hi, image.data(x, y, z));
        }
    const float range = hi > lo ? hi - lo : 1.0f;

    static constexpr std::array<Rgb, 6> kGt{{{230, 40, 40}, {40, 200, 60}, {50, 110, 240}, {240, 200, 30}, {200, 60, 220}, {30, 210, 210}}};
    std::vector<const LabelMap*> panels;
    for (const LabelMap* y : {gt, pred})
        if (y)
            panels.push_back(y);
    const int panel_count = std::max<int>(1, static_cast<int>(panels.size()));
    const int pw = static_cast<int>(s.nx) * scale, ph = static_cast<int>(s.ny) * scale;
    Image img;
    img.width = pw * panel_count + 4 * (panel_count - 1);
    img.height = ph;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, Rgb{255, 255, 255});
    for (int p = 0; p < panel_count; ++p) {
        const LabelMap* lab = p < static_cast<int>(panels.size()) ? panels[static_cast<std::size_t>(p)] : nullptr;
        const int ox = p * (pw + 4);
        for (std::int64_t y = 0; y < s.ny; ++y)
            for (std::int64_t x = 0; x < s.nx; ++x) {
                const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (image.data(x, y, z) - lo) / range));
                Rgb c{g, g, g};
                if (lab) {
                    const int cls = lab->data(x, y, z);
                    auto same = [&](std::int64_t xx, std::int64_t yy) {
                        return xx < 0 || yy < 0 || xx >= s.nx || yy >= s.ny || lab->data(xx, yy, z) == cls;
                    };
                    if (cls > 0 && !(same(x - 1, y) && same(x + 1, y) && same(x, y - 1) && same(x, y + 1)))
                        c = kGt[static_cast<std::size_t>(cls - 1) % kGt.size()];
                }
                // Image rows run top to bottom, so flip y to show anterior up.
                for (int dy = 0; dy < scale; ++dy)
                    for (int dx = 0; dx < scale; ++dx) {
                        const int row = static_cast<int>(s.ny - 1 - y) * scale + dy;
                        img.pixels[static_cast<std::size_t>(row) * img.width + ox + static_cast<int>(x) * scale + dx] = c;
                    }
            }
    }
    return img;
}

} // namespace rcps::plot
