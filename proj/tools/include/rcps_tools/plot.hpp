#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcps/trainer.hpp"
#include "rcps/volume_io.hpp"

namespace rcps::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Line chart with one polyline per series and a legend.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series);

/// Loss curves (one series per loss column) and alpha/beta/lr schedules.
void write_log_plots(const std::vector<train::LogRow>& log, const std::filesystem::path& out_dir);

struct Rgb {
    std::uint8_t r, g, b;
};

struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;
};

/// Encodes 8-bit RGB as PNG.
std::vector<std::uint8_t> encode_png(const Image& img);
void write_png(const std::filesystem::path& path, const Image& img);

/// Middle axial slice in grey with class contours, one panel per given label map (ground truth, then prediction).
Image overlay_mid_slice(const Volume& image, const LabelMap* gt, const LabelMap* pred, int scale = 4);

} // namespace rcps::plot
