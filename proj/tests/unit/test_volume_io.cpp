#include "unit_test.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <unistd.h>

#include "rcps/volume_io.hpp"
#include "support.hpp"

using namespace rcps;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        static int counter = 0;
        path = fs::temp_directory_path() / ("rcps_vio_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Volume ramp(Shape3 s)
{
    Volume v;
    v.data = Grid<float>(s);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        v.data.values[i] = static_cast<float>(i) * 0.5f - 3.0f;
    v.spacing = {0.8, 1.0, 2.5};
    v.id = "ramp";
    return v;
}

template <typename T>
void put(std::vector<char>& buf, std::size_t off, T v, bool swap)
{
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if (swap)
        std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(buf.data() + off, bytes, sizeof(T));
}

/// Minimal single-file NIfTI-1 written byte by byte, float32 data.
void write_raw_nifti(const fs::path& p, std::vector<std::int16_t> dims, const std::vector<float>& data, bool big_endian)
{
    std::vector<char> buf(352, 0);
    put<std::int32_t>(buf, 0, 348, big_endian);
    for (std::size_t i = 0; i < 8; ++i)
        put<std::int16_t>(buf, 40 + 2 * i, i < dims.size() ? dims[i] : 1, big_endian);
    put<std::int16_t>(buf, 70, 16, big_endian);
    put<std::int16_t>(buf, 72, 32, big_endian);
    for (int i = 0; i < 8; ++i)
        put<float>(buf, 76 + 4 * static_cast<std::size_t>(i), 1.0f, big_endian);
    put<float>(buf, 108, 352.0f, big_endian);
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    std::ofstream out(p, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    for (float f : data) {
        std::vector<char> b(4);
        put<float>(b, 0, f, big_endian);
        out.write(b.data(), 4);
    }
}

} // namespace

TEST_CASE("NIfTI round trip keeps shape, values and spacing")
{
    TempDir dir;
    const auto v = ramp({6, 5, 4});
    save_nifti(dir.path / "v.nii.gz", v);
    save_nifti(dir.path / "v.nii", v);
    for (const char* name : {"v.nii.gz", "v.nii"}) {
        const auto back = load_nifti(dir.path / name);
        CHECK(back.volume.shape() == v.shape());
        CHECK(back.volume.data.values == v.data.values);
        for (int a = 0; a < 3; ++a)
            CHECK(back.volume.spacing[a] == doctest::Approx(v.spacing[a]).epsilon(1e-7));
        CHECK(!back.label);
    }
}

TEST_CASE("label files carry num_classes = max + 1")
{
    TempDir dir;
    const auto ref = ramp({4, 4, 4});
    LabelMap y;
    y.num_classes = 3;
    y.data = Grid<std::int32_t>({4, 4, 4}, 0);
    y.data.values[5] = 1;
    y.data.values[9] = 2;
    save_nifti(dir.path / "y.nii.gz", y, ref);
    const auto img = load_nifti(dir.path / "y.nii.gz");
    REQUIRE(img.label);
    CHECK(img.label->num_classes == 3);
    CHECK(img.label->data.values == y.data.values);
    CHECK(load_label(dir.path / "y.nii.gz").num_classes == 3);
}

TEST_CASE("hand-written and byte-swapped headers are read")
{
    TempDir dir;
    std::vector<float> data(2 * 3 * 4);
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(i);
    for (bool be : {false, true}) {
        const auto p = dir.path / (be ? "be.nii" : "le.nii");
        write_raw_nifti(p, {3, 2, 3, 4}, data, be);
        const auto img = load_nifti(p);
        CHECK(img.volume.shape() == Shape3{2, 3, 4});
        CHECK(img.volume.data.values == data);
    }
}

TEST_CASE("4D volumes are rejected")
{
    TempDir dir;
    write_raw_nifti(dir.path / "4d.nii", {4, 2, 2, 2, 2}, std::vector<float>(16, 1.0f), false);
    CHECK_THROWS_AS(load_nifti(dir.path / "4d.nii"), FormatError);
    CHECK_THROWS_AS(load_nifti(dir.path / "missing.nii"), IoError);
}

TEST_CASE("HU windowing")
{
    Volume v;
    v.data = Grid<float>({3, 1, 1});
    v.data.values = {-500.f, 100.f, 400.f};
    const auto w = window_hu(v, 75, 400);
    CHECK(w.data.values == std::vector<float>{-125.f, 100.f, 275.f});
    CHECK(window_hu(w, 75, 400).data.values == w.data.values);
    v.data.values = {-5.f, 0.f, 5.f};
    CHECK(window_hu(v, 0, 2).data.values == std::vector<float>{-1.f, 0.f, 1.f});
    CHECK_THROWS_AS(window_hu(v, 0, 0), ArgumentError);
}

TEST_CASE("z-score normalization")
{
    Volume v;
    v.data = Grid<float>({3, 1, 1});
    v.data.values = {0.f, 2.f, 4.f};
    const auto n = normalize_zscore(v);
    double mean = 0, var = 0;
    for (float x : n.data.values)
        mean += x / 3.0;
    for (float x : n.data.values)
        var += (x - mean) * (x - mean) / 3.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
    const auto again = normalize_zscore(n);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(again.data.values[i] - n.data.values[i]) < 1e-5);
    v.data.values = {7.f, 7.f, 7.f};
    CHECK_THROWS_AS(normalize_zscore(v), DegenerateInputError);
    CHECK(normalize_zscore(v, {true}).data.values == std::vector<float>{0.f, 0.f, 0.f});
}

TEST_CASE("ROI cropping with margin")
{
    Volume v;
    v.data = Grid<float>({64, 64, 64}, 1.0f);
    LabelMap y;
    y.data = Grid<std::int32_t>({64, 64, 64}, 0);
    y.data(30, 30, 30) = 1;
    auto [cv, cy] = crop_roi_with_margin(v, y, 25);
    CHECK(cv.shape() == Shape3{51, 51, 51});
    CHECK(cy.data(25, 25, 25) == 1);
    const auto tight = crop_roi_with_margin(v, y, 0);
    CHECK(tight.first.shape() == Shape3{1, 1, 1});
    y.data(30, 30, 30) = 0;
    y.data(2, 60, 30) = 1;
    auto [ev, ey] = crop_roi_with_margin(v, y, 25);
    CHECK(ev.shape() == Shape3{28, 29, 51});
    int count = 0;
    for (auto l : ey.data.values)
        count += l;
    CHECK(count == 1);
}

TEST_CASE("patch extraction")
{
    Rng rng(3);
    const auto v64 = ramp({64, 64, 64});
    CHECK(extract_patch(v64, nullptr, {64, 64, 64}, rng).image.data.values == v64.data.values);
    const auto v128 = ramp({128, 128, 128});
    CHECK(extract_patch(v128, nullptr, {96, 96, 96}, rng).image.shape() == Shape3{96, 96, 96});
    const auto v80 = ramp({80, 80, 80});
    const auto p = extract_patch(v80, nullptr, {96, 96, 96}, rng);
    CHECK(p.image.shape() == Shape3{96, 96, 96});
    // Edge replication: values stay within the source range.
    const auto [lo, hi] = std::minmax_element(p.image.data.values.begin(), p.image.data.values.end());
    CHECK(*lo >= v80.data.values.front());
    CHECK(*hi <= v80.data.values.back());
    Rng a(9), b(9);
    CHECK(extract_patch(v128, nullptr, {32, 32, 32}, a).origin == extract_patch(v128, nullptr, {32, 32, 32}, b).origin);
}

TEST_CASE("edge-replicate padding")
{
    Grid<float> g({2, 1, 1});
    g.values = {1.f, 2.f};
    Index3 off{};
    const auto p = pad_to_at_least(g, {5, 1, 1}, &off);
    CHECK(p.values == std::vector<float>{1.f, 1.f, 2.f, 2.f, 2.f});
    CHECK(off == Index3{1, 0, 0});
}

TEST_CASE("resampling to spacing")
{
    auto v = ramp({8, 8, 8});
    v.spacing = {1.0, 1.0, 2.0};
    const auto r = resample_to_spacing(v, {1.0, 1.0, 1.0});
    CHECK(r.shape().nz == 16);
    CHECK(r.spacing == std::array<double, 3>{1.0, 1.0, 1.0});
    LabelMap y;
    y.num_classes = 3;
    y.data = Grid<std::int32_t>({8, 8, 8}, 0);
    y.data(3, 3, 3) = 2;
    const auto ry = resample_to_spacing(y, {1.0, 1.0, 2.0}, {1.0, 1.0, 1.0});
    std::set<int> values(ry.data.values.begin(), ry.data.values.end());
    CHECK(values == std::set<int>{0, 2});
}

TEST_CASE("phantoms are deterministic and consistent with their ellipsoids")
{
    PhantomSpec spec;
    spec.volume_shape = {24, 24, 24};
    const auto a = generate_phantoms(spec, 2, 3, 1);
    const auto b = generate_phantoms(spec, 2, 3, 1);
    CHECK(a.labeled.size() == 2);
    CHECK(a.unlabeled.size() == 3);
    CHECK(a.test.size() == 1);
    CHECK(a.labeled[0].image.data.values == b.labeled[0].image.data.values);
    CHECK(a.unlabeled[2].data.values == b.unlabeled[2].data.values);
    CHECK_NOTHROW(a.check_disjoint());

    const auto ph = make_phantom(spec, 0);
    const auto& y = ph.data.label;
    for (std::int64_t z = 0; z < 24; ++z)
        for (std::int64_t yy = 0; yy < 24; ++yy)
            for (std::int64_t x = 0; x < 24; ++x) {
                const int c = y.data(x, yy, z);
                if (c == 0)
                    continue;
                bool inside = false;
                for (const auto& e : ph.ellipsoids)
                    inside = inside || (e.cls == c && e.contains(static_cast<double>(x), static_cast<double>(yy), static_cast<double>(z)));
                REQUIRE(inside);
            }
}

TEST_CASE("noiseless phantoms equal the class means exactly")
{
    PhantomSpec spec;
    spec.volume_shape = {20, 20, 20};
    spec.noise_sigma = 0.0;
    spec.bias_field_strength = 0.0;
    const auto ph = make_phantom(spec, 1);
    for (std::size_t i = 0; i < ph.data.image.data.size(); ++i)
        REQUIRE(ph.data.image.data.values[i] ==
                static_cast<float>(spec.intensity_means[static_cast<std::size_t>(ph.data.label.data.values[i])]));
}

TEST_CASE("dataset manifest round trip")
{
    TempDir dir;
    PhantomSpec spec;
    spec.volume_shape = {12, 12, 12};
    const auto ds = generate_phantoms(spec, 1, 2, 1);
    save_dataset(dir.path / "d", ds);
    const auto back = load_dataset(dir.path / "d");
    CHECK(back.labeled.size() == 1);
    CHECK(back.unlabeled.size() == 2);
    CHECK(back.test.size() == 1);
    CHECK(back.labeled[0].label.data.values == ds.labeled[0].label.data.values);
    CHECK(back.unlabeled[1].data.values == ds.unlabeled[1].data.values);
    REQUIRE(back.phantom_spec);
    CHECK(back.phantom_spec->volume_shape == spec.volume_shape);
    CHECK_THROWS_AS(load_dataset(dir.path / "nope"), IoError);
}

TEST_CASE("mix_seed separates streams")
{
    CHECK(mix_seed(1, 0) != mix_seed(1, 1));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
    CHECK(mix_seed(5, 7) == mix_seed(5, 7));
}
