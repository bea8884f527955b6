#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

#include "rcps/volume_io.hpp"

namespace rcps {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

constexpr std::int16_t kIntentLabel = 1002;

enum DataType : std::int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUInt16 = 512,
    kUInt32 = 768,
};

int bytes_per_voxel(std::int16_t datatype)
{
    switch (datatype) {
    case kUInt8:
    case kInt8: return 1;
    case kInt16:
    case kUInt16: return 2;
    case kInt32:
    case kUInt32:
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
    }
}

bool is_integer_type(std::int16_t datatype)
{
    return datatype != kFloat32 && datatype != kFloat64;
}

template <typename T>
void swap_in_place(T& v)
{
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
}

template <typename T, std::size_t N>
void swap_array(T (&a)[N])
{
    for (auto& v : a)
        swap_in_place(v);
}

void swap_header(Nifti1Header& h)
{
    swap_in_place(h.sizeof_hdr);
    swap_in_place(h.extents);
    swap_in_place(h.session_error);
    swap_array(h.dim);
    swap_in_place(h.intent_p1);
    swap_in_place(h.intent_p2);
    swap_in_place(h.intent_p3);
    swap_in_place(h.intent_code);
    swap_in_place(h.datatype);
    swap_in_place(h.bitpix);
    swap_in_place(h.slice_start);
    swap_array(h.pixdim);
    swap_in_place(h.vox_offset);
    swap_in_place(h.scl_slope);
    swap_in_place(h.scl_inter);
    swap_in_place(h.slice_end);
    swap_in_place(h.cal_max);
    swap_in_place(h.cal_min);
    swap_in_place(h.slice_duration);
    swap_in_place(h.toffset);
    swap_in_place(h.glmax);
    swap_in_place(h.glmin);
    swap_in_place(h.qform_code);
    swap_in_place(h.sform_code);
    swap_in_place(h.quatern_b);
    swap_in_place(h.quatern_c);
    swap_in_place(h.quatern_d);
    swap_in_place(h.qoffset_x);
    swap_in_place(h.qoffset_y);
    swap_in_place(h.qoffset_z);
    swap_array(h.srow_x);
    swap_array(h.srow_y);
    swap_array(h.srow_z);
}

struct GzFile {
    gzFile handle = nullptr;
    GzFile(const std::filesystem::path& path, const char* mode) : handle(gzopen(path.c_str(), mode)) {}
    ~GzFile()
    {
        if (handle)
            gzclose(handle);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    bool read_exact(void* dst, std::size_t n)
    {
        auto* out = static_cast<char*>(dst);
        while (n > 0) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(handle, out, chunk);
            if (got <= 0)
                return false;
            out += got;
            n -= static_cast<std::size_t>(got);
        }
        return true;
    }
};

template <typename T>
double read_as(const unsigned char* p, bool swap)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap)
        swap_in_place(v);
    return static_cast<double>(v);
}

double decode(const unsigned char* p, std::int16_t datatype, bool swap)
{
    switch (datatype) {
    case kUInt8: return read_as<std::uint8_t>(p, swap);
    case kInt8: return read_as<std::int8_t>(p, swap);
    case kInt16: return read_as<std::int16_t>(p, swap);
    case kUInt16: return read_as<std::uint16_t>(p, swap);
    case kInt32: return read_as<std::int32_t>(p, swap);
    case kUInt32: return read_as<std::uint32_t>(p, swap);
    case kFloat32: return read_as<float>(p, swap);
    case kFloat64: return read_as<double>(p, swap);
    default: return 0.0;
    }
}

Nifti1Header make_header(const Volume& ref, std::int16_t datatype)
{
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int a = 0; a < 3; ++a) {
        const auto n = ref.shape()[a];
        if (n > std::numeric_limits<std::int16_t>::max())
            throw ArgumentError("NIfTI-1 extents are limited to 32767 voxels per axis");
        h.dim[a + 1] = static_cast<std::int16_t>(n);
    }
    for (int a = 4; a < 8; ++a)
        h.dim[a] = 1;
    h.datatype = datatype;
    h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(datatype));
    h.pixdim[0] = ref.geometry.qfac < 0 ? -1.f : 1.f;
    for (int a = 0; a < 3; ++a)
        h.pixdim[a + 1] = static_cast<float>(ref.spacing[static_cast<std::size_t>(a)]);
    for (int a = 4; a < 8; ++a)
        h.pixdim[a] = 1.f;
    h.vox_offset = 352.f;
    h.scl_slope = 1.f;
    h.xyzt_units = 2; // mm
    h.qform_code = ref.geometry.qform_code;
    h.sform_code = ref.geometry.sform_code;
    h.quatern_b = ref.geometry.quatern_b;
    h.quatern_c = ref.geometry.quatern_c;
    h.quatern_d = ref.geometry.quatern_d;
    h.qoffset_x = ref.geometry.qoffset_x;
    h.qoffset_y = ref.geometry.qoffset_y;
    h.qoffset_z = ref.geometry.qoffset_z;
    for (int k = 0; k < 4; ++k) {
        h.srow_x[k] = ref.geometry.srow[0][static_cast<std::size_t>(k)];
        h.srow_y[k] = ref.geometry.srow[1][static_cast<std::size_t>(k)];
        h.srow_z[k] = ref.geometry.srow[2][static_cast<std::size_t>(k)];
    }
    std::memcpy(h.magic, "n+1\0", 4);
    return h;
}

bool ends_with_gz(const std::filesystem::path& p)
{
    const auto s = p.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

void write_file(const std::filesystem::path& path, const Nifti1Header& h, const std::vector<unsigned char>& payload)
{
    const char extension[4] = {0, 0, 0, 0};
    if (ends_with_gz(path)) {
        GzFile f(path, "wb6");
        if (!f.handle)
            throw IoError("cannot open for writing: " + path.string());
        bool ok = gzwrite(f.handle, &h, sizeof(h)) == static_cast<int>(sizeof(h));
        ok = ok && gzwrite(f.handle, extension, 4) == 4;
        std::size_t off = 0;
        while (ok && off < payload.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(payload.size() - off, 1u << 30));
            ok = gzwrite(f.handle, payload.data() + off, chunk) == static_cast<int>(chunk);
            off += chunk;
        }
        if (!ok)
            throw IoError("write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(extension, 4);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out)
        throw IoError("write failed: " + path.string());
}

} // namespace

NiftiImage load_nifti(const std::filesystem::path& path, bool as_label)
{
    if (!std::filesystem::exists(path))
        throw IoError("no such file: " + path.string());
    GzFile f(path, "rb");
    if (!f.handle)
        throw IoError("cannot open: " + path.string());

    Nifti1Header h{};
    if (!f.read_exact(&h, sizeof(h)))
        throw FormatError("truncated NIfTI header: " + path.string());
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348)
            throw FormatError("not a NIfTI-1 file (sizeof_hdr mismatch): " + path.string());
    }
    if (std::memcmp(h.magic, "n+1", 3) != 0 && std::memcmp(h.magic, "ni1", 3) != 0)
        throw FormatError("bad NIfTI-1 magic: " + path.string());
    if (std::memcmp(h.magic, "ni1", 3) == 0)
        throw FormatError("two-file NIfTI (.hdr/.img) is not supported: " + path.string());

    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7)
        throw FormatError("expected a 3D volume, header has " + std::to_string(ndim) + " dimensions: " +
                          path.string());
    for (int a = 4; a <= ndim; ++a)
        if (h.dim[a] > 1)
            throw FormatError("expected a 3D volume, dimension " + std::to_string(a) + " has extent " +
                              std::to_string(h.dim[a]) + ": " + path.string());
    Shape3 shape{h.dim[1], h.dim[2], h.dim[3]};
    if (!shape.valid())
        throw FormatError("non-positive extent in header: " + path.string());
    const int bpv = bytes_per_voxel(h.datatype);
    if (bpv == 0)
        throw FormatError("unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path.string());
    if (h.vox_offset < 348.f)
        throw FormatError("invalid vox_offset: " + path.string());

    const auto skip = static_cast<std::size_t>(h.vox_offset) - sizeof(h);
    std::vector<unsigned char> payload(std::max<std::size_t>(skip, shape.voxels() * static_cast<std::size_t>(bpv)));
    if (skip > 0 && !f.read_exact(payload.data(), skip))
        throw FormatError("truncated NIfTI extension block: " + path.string());
    payload.resize(shape.voxels() * static_cast<std::size_t>(bpv));
    if (!f.read_exact(payload.data(), payload.size()))
        throw FormatError("truncated voxel data: " + path.string());

    NiftiImage out;
    Volume& v = out.volume;
    v.id = path.filename().string();
    for (auto ext : {".gz", ".nii"})
        if (v.id.size() > std::strlen(ext) && v.id.ends_with(ext))
            v.id.resize(v.id.size() - std::strlen(ext));
    for (int a = 0; a < 3; ++a) {
        const double s = std::abs(static_cast<double>(h.pixdim[a + 1]));
        v.spacing[static_cast<std::size_t>(a)] = (s > 0.0 && std::isfinite(s)) ? s : 1.0;
    }
    v.geometry.qform_code = h.qform_code;
    v.geometry.sform_code = h.sform_code;
    v.geometry.quatern_b = h.quatern_b;
    v.geometry.quatern_c = h.quatern_c;
    v.geometry.quatern_d = h.quatern_d;
    v.geometry.qoffset_x = h.qoffset_x;
    v.geometry.qoffset_y = h.qoffset_y;
    v.geometry.qoffset_z = h.qoffset_z;
    v.geometry.qfac = h.pixdim[0] < 0 ? -1.f : 1.f;
    for (int k = 0; k < 4; ++k) {
        v.geometry.srow[0][static_cast<std::size_t>(k)] = h.srow_x[k];
        v.geometry.srow[1][static_cast<std::size_t>(k)] = h.srow_y[k];
        v.geometry.srow[2][static_cast<std::size_t>(k)] = h.srow_z[k];
    }

    const bool scaled = h.scl_slope != 0.f && std::isfinite(h.scl_slope) &&
                        !(h.scl_slope == 1.f && h.scl_inter == 0.f);
    v.data = Grid<float>(shape);
    for (std::size_t i = 0; i < shape.voxels(); ++i) {
        double value = decode(payload.data() + i * static_cast<std::size_t>(bpv), h.datatype, swap);
        if (scaled)
            value = value * h.scl_slope + h.scl_inter;
        v.data.values[i] = static_cast<float>(value);
    }

    if (as_label || h.intent_code == kIntentLabel) {
        LabelMap y;
        y.data = Grid<std::int32_t>(shape);
        std::int32_t max_label = 0;
        for (std::size_t i = 0; i < shape.voxels(); ++i) {
            const float value = v.data.values[i];
            if (!is_integer_type(h.datatype) && value != std::round(value))
                throw FormatError("label file holds non-integer value " + std::to_string(value) + ": " +
                                  path.string());
            if (value < 0.f)
                throw FormatError("label file holds negative value: " + path.string());
            y.data.values[i] = static_cast<std::int32_t>(value);
            max_label = std::max(max_label, y.data.values[i]);
        }
        y.num_classes = std::max(2, max_label + 1);
        out.label = std::move(y);
    }
    return out;
}

LabelMap load_label(const std::filesystem::path& path)
{
    return std::move(*load_nifti(path, true).label);
}

void save_nifti(const std::filesystem::path& path, const Volume& volume)
{
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    const auto h = make_header(volume, kFloat32);
    std::vector<unsigned char> payload(volume.data.size() * sizeof(float));
    std::memcpy(payload.data(), volume.data.values.data(), payload.size());
    write_file(path, h, payload);
}

void save_nifti(const std::filesystem::path& path, const LabelMap& labels, const Volume& reference)
{
    if (!(labels.shape() == reference.shape()))
        throw ArgumentError("label shape " + labels.shape().str() + " differs from reference " +
                            reference.shape().str());
    const bool small = labels.num_classes <= 256;
    auto h = make_header(reference, small ? kUInt8 : kInt16);
    h.intent_code = kIntentLabel;
    std::vector<unsigned char> payload(labels.data.size() * (small ? 1u : 2u));
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const auto value = labels.data.values[i];
        if (small) {
            payload[i] = static_cast<unsigned char>(value);
        } else {
            const auto v16 = static_cast<std::int16_t>(value);
            std::memcpy(payload.data() + 2 * i, &v16, 2);
        }
    }
    write_file(path, h, payload);
}

} // namespace rcps
