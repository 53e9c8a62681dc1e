#include "mper/volume_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

namespace mper {

const char* to_string(VolumeIoErrc code) {
    switch (code) {
        case VolumeIoErrc::open_failed: return "open failed";
        case VolumeIoErrc::write_failed: return "write failed";
        case VolumeIoErrc::bad_magic: return "bad magic";
        case VolumeIoErrc::unsupported_version: return "unsupported version";
        case VolumeIoErrc::bad_kind: return "bad payload kind";
        case VolumeIoErrc::truncated_payload: return "truncated payload";
        case VolumeIoErrc::trailing_data: return "trailing data";
        case VolumeIoErrc::dim_overflow: return "dim overflow";
        case VolumeIoErrc::invalid_label: return "invalid label";
        case VolumeIoErrc::wrong_kind: return "wrong volume kind";
    }
    return "unknown";
}

VolumeIoError::VolumeIoError(VolumeIoErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

namespace {

constexpr std::array<char, 4> kMagic{'M', 'P', 'E', 'R'};
constexpr std::size_t kHeaderSize = 4 + 2 + 1 + 2 + 12;
// Refuse anything above 2^31 voxels.
constexpr std::uint64_t kMaxVoxels = std::uint64_t(1) << 31;

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

std::uint16_t get_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

void write_header(ByteWriter& w, std::uint8_t kind, std::uint16_t num_classes, const Dims& dims) {
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kVolumeFormatVersion);
    w.u8(kind);
    w.u16(num_classes);
    for (std::size_t e : {dims.h, dims.w, dims.d}) {
        if (e > std::numeric_limits<std::uint32_t>::max())
            throw VolumeIoError(VolumeIoErrc::dim_overflow, "extent exceeds u32");
        w.u32(static_cast<std::uint32_t>(e));
    }
}

void flush(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw VolumeIoError(VolumeIoErrc::open_failed, path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw VolumeIoError(VolumeIoErrc::write_failed, path.string());
}

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v) {
    ByteWriter w;
    write_header(w, 0, 0, v.dims());
    for (float x : v.data()) w.f32(x);
    flush(path, w.bytes());
}

void write_volume(const std::filesystem::path& path, const LabelVolume& v) {
    ByteWriter w;
    write_header(w, 1, v.num_classes(), v.dims());
    for (auto l : v.labels()) w.u16(l);
    flush(path, w.bytes());
}

AnyVolume read_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolumeIoError(VolumeIoErrc::open_failed, path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                          std::istreambuf_iterator<char>()};
    const std::string where = path.string();
    if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin(),
                                        [](char a, std::uint8_t b) { return std::uint8_t(a) == b; }))
        throw VolumeIoError(VolumeIoErrc::bad_magic, where);
    if (bytes.size() < kHeaderSize)
        throw VolumeIoError(VolumeIoErrc::truncated_payload, where + " (short header)");
    const std::uint8_t* p = bytes.data() + 4;
    const auto version = get_u16(p);
    if (version != kVolumeFormatVersion)
        throw VolumeIoError(VolumeIoErrc::unsupported_version, where);
    const std::uint8_t kind = p[2];
    const std::uint16_t num_classes = get_u16(p + 3);
    const Dims dims{get_u32(p + 5), get_u32(p + 9), get_u32(p + 13)};
    if (kind > 1) throw VolumeIoError(VolumeIoErrc::bad_kind, where);

    const std::uint64_t voxels = std::uint64_t(dims.h) * dims.w * dims.d;
    if (voxels == 0 || voxels > kMaxVoxels)
        throw VolumeIoError(VolumeIoErrc::dim_overflow, where + " declares " + to_string(dims));
    const std::uint64_t scalar_size = kind == 0 ? 4 : 2;
    const std::uint64_t payload = bytes.size() - kHeaderSize;
    if (payload < voxels * scalar_size)
        throw VolumeIoError(VolumeIoErrc::truncated_payload,
                            where + ": " + std::to_string(payload / scalar_size) + " of " +
                                std::to_string(voxels) + " values present");
    if (payload > voxels * scalar_size) throw VolumeIoError(VolumeIoErrc::trailing_data, where);

    const std::uint8_t* body = bytes.data() + kHeaderSize;
    if (kind == 0) {
        std::vector<float> data(voxels);
        for (std::size_t i = 0; i < data.size(); ++i)
            data[i] = std::bit_cast<float>(get_u32(body + 4 * i));
        return Volume(dims, std::move(data));
    }
    std::vector<std::uint16_t> labels(voxels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = get_u16(body + 2 * i);
        if (labels[i] >= num_classes)
            throw VolumeIoError(VolumeIoErrc::invalid_label, where);
    }
    if (num_classes < 2) throw VolumeIoError(VolumeIoErrc::invalid_label, where + " (num_classes < 2)");
    return LabelVolume(dims, std::move(labels), num_classes);
}

Volume read_scalar_volume(const std::filesystem::path& path) {
    auto v = read_volume(path);
    if (auto* s = std::get_if<Volume>(&v)) return std::move(*s);
    throw VolumeIoError(VolumeIoErrc::wrong_kind, path.string() + " holds labels");
}

LabelVolume read_label_volume(const std::filesystem::path& path) {
    auto v = read_volume(path);
    if (auto* s = std::get_if<LabelVolume>(&v)) return std::move(*s);
    throw VolumeIoError(VolumeIoErrc::wrong_kind, path.string() + " holds scalars");
}

}  // namespace mper
