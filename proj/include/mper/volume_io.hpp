#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>

#include "mper/volume.hpp"

namespace mper {

// On-disk layout (all little-endian):
//   "MPER" | version u16 | kind u8 (0 scalar, 1 label) | num_classes u16 |
//   h u32 | w u32 | d u32 | payload (f32 scalars or u16 labels, x fastest)
inline constexpr std::uint16_t kVolumeFormatVersion = 1;

enum class VolumeIoErrc {
    open_failed,
    write_failed,
    bad_magic,
    unsupported_version,
    bad_kind,
    truncated_payload,
    trailing_data,
    dim_overflow,
    invalid_label,
    wrong_kind,
};

const char* to_string(VolumeIoErrc code);

class VolumeIoError : public std::runtime_error {
public:
    VolumeIoError(VolumeIoErrc code, const std::string& detail);
    [[nodiscard]] VolumeIoErrc code() const { return code_; }

private:
    VolumeIoErrc code_;
};

using AnyVolume = std::variant<Volume, LabelVolume>;

void write_volume(const std::filesystem::path& path, const Volume& v);
void write_volume(const std::filesystem::path& path, const LabelVolume& v);
AnyVolume read_volume(const std::filesystem::path& path);
Volume read_scalar_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

}  // namespace mper
