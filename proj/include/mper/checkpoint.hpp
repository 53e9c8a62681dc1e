#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mper/tensor.hpp"

namespace mper {

// Weight file layout (little-endian): "MPWT" | version u16 | count u32 |
// per tensor: name_len u16 | UTF-8 name | rank u8 | dims u32 x rank | f32 payload.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError when `name` is absent.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace mper
