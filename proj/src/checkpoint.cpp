#include "mper/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>

namespace mper {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v));
    out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(std::uint8_t(v >> s));
}

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string where)
        : bytes_(std::move(bytes)), where_(std::move(where)) {}

    const std::uint8_t* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw CheckpointError("truncated checkpoint: " + where_);
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() {
        const auto* p = take(2);
        return std::uint16_t(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
               (std::uint32_t(p[3]) << 24);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::vector<std::uint8_t> bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out{'M', 'P', 'W', 'T'};
    put_u16(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw CheckpointError("tensor name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw CheckpointError("write failed: " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    Reader r({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()}, path.string());
    const auto* magic = r.take(4);
    if (std::string(reinterpret_cast<const char*>(magic), 4) != "MPWT")
        throw CheckpointError("bad magic in " + path.string());
    if (r.u16() != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> tensors;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint16_t len = r.u16();
        const auto* p = r.take(len);
        std::string name(reinterpret_cast<const char*>(p), len);
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        std::uint64_t total = 1;
        for (auto& d : shape) {
            d = r.u32();
            total *= d;
            if (total > (std::uint64_t(1) << 31)) throw CheckpointError("tensor too large: " + name);
        }
        std::vector<float> data(total);
        for (auto& v : data) v = std::bit_cast<float>(r.u32());
        tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    if (!r.done()) throw CheckpointError("trailing bytes in " + path.string());
    return tensors;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return t.tensor;
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

}  // namespace mper
