#include "mper/encoder.hpp"

#include <bit>
#include <cstring>

namespace mper {

std::uint64_t checksum(const Model& model) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, p] : model.parameters())
        for (float v : p->data()) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int s = 0; s < 32; s += 8) {
                h ^= (bits >> s) & 0xffu;
                h *= 1099511628211ull;
            }
        }
    return h;
}

std::vector<NamedTensor> to_named_tensors(const Model& model) {
    std::vector<NamedTensor> out;
    for (const auto& [name, p] : model.parameters()) out.push_back({name, *p});
    return out;
}

Model model_from_tensors(const std::vector<NamedTensor>& tensors) {
    const Tensor& linear = find_tensor(tensors, "linear.weights");
    if (linear.rank() != 2) throw CheckpointError("linear.weights must be rank 2");
    Model model = Model::zeros(linear.dim(0), linear.dim(1));
    for (auto& [name, p] : model.parameters()) {
        const Tensor& t = find_tensor(tensors, name);
        if (t.shape() != p->shape())
            throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                                  ", expected " + shape_string(p->shape()));
        *p = t;
    }
    return model;
}

}  // namespace mper
