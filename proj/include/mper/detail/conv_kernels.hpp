#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mper/volume.hpp"

// Double-precision 3x3x3 convolution kernels shared by every scalar type.
namespace mper::detail {

inline constexpr std::size_t kRowBlock = 16;

/// Zero-haloed copy of a channel stack. Rows are widened to a multiple of
/// kRowBlock plus the two halo cells so the kernels run without bounds checks.
struct PaddedGrid {
    Dims dims;
    std::size_t channels = 0;
    std::size_t row = 0;    // padded row length (x)
    std::size_t plane = 0;  // row * (w + 2)
    std::size_t stride = 0; // plane * (d + 2)
    std::vector<double> data;

    PaddedGrid(std::size_t channels, Dims dims);

    template <typename T>
    void load(std::size_t c, std::span<const T> grid) {
        double* base = data.data() + c * stride;
        for (std::size_t z = 0; z < dims.d; ++z)
            for (std::size_t y = 0; y < dims.w; ++y) {
                double* dst = base + (z + 1) * plane + (y + 1) * row + 1;
                const T* src = grid.data() + dims.index(0, y, z);
                for (std::size_t x = 0; x < dims.h; ++x) dst[x] = double(src[x]);
            }
    }
};

/// out[co][voxel] = bias[co] + sum_ci sum_tap w[co][ci][tap] * in[ci][voxel + offset(tap)].
/// Taps are ordered (kz, ky, kx) with kx fastest; out is unpadded, x fastest.
void conv3d_core(const PaddedGrid& in, std::span<const double> weights,
                 std::span<const double> bias, std::size_t cout, std::span<double> out);

/// grad_w[co][ci][tap] = sum_voxel grad_out[co][voxel] * in[ci][voxel + offset(tap)].
void conv3d_weight_grad(const PaddedGrid& in, std::span<const double> grad_out,
                        std::size_t cout, std::span<double> grad_w);

}  // namespace mper::detail
