#include "mper/detail/conv_kernels.hpp"

#include <algorithm>
#include <cstring>

namespace mper::detail {

PaddedGrid::PaddedGrid(std::size_t c, Dims d)
    : dims(d),
      channels(c),
      row((d.h + kRowBlock - 1) / kRowBlock * kRowBlock + 2),
      plane(row * (d.w + 2)),
      stride(plane * (d.d + 2)),
      data(c * stride, 0.0) {}

namespace {

constexpr std::size_t kTaps = 27;

// Eight doubles; the row block is two of these.
using v8d = double __attribute__((vector_size(64)));
static_assert(kRowBlock == 16);

inline v8d load8(const double* p) {
    v8d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

// Accumulates CB output channels over one padded row chunk of kRowBlock voxels,
// keeping the accumulators in registers across the whole (ci, tap) reduction.
template <std::size_t CB>
void forward_block(const PaddedGrid& in, const double* weights, std::size_t co0,
                   std::span<const double> bias, std::span<double> out) {
    const Dims& dims = in.dims;
    const std::size_t cin = in.channels;
    const std::size_t n = dims.voxels();
    std::size_t offsets[kTaps];
    for (std::size_t t = 0; t < kTaps; ++t)
        offsets[t] = (t / 9) * in.plane + ((t / 3) % 3) * in.row + (t % 3);

    for (std::size_t z = 0; z < dims.d; ++z)
        for (std::size_t y = 0; y < dims.w; ++y)
            for (std::size_t x0 = 0; x0 < dims.h; x0 += kRowBlock) {
                v8d acc[CB][2];
                for (std::size_t b = 0; b < CB; ++b) {
                    const double init = bias.empty() ? 0.0 : bias[co0 + b];
                    acc[b][0] = v8d{} + init;
                    acc[b][1] = v8d{} + init;
                }
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* base = in.data.data() + ci * in.stride + z * in.plane + y * in.row + x0;
                    const double* wci = weights + (co0 * cin + ci) * kTaps;
                    for (std::size_t t = 0; t < kTaps; ++t) {
                        const double* s = base + offsets[t];
                        const v8d s0 = load8(s);
                        const v8d s1 = load8(s + 8);
#pragma GCC unroll 8
                        for (std::size_t b = 0; b < CB; ++b) {
                            const double w = wci[b * cin * kTaps + t];
                            acc[b][0] += w * s0;
                            acc[b][1] += w * s1;
                        }
                    }
                }
                const std::size_t len = std::min(kRowBlock, dims.h - x0);
                const std::size_t dst = dims.index(x0, y, z);
                for (std::size_t b = 0; b < CB; ++b) {
                    double tmp[kRowBlock];
                    store8(tmp, acc[b][0]);
                    store8(tmp + 8, acc[b][1]);
                    std::copy_n(tmp, len, out.data() + (co0 + b) * n + dst);
                }
            }
}

// Weight gradient for CB output channels. The upstream vectors for CB
// channels stay in registers while the three x-taps of one (kz, ky) pair
// sweep over them. Tiled by a few rows so the upstream rows stay in L1;
// partial sums stay vectors until the end.
template <std::size_t CB>
void weight_grad_block(const PaddedGrid& in, const std::vector<double>& rows, std::size_t row_len,
                       std::size_t co0, std::span<double> grad_w) {
    constexpr std::size_t kTileRows = 4;
    const Dims& dims = in.dims;
    const std::size_t cin = in.channels;
    const std::size_t cout = rows.size() / (row_len * dims.w * dims.d);
    std::vector<v8d> partial(CB * cin * kTaps, v8d{});
    for (std::size_t z = 0; z < dims.d; ++z)
        for (std::size_t y0 = 0; y0 < dims.w; y0 += kTileRows) {
            const std::size_t y1 = std::min(dims.w, y0 + kTileRows);
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t zy = 0; zy < 9; ++zy) {
                    const std::size_t off = (zy / 3) * in.plane + (zy % 3) * in.row;
                    v8d acc[3][CB];
                    for (std::size_t kx = 0; kx < 3; ++kx)
                        for (std::size_t b = 0; b < CB; ++b) acc[kx][b] = v8d{};
                    for (std::size_t y = y0; y < y1; ++y) {
                        const double* srow = in.data.data() + ci * in.stride + z * in.plane + y * in.row + off;
                        const double* grow = rows.data() + ((z * dims.w + y) * cout + co0) * row_len;
                        for (std::size_t x0 = 0; x0 < row_len; x0 += 8) {
                            v8d g[CB];
                            for (std::size_t b = 0; b < CB; ++b) g[b] = load8(grow + b * row_len + x0);
#pragma GCC unroll 3
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const v8d sv = load8(srow + x0 + kx);
#pragma GCC unroll 8
                                for (std::size_t b = 0; b < CB; ++b) acc[kx][b] += g[b] * sv;
                            }
                        }
                    }
                    for (std::size_t kx = 0; kx < 3; ++kx)
                        for (std::size_t b = 0; b < CB; ++b) partial[(b * cin + ci) * kTaps + zy * 3 + kx] += acc[kx][b];
                }
        }
    for (std::size_t b = 0; b < CB; ++b)
        for (std::size_t k = 0; k < cin * kTaps; ++k) {
            const v8d v = partial[b * cin * kTaps + k];
            double sum = 0.0;
            for (int x = 0; x < 8; ++x) sum += v[x];
            grad_w[(co0 + b) * cin * kTaps + k] = sum;
        }
}

}  // namespace

void conv3d_core(const PaddedGrid& in, std::span<const double> weights,
                 std::span<const double> bias, std::size_t cout, std::span<double> out) {
    std::size_t co = 0;
    for (; co + 8 <= cout; co += 8) forward_block<8>(in, weights.data(), co, bias, out);
    for (; co + 4 <= cout; co += 4) forward_block<4>(in, weights.data(), co, bias, out);
    for (; co < cout; ++co) forward_block<1>(in, weights.data(), co, bias, out);
}

void conv3d_weight_grad(const PaddedGrid& in, std::span<const double> grad_out, std::size_t cout,
                        std::span<double> grad_w) {
    const Dims& dims = in.dims;
    const std::size_t row_len = in.row - 2;
    // Re-layout grad_out as rows widened to row_len, all channels of one (z, y)
    // row adjacent. The extra cells are zero so shifted input reads past h
    // contribute nothing.
    std::vector<double> rows(cout * row_len * dims.w * dims.d, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t z = 0; z < dims.d; ++z)
            for (std::size_t y = 0; y < dims.w; ++y)
                std::copy_n(grad_out.data() + co * dims.voxels() + dims.index(0, y, z), dims.h,
                            rows.data() + ((z * dims.w + y) * cout + co) * row_len);
    std::size_t co = 0;
    for (; co + 8 <= cout; co += 8) weight_grad_block<8>(in, rows, row_len, co, grad_w);
    for (; co + 4 <= cout; co += 4) weight_grad_block<4>(in, rows, row_len, co, grad_w);
    for (; co < cout; ++co) weight_grad_block<1>(in, rows, row_len, co, grad_w);
}

}  // namespace mper::detail
