#include "mper/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mper {

std::string to_string(const Dims& dims) {
    std::ostringstream os;
    os << dims.h << "x" << dims.w << "x" << dims.d;
    return os.str();
}

Volume::Volume(Dims dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
    if (dims_.voxels() == 0) throw std::invalid_argument("Volume: dims must be positive");
    if (data_.size() != dims_.voxels())
        throw std::invalid_argument("Volume: data length " + std::to_string(data_.size()) +
                                    " does not match dims " + to_string(dims_));
    for (float v : data_)
        if (!std::isfinite(v)) throw std::invalid_argument("Volume: non-finite value");
}

Volume::Volume(Dims dims, float fill) : Volume(dims, std::vector<float>(dims.voxels(), fill)) {}

LabelVolume::LabelVolume(Dims dims, std::vector<std::uint16_t> labels, std::uint16_t num_classes)
    : dims_(dims), labels_(std::move(labels)), num_classes_(num_classes) {
    if (dims_.voxels() == 0) throw std::invalid_argument("LabelVolume: dims must be positive");
    if (num_classes_ < 2) throw std::invalid_argument("LabelVolume: num_classes must be >= 2");
    if (labels_.size() != dims_.voxels())
        throw std::invalid_argument("LabelVolume: label count does not match dims " +
                                    to_string(dims_));
    for (auto l : labels_)
        if (l >= num_classes_)
            throw std::invalid_argument("LabelVolume: label " + std::to_string(l) +
                                        " out of range for " + std::to_string(num_classes_) +
                                        " classes");
}

bool Blob::contains(double x, double y, double z) const {
    auto sq = [](double v) { return v * v; };
    switch (kind) {
        case ShapeKind::sphere:
            return sq(x - center[0]) + sq(y - center[1]) + sq(z - center[2]) <= sq(radius[0]);
        case ShapeKind::box:
            return std::abs(x - center[0]) <= radius[0] && std::abs(y - center[1]) <= radius[1] &&
                   std::abs(z - center[2]) <= radius[2];
        case ShapeKind::two_lobe: {
            const double r2 = sq(radius[0]);
            const double a = sq(x - center[0] - offset[0]) + sq(y - center[1] - offset[1]) +
                             sq(z - center[2] - offset[2]);
            const double b = sq(x - center[0] + offset[0]) + sq(y - center[1] + offset[1]) +
                             sq(z - center[2] + offset[2]);
            return a <= r2 || b <= r2;
        }
    }
    return false;
}

void SyntheticSpec::validate() const {
    if (dims.voxels() == 0) throw std::invalid_argument("SyntheticSpec: empty dims");
    if (num_classes < 2) throw std::invalid_argument("SyntheticSpec: need at least 2 classes");
    if (means.size() != num_classes || rel_stddev.size() != num_classes)
        throw std::invalid_argument("SyntheticSpec: means/rel_stddev need one entry per class");
    if (fixed_shapes.empty() && shapes.size() + 1 != num_classes)
        throw std::invalid_argument("SyntheticSpec: need one shape kind per foreground class");
    if (!fixed_shapes.empty() && fixed_shapes.size() + 1 != num_classes)
        throw std::invalid_argument("SyntheticSpec: need one fixed shape per foreground class");
    if (!(noise_stddev >= 0.0f)) throw std::invalid_argument("SyntheticSpec: noise stddev < 0");
    for (float s : rel_stddev)
        if (!(s >= 0.0f)) throw std::invalid_argument("SyntheticSpec: rel_stddev < 0");
    for (std::size_t i = 0; i < means.size(); ++i)
        for (std::size_t j = i + 1; j < means.size(); ++j)
            if (means[i] == means[j])
                throw std::invalid_argument("SyntheticSpec: class means must be distinct");
}

namespace {

Blob sample_blob(ShapeKind kind, const Dims& dims, double jitter, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double ext[3] = {double(dims.h), double(dims.w), double(dims.d)};
    const double min_ext = std::min({ext[0], ext[1], ext[2]});
    Blob s;
    s.kind = kind;
    for (int a = 0; a < 3; ++a) s.center[a] = ext[a] * (0.35 + 0.3 * unit(rng));
    switch (kind) {
        case ShapeKind::sphere:
            s.radius[0] = min_ext * (0.22 + 0.12 * unit(rng)) * jitter;
            break;
        case ShapeKind::box:
            for (int a = 0; a < 3; ++a) s.radius[a] = ext[a] * (0.1 + 0.1 * unit(rng)) * jitter;
            break;
        case ShapeKind::two_lobe: {
            s.radius[0] = min_ext * (0.18 + 0.1 * unit(rng)) * jitter;
            // Lobes separate mostly in the x-y plane.
            const double angle = 2.0 * 3.14159265358979323846 * unit(rng);
            const double sep = s.radius[0] * (0.6 + 0.5 * unit(rng));
            s.offset = {sep * std::cos(angle), sep * std::sin(angle), 0.0};
            break;
        }
    }
    return s;
}

}  // namespace

SyntheticCase generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const Dims dims = spec.dims;
    const std::size_t n = dims.voxels();
    const std::size_t foreground = spec.num_classes - 1u;

    std::vector<std::uint16_t> labels;
    std::vector<Blob> shapes;
    bool ok = false;
    double jitter = 1.0;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        shapes.clear();
        for (std::size_t c = 0; c < foreground; ++c)
            shapes.push_back(spec.fixed_shapes.empty()
                                 ? sample_blob(spec.shapes[c], dims, jitter, rng)
                                 : spec.fixed_shapes[c]);
        labels.assign(n, 0);
        for (std::size_t z = 0; z < dims.d; ++z)
            for (std::size_t y = 0; y < dims.w; ++y)
                for (std::size_t x = 0; x < dims.h; ++x)
                    for (std::size_t c = 0; c < foreground; ++c)
                        if (shapes[c].contains(double(x), double(y), double(z)))
                            labels[dims.index(x, y, z)] = static_cast<std::uint16_t>(c + 1);
        std::vector<std::size_t> counts(spec.num_classes, 0);
        for (auto l : labels) ++counts[l];
        ok = true;
        for (std::size_t c = 1; c < spec.num_classes; ++c) {
            const double frac = double(counts[c]) / double(n);
            if (frac < 0.01 || frac > 0.60) ok = false;
        }
        if (!ok) {
            if (!spec.fixed_shapes.empty()) break;
            std::uniform_real_distribution<double> j(0.7, 1.3);
            jitter = j(rng);
        }
    }
    if (!ok)
        throw GenerationError("generate_synthetic: no valid geometry after 10 attempts (seed " +
                              std::to_string(spec.seed) + ")");

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = labels[i];
        const double sd = double(spec.noise_stddev) * double(spec.rel_stddev[c]);
        // Drawing unconditionally keeps the random stream independent of sd.
        const double g = gauss(rng);
        data[i] = sd > 0.0 ? static_cast<float>(double(spec.means[c]) + sd * g) : spec.means[c];
    }
    return {Volume(dims, std::move(data)), LabelVolume(dims, std::move(labels), spec.num_classes),
            std::move(shapes)};
}

namespace {

void check_mix_args(const Dims& src, const Dims& dst, const PasteRegion& region) {
    if (!(src == dst))
        throw std::invalid_argument("copy_paste_mix: dims differ (" + to_string(src) + " vs " +
                                    to_string(dst) + ")");
    if (!region.fits(dst)) throw std::invalid_argument("copy_paste_mix: region out of bounds");
}

template <typename T>
std::vector<T> mix_values(std::span<const T> src, std::span<const T> dst, const Dims& dims,
                          const PasteRegion& region) {
    std::vector<T> out(dst.begin(), dst.end());
    for (std::size_t z = region.origin[2]; z < region.origin[2] + region.extent[2]; ++z)
        for (std::size_t y = region.origin[1]; y < region.origin[1] + region.extent[1]; ++y) {
            const std::size_t row = dims.index(region.origin[0], y, z);
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(row), region.extent[0],
                        out.begin() + static_cast<std::ptrdiff_t>(row));
        }
    return out;
}

}  // namespace

Volume copy_paste_mix(const Volume& src, const Volume& dst, const PasteRegion& region) {
    check_mix_args(src.dims(), dst.dims(), region);
    return Volume(dst.dims(), mix_values(src.data(), dst.data(), dst.dims(), region));
}

LabelVolume copy_paste_mix(const LabelVolume& src, const LabelVolume& dst,
                           const PasteRegion& region) {
    check_mix_args(src.dims(), dst.dims(), region);
    if (src.num_classes() != dst.num_classes())
        throw std::invalid_argument("copy_paste_mix: class counts differ");
    return LabelVolume(dst.dims(), mix_values(src.labels(), dst.labels(), dst.dims(), region),
                       dst.num_classes());
}

Mixed copy_paste_mix(const Volume& src, const LabelVolume& src_lab, const Volume& dst,
                     const LabelVolume& dst_lab, const PasteRegion& region) {
    if (!(src.dims() == src_lab.dims()) || !(dst.dims() == dst_lab.dims()))
        throw std::invalid_argument("copy_paste_mix: image/label dims differ");
    return {copy_paste_mix(src, dst, region), copy_paste_mix(src_lab, dst_lab, region)};
}

PasteRegion sample_paste_region(const Dims& dims, double ratio, std::mt19937_64& rng) {
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw std::invalid_argument("sample_paste_region: ratio must be in (0, 1]");
    const std::size_t ext[3] = {dims.h, dims.w, dims.d};
    PasteRegion r;
    for (int a = 0; a < 3; ++a) {
        r.extent[a] = std::min(ext[a], static_cast<std::size_t>(std::lround(ratio * double(ext[a]))));
        std::uniform_int_distribution<std::size_t> pick(0, ext[a] - r.extent[a]);
        r.origin[a] = pick(rng);
    }
    return r;
}

namespace {

template <typename T>
std::vector<T> flip_values(std::span<const T> in, const Dims& dims, int axis) {
    if (axis < 0 || axis > 2) throw std::invalid_argument("flip_axis: axis must be 0, 1 or 2");
    std::vector<T> out(in.size());
    for (std::size_t z = 0; z < dims.d; ++z)
        for (std::size_t y = 0; y < dims.w; ++y)
            for (std::size_t x = 0; x < dims.h; ++x) {
                std::size_t sx = x, sy = y, sz = z;
                if (axis == 0) sx = dims.h - 1 - x;
                if (axis == 1) sy = dims.w - 1 - y;
                if (axis == 2) sz = dims.d - 1 - z;
                out[dims.index(x, y, z)] = in[dims.index(sx, sy, sz)];
            }
    return out;
}

}  // namespace

Volume flip_axis(const Volume& v, int axis) {
    return Volume(v.dims(), flip_values(v.data(), v.dims(), axis));
}

LabelVolume flip_axis(const LabelVolume& v, int axis) {
    return LabelVolume(v.dims(), flip_values(v.labels(), v.dims(), axis), v.num_classes());
}

}  // namespace mper
