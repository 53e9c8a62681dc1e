#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mper {

// Grid extents. x runs along h, y along w, z along d; x is the fastest axis
// in memory and on disk: index = x + h * (y + w * z).
struct Dims {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t d = 0;

    [[nodiscard]] std::size_t voxels() const { return h * w * d; }
    [[nodiscard]] std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + h * (y + w * z);
    }
    [[nodiscard]] std::array<std::size_t, 3> coords(std::size_t i) const {
        return {i % h, (i / h) % w, i / (h * w)};
    }
    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Dense scalar field over an h x w x d grid.
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, std::vector<float> data);
    explicit Volume(Dims dims, float fill = 0.0f);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] std::span<const float> data() const { return data_; }
    [[nodiscard]] float at(std::size_t x, std::size_t y, std::size_t z) const {
        return data_[dims_.index(x, y, z)];
    }
    [[nodiscard]] float operator[](std::size_t i) const { return data_[i]; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Dims dims_;
    std::vector<float> data_;
};

/// Integer class field; every label is below num_classes.
class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Dims dims, std::vector<std::uint16_t> labels, std::uint16_t num_classes);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] std::span<const std::uint16_t> labels() const { return labels_; }
    [[nodiscard]] std::uint16_t num_classes() const { return num_classes_; }
    [[nodiscard]] std::uint16_t at(std::size_t x, std::size_t y, std::size_t z) const {
        return labels_[dims_.index(x, y, z)];
    }
    [[nodiscard]] std::uint16_t operator[](std::size_t i) const { return labels_[i]; }

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

private:
    Dims dims_;
    std::vector<std::uint16_t> labels_;
    std::uint16_t num_classes_ = 0;
};

struct PasteRegion {
    std::array<std::size_t, 3> origin{};  // (x, y, z)
    std::array<std::size_t, 3> extent{};  // (h, w, dpt)

    [[nodiscard]] bool contains(std::size_t x, std::size_t y, std::size_t z) const {
        return x >= origin[0] && x < origin[0] + extent[0] &&
               y >= origin[1] && y < origin[1] + extent[1] &&
               z >= origin[2] && z < origin[2] + extent[2];
    }
    [[nodiscard]] bool fits(const Dims& dims) const {
        return origin[0] + extent[0] <= dims.h && origin[1] + extent[1] <= dims.w &&
               origin[2] + extent[2] <= dims.d;
    }
    [[nodiscard]] std::size_t voxels() const { return extent[0] * extent[1] * extent[2]; }
    friend bool operator==(const PasteRegion&, const PasteRegion&) = default;
};

enum class ShapeKind { sphere, box, two_lobe };

/// A rasterizable foreground shape in continuous voxel coordinates. A voxel
/// (x, y, z) is inside when its integer center satisfies the shape predicate.
struct Blob {
    ShapeKind kind = ShapeKind::sphere;
    std::array<double, 3> center{};
    // sphere: radius[0]; box: half extents; two_lobe: radius[0] per lobe.
    std::array<double, 3> radius{};
    // two_lobe: lobe centers are center +- offset.
    std::array<double, 3> offset{};

    [[nodiscard]] bool contains(double x, double y, double z) const;
};

struct SyntheticSpec {
    Dims dims{32, 32, 16};
    std::uint16_t num_classes = 2;
    std::vector<ShapeKind> shapes{ShapeKind::two_lobe};  // one per foreground class
    std::vector<float> means{0.0f, 1.0f};                // one per class
    // Per-class noise multiplier; voxel noise stddev is noise_stddev * rel_stddev[c].
    std::vector<float> rel_stddev{1.0f, 1.0f};
    float noise_stddev = 0.3f;
    std::uint64_t seed = 0;
    // When non-empty, these shapes are rasterized as given instead of sampled.
    std::vector<Blob> fixed_shapes;

    void validate() const;
};

struct SyntheticCase {
    Volume image;
    LabelVolume labels;
    std::vector<Blob> shapes;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Later foreground classes paint over earlier ones. Each foreground class must
/// cover between 1% and 60% of the grid; failing draws are retried with
/// jittered parameters, and the call throws GenerationError after 10 attempts.
SyntheticCase generate_synthetic(const SyntheticSpec& spec);

struct Mixed {
    Volume image;
    LabelVolume labels;
};

/// Voxels inside `region` come from src, the rest from dst.
Mixed copy_paste_mix(const Volume& src, const LabelVolume& src_lab, const Volume& dst,
                     const LabelVolume& dst_lab, const PasteRegion& region);
Volume copy_paste_mix(const Volume& src, const Volume& dst, const PasteRegion& region);
LabelVolume copy_paste_mix(const LabelVolume& src, const LabelVolume& dst,
                           const PasteRegion& region);

/// extent = round(ratio * dims) per axis, origin uniform over valid placements.
PasteRegion sample_paste_region(const Dims& dims, double ratio, std::mt19937_64& rng);

Volume flip_axis(const Volume& v, int axis);
LabelVolume flip_axis(const LabelVolume& v, int axis);

}  // namespace mper
