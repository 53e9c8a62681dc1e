#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mper/volume.hpp"

namespace mper {

struct BinaryMask {
    Dims dims;
    std::vector<std::uint8_t> inside;

    [[nodiscard]] bool empty() const;
    [[nodiscard]] std::size_t count() const;
};

BinaryMask class_mask(const LabelVolume& labels, std::uint16_t cls);

struct DiceJaccard {
    double dice = 1.0;
    double jaccard = 1.0;
};

/// Both scores are 1 when prediction and ground truth are both empty.
DiceJaccard dice_jaccard(const LabelVolume& pred, const LabelVolume& gt, std::uint16_t cls);
DiceJaccard dice_jaccard(const BinaryMask& pred, const BinaryMask& gt);

/// Mask voxels with at least one of the 6 face neighbours outside the mask;
/// the volume border counts as outside.
std::vector<std::size_t> surface_voxels(const BinaryMask& mask);

/// Squared Euclidean distance (voxel units) from every voxel to the nearest
/// seed voxel; +inf everywhere when there are no seeds.
std::vector<double> squared_distance_transform(const Dims& dims, std::span<const std::uint8_t> seeds);

/// Surface-to-surface distances pooled over both directions, sorted
/// ascending. Empty optional when either mask is empty (metric undefined).
std::optional<std::vector<double>> surface_distances(const BinaryMask& pred, const BinaryMask& gt);

/// Nearest-rank 95th percentile: sorted[ceil(0.95 n) - 1].
double hd95(std::span<const double> sorted_distances);
double asd(std::span<const double> distances);

struct ClassMetrics {
    std::uint16_t cls = 0;
    double dice = 0.0;
    double jaccard = 0.0;
    std::optional<double> hd95;  // absent when undefined
    std::optional<double> asd;
};

struct MetricReport {
    std::vector<ClassMetrics> per_class;  // foreground classes only
    double dice = 0.0;                    // macro averages
    double jaccard = 0.0;
    std::optional<double> hd95;
    std::optional<double> asd;
    std::vector<std::string> warnings;
};

MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt);

/// Mean of the per-case macro scores; undefined distances are skipped and
/// reported in warnings.
MetricReport aggregate_reports(std::span<const MetricReport> cases);

}  // namespace mper
