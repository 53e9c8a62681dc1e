#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mper/config.hpp"
#include "mper/volume.hpp"

namespace mper {

struct LabeledCase {
    std::string name;
    Volume image;
    LabelVolume labels;
};

struct UnlabeledCase {
    std::string name;
    Volume image;
};

struct DatasetSplit {
    std::vector<LabeledCase> labeled;
    std::vector<UnlabeledCase> unlabeled;
    std::vector<LabeledCase> eval;

    /// Nonempty labeled set, distinct case names, uniform dims and class count.
    void validate() const;
    [[nodiscard]] Dims dims() const { return labeled.front().image.dims(); }
    [[nodiscard]] std::size_t num_classes() const { return labeled.front().labels.num_classes(); }
};

struct SplitCounts {
    std::size_t labeled = 0;
    std::size_t unlabeled = 0;
    std::size_t eval = 0;
};

/// labeled = round(count * labeled_fraction) (at least 1),
/// eval = round(count * eval_fraction), the rest unlabeled.
SplitCounts split_counts(std::size_t count, double labeled_fraction, double eval_fraction);

/// Seed of case i, derived from the dataset seed.
std::uint64_t case_seed(std::uint64_t seed, std::size_t index);

/// In-memory dataset drawn from the config's synthetic spec.
DatasetSplit make_synthetic_split(const TrainConfig& config, std::size_t count);

/// Writes case_NNN_image.mper (and case_NNN_label.mper for labeled and eval
/// cases) plus manifest.json. Unlabeled cases get no label file.
void write_dataset(const std::filesystem::path& dir, const TrainConfig& config, std::size_t count);
DatasetSplit load_dataset(const std::filesystem::path& dir);

}  // namespace mper
