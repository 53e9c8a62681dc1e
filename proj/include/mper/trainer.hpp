#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mper/config.hpp"
#include "mper/dataset.hpp"
#include "mper/encoder.hpp"
#include "mper/losses.hpp"
#include "mper/metrics.hpp"
#include "mper/prototype_bank.hpp"

namespace mper {

/// A training stage hit a NaN/Inf; the message names the stage and iteration.
class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A per-iteration invariant failed (weights changed through the wrong
/// channel, or image and label mixing disagreed).
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

using LogFn = std::function<void(const std::string&)>;

Model init_model(const TrainConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
    Model model;
    std::optional<PrototypeBank> bank;
};

/// Model tensors plus, when present, the bank as tensor "prototypes" (C, K, d).
void save_checkpoint(const std::filesystem::path& path, const Model& model, const PrototypeBank* bank = nullptr);
/// eta is not stored on disk; the caller supplies it for the bank.
Checkpoint load_checkpoint(const std::filesystem::path& path, double eta = 0.999);

// ---------------------------------------------------------------- inference

struct PseudoLabels {
    LabelVolume labels;
    ProbField<float> probs;
};

/// Argmax of the linear head, lowest class on ties.
PseudoLabels make_pseudo_labels(const Model& teacher, const Volume& x, std::size_t max_voxels = kDefaultMaxVoxels);
LabelVolume predict(const Model& model, const Volume& x, std::size_t max_voxels = kDefaultMaxVoxels);

MetricReport evaluate(const Model& model, const std::vector<LabeledCase>& cases,
                      std::size_t max_voxels = kDefaultMaxVoxels);

// ---------------------------------------------------------------- mixing

enum class MixDirection { unlabeled_onto_labeled, labeled_onto_unlabeled };

/// Even iterations paste unlabeled onto labeled, odd ones the reverse.
MixDirection mix_direction(std::size_t iteration);

LabelVolume make_mixed_label(const LabelVolume& y_l, const LabelVolume& y_u_hat, const PasteRegion& region,
                             MixDirection direction);

struct MixedPair {
    Volume image;
    LabelVolume labels;
    // 1 where the voxel came from the labeled volume.
    std::vector<std::uint8_t> from_labeled;
};

/// Mixes image and label with one region and direction, then re-verifies
/// voxel by voxel that both came from the same source. Throws
/// InvariantViolation otherwise.
MixedPair mix_pair(const Volume& x_l, const LabelVolume& y_l, const Volume& x_u, const LabelVolume& y_u_hat,
                   const PasteRegion& region, MixDirection direction);

// ---------------------------------------------------------------- pretraining

struct MetricRow {
    std::size_t iter = 0;
    std::string split;
    MetricReport report;
};

struct PretrainResult {
    Model model;
    std::vector<double> losses;  // per iteration, batch mean of CE + Dice
    std::vector<MetricRow> history;  // eval split, every eval_interval iterations
};

/// Supervised CE + Dice on copy-paste mixes of two distinct labeled volumes.
PretrainResult pretrain(const DatasetSplit& split, const TrainConfig& config, const LogFn& log = {});
/// Same, continuing from `init` with the caller's generator.
PretrainResult pretrain(const DatasetSplit& split, const TrainConfig& config, Model init, std::mt19937_64& rng,
                        const LogFn& log = {});

// ---------------------------------------------------------------- self-training

/// k-means over the model's embeddings of every labeled voxel, per class.
PrototypeBank init_bank(const Model& model, const std::vector<LabeledCase>& labeled, const TrainConfig& config,
                        std::uint64_t seed);

struct LossRow {
    std::size_t iter = 0;
    LossBreakdown parts;
};

struct SelfTrainResult {
    Model student;
    Model teacher;
    PrototypeBank initial_bank;
    PrototypeBank bank;
    std::vector<LossRow> losses;
    std::vector<MetricRow> history;
    std::size_t mix_checks = 0;            // mixed pairs verified
    std::size_t invariant_checks = 0;      // iterations whose checksums were verified
    std::size_t skipped_bank_updates = 0;  // iterations with an empty filtered set
};

/// Optional observers; all may be empty.
struct SelfTrainHooks {
    LogFn log;
    // Called after each iteration with (iteration, student, teacher, bank).
    std::function<void(std::size_t, const Model&, const Model&, const PrototypeBank&)> on_iteration;
};

SelfTrainResult self_train(const DatasetSplit& split, const Model& pretrained, const TrainConfig& config,
                           const SelfTrainHooks& hooks = {});
/// Variant that takes an existing bank and generator (used to share one
/// initialization between runs).
SelfTrainResult self_train(const DatasetSplit& split, const Model& pretrained, PrototypeBank bank,
                           const TrainConfig& config, std::mt19937_64& rng, const SelfTrainHooks& hooks = {});

// ---------------------------------------------------------------- CSV output

void write_loss_csv(std::ostream& os, std::uint64_t seed, const std::vector<LossRow>& rows);
void write_metrics_csv(std::ostream& os, std::uint64_t seed, const std::vector<MetricRow>& rows);

}  // namespace mper
