#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mper/encoder.hpp"
#include "mper/volume.hpp"

namespace mper {

/// Which voxels of a mixed volume may feed the prototype update.
enum class UpdateSource { both, labeled, unlabeled, none };

const char* to_string(UpdateSource s);

/// Field names double as config keys.
struct TrainConfig {
    std::size_t C = 2;                // classes including background
    std::size_t K = 3;                // prototypes per class
    std::size_t d = 16;               // embedding dimension
    double eta = 0.999;               // prototype momentum
    double alpha = 0.9;               // pseudo-label confidence threshold
    double tau1 = 0.1;                // prototype classifier temperature
    double tau2 = 0.1;                // contrastive temperature
    double gamma = 0.02;              // contrastive weight
    double ema_decay = 0.99;
    double lr = 0.01;
    std::size_t batch_size = 2;       // mixed volumes per iteration
    std::size_t pretrain_iters = 300;
    std::size_t selftrain_iters = 1000;
    std::size_t ramp_length = 600;    // T
    double paste_ratio = 0.66;
    std::uint64_t seed = 0;
    double labeled_fraction = 0.1;

    // Optional keys.
    std::size_t eval_interval = 100;
    bool use_proto_loss = true;
    bool use_contrastive = true;
    UpdateSource update_source = UpdateSource::both;
    std::size_t kmeans_batch = 256;
    std::size_t kmeans_iters = 10;
    std::size_t max_voxels = kDefaultMaxVoxels;
    // Synthetic data generation.
    Dims volume_dims{32, 32, 16};
    double noise_stddev = 0.3;
    std::vector<ShapeKind> shapes{ShapeKind::two_lobe};
    double eval_fraction = 0.1;

    /// Throws ConfigError on the first out-of-range field.
    void validate() const;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Required keys: every field from C through labeled_fraction.
const std::vector<std::string>& required_config_keys();

/// `key = value` per line, `#` starts a comment. Unknown, duplicate or missing
/// required keys are errors naming the key.
TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
TrainConfig load_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& config);

SyntheticSpec synthetic_spec(const TrainConfig& config, std::uint64_t seed);

}  // namespace mper
