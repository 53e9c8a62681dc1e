#include "mper/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mper {

const char* to_string(UpdateSource s) {
    switch (s) {
        case UpdateSource::both: return "both";
        case UpdateSource::labeled: return "labeled";
        case UpdateSource::unlabeled: return "unlabeled";
        case UpdateSource::none: return "none";
    }
    return "?";
}

namespace {

const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::box: return "box";
        case ShapeKind::two_lobe: return "two_lobe";
    }
    return "?";
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto res = std::from_chars(v.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end)
        throw ConfigError("config: key '" + key + "' has invalid value '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true or false, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <typename T, typename Field>
Setter number(Field field) {
    return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"C", number<std::size_t>(&TrainConfig::C)},
        {"K", number<std::size_t>(&TrainConfig::K)},
        {"d", number<std::size_t>(&TrainConfig::d)},
        {"eta", number<double>(&TrainConfig::eta)},
        {"alpha", number<double>(&TrainConfig::alpha)},
        {"tau1", number<double>(&TrainConfig::tau1)},
        {"tau2", number<double>(&TrainConfig::tau2)},
        {"gamma", number<double>(&TrainConfig::gamma)},
        {"ema_decay", number<double>(&TrainConfig::ema_decay)},
        {"lr", number<double>(&TrainConfig::lr)},
        {"batch_size", number<std::size_t>(&TrainConfig::batch_size)},
        {"pretrain_iters", number<std::size_t>(&TrainConfig::pretrain_iters)},
        {"selftrain_iters", number<std::size_t>(&TrainConfig::selftrain_iters)},
        {"ramp_length", number<std::size_t>(&TrainConfig::ramp_length)},
        {"paste_ratio", number<double>(&TrainConfig::paste_ratio)},
        {"seed", number<std::uint64_t>(&TrainConfig::seed)},
        {"labeled_fraction", number<double>(&TrainConfig::labeled_fraction)},
        {"eval_interval", number<std::size_t>(&TrainConfig::eval_interval)},
        {"use_proto_loss",
         [](TrainConfig& c, const std::string& k, const std::string& v) { c.use_proto_loss = parse_bool(k, v); }},
        {"use_contrastive",
         [](TrainConfig& c, const std::string& k, const std::string& v) { c.use_contrastive = parse_bool(k, v); }},
        {"update_source",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             for (auto s : {UpdateSource::both, UpdateSource::labeled, UpdateSource::unlabeled, UpdateSource::none})
                 if (v == to_string(s)) {
                     c.update_source = s;
                     return;
                 }
             throw ConfigError("config: key '" + k + "' expects both, labeled, unlabeled or none");
         }},
        {"kmeans_batch", number<std::size_t>(&TrainConfig::kmeans_batch)},
        {"kmeans_iters", number<std::size_t>(&TrainConfig::kmeans_iters)},
        {"max_voxels", number<std::size_t>(&TrainConfig::max_voxels)},
        {"volume_dims",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             const auto parts = split_list(v);
             if (parts.size() != 3) throw ConfigError("config: key '" + k + "' expects h,w,d");
             c.volume_dims = {parse_number<std::size_t>(k, parts[0]), parse_number<std::size_t>(k, parts[1]),
                              parse_number<std::size_t>(k, parts[2])};
         }},
        {"noise_stddev", number<double>(&TrainConfig::noise_stddev)},
        {"shapes",
         [](TrainConfig& c, const std::string& k, const std::string& v) {
             c.shapes.clear();
             for (const auto& name : split_list(v)) {
                 bool found = false;
                 for (auto s : {ShapeKind::sphere, ShapeKind::box, ShapeKind::two_lobe})
                     if (name == shape_name(s)) {
                         c.shapes.push_back(s);
                         found = true;
                     }
                 if (!found) throw ConfigError("config: key '" + k + "' has unknown shape '" + name + "'");
             }
         }},
        {"eval_fraction", number<double>(&TrainConfig::eval_fraction)},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& required_config_keys() {
    static const std::vector<std::string> keys = {
        "C",   "K",  "d",          "eta",            "alpha",           "tau1",        "tau2",        "gamma", "ema_decay",
        "lr", "batch_size", "pretrain_iters", "selftrain_iters", "ramp_length", "paste_ratio", "seed",  "labeled_fraction"};
    return keys;
}

void TrainConfig::validate() const {
    require(C >= 2, "C must be at least 2");
    require(K >= 1, "K must be at least 1");
    require(d >= 1, "d must be at least 1");
    require(eta >= 0.0 && eta < 1.0, "eta must lie in [0, 1)");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    require(tau1 > 0.0, "tau1 must be > 0");
    require(tau2 > 0.0, "tau2 must be > 0");
    require(gamma >= 0.0, "gamma must be >= 0");
    require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must lie in [0, 1)");
    require(lr > 0.0, "lr must be > 0");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(ramp_length >= 1, "ramp_length must be at least 1");
    require(paste_ratio > 0.0 && paste_ratio <= 1.0, "paste_ratio must lie in (0, 1]");
    require(labeled_fraction > 0.0 && labeled_fraction <= 1.0, "labeled_fraction must lie in (0, 1]");
    require(eval_interval >= 1, "eval_interval must be at least 1");
    require(kmeans_batch >= 1 && kmeans_iters >= 1, "kmeans_batch and kmeans_iters must be positive");
    require(volume_dims.voxels() > 0, "volume_dims must be positive");
    require(volume_dims.voxels() <= max_voxels, "volume_dims exceed max_voxels");
    require(noise_stddev >= 0.0, "noise_stddev must be >= 0");
    require(shapes.size() + 1 == C, "shapes needs one entry per foreground class");
    require(eval_fraction >= 0.0 && eval_fraction < 1.0, "eval_fraction must lie in [0, 1)");
}

TrainConfig parse_config(std::istream& in, const std::string& source) {
    TrainConfig config;
    config.shapes.assign(1, ShapeKind::two_lobe);
    std::set<std::string> seen;
    bool shapes_given = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError(where + ": unknown config key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate config key '" + key + "'");
        if (value.empty()) throw ConfigError(where + ": config key '" + key + "' has no value");
        it->second(config, key, value);
        shapes_given |= key == "shapes";
    }
    for (const auto& key : required_config_keys())
        if (!seen.count(key)) throw ConfigError(source + ": missing config key '" + key + "'");
    if (!shapes_given) config.shapes.assign(config.C - 1, ShapeKind::two_lobe);
    config.validate();
    return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse_config(in, path.string());
}

std::string format_config(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "C = " << c.C << "\nK = " << c.K << "\nd = " << c.d << "\neta = " << c.eta << "\nalpha = " << c.alpha
       << "\ntau1 = " << c.tau1 << "\ntau2 = " << c.tau2 << "\ngamma = " << c.gamma << "\nema_decay = " << c.ema_decay
       << "\nlr = " << c.lr << "\nbatch_size = " << c.batch_size << "\npretrain_iters = " << c.pretrain_iters
       << "\nselftrain_iters = " << c.selftrain_iters << "\nramp_length = " << c.ramp_length
       << "\npaste_ratio = " << c.paste_ratio << "\nseed = " << c.seed << "\nlabeled_fraction = " << c.labeled_fraction
       << "\neval_interval = " << c.eval_interval << "\nuse_proto_loss = " << (c.use_proto_loss ? "true" : "false")
       << "\nuse_contrastive = " << (c.use_contrastive ? "true" : "false")
       << "\nupdate_source = " << to_string(c.update_source) << "\nkmeans_batch = " << c.kmeans_batch
       << "\nkmeans_iters = " << c.kmeans_iters << "\nmax_voxels = " << c.max_voxels << "\nvolume_dims = "
       << c.volume_dims.h << "," << c.volume_dims.w << "," << c.volume_dims.d << "\nnoise_stddev = " << c.noise_stddev
       << "\nshapes = ";
    for (std::size_t i = 0; i < c.shapes.size(); ++i) os << (i ? "," : "") << shape_name(c.shapes[i]);
    os << "\neval_fraction = " << c.eval_fraction << "\n";
    return os.str();
}

SyntheticSpec synthetic_spec(const TrainConfig& config, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.dims = config.volume_dims;
    spec.num_classes = static_cast<std::uint16_t>(config.C);
    spec.shapes = config.shapes;
    spec.means.clear();
    for (std::size_t c = 0; c < config.C; ++c) spec.means.push_back(float(c));
    spec.rel_stddev.assign(config.C, 1.0f);
    spec.noise_stddev = float(config.noise_stddev);
    spec.seed = seed;
    return spec;
}

}  // namespace mper
