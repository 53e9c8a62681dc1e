#include "mper/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mper/volume_io.hpp"

namespace mper {

void DatasetSplit::validate() const {
    if (labeled.empty()) throw std::invalid_argument("dataset: labeled set is empty");
    const Dims g = dims();
    const auto c = num_classes();
    std::set<std::string> names;
    auto check = [&](const std::string& name, const Volume& image) {
        if (!names.insert(name).second) throw std::invalid_argument("dataset: case '" + name + "' appears twice");
        if (!(image.dims() == g))
            throw std::invalid_argument("dataset: case '" + name + "' has dims " + to_string(image.dims()) +
                                        ", expected " + to_string(g));
    };
    for (const auto* set : {&labeled, &eval})
        for (const auto& lc : *set) {
            check(lc.name, lc.image);
            if (!(lc.labels.dims() == g) || lc.labels.num_classes() != c)
                throw std::invalid_argument("dataset: labels of '" + lc.name + "' do not match");
        }
    for (const auto& uc : unlabeled) check(uc.name, uc.image);
}

SplitCounts split_counts(std::size_t count, double labeled_fraction, double eval_fraction) {
    SplitCounts s;
    s.labeled = std::max<std::size_t>(1, std::size_t(std::llround(double(count) * labeled_fraction)));
    s.eval = std::size_t(std::llround(double(count) * eval_fraction));
    if (s.labeled + s.eval > count)
        throw std::invalid_argument("dataset: " + std::to_string(count) + " cases cannot hold " +
                                    std::to_string(s.labeled) + " labeled and " + std::to_string(s.eval) + " eval");
    s.unlabeled = count - s.labeled - s.eval;
    return s;
}

std::uint64_t case_seed(std::uint64_t seed, std::size_t index) {
    // splitmix64 finalizer over (seed, index).
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace {

std::string case_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", i);
    return buf;
}

}  // namespace

DatasetSplit make_synthetic_split(const TrainConfig& config, std::size_t count) {
    config.validate();
    const auto counts = split_counts(count, config.labeled_fraction, config.eval_fraction);
    DatasetSplit split;
    for (std::size_t i = 0; i < count; ++i) {
        auto s = generate_synthetic(synthetic_spec(config, case_seed(config.seed, i)));
        const std::string name = case_name(i);
        if (i < counts.labeled)
            split.labeled.push_back({name, std::move(s.image), std::move(s.labels)});
        else if (i < counts.labeled + counts.eval)
            split.eval.push_back({name, std::move(s.image), std::move(s.labels)});
        else
            split.unlabeled.push_back({name, std::move(s.image)});
    }
    return split;
}

void write_dataset(const std::filesystem::path& dir, const TrainConfig& config, std::size_t count) {
    const auto split = make_synthetic_split(config, count);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["seed"] = config.seed;
    manifest["num_classes"] = config.C;
    manifest["dims"] = {config.volume_dims.h, config.volume_dims.w, config.volume_dims.d};
    auto labeled_entry = [&](const LabeledCase& c) {
        const std::string image = c.name + "_image.mper", label = c.name + "_label.mper";
        write_volume(dir / image, c.image);
        write_volume(dir / label, c.labels);
        return nlohmann::ordered_json{{"name", c.name}, {"image", image}, {"label", label}};
    };
    manifest["labeled"] = nlohmann::ordered_json::array();
    manifest["unlabeled"] = nlohmann::ordered_json::array();
    manifest["eval"] = nlohmann::ordered_json::array();
    for (const auto& c : split.labeled) manifest["labeled"].push_back(labeled_entry(c));
    for (const auto& c : split.eval) manifest["eval"].push_back(labeled_entry(c));
    for (const auto& c : split.unlabeled) {
        const std::string image = c.name + "_image.mper";
        write_volume(dir / image, c.image);
        manifest["unlabeled"].push_back({{"name", c.name}, {"image", image}});
    }
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    if (!os) throw std::runtime_error("dataset: cannot write " + (dir / "manifest.json").string());
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("dataset: cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("dataset: malformed manifest: ") + e.what());
    }
    DatasetSplit split;
    try {
        for (const auto& e : manifest.at("labeled"))
            split.labeled.push_back({e.at("name"), read_scalar_volume(dir / e.at("image").get<std::string>()),
                                     read_label_volume(dir / e.at("label").get<std::string>())});
        for (const auto& e : manifest.at("eval"))
            split.eval.push_back({e.at("name"), read_scalar_volume(dir / e.at("image").get<std::string>()),
                                  read_label_volume(dir / e.at("label").get<std::string>())});
        for (const auto& e : manifest.at("unlabeled"))
            split.unlabeled.push_back({e.at("name"), read_scalar_volume(dir / e.at("image").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("dataset: malformed manifest: ") + e.what());
    }
    split.validate();
    return split;
}

}  // namespace mper
