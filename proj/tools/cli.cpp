#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>

#include "mper/selftest.hpp"
#include "mper/trainer.hpp"
#include "mper/volume_io.hpp"

namespace mper {

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.precision(9);
    return f;
}

void close_out(std::ofstream& f, const fs::path& path) {
    f.close();
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

std::uint64_t manifest_seed(const fs::path& data) {
    std::ifstream f(data / "manifest.json");
    if (!f) return 0;
    const auto j = nlohmann::json::parse(f, nullptr, false);
    return j.is_object() && j.contains("seed") ? j["seed"].get<std::uint64_t>() : 0;
}

void check_split(const DatasetSplit& split, const TrainConfig& config) {
    split.validate();
    if (split.num_classes() != config.C)
        throw ConfigError("dataset has " + std::to_string(split.num_classes()) + " classes but config C = " +
                          std::to_string(config.C));
    if (split.dims().voxels() > config.max_voxels)
        throw ConfigError("volume " + to_string(split.dims()) + " exceeds max_voxels");
    if (split.labeled.size() < 2) throw ConfigError("training needs at least 2 labeled volumes");
}

void check_model(const Model& model, const TrainConfig& config) {
    if (model.num_classes() != config.C || model.embed_dim() != config.d)
        throw ConfigError("checkpoint has C = " + std::to_string(model.num_classes()) + ", d = " +
                          std::to_string(model.embed_dim()) + " but config has C = " + std::to_string(config.C) +
                          ", d = " + std::to_string(config.d));
}

void write_pretrain_outputs(const fs::path& out, const TrainConfig& config, const PretrainResult& r) {
    save_checkpoint(out / "pretrained.mpwt", r.model);
    {
        const auto path = out / "pretrain_loss.csv";
        auto f = open_out(path);
        f << "# seed=" << config.seed << "\niter,loss\n";
        for (std::size_t i = 0; i < r.losses.size(); ++i) f << i << ',' << r.losses[i] << '\n';
        close_out(f, path);
    }
    const auto path = out / "pretrain_metrics.csv";
    auto f = open_out(path);
    write_metrics_csv(f, config.seed, r.history);
    close_out(f, path);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

// ------------------------------------------------------------------ commands

struct Options {
    std::string config, data, out, out_dir, checkpoint, volume, labels;
    std::size_t count = 40;
    std::optional<double> labeled_fraction;
    std::optional<std::size_t> sample;
    std::uint64_t seed = 0;
    bool dry_run = false;
    bool inject_fault = false;
};

int cmd_gen_data(const Options& o) {
    TrainConfig config = load_config(o.config);
    if (o.labeled_fraction) {
        config.labeled_fraction = *o.labeled_fraction;
        config.validate();
    }
    const auto counts = split_counts(o.count, config.labeled_fraction, config.eval_fraction);
    ensure_dir(o.out_dir);
    write_dataset(o.out_dir, config, o.count);
    log("gen-data: seed " + std::to_string(config.seed) + ", " + std::to_string(counts.labeled) + " labeled, " +
        std::to_string(counts.unlabeled) + " unlabeled, " + std::to_string(counts.eval) + " eval cases in " +
        o.out_dir);
    return 0;
}

int cmd_pretrain(const Options& o) {
    const TrainConfig config = load_config(o.config);
    const DatasetSplit split = load_dataset(o.data);
    check_split(split, config);
    if (o.dry_run) {
        log("dry run: config and data valid, 0 iterations performed");
        return 0;
    }
    ensure_dir(o.out);
    log("pretrain: seed " + std::to_string(config.seed));
    const auto r = pretrain(split, config, log);
    write_pretrain_outputs(o.out, config, r);
    return 0;
}

int cmd_train(const Options& o) {
    const TrainConfig config = load_config(o.config);
    const DatasetSplit split = load_dataset(o.data);
    check_split(split, config);
    std::optional<Model> pretrained;
    if (!o.checkpoint.empty()) {
        pretrained = load_checkpoint(o.checkpoint, config.eta).model;
        check_model(*pretrained, config);
    }
    if (split.unlabeled.empty()) throw ConfigError("self-training needs unlabeled volumes");
    if (o.dry_run) {
        log("dry run: config and data valid, 0 iterations performed");
        return 0;
    }
    ensure_dir(o.out);
    log("train: seed " + std::to_string(config.seed));
    if (!pretrained) {
        auto pre = pretrain(split, config, log);
        write_pretrain_outputs(o.out, config, pre);
        pretrained = std::move(pre.model);
    }
    const auto r = self_train(split, *pretrained, config, {log, {}});
    save_checkpoint(o.out / fs::path("student.mpwt"), r.student, &r.bank);
    save_checkpoint(o.out / fs::path("teacher.mpwt"), r.teacher, &r.bank);
    {
        const auto path = o.out / fs::path("loss.csv");
        auto f = open_out(path);
        write_loss_csv(f, config.seed, r.losses);
        close_out(f, path);
    }
    const auto path = o.out / fs::path("metrics.csv");
    auto f = open_out(path);
    write_metrics_csv(f, config.seed, r.history);
    close_out(f, path);
    log("train: " + std::to_string(r.skipped_bank_updates) + " iterations skipped the prototype update");
    return 0;
}

int cmd_eval(const Options& o) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    std::uint64_t seed = manifest_seed(o.data);
    std::size_t max_voxels = kDefaultMaxVoxels;
    if (!o.config.empty()) {
        const TrainConfig config = load_config(o.config);
        check_model(ck.model, config);
        seed = config.seed;
        max_voxels = config.max_voxels;
    }
    const DatasetSplit split = load_dataset(o.data);
    if (split.eval.empty()) throw std::runtime_error("dataset has no eval cases");
    if (split.num_classes() != ck.model.num_classes())
        throw ConfigError("checkpoint predicts " + std::to_string(ck.model.num_classes()) +
                          " classes but the dataset has " + std::to_string(split.num_classes()));
    std::vector<MetricReport> reports;
    const fs::path path = o.out;
    auto f = open_out(path);
    f << "# seed=" << seed << "\ncase,class,dice,jaccard,hd95,asd\n";
    for (const auto& c : split.eval) {
        const auto report = evaluate_case(predict(ck.model, c.image, max_voxels), c.labels);
        for (const auto& pc : report.per_class)
            f << c.name << ',' << pc.cls << ',' << fmt(pc.dice) << ',' << fmt(pc.jaccard) << ',' << fmt(pc.hd95)
              << ',' << fmt(pc.asd) << '\n';
        for (const auto& w : report.warnings) log("eval: " + c.name + ": " + w);
        reports.push_back(report);
    }
    const auto macro = aggregate_reports(reports);
    for (const auto& w : macro.warnings) log("eval: " + w);
    f << "macro,mean," << fmt(macro.dice) << ',' << fmt(macro.jaccard) << ',' << fmt(macro.hd95) << ','
      << fmt(macro.asd) << '\n';
    close_out(f, path);
    log("eval: macro dice " + fmt(macro.dice) + " over " + std::to_string(reports.size()) + " cases");
    return 0;
}

int cmd_export_embeddings(const Options& o) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const Volume x = read_scalar_volume(o.volume);
    std::optional<LabelVolume> truth;
    if (!o.labels.empty()) {
        truth = read_label_volume(o.labels);
        if (!(truth->dims() == x.dims())) throw ConfigError("--labels dims differ from --volume");
    }
    const Dims g = x.dims();
    std::vector<std::size_t> rows(g.voxels());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (o.sample && *o.sample < rows.size()) {
        std::vector<std::size_t> picked;
        std::mt19937_64 rng(o.seed);
        std::sample(rows.begin(), rows.end(), std::back_inserter(picked), *o.sample, rng);
        rows = std::move(picked);
    }
    const auto z = encode(ck.model.encoder, x);
    const auto pred = truth ? *truth : predict(ck.model, x);
    const fs::path path = o.out;
    auto f = open_out(path);
    f << "# seed=" << o.seed << "\nx,y,z,label";
    for (std::size_t j = 0; j < z.dim; ++j) f << ",dim" << j;
    f << '\n';
    for (auto i : rows) {
        const auto c = g.coords(i);
        f << c[0] << ',' << c[1] << ',' << c[2] << ',' << pred[i];
        for (float v : z.at(i)) f << ',' << v;
        f << '\n';
    }
    close_out(f, path);
    log("export-embeddings: " + std::to_string(rows.size()) + " rows");
    return 0;
}

int cmd_export_prototypes(const Options& o) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    if (!ck.bank) throw CheckpointError("checkpoint " + o.checkpoint + " has no prototypes");
    const fs::path path = o.out;
    auto f = open_out(path);
    write_prototypes_csv(f, *ck.bank);
    close_out(f, path);
    return 0;
}

int cmd_selftest(const Options& o) {
    SelfTestOptions opt;
    opt.seed = o.seed;
    opt.inject_gradient_fault = o.inject_fault;
    const auto checks = run_selftest(opt);
    write_selftest_report(std::cout, checks);
    return all_passed(checks) ? 0 : kRuntimeError;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Multi-prototype semi-supervised segmentation on synthetic volumes", "mper"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset with a manifest");
    gen->add_option("--config", o.config, "Config file")->required();
    gen->add_option("--out-dir", o.out_dir, "Output directory")->required();
    gen->add_option("--count", o.count, "Number of volumes")->check(CLI::PositiveNumber);
    gen->add_option("--labeled-fraction", o.labeled_fraction, "Overrides labeled_fraction");

    auto* pre = app.add_subcommand("pretrain", "Supervised pre-training on labeled volumes");
    auto* train = app.add_subcommand("train", "Teacher-student self-training");
    for (auto* sc : {pre, train}) {
        sc->add_option("--config", o.config, "Config file")->required();
        sc->add_option("--data", o.data, "Dataset directory")->required();
        sc->add_option("--out", o.out, "Output directory")->required();
        sc->add_flag("--dry-run", o.dry_run, "Validate config and data only");
    }
    train->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint; pre-trains first when absent");

    auto* ev = app.add_subcommand("eval", "Metrics on the held-out cases");
    ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    ev->add_option("--data", o.data, "Dataset directory")->required();
    ev->add_option("--out", o.out, "Output CSV file")->required();
    ev->add_option("--config", o.config, "Config to check the checkpoint against");

    auto* emb = app.add_subcommand("export-embeddings", "Per-voxel embeddings as CSV");
    emb->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    emb->add_option("--volume", o.volume, "Scalar volume (.mper)")->required();
    emb->add_option("--out", o.out, "Output CSV file")->required();
    emb->add_option("--sample", o.sample, "Random subsample size")->check(CLI::PositiveNumber);
    emb->add_option("--labels", o.labels, "Label volume for the label column; predictions otherwise");
    emb->add_option("--seed", o.seed, "Seed for --sample");

    auto* pro = app.add_subcommand("export-prototypes", "Prototype bank as CSV");
    pro->add_option("--checkpoint", o.checkpoint, "Checkpoint with prototypes")->required();
    pro->add_option("--out", o.out, "Output CSV file")->required();

    auto* st = app.add_subcommand("selftest", "Gradient checks and oracle suites");
    st->add_option("--seed", o.seed, "Base seed");
    st->add_flag("--inject-fault", o.inject_fault, "Scale analytic gradients by 2 (must fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*pre) return cmd_pretrain(o);
        if (*train) return cmd_train(o);
        if (*ev) return cmd_eval(o);
        if (*emb) return cmd_export_embeddings(o);
        if (*pro) return cmd_export_prototypes(o);
        if (*st) return cmd_selftest(o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace mper
