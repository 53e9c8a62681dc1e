#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "mper/trainer.hpp"
#include "mper/volume_io.hpp"

using namespace mper;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mper");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    Run r;
    r.code = run_cli(int(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    std::string l;
    while (std::getline(in, l)) out.push_back(l);
    return out;
}

std::size_t fields(const std::string& line) { return std::size_t(std::count(line.begin(), line.end(), ',')) + 1; }

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("mper_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        TrainConfig c;
        c.volume_dims = {16, 16, 8};
        c.d = 8;
        c.pretrain_iters = 6;
        c.selftrain_iters = 4;
        c.ramp_length = 4;
        c.eval_interval = 2;
        c.labeled_fraction = 0.25;
        c.eval_fraction = 0.25;
        std::ofstream(root / "small.cfg") << format_config(c);
    }
    ~Workspace() { fs::remove_all(root); }
    [[nodiscard]] std::string cfg() const { return (root / "small.cfg").string(); }
    [[nodiscard]] std::string path(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"no-such-command"}).code == 1);
    CHECK(cli({"gen-data", "--out-dir", "/tmp/x"}).code == 1);
    CHECK(cli({"selftest", "--bogus"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("gen-data writes the split, a manifest and reproducible bytes") {
    Workspace w;
    const fs::path cfg = fs::path(MPER_SOURCE_DIR) / "configs" / "default.cfg";
    for (const char* dir : {"a", "b"}) {
        const auto r = cli({"gen-data", "--config", cfg.string(), "--out-dir", w.path(dir), "--count", "40",
                            "--labeled-fraction", "0.1"});
        REQUIRE(r.code == 0);
    }
    std::ifstream mf(w.root / "a" / "manifest.json");
    const auto m = nlohmann::json::parse(mf);
    CHECK(m["labeled"].size() == 4);
    CHECK(m["unlabeled"].size() == 32);
    CHECK(m["eval"].size() == 4);
    CHECK(m["seed"] == 0);

    std::set<std::string> listed{"manifest.json"};
    for (const char* part : {"labeled", "unlabeled", "eval"})
        for (const auto& e : m[part]) {
            listed.insert(e["image"].get<std::string>());
            if (e.contains("label")) listed.insert(e["label"].get<std::string>());
        }
    std::set<std::string> present;
    for (const auto& e : fs::directory_iterator(w.root / "a")) {
        present.insert(e.path().filename().string());
        CHECK(slurp(e.path()) == slurp(w.root / "b" / e.path().filename()));
    }
    CHECK(listed == present);
}

TEST_CASE("a missing config key is named and exits nonzero") {
    Workspace w;
    std::ifstream in(w.cfg());
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("tau2", 0) != 0) out << line << '\n';
    std::ofstream(w.path("bad.cfg")) << out.str();
    const auto r = cli({"gen-data", "--config", w.path("bad.cfg"), "--out-dir", w.path("d"), "--count", "4"});
    CHECK(r.code == 1);
    CHECK(r.err.find("tau2") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    CHECK_FALSE(fs::exists(w.path("d")));
}

TEST_CASE("pretrain, train, eval and exports end to end") {
    Workspace w;
    REQUIRE(cli({"gen-data", "--config", w.cfg(), "--out-dir", w.path("data"), "--count", "8"}).code == 0);

    SUBCASE("dry run performs no iterations and writes nothing") {
        CHECK(cli({"pretrain", "--config", w.cfg(), "--data", w.path("data"), "--out", w.path("p"), "--dry-run"}).code == 0);
        CHECK(cli({"train", "--config", w.cfg(), "--data", w.path("data"), "--out", w.path("t"), "--dry-run"}).code == 0);
        CHECK_FALSE(fs::exists(w.path("p")));
        CHECK_FALSE(fs::exists(w.path("t")));
    }

    SUBCASE("full pipeline") {
        REQUIRE(cli({"pretrain", "--config", w.cfg(), "--data", w.path("data"), "--out", w.path("p")}).code == 0);
        const auto pm = lines(w.root / "p" / "pretrain_metrics.csv");
        REQUIRE(pm.size() == 2 + 3);  // seed, header, iterations 2, 4, 6
        CHECK(pm[0] == "# seed=0");
        CHECK(pm[1] == "iter,split,dice,jaccard,hd95,asd");
        CHECK(lines(w.root / "p" / "pretrain_loss.csv").size() == 2 + 6);

        const auto ck = (w.root / "p" / "pretrained.mpwt").string();
        REQUIRE(cli({"train", "--config", w.cfg(), "--data", w.path("data"), "--out", w.path("t"), "--checkpoint", ck}).code == 0);
        const auto tm = lines(w.root / "t" / "metrics.csv");
        CHECK(tm.size() == 2 + 2);  // iterations 2 and 4
        CHECK(tm[2].rfind("2,eval,", 0) == 0);
        CHECK(lines(w.root / "t" / "loss.csv").size() == 2 + 4);
        CHECK(lines(w.root / "t" / "loss.csv")[1] == "iter,lambda,l_lin,l_proto,l_cont,total");

        // Deterministic across runs.
        REQUIRE(cli({"train", "--config", w.cfg(), "--data", w.path("data"), "--out", w.path("t2"), "--checkpoint", ck}).code == 0);
        CHECK(slurp(w.root / "t" / "metrics.csv") == slurp(w.root / "t2" / "metrics.csv"));
        CHECK(slurp(w.root / "t" / "student.mpwt") == slurp(w.root / "t2" / "student.mpwt"));

        const auto student = (w.root / "t" / "student.mpwt").string();
        REQUIRE(cli({"eval", "--checkpoint", student, "--data", w.path("data"), "--out", w.path("eval.csv"),
                     "--config", w.cfg()}).code == 0);
        const auto ev = lines(w.path("eval.csv"));
        REQUIRE(ev.size() == 2 + 2 + 1);  // 2 eval cases x 1 class, macro row
        CHECK(ev[1] == "case,class,dice,jaccard,hd95,asd");
        for (std::size_t i = 1; i < ev.size(); ++i) CHECK(fields(ev[i]) == 6);
        CHECK(ev.back().rfind("macro,mean,", 0) == 0);

        const auto vol = (w.root / "data" / "case_000_image.mper").string();
        REQUIRE(cli({"export-embeddings", "--checkpoint", student, "--volume", vol, "--out", w.path("e1.csv")}).code == 0);
        const auto e1 = lines(w.path("e1.csv"));
        CHECK(e1.size() == 2 + 16 * 16 * 8);
        CHECK(e1[1].rfind("x,y,z,label,dim0,", 0) == 0);
        CHECK(fields(e1[1]) == 4 + 8);
        CHECK(fields(e1[2]) == 4 + 8);
        REQUIRE(cli({"export-embeddings", "--checkpoint", student, "--volume", vol, "--out", w.path("e2.csv"),
                     "--sample", "100", "--labels", (w.root / "data" / "case_000_label.mper").string()}).code == 0);
        REQUIRE(cli({"export-embeddings", "--checkpoint", student, "--volume", vol, "--out", w.path("e3.csv"),
                     "--sample", "100", "--labels", (w.root / "data" / "case_000_label.mper").string()}).code == 0);
        CHECK(lines(w.path("e2.csv")).size() == 2 + 100);
        CHECK(slurp(w.path("e2.csv")) == slurp(w.path("e3.csv")));

        REQUIRE(cli({"export-prototypes", "--checkpoint", student, "--out", w.path("protos.csv")}).code == 0);
        CHECK(lines(w.path("protos.csv")).size() == 1 + 2 * 3);
        CHECK(cli({"export-prototypes", "--checkpoint", ck, "--out", w.path("none.csv")}).code == 2);

        // Checkpoint and config disagree on C.
        TrainConfig three = load_config(w.cfg());
        three.C = 3;
        three.shapes = {ShapeKind::two_lobe, ShapeKind::sphere};
        std::ofstream(w.path("three.cfg")) << format_config(three);
        const auto r = cli({"eval", "--checkpoint", student, "--data", w.path("data"), "--out", w.path("x.csv"),
                            "--config", w.path("three.cfg")});
        CHECK(r.code != 0);
        CHECK(r.err.find("C = 3") != std::string::npos);
        CHECK(cli({"train", "--config", w.path("three.cfg"), "--data", w.path("data"), "--out", w.path("y")}).code != 0);
    }

    SUBCASE("missing inputs are runtime failures") {
        CHECK(cli({"pretrain", "--config", w.cfg(), "--data", w.path("nowhere"), "--out", w.path("p")}).code == 2);
        CHECK(cli({"eval", "--checkpoint", w.path("none.mpwt"), "--data", w.path("data"), "--out", w.path("x.csv")}).code == 2);
    }
}

TEST_CASE("a perfect checkpoint scores above 0.99 on noiseless data") {
    Workspace w;
    TrainConfig c = load_config(w.cfg());
    c.noise_stddev = 0.0;
    c.d = 2;
    std::ofstream(w.path("clean.cfg")) << format_config(c);
    REQUIRE(cli({"gen-data", "--config", w.path("clean.cfg"), "--out-dir", w.path("clean"), "--count", "8"}).code == 0);
    // Intensity passthrough on channel 0, constant 1 on channel 1.
    Model m = Model::zeros(2, 2);
    m.encoder.layers[0].kernel[13] = 1.0f;
    m.encoder.layers[1].kernel[13] = 1.0f;
    m.encoder.layers[2].kernel[13] = 1.0f;
    m.encoder.layers[2].bias[1] = 1.0f;
    m.linear[1] = 0.5f;
    m.linear[2] = 1.0f;
    save_checkpoint(w.path("perfect.mpwt"), m);
    REQUIRE(cli({"eval", "--checkpoint", w.path("perfect.mpwt"), "--data", w.path("clean"), "--out", w.path("e.csv")}).code == 0);
    const auto ev = lines(w.path("e.csv"));
    const auto& macro = ev.back();
    const double dice = std::stod(macro.substr(std::string("macro,mean,").size()));
    CHECK(dice > 0.99);
}

TEST_CASE("selftest passes clean and fails with an injected fault") {
    const auto ok = cli({"selftest"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("conv3d.kernel") != std::string::npos);
    CHECK(ok.out.find("max_error=") != std::string::npos);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    const auto bad = cli({"selftest", "--inject-fault"});
    CHECK(bad.code == 2);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}
