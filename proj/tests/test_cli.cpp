#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "descore/cli.hpp"
#include "descore/train/checkpoint.hpp"
#include "descore/train/config.hpp"
#include "descore/train/metrics.hpp"

using namespace descore;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"descore"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kSmallConfig = R"(
run.seed = 77
run.threads = 2
model.width = 16
model.layers = 1
model.heads = 2
model.context = 64
model.n_free = 16
data.n_train = 20
data.n_eval = 8
data.n_ood = 6
data.prompt_tokens = 2
data.think_len_min = 1
data.think_len_max = 3
stage1.epochs = 1
stage1.batch_size = 4
stage1.eval_every = 5
stage2.steps = 2
stage2.group_size = 4
stage2.rollout_pairs = 2
stage2.minibatch_pairs = 1
stage2.max_rollout_len = 8
stage2.eval_pairs = 8
)";

void write_config(const fs::path& path, const std::string& extra = "",
                  const std::map<std::string, std::string>& replace = {}) {
    std::istringstream in(kSmallConfig);
    std::ostringstream text;
    std::string line;
    while (std::getline(in, line)) {
        bool replaced = false;
        for (const auto& [key, value] : replace) {
            if (line.rfind(key + " ", 0) == 0) {
                text << key << " = " << value << "\n";
                replaced = true;
                break;
            }
        }
        if (!replaced) text << line << "\n";
    }
    std::ofstream out(path);
    out << text.str() << extra;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> stage2_rows_without_wall(const fs::path& metrics) {
    std::vector<std::string> out;
    for (json row : train::load_metrics(metrics)) {
        if (row["stage"] != 2) continue;
        row.erase("wall_ms");
        out.push_back(row.dump());
    }
    return out;
}

}  // namespace

TEST_CASE("gen-data") {
    TempDir tmp("descore_cli_gen");
    write_config(tmp.path / "c.conf");

    SUBCASE("same seed reruns produce identical dataset files") {
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                       (tmp.path / "a").string()}) == 0);
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                       (tmp.path / "b").string()}) == 0);
        for (const char* name : {"train.jsonl", "eval_id.jsonl", "eval_ood.jsonl"}) {
            CHECK(file_bytes(tmp.path / "a" / "data" / name) ==
                  file_bytes(tmp.path / "b" / "data" / name));
        }
        const json manifest = json::parse(file_bytes(tmp.path / "a" / "manifest.json"));
        CHECK(manifest["status"] == "finished");
        CHECK(manifest["subcommand"] == "gen-data");
        CHECK(manifest["config"].contains("run.seed"));
    }

    SUBCASE("missing required seed names the key") {
        std::ofstream out(tmp.path / "noseed.conf");
        out << "model.width = 16\nmodel.heads = 2\nmodel.layers = 1\nmodel.n_free = 16\n"
               "data.n_train = 8\ndata.n_eval = 4\ndata.n_ood = 4\n";
        out.close();
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "noseed.conf").string(), "--out",
                       (tmp.path / "x").string()}) == 2);
        // the seed flag substitutes for the config key
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "noseed.conf").string(), "--seed", "5",
                       "--out", (tmp.path / "y").string()}) == 0);
    }

    SUBCASE("unknown config key names the key") {
        write_config(tmp.path / "bad.conf", "stage1.typo_key = 3\n");
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "bad.conf").string(), "--out",
                       (tmp.path / "x").string()}) == 2);
    }

    SUBCASE("single-pair dataset is valid") {
        write_config(tmp.path / "one.conf", "",
                     {{"data.n_train", "1"}, {"data.n_eval", "1"}, {"data.n_ood", "1"}});
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "one.conf").string(), "--out",
                       (tmp.path / "one").string()}) == 0);
        const synth::Dataset ds = synth::load_dataset(tmp.path / "one" / "data");
        CHECK(ds.eval_id.size() == 1);
    }

    SUBCASE("run directories are never silently reused") {
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                       (tmp.path / "a").string()}) == 0);
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                       (tmp.path / "a").string()}) == 5);
        CHECK(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                       (tmp.path / "a").string(), "--force"}) == 0);
    }
}

TEST_CASE("train and eval pipeline") {
    TempDir tmp("descore_cli_train");
    write_config(tmp.path / "c.conf");
    REQUIRE(run_cli({"gen-data", "--config", (tmp.path / "c.conf").string(), "--out",
                     (tmp.path / "data_run").string()}) == 0);
    write_config(tmp.path / "c.conf",
                 "data.dir = " + (tmp.path / "data_run" / "data").string() + "\n");
    const std::string cfg = (tmp.path / "c.conf").string();

    SUBCASE("stage both equals stage 1 followed by stage 2 resume") {
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "both", "--out",
                         (tmp.path / "both").string()}) == 0);
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "1", "--out",
                         (tmp.path / "s1").string()}) == 0);
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "2", "--resume",
                         (tmp.path / "s1" / "checkpoint_final.bin").string(), "--out",
                         (tmp.path / "s2").string()}) == 0);
        CHECK(stage2_rows_without_wall(tmp.path / "both" / "metrics.jsonl") ==
              stage2_rows_without_wall(tmp.path / "s2" / "metrics.jsonl"));
    }

    SUBCASE("resume under an edited config is a fingerprint error") {
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "1", "--out",
                         (tmp.path / "s1b").string()}) == 0);
        write_config(tmp.path / "edited.conf",
                     "data.dir = " + (tmp.path / "data_run" / "data").string() +
                         "\nstage1.lr = 0.001\n");
        CHECK(run_cli({"train", "--config", (tmp.path / "edited.conf").string(), "--stage", "2",
                       "--resume", (tmp.path / "s1b" / "checkpoint_final.bin").string(), "--out",
                       (tmp.path / "s2b").string()}) == 2);
    }

    SUBCASE("stage 2 from scratch demands the explicit fresh-init flag") {
        CHECK(run_cli({"train", "--config", cfg, "--stage", "2", "--out",
                       (tmp.path / "nofresh").string()}) == 2);
        CHECK(run_cli({"train", "--config", cfg, "--stage", "2", "--fresh-init", "--out",
                       (tmp.path / "fresh").string()}) == 0);
    }

    SUBCASE("eval report matches the in-loop eval at the same step") {
        // eval_every 5 lands on the final step of the 1-epoch/5-step run
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "1", "--out",
                         (tmp.path / "s1c").string()}) == 0);
        const auto rows = train::load_metrics(tmp.path / "s1c" / "metrics.jsonl");
        json last_eval;
        for (const json& row : rows) {
            if (row["kind"] == "eval") last_eval = row;
        }
        REQUIRE(!last_eval.is_null());
        REQUIRE(run_cli({"eval", "--config", cfg, "--resume",
                         (tmp.path / "s1c" / "checkpoint_final.bin").string(), "--split", "id",
                         "--out", (tmp.path / "ev").string()}) == 0);
        const json report = json::parse(file_bytes(tmp.path / "ev" / "eval_report.json"));
        CHECK(std::abs(report["acc_with_tie"].get<double>() -
                       last_eval["acc_with_tie"].get<double>()) < 1e-12);
        CHECK(std::abs(report["acc_without_tie"].get<double>() -
                       last_eval["acc_without_tie"].get<double>()) < 1e-12);
        CHECK(std::abs(report["tau"].get<double>() - last_eval["tau"].get<double>()) < 1e-12);
    }

    SUBCASE("constant scorer evaluates to zero on both metrics") {
        train::Checkpoint ckpt;
        policy::PolicyConfig pc;
        pc.width = 16;
        pc.layers = 1;
        pc.heads = 2;
        pc.context = 64;
        pc.n_free = 16;
        ckpt.state = train::ModelState::init(pc, 1);
        std::fill(ckpt.state.head.w2.data.begin(), ckpt.state.head.w2.data.end(), 0.0);
        ckpt.state.head.b2.data[0] = 0.25;
        ckpt.opt = train::AdamState::init_like(ckpt.state);
        train::save_checkpoint(ckpt, tmp.path / "const.bin");
        REQUIRE(run_cli({"eval", "--config", cfg, "--resume", (tmp.path / "const.bin").string(),
                         "--split", "id", "--out", (tmp.path / "evc").string()}) == 0);
        const json report = json::parse(file_bytes(tmp.path / "evc" / "eval_report.json"));
        CHECK(report["acc_with_tie"].get<double>() == 0.0);
        CHECK(report["acc_without_tie"].get<double>() == 0.0);
    }

    SUBCASE("tau zero makes both accuracies coincide") {
        REQUIRE(run_cli({"train", "--config", cfg, "--stage", "1", "--out",
                         (tmp.path / "s1d").string()}) == 0);
        REQUIRE(run_cli({"eval", "--config", cfg, "--resume",
                         (tmp.path / "s1d" / "checkpoint_final.bin").string(), "--split", "id",
                         "--tau", "0", "--out", (tmp.path / "evt").string()}) == 0);
        const json report = json::parse(file_bytes(tmp.path / "evt" / "eval_report.json"));
        CHECK(report["acc_with_tie"].get<double>() == report["acc_without_tie"].get<double>());
    }

    SUBCASE("missing dataset files are a data error") {
        write_config(tmp.path / "baddir.conf", "data.dir = /nonexistent/place\n");
        CHECK(run_cli({"train", "--config", (tmp.path / "baddir.conf").string(), "--out",
                       (tmp.path / "bd").string()}) == 3);
    }
}

TEST_CASE("ablate help lists the five presets") {
    TempDir tmp("descore_cli_help");
    // --help on the subcommand prints the IsMember choices
    std::ostringstream captured;
    std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
    const int rc = run_cli({"ablate", "--help"});
    std::cout.rdbuf(old);
    CHECK(rc == 0);
    const std::string text = captured.str();
    for (const char* name : {"no-cot", "no-mask", "grpo-only", "no-coldstart", "full"}) {
        CHECK(text.find(name) != std::string::npos);
    }
}

TEST_CASE("theory subcommand") {
    TempDir tmp("descore_cli_theory");
    write_config(tmp.path / "c.conf");
    const std::string cfg = (tmp.path / "c.conf").string();

    SUBCASE("mds exits success with a tiny max norm") {
        CHECK(run_cli({"theory", "--config", cfg, "--experiment", "mds", "--out",
                       (tmp.path / "mds").string()}) == 0);
        const json report = json::parse(file_bytes(tmp.path / "mds" / "mds_report.json"));
        CHECK(report["max_norm"].get<double>() < 1e-8);
        CHECK(report["prefixes"] == 50);
    }

    SUBCASE("curriculum writes a plot and verifies monotonicity") {
        CHECK(run_cli({"theory", "--config", cfg, "--experiment", "curriculum", "--out",
                       (tmp.path / "cur").string()}) == 0);
        std::ifstream in(tmp.path / "cur" / "curriculum.txt");
        int rows = 0;
        std::string line;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 17);
    }

    SUBCASE("variance writes a five-row plot file for the default length list") {
        write_config(tmp.path / "v.conf", "theory.variance_samples = 120\ntheory.step_var_samples = 0\n");
        CHECK(run_cli({"theory", "--config", (tmp.path / "v.conf").string(), "--experiment",
                       "variance", "--out", (tmp.path / "var").string()}) == 0);
        std::ifstream in(tmp.path / "var" / "variance.txt");
        int rows = 0;
        std::string line;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 5);
    }

    SUBCASE("unknown experiment is a usage error") {
        CHECK(run_cli({"theory", "--config", cfg, "--experiment", "bogus", "--out",
                       (tmp.path / "x").string()}) == 2);
    }

    SUBCASE("contrast requires a trained checkpoint") {
        CHECK(run_cli({"theory", "--config", cfg, "--experiment", "contrast", "--out",
                       (tmp.path / "x").string()}) == 2);
    }
}
