#include "descore/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "descore/theory.hpp"
#include "descore/train/config.hpp"
#include "descore/train/trainer.hpp"

namespace descore::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string now_iso() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    return buf;
}

std::string hex64(uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

uint64_t hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IoError("cannot read " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train::fnv1a64(bytes);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out.good()) throw IoError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out.good()) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

/// Run directory bookkeeping: every invocation gets a fresh directory and a
/// manifest written at start and finalized at exit.
class RunContext {
public:
    RunContext(const std::string& subcommand, const fs::path& out_flag, bool force,
               const train::RunConfig& cfg, const fs::path& config_path) {
        const char* env_root = std::getenv("DESCORE_LAB_DIR");
        const fs::path root = env_root && *env_root ? fs::path(env_root) : fs::path("descore-runs");
        if (!out_flag.empty()) {
            dir_ = out_flag;
        } else {
            dir_ = root / (subcommand + "-" + now_iso() + "-" + hex64(cfg.fingerprint() & 0xffff));
        }
        if (fs::exists(dir_) && !fs::is_empty(dir_) && !force) {
            throw IoError("run directory " + dir_.string() +
                          " already exists; pass --force to reuse it");
        }
        fs::create_directories(dir_);

        manifest_["run_id"] = dir_.filename().string();
        manifest_["subcommand"] = subcommand;
        manifest_["status"] = "running";
        manifest_["started_at"] = now_iso();
        manifest_["seed"] = cfg.seed;
        manifest_["config_fingerprint"] = hex64(cfg.fingerprint());
        json cfg_obj = json::object();
        std::istringstream lines(cfg.resolved_text());
        std::string line;
        while (std::getline(lines, line)) {
            const size_t eq = line.find(" = ");
            if (eq != std::string::npos) cfg_obj[line.substr(0, eq)] = line.substr(eq + 3);
        }
        manifest_["config"] = cfg_obj;
        manifest_["input_hashes"] = json::object();
        if (!config_path.empty()) {
            manifest_["input_hashes"]["config_file"] = hex64(hash_file(config_path));
        }
        manifest_["artifacts"] = json::array();
        flush();
    }

    const fs::path& dir() const { return dir_; }

    void add_input_hash(const std::string& name, uint64_t hash) {
        manifest_["input_hashes"][name] = hex64(hash);
        flush();
    }

    void add_artifact(const fs::path& path) {
        manifest_["artifacts"].push_back(fs::relative(path, dir_).string());
    }

    void note(const std::string& key, const json& value) { manifest_[key] = value; }

    void finish(const std::string& status) {
        manifest_["status"] = status;
        manifest_["finished_at"] = now_iso();
        flush();
    }

private:
    void flush() { write_text_atomic(dir_ / "manifest.json", manifest_.dump(2) + "\n"); }

    fs::path dir_;
    json manifest_;
};

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    bool force = false;
    std::optional<uint64_t> seed;
};

train::RunConfig load_run_config(const CommonArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required");
    return train::load_config(args.config_path, true, args.seed);
}

synth::Dataset load_dataset_for(const train::RunConfig& cfg, RunContext& run) {
    if (cfg.data_dir.empty()) {
        throw ConfigError("config: data.dir must point at a gen-data output directory");
    }
    const fs::path dir(cfg.data_dir);
    for (const char* name : {"train.jsonl", "eval_id.jsonl", "eval_ood.jsonl"}) {
        if (!fs::exists(dir / name)) {
            throw DataError("dataset file missing: " + (dir / name).string());
        }
    }
    uint64_t h = 0;
    for (const char* name : {"train.jsonl", "eval_id.jsonl", "eval_ood.jsonl"}) {
        h ^= hash_file(dir / name);
    }
    run.add_input_hash("dataset", h);
    return synth::load_dataset(dir);
}

void save_state(const fs::path& path, const train::TrainResult& r, int stage,
                const train::RunConfig& cfg) {
    train::Checkpoint ckpt;
    ckpt.config_fingerprint = cfg.fingerprint();
    ckpt.stage = stage;
    ckpt.step = r.steps_done;
    ckpt.master_seed = cfg.seed;
    ckpt.state = r.state;
    ckpt.opt = r.opt;
    ckpt.ref_policy = r.ref_policy;
    ckpt.old_policy = r.old_policy;
    train::save_checkpoint(ckpt, path);
}

// ----------------------------------------------------------------- gen-data

int cmd_gen_data(const CommonArgs& args) {
    const train::RunConfig cfg = load_run_config(args);
    RunContext run("gen-data", args.out_dir, args.force, cfg, args.config_path);
    try {
        synth::Dataset ds = synth::generate_dataset(cfg.data, cfg.vocab(), cfg.seed);
        const synth::FilterReport filter = synth::consistency_filter(ds.train, cfg.vocab());
        const fs::path data_dir = run.dir() / "data";
        synth::write_dataset(ds, data_dir);
        for (const char* name : {"train.jsonl", "eval_id.jsonl", "eval_ood.jsonl"}) {
            run.add_artifact(data_dir / name);
        }
        run.note("consistency_filter", {{"input", filter.input},
                                        {"kept", filter.kept},
                                        {"dropped_disagree", filter.dropped_disagree},
                                        {"dropped_unparsable", filter.dropped_unparsable},
                                        {"retention", filter.retention}});
        std::cout << "gen-data: wrote " << ds.train.size() << " train / " << ds.eval_id.size()
                  << " eval / " << ds.eval_ood.size() << " shifted pairs to " << data_dir
                  << " (filter retention " << filter.retention << ")\n";
        run.finish("finished");
        return 0;
    } catch (...) {
        run.finish("failed");
        throw;
    }
}

// -------------------------------------------------------------------- train

int cmd_train(const CommonArgs& args, const std::string& stage_sel, const std::string& resume,
              bool fresh_init) {
    const train::RunConfig cfg = load_run_config(args);
    RunContext run("train", args.out_dir, args.force, cfg, args.config_path);
    try {
        const synth::Dataset data = load_dataset_for(cfg, run);
        train::MetricSink sink(run.dir() / "metrics.jsonl");
        run.add_artifact(run.dir() / "metrics.jsonl");

        std::optional<train::Checkpoint> resumed;
        if (!resume.empty()) {
            resumed = train::load_checkpoint(resume);
            run.add_input_hash("resume_checkpoint", hash_file(resume));
            if (resumed->config_fingerprint != cfg.fingerprint()) {
                throw ConfigError("resume: checkpoint/config fingerprint mismatch");
            }
        }

        const bool want1 = stage_sel == "1" || stage_sel == "both";
        const bool want2 = stage_sel == "2" || stage_sel == "both";
        train::TrainHooks hooks;
        hooks.checkpoint_dir = run.dir();
        hooks.config_fingerprint = cfg.fingerprint();

        std::optional<train::TrainResult> stage1_result;
        if (want1) {
            train::ModelState init = resumed && resumed->stage == 1
                                         ? resumed->state
                                         : train::ModelState::init(cfg.policy_config(), cfg.seed);
            train::AdamState opt =
                resumed && resumed->stage == 1 ? resumed->opt : train::AdamState{};
            const int64_t start = resumed && resumed->stage == 1 ? resumed->step : 0;
            stage1_result =
                train_stage1(std::move(init), std::move(opt), data, train::stage1_from(cfg), sink, start, hooks);
            const fs::path p = run.dir() / "checkpoint_stage1.bin";
            save_state(p, *stage1_result, 1, cfg);
            run.add_artifact(p);
        }

        std::optional<train::TrainResult> stage2_result;
        if (want2) {
            train::Stage2Init init;
            if (stage1_result) {
                init.state = stage1_result->state;
                init.opt = train::AdamState::init_like(init.state);
            } else if (resumed && resumed->stage == 2) {
                init.state = resumed->state;
                init.opt = resumed->opt;
                init.ref_policy = resumed->ref_policy;
                init.old_policy = resumed->old_policy;
                init.start_step = resumed->step;
            } else if (resumed && resumed->stage == 1) {
                init.state = resumed->state;
                init.opt = train::AdamState::init_like(init.state);
            } else if (fresh_init) {
                init.state = train::ModelState::init(cfg.policy_config(), cfg.seed);
            } else {
                throw ConfigError(
                    "train: stage 2 without --resume requires an explicit --fresh-init");
            }
            stage2_result = train_stage2(std::move(init), data, train::stage2_from(cfg), sink, hooks);
        }

        const train::TrainResult& last = stage2_result ? *stage2_result : *stage1_result;
        const fs::path final_path = run.dir() / "checkpoint_final.bin";
        save_state(final_path, last, stage2_result ? 2 : 1, cfg);
        run.add_artifact(final_path);

        for (auto it = sink.rows().rbegin(); it != sink.rows().rend(); ++it) {
            if ((*it)["kind"] == "eval") {
                std::cout << "train: final eval acc_without_tie="
                          << (*it)["acc_without_tie"].get<double>()
                          << " acc_with_tie=" << (*it)["acc_with_tie"].get<double>() << "\n";
                break;
            }
        }
        std::cout << "train: finished at step " << last.steps_done << ", checkpoint "
                  << final_path << "\n";
        run.finish("finished");
        return 0;
    } catch (...) {
        run.finish("failed");
        throw;
    }
}

// --------------------------------------------------------------------- eval

int cmd_eval(const CommonArgs& args, const std::string& resume, const std::string& split,
             const std::optional<double>& tau_flag) {
    const train::RunConfig cfg = load_run_config(args);
    RunContext run("eval", args.out_dir, args.force, cfg, args.config_path);
    try {
        if (resume.empty()) throw ConfigError("eval: --resume CHECKPOINT is required");
        const train::Checkpoint ckpt = train::load_checkpoint(resume);
        run.add_input_hash("resume_checkpoint", hash_file(resume));
        const synth::Dataset data = load_dataset_for(cfg, run);
        const std::vector<synth::PreferencePair>* pairs = nullptr;
        if (split == "train") {
            pairs = &data.train;
        } else if (split == "id") {
            pairs = &data.eval_id;
        } else if (split == "ood") {
            pairs = &data.eval_ood;
        } else {
            throw DataError("eval: missing split " + split);
        }
        if (pairs->empty()) throw DataError("eval: split " + split + " is empty");

        const bool with_cot =
            cfg.s1_eval_with_cot < 0 ? cfg.s1_use_cot : cfg.s1_eval_with_cot != 0;
        const synth::ScoreFn fn = [&](const synth::PreferencePair& p, bool winner) {
            const std::span<const int> cot =
                with_cot ? std::span<const int>(winner ? p.cot_w : p.cot_l) : std::span<const int>{};
            return scoring::score(ckpt.state.policy, ckpt.state.head,
                                  winner ? p.winner.tokens : p.loser.tokens, p.prompt, cot);
        };
        const auto scores = synth::score_pairs(fn, *pairs, cfg.threads);
        double tau;
        if (tau_flag) {
            tau = *tau_flag;
        } else if (cfg.eval_tau > 0.0) {
            tau = cfg.eval_tau;
        } else {
            tau = synth::tau_from_scores(scores, cfg.eval_tau_scale);
        }
        if (tau < 0.0) throw ConfigError("eval: tau must be non-negative");
        const synth::Accuracy acc = synth::accuracy_from_scores(scores, tau);

        const json report = {{"split", split},
                             {"pairs", acc.n},
                             {"tau", tau},
                             {"acc_with_tie", acc.with_tie},
                             {"acc_without_tie", acc.without_tie},
                             {"checkpoint_stage", ckpt.stage},
                             {"checkpoint_step", ckpt.step}};
        write_text_atomic(run.dir() / "eval_report.json", report.dump(2) + "\n");
        run.add_artifact(run.dir() / "eval_report.json");
        std::cout << "eval: split=" << split << " pairs=" << acc.n << " tau=" << tau
                  << " acc_with_tie=" << acc.with_tie << " acc_without_tie=" << acc.without_tie
                  << "\n";
        run.finish("finished");
        return 0;
    } catch (...) {
        run.finish("failed");
        throw;
    }
}

// ------------------------------------------------------------------- ablate

struct PresetOutcome {
    std::string name;
    synth::Accuracy id_acc;
    synth::Accuracy ood_acc;
    double eval_fluctuation = 0.0;  // std of consecutive eval-acc differences
    int stages_run = 0;
};

PresetOutcome run_preset(const std::string& preset, const train::RunConfig& cfg,
                         const synth::Dataset& data, const fs::path& dir) {
    train::RunConfig pc = cfg;
    bool run_stage2 = false;
    bool cold_start = true;
    if (preset == "full") {
        run_stage2 = true;
    } else if (preset == "no-cot") {
        pc.s1_use_cot = false;
    } else if (preset == "no-mask") {
        pc.s1_mask_prob = 0.0;
    } else if (preset == "grpo-only") {
        run_stage2 = true;
        pc.s2_bt_alpha = 0.0;
    } else if (preset == "no-coldstart") {
        run_stage2 = true;
        cold_start = false;
    } else {
        throw ConfigError("ablate: unknown preset " + preset);
    }

    fs::create_directories(dir);
    train::MetricSink sink(dir / "metrics.jsonl");
    PresetOutcome out;
    out.name = preset;

    train::TrainResult result;
    if (cold_start) {
        result = train_stage1(train::ModelState::init(pc.policy_config(), pc.seed), {}, data,
                              train::stage1_from(pc), sink);
        out.stages_run = 1;
    }
    if (run_stage2) {
        train::Stage2Init init;
        init.state = cold_start ? result.state
                                : train::ModelState::init(pc.policy_config(), pc.seed);
        result = train_stage2(std::move(init), data, train::stage2_from(pc), sink);
        out.stages_run += 2;
    }

    const bool with_cot =
        pc.s1_eval_with_cot < 0 ? pc.s1_use_cot : pc.s1_eval_with_cot != 0;
    out.id_acc = train::evaluate_split(result.state, data.eval_id, with_cot, 0, pc.eval_tau_scale,
                                       pc.threads);
    if (!data.eval_ood.empty()) {
        out.ood_acc = train::evaluate_split(result.state, data.eval_ood, with_cot, 0,
                                            pc.eval_tau_scale, pc.threads);
    }
    out.eval_fluctuation = train::trace_fluctuation(sink.rows(), 50);
    return out;
}

int cmd_ablate(const CommonArgs& args, std::vector<std::string> presets) {
    const train::RunConfig cfg = load_run_config(args);
    RunContext run("ablate", args.out_dir, args.force, cfg, args.config_path);
    try {
        const synth::Dataset data = load_dataset_for(cfg, run);
        if (presets.empty()) {
            presets = {"full", "no-cot", "no-mask", "grpo-only", "no-coldstart"};
        }
        json table = json::array();
        std::cout << "preset          id_acc_w/o  id_acc_w/  ood_acc_w/o  ood_acc_w/  eval_fluct\n";
        for (const std::string& preset : presets) {
            const PresetOutcome out = run_preset(preset, cfg, data, run.dir() / preset);
            table.push_back({{"preset", out.name},
                             {"id_acc_without_tie", out.id_acc.without_tie},
                             {"id_acc_with_tie", out.id_acc.with_tie},
                             {"ood_acc_without_tie", out.ood_acc.without_tie},
                             {"ood_acc_with_tie", out.ood_acc.with_tie},
                             {"eval_fluctuation", out.eval_fluctuation},
                             {"stages_run", out.stages_run}});
            char line[160];
            std::snprintf(line, sizeof(line), "%-14s  %10.4f  %9.4f  %11.4f  %10.4f  %10.6f\n",
                          out.name.c_str(), out.id_acc.without_tie, out.id_acc.with_tie,
                          out.ood_acc.without_tie, out.ood_acc.with_tie, out.eval_fluctuation);
            std::cout << line;
        }
        write_text_atomic(run.dir() / "ablation_report.json", table.dump(2) + "\n");
        run.add_artifact(run.dir() / "ablation_report.json");
        run.finish("finished");
        return 0;
    } catch (...) {
        run.finish("failed");
        throw;
    }
}

// ------------------------------------------------------------------- theory

int cmd_theory(const CommonArgs& args, const std::string& experiment, const std::string& resume) {
    const train::RunConfig cfg = load_run_config(args);
    RunContext run("theory", args.out_dir, args.force, cfg, args.config_path);
    try {
        // small probe model with an enumerable vocabulary
        policy::PolicyConfig probe;
        probe.width = 16;
        probe.layers = 1;
        probe.heads = 2;
        probe.context = 96;
        probe.n_free = 16;
        const policy::PolicyParams params = policy::PolicyParams::init(probe, cfg.seed);
        const std::vector<int> item = {7, 13, 8, 12};
        const std::vector<int> prompt = {16, 17};
        const policy::SequenceInput ctx = policy::SequenceInput::assemble(item, prompt, {}, false);
        int rc = 0;

        if (experiment == "mds") {
            Rng rng = Rng::derive(cfg.seed, {kTagTheory, 10});
            std::vector<policy::SequenceInput> prefixes;
            for (int i = 0; i < 50; ++i) {
                std::vector<int> pitem, pprompt;
                const int vs = probe.vocab_size();
                for (int k = 0; k < rng.uniform_int(1, 5); ++k) {
                    pitem.push_back(rng.uniform_int(0, vs - 1));
                }
                for (int k = 0; k < rng.uniform_int(1, 4); ++k) {
                    pprompt.push_back(rng.uniform_int(0, vs - 1));
                }
                prefixes.push_back(policy::SequenceInput::assemble(pitem, pprompt, {}, false));
            }
            const theory::MdsReport report = theory::check_mds(params, prefixes, 4);
            const json out = {{"prefixes", report.norms.size()}, {"max_norm", report.max_norm}};
            write_text_atomic(run.dir() / "mds_report.json", out.dump(2) + "\n");
            run.add_artifact(run.dir() / "mds_report.json");
            std::cout << "theory mds: max conditional-mean norm " << report.max_norm << " over "
                      << report.norms.size() << " prefixes\n";
            if (report.max_norm >= 1e-8) {
                std::cerr << "theory mds: identity violated\n";
                rc = 4;
            }
        } else if (experiment == "variance") {
            const std::vector<int> lengths = {4, 8, 16, 32, 64};
            const theory::VarianceReport report = theory::variance_vs_length(
                params, ctx, lengths, cfg.theory_variance_samples, 4,
                cfg.theory_step_var_samples, cfg.seed, cfg.threads);
            std::vector<std::array<double, 3>> rows;
            for (const auto& p : report.points) {
                rows.push_back({static_cast<double>(p.length), p.var_s, p.bootstrap_sigma});
            }
            theory::write_plot(run.dir() / "variance.txt", rows);
            run.add_artifact(run.dir() / "variance.txt");
            const json out = {{"slope", report.slope},
                              {"intercept", report.intercept},
                              {"r2", report.r2},
                              {"samples", report.samples}};
            write_text_atomic(run.dir() / "variance_report.json", out.dump(2) + "\n");
            run.add_artifact(run.dir() / "variance_report.json");
            std::cout << "theory variance: slope " << report.slope << " r2 " << report.r2 << "\n";
        } else if (experiment == "contrast") {
            if (resume.empty()) {
                throw ConfigError("theory contrast: --resume TRAINED_CHECKPOINT is required");
            }
            const train::Checkpoint ckpt = train::load_checkpoint(resume);
            const synth::Dataset data = load_dataset_for(cfg, run);
            const std::vector<synth::PreferencePair> sample(data.train.begin(),
                                                            data.train.begin() + 1);
            const std::vector<int> lens = {8, 48};
            const theory::ContrastReport report = theory::grpo_vs_bt_gradient_variance(
                ckpt.state, sample, cfg.s2_group_size, 12, lens, cfg.weights, cfg.s2_len_scale,
                cfg.seed, cfg.threads);
            std::vector<std::array<double, 3>> rows;
            json points = json::array();
            for (const auto& p : report.points) {
                rows.push_back({static_cast<double>(p.max_len), p.grpo_var, 0.0});
                points.push_back({{"max_len", p.max_len},
                                  {"grpo_grad_norm_var", p.grpo_var},
                                  {"bt_grad_norm_var", p.bt_var}});
                std::cout << "theory contrast: T=" << p.max_len << " grpo_var=" << p.grpo_var
                          << " bt_var=" << p.bt_var << "\n";
            }
            theory::write_plot(run.dir() / "contrast.txt", rows);
            run.add_artifact(run.dir() / "contrast.txt");
            write_text_atomic(run.dir() / "contrast_report.json", points.dump(2) + "\n");
            run.add_artifact(run.dir() / "contrast_report.json");
        } else if (experiment == "curriculum") {
            std::vector<double> grid;
            for (double d = -4.0; d <= 4.0 + 1e-9; d += 0.5) grid.push_back(d);
            const theory::CurriculumReport report = theory::bt_curriculum_profile(grid);
            std::vector<std::array<double, 3>> rows;
            for (const auto& r : report.rows) rows.push_back({r.delta, r.grad_mag, 0.0});
            theory::write_plot(run.dir() / "curriculum.txt", rows);
            run.add_artifact(run.dir() / "curriculum.txt");
            std::cout << "theory curriculum: gradient magnitude strictly decreasing: "
                      << (report.strictly_decreasing ? "yes" : "no") << "\n";
            if (!report.strictly_decreasing) rc = 4;
        } else {
            throw ConfigError("theory: unknown experiment " + experiment);
        }
        run.finish(rc == 0 ? "finished" : "failed");
        return rc;
    } catch (...) {
        run.finish("failed");
        throw;
    }
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"desk-scale decoupled think-then-score reward modeling lab"};
    app.require_subcommand(1);

    CommonArgs common;
    uint64_t seed_flag = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "configuration file (key = value lines)");
        sub->add_option("--seed", seed_flag, "master seed, overrides run.seed")
            ->each([&](const std::string&) { common.seed = seed_flag; });
        sub->add_option("--out", common.out_dir, "run directory (default under DESCORE_LAB_DIR)");
        sub->add_flag("--force", common.force, "allow reusing a non-empty run directory");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic preference dataset");
    add_common(gen);

    CLI::App* train_cmd = app.add_subcommand("train", "run stage 1 / stage 2 training");
    add_common(train_cmd);
    std::string stage_sel = "both";
    std::string resume;
    bool fresh_init = false;
    train_cmd->add_option("--stage", stage_sel, "training stage")
        ->check(CLI::IsMember({"1", "2", "both"}));
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    train_cmd->add_flag("--fresh-init", fresh_init,
                        "allow stage 2 from a fresh initialization (no cold start)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    add_common(eval_cmd);
    std::string eval_resume;
    std::string split = "id";
    std::optional<double> tau_flag;
    double tau_value = 0.0;
    eval_cmd->add_option("--resume", eval_resume, "checkpoint to evaluate");
    eval_cmd->add_option("--split", split, "dataset split")
        ->check(CLI::IsMember({"train", "id", "ood"}));
    eval_cmd->add_option("--tau", tau_value, "absolute tie threshold override")
        ->each([&](const std::string&) { tau_flag = tau_value; });

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run ablation presets and compare");
    add_common(ablate_cmd);
    std::vector<std::string> presets;
    ablate_cmd
        ->add_option("--preset", presets,
                     "preset(s) to run; default runs the full matrix")
        ->check(CLI::IsMember({"no-cot", "no-mask", "grpo-only", "no-coldstart", "full"}));

    CLI::App* theory_cmd = app.add_subcommand("theory", "gradient-analysis experiments");
    add_common(theory_cmd);
    std::string experiment;
    std::string theory_resume;
    theory_cmd->add_option("--experiment", experiment, "experiment to run")
        ->required()
        ->check(CLI::IsMember({"mds", "variance", "contrast", "curriculum"}));
    theory_cmd->add_option("--resume", theory_resume, "trained checkpoint (for contrast)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(common);
        if (train_cmd->parsed()) return cmd_train(common, stage_sel, resume, fresh_init);
        if (eval_cmd->parsed()) return cmd_eval(common, eval_resume, split, tau_flag);
        if (ablate_cmd->parsed()) return cmd_ablate(common, presets);
        if (theory_cmd->parsed()) return cmd_theory(common, experiment, theory_resume);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace descore::cli
