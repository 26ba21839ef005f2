// Acceptance gate for the project: runs every shipped criterion end to end and
// prints one PASS/FAIL line each. Pass criterion numbers as arguments to run a
// subset, e.g. `acceptance 1 2 13`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "descore/numkit/gradcheck.hpp"
#include "descore/theory.hpp"
#include "descore/train/trainer.hpp"

using namespace descore;
using nlohmann::json;

namespace {

struct Outcome {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::vector<Outcome> g_results;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void run_criterion(int id, const std::string& name, double budget_s, const std::set<int>& only,
                   const std::function<std::pair<bool, std::string>()>& body) {
    if (!only.empty() && !only.count(id)) return;
    Outcome out;
    out.id = id;
    out.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto [pass, detail] = body();
        out.pass = pass;
        out.detail = detail;
    } catch (const std::exception& e) {
        out.pass = false;
        out.detail = std::string("exception: ") + e.what();
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out.pass && out.seconds > budget_s) {
        out.pass = false;
        out.detail += " [exceeded " + fmt(budget_s) + "s budget]";
    }
    g_results.push_back(out);
    std::printf("[%s] criterion %2d: %s (%.1fs) %s\n", out.pass ? "PASS" : "FAIL", id,
                name.c_str(), out.seconds, out.detail.c_str());
    std::fflush(stdout);
}

// ---------------------------------------------------------------- helpers

train::RunConfig default_config() {
    train::RunConfig cfg;
    cfg.seed = 1234;
    cfg.s1_max_steps = 2000;
    return cfg;
}

policy::PolicyConfig smallest_backbone() {
    policy::PolicyConfig cfg;
    cfg.width = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.context = 16;
    cfg.n_free = 0;  // vocab 16
    return cfg;
}

policy::PolicyConfig probe_backbone() {
    policy::PolicyConfig cfg;
    cfg.width = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.context = 96;
    cfg.n_free = 16;  // vocab 32, enumerable
    return cfg;
}

synth::Dataset small_dataset(int n_train, int n_eval, uint64_t seed) {
    synth::DatasetConfig cfg;
    cfg.n_train = n_train;
    cfg.n_eval = n_eval;
    cfg.n_ood = 32;
    cfg.prompt_tokens = 2;
    cfg.think_len_min = 2;
    cfg.think_len_max = 5;
    synth::Dataset ds = synth::generate_dataset(cfg, Vocab{16}, seed);
    (void)synth::consistency_filter(ds.train, Vocab{16});
    return ds;
}

policy::PolicyConfig small_backbone() {
    policy::PolicyConfig cfg;
    cfg.width = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.context = 64;
    cfg.n_free = 16;
    return cfg;
}

std::vector<std::string> rows_without_wall(const std::vector<json>& rows) {
    std::vector<std::string> out;
    for (json row : rows) {
        row.erase("wall_ms");
        out.push_back(row.dump());
    }
    return out;
}

double max_eval_acc(const std::vector<json>& rows) {
    double best = 0.0;
    for (const json& row : rows) {
        if (row.contains("kind") && row["kind"] == "eval") {
            best = std::max(best, row["acc_without_tie"].get<double>());
        }
    }
    return best;
}

// Shared full-scale pipeline state (criteria 8-11).
struct Pipeline {
    train::RunConfig cfg;
    synth::Dataset data;
    train::MetricSink s1_sink;
    train::TrainResult s1;
    train::MetricSink s2_dual_sink;
    train::TrainResult s2_dual;
    train::MetricSink s2_grpo_sink;
    train::TrainResult s2_grpo;
    bool ready = false;
};

Pipeline g_pipe;

void ensure_stage1() {
    if (g_pipe.ready) return;
    g_pipe.cfg = default_config();
    g_pipe.data = synth::generate_dataset(g_pipe.cfg.data, g_pipe.cfg.vocab(), g_pipe.cfg.seed);
    (void)synth::consistency_filter(g_pipe.data.train, g_pipe.cfg.vocab());
    g_pipe.s1 = train_stage1(
        train::ModelState::init(g_pipe.cfg.policy_config(), g_pipe.cfg.seed), {}, g_pipe.data,
        train::stage1_from(g_pipe.cfg), g_pipe.s1_sink);
    g_pipe.ready = true;
}

bool g_dual_ready = false;
void ensure_stage2_dual() {
    ensure_stage1();
    if (g_dual_ready) return;
    train::Stage2Init dual_init;
    dual_init.state = g_pipe.s1.state;
    g_pipe.s2_dual = train_stage2(std::move(dual_init), g_pipe.data,
                                  train::stage2_from(g_pipe.cfg), g_pipe.s2_dual_sink);
    g_dual_ready = true;
}

bool g_grpo_ready = false;
void ensure_stage2_grpo() {
    ensure_stage1();
    if (g_grpo_ready) return;
    train::RunConfig grpo_cfg = g_pipe.cfg;
    grpo_cfg.s2_bt_alpha = 0.0;
    train::Stage2Init grpo_init;
    grpo_init.state = g_pipe.s1.state;
    g_pipe.s2_grpo = train_stage2(std::move(grpo_init), g_pipe.data,
                                  train::stage2_from(grpo_cfg), g_pipe.s2_grpo_sink);
    g_grpo_ready = true;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    run_criterion(1, "piecewise length reward table", 1.0, only, []() -> std::pair<bool, std::string> {
        const std::vector<long long> lens = {0, 499, 500, 999, 1000, 1499, 1500, 1999, 2000, 5000};
        const std::vector<double> expect = {0, 0, 0.2, 0.2, 0.4, 0.4, 0.6, 0.6, 1, 1};
        for (size_t i = 0; i < lens.size(); ++i) {
            const double got = reward::length_reward(lens[i]);
            if (got != expect[i]) {
                return {false, "len " + std::to_string(lens[i]) + " gave " + fmt(got)};
            }
        }
        return {true, "10/10 boundary points exact"};
    });

    run_criterion(2, "pairwise-loss gradient identity", 5.0, only, []() -> std::pair<bool, std::string> {
        Rng rng(2024);
        double worst_identity = 0.0, worst_fd = 0.0;
        for (int i = 0; i < 100; ++i) {
            const double sw = rng.uniform(-3.0, 3.0);
            const double sl = rng.uniform(-3.0, 3.0);
            numkit::Tape tape;
            const numkit::Tensor tw = tape.watch(numkit::Tensor::scalar(sw));
            const numkit::Tensor tl = tape.watch(numkit::Tensor::scalar(sl));
            const numkit::Gradients g = tape.backward(objectives::bt_loss_t(tape, tw, tl));
            const double expect = -(1.0 - numkit::sigmoid_stable(sw - sl));
            const double gw = g.at(tw).item();
            const double gl = g.at(tl).item();
            const double rel = std::max(std::abs(gw - expect) / std::abs(expect),
                                        std::abs(gl + expect) / std::abs(expect));
            worst_identity = std::max(worst_identity, rel);
            if (rel > 1e-10) return {false, "identity rel err " + fmt(rel)};

            auto f = [](const std::vector<double>& v) {
                return objectives::bt_loss(v[0], v[1]);
            };
            numkit::FiniteDiffOptions opts;
            opts.rtol = 1e-6;
            opts.atol = 1e-10;
            const numkit::CheckReport rep = numkit::finite_diff_check(f, {sw, sl}, {gw, gl}, opts);
            worst_fd = std::max(worst_fd, rep.max_rel_err);
            if (!rep.pass) return {false, "finite-difference rel err " + fmt(rep.max_rel_err)};
        }
        return {true, "100 pairs, analytic rel " + fmt(worst_identity) + ", fd rel " + fmt(worst_fd)};
    });

    run_criterion(3, "full-model gradient check", 120.0, only, []() -> std::pair<bool, std::string> {
        const policy::PolicyConfig cfg = smallest_backbone();
        train::ModelState state = train::ModelState::init(cfg, 7);
        const std::vector<int> item_w = {7, 12};
        const std::vector<int> item_l = {8, 14};
        const std::vector<int> prompt = {3};
        const std::vector<int> cot_w = {13, 15};
        const std::vector<int> cot_l = {12, 13};
        // total sequence per side: 2 + 1 + 2 + query = 6 positions

        auto objective = [&](const train::ModelState& s) {
            numkit::Tape tape(false);
            const train::ModelState b = train::bind_state(tape, s);
            const numkit::Tensor sw =
                scoring::score_t(tape, b.policy, b.head, item_w, prompt, cot_w);
            const numkit::Tensor sl =
                scoring::score_t(tape, b.policy, b.head, item_l, prompt, cot_l);
            return objectives::bt_loss_t(tape, sw, sl).item();
        };

        numkit::Tape tape;
        const train::ModelState bound = train::bind_state(tape, state);
        const numkit::Tensor sw = scoring::score_t(tape, bound.policy, bound.head, item_w, prompt, cot_w);
        const numkit::Tensor sl = scoring::score_t(tape, bound.policy, bound.head, item_l, prompt, cot_l);
        const numkit::Gradients grads = tape.backward(objectives::bt_loss_t(tape, sw, sl));

        std::vector<std::pair<std::string, const numkit::Tensor*>> bound_slots;
        bound.visit([&](const std::string& name, const numkit::Tensor& t) {
            bound_slots.emplace_back(name, &t);
        });
        std::vector<std::pair<std::string, numkit::Tensor*>> state_slots;
        state.visit([&](const std::string& name, numkit::Tensor& t) {
            state_slots.emplace_back(name, &t);
        });

        int blocks = 0;
        double worst = 0.0;
        std::string worst_block;
        for (size_t bi = 0; bi < state_slots.size(); ++bi) {
            const auto& analytic = grads.at(*bound_slots[bi].second).data;
            numkit::Tensor* slot = state_slots[bi].second;
            auto f = [&](const std::vector<double>& flat) {
                const std::vector<double> saved = slot->data;
                slot->data = flat;
                const double v = objective(state);
                slot->data = saved;
                return v;
            };
            numkit::FiniteDiffOptions opts;
            opts.rtol = 1e-4;
            opts.atol = 1e-7;
            const numkit::CheckReport rep = numkit::finite_diff_check(f, slot->data, analytic, opts);
            if (rep.max_rel_err > worst) {
                worst = rep.max_rel_err;
                worst_block = state_slots[bi].first;
            }
            if (!rep.pass) {
                return {false, "block " + state_slots[bi].first + " rel err " +
                                   fmt(rep.max_rel_err)};
            }
            ++blocks;
        }
        return {true, std::to_string(blocks) + " parameter blocks; worst rel " + fmt(worst) +
                          " at " + worst_block + " (all coords within atol+rtol*scale)"};
    });

    run_criterion(4, "group advantage invariants", 5.0, only, []() -> std::pair<bool, std::string> {
        Rng rng(44);
        const std::vector<int> sizes = {2, 4, 8};
        for (int trial = 0; trial < 1000; ++trial) {
            const int g = sizes[static_cast<size_t>(trial % 3)];
            std::vector<double> rewards(static_cast<size_t>(g));
            for (double& r : rewards) r = rng.uniform(0.0, 1.0);
            const objectives::AdvantageGroup adv = objectives::group_advantages(rewards);
            if (adv.degenerate) continue;
            double mean = 0.0, var = 0.0;
            for (double a : adv.advantages) mean += a;
            mean /= g;
            for (double a : adv.advantages) var += (a - mean) * (a - mean);
            var /= g;
            if (std::abs(mean) >= 1e-12) return {false, "mean " + fmt(mean)};
            if (std::abs(var - 1.0) >= 1e-9) return {false, "popvar " + fmt(var)};
        }
        const std::vector<double> flat = {0.7, 0.7, 0.7, 0.7};
        const objectives::AdvantageGroup deg = objectives::group_advantages(flat);
        if (!deg.degenerate) return {false, "uniform group not flagged degenerate"};
        for (double a : deg.advantages) {
            if (a != 0.0) return {false, "degenerate advantage nonzero"};
        }
        return {true, "1000 groups within tolerance; degenerate group zeroed"};
    });

    run_criterion(5, "clipped surrogate identity and hand cases", 5.0, only,
                  []() -> std::pair<bool, std::string> {
        objectives::GrpoConfig cfg{0.2, 0.0, 8};
        Rng rng(55);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            numkit::Tape tape;
            std::vector<objectives::RolloutLogProbs> rollouts;
            std::vector<double> rewards;
            for (int i = 0; i < 4 + trial % 5; ++i) {
                std::vector<double> lp(static_cast<size_t>(1 + trial % 7));
                for (double& v : lp) v = rng.uniform(-4.0, -0.05);
                objectives::RolloutLogProbs r;
                r.current = tape.watch(numkit::Tensor({static_cast<int>(lp.size())}, lp));
                r.old_lp = lp;
                r.ref_lp = lp;
                rollouts.push_back(std::move(r));
                rewards.push_back(rng.uniform(0.0, 1.0));
            }
            const objectives::AdvantageGroup adv = objectives::group_advantages(rewards);
            const double loss = objectives::grpo_loss_t(tape, rollouts, adv, cfg).loss.item();
            worst = std::max(worst, std::abs(loss));
            if (std::abs(loss) >= 1e-12) return {false, "snapshot loss " + fmt(loss)};
        }
        // hand cases
        auto single = [&](double ratio, double a) {
            numkit::Tape tape;
            std::vector<objectives::RolloutLogProbs> rollouts(1);
            rollouts[0].current =
                tape.watch(numkit::Tensor({1}, {std::log(ratio) - 1.0}));
            rollouts[0].old_lp = {-1.0};
            rollouts[0].ref_lp = {-1.0};
            objectives::AdvantageGroup adv;
            adv.rewards = {a};
            adv.advantages = {a};
            return objectives::grpo_loss_t(tape, rollouts, adv, cfg).loss.item();
        };
        const double case_a = single(1.5, 1.0);
        const double case_b = single(0.5, -1.0);
        if (std::abs(case_a + 1.2) > 1e-12) return {false, "clip case r=1.5 gave " + fmt(case_a)};
        if (std::abs(case_b - 0.8) > 1e-12) return {false, "clip case r=0.5 gave " + fmt(case_b)};
        return {true, "identity within " + fmt(worst) + "; clip cases -1.2 / +0.8 exact"};
    });

    run_criterion(6, "martingale difference identity", 30.0, only, []() -> std::pair<bool, std::string> {
        const policy::PolicyParams params = policy::PolicyParams::init(probe_backbone(), 66);
        Rng rng(67);
        std::vector<policy::SequenceInput> prefixes;
        const int vocab = params.cfg.vocab_size();
        for (int i = 0; i < 50; ++i) {
            std::vector<int> item, prompt;
            for (int k = 0; k < rng.uniform_int(1, 5); ++k) item.push_back(rng.uniform_int(0, vocab - 1));
            for (int k = 0; k < rng.uniform_int(1, 4); ++k) prompt.push_back(rng.uniform_int(0, vocab - 1));
            prefixes.push_back(policy::SequenceInput::assemble(item, prompt, {}, false));
        }
        const theory::MdsReport report = theory::check_mds(params, prefixes, 4);
        return {report.max_norm < 1e-8,
                "max conditional-mean norm " + fmt(report.max_norm) + " over 50 prefixes"};
    });

    run_criterion(7, "variance grows linearly with length", 120.0, only,
                  []() -> std::pair<bool, std::string> {
        const policy::PolicyParams params = policy::PolicyParams::init(probe_backbone(), 77);
        const std::vector<int> item = {7, 13, 8, 12};
        const std::vector<int> prompt = {16, 17};
        const policy::SequenceInput ctx = policy::SequenceInput::assemble(item, prompt, {}, false);
        const std::vector<int> lengths = {4, 8, 16, 32, 64};
        const theory::VarianceReport report =
            theory::variance_vs_length(params, ctx, lengths, 2000, 4, 100, 78, 8);
        std::ostringstream detail;
        detail << "slope " << fmt(report.slope) << ", r2 " << fmt(report.r2) << ", var(T)=";
        for (const auto& p : report.points) detail << " " << fmt(p.var_s);
        return {report.slope > 0.0 && report.r2 >= 0.95, detail.str()};
    });

    run_criterion(9, "stage-1 learns the synthetic task", 600.0, only,
                  []() -> std::pair<bool, std::string> {
        ensure_stage1();
#ifdef DESCORE_DEFAULT_CONFIG
        // the shipped default config file must match the in-code defaults
        const train::RunConfig file_cfg = train::load_config(DESCORE_DEFAULT_CONFIG, false);
        if (file_cfg.fingerprint() != g_pipe.cfg.fingerprint()) {
            return {false, "configs/default.conf diverges from built-in defaults"};
        }
#endif
        const double best = max_eval_acc(g_pipe.s1_sink.rows());
        const int64_t steps = g_pipe.s1.steps_done;
        return {best >= 0.90 && steps <= 2000,
                "best held-out acc_without_tie " + fmt(best) + " in " + std::to_string(steps) +
                    " optimizer steps"};
    });

    run_criterion(10, "ablation directions reproduce", 2700.0, only, []() -> std::pair<bool, std::string> {
        ensure_stage2_dual();
        ensure_stage2_grpo();
        const train::RunConfig& cfg = g_pipe.cfg;

        train::RunConfig no_cot_cfg = cfg;
        no_cot_cfg.s1_use_cot = false;
        train::MetricSink no_cot_sink;
        const train::TrainResult no_cot = train_stage1(
            train::ModelState::init(cfg.policy_config(), cfg.seed), {}, g_pipe.data,
            train::stage1_from(no_cot_cfg), no_cot_sink);

        train::RunConfig no_mask_cfg = cfg;
        no_mask_cfg.s1_mask_prob = 0.0;
        train::MetricSink no_mask_sink;
        const train::TrainResult no_mask = train_stage1(
            train::ModelState::init(cfg.policy_config(), cfg.seed), {}, g_pipe.data,
            train::stage1_from(no_mask_cfg), no_mask_sink);

        const double full_acc =
            train::evaluate_split(g_pipe.s1.state, g_pipe.data.eval_id, true, 0, 0.1, cfg.threads)
                .without_tie;
        const double no_cot_acc =
            train::evaluate_split(no_cot.state, g_pipe.data.eval_id, false, 0, 0.1, cfg.threads)
                .without_tie;
        const double no_mask_acc =
            train::evaluate_split(no_mask.state, g_pipe.data.eval_id, true, 0, 0.1, cfg.threads)
                .without_tie;
        const double dual_acc =
            train::evaluate_split(g_pipe.s2_dual.state, g_pipe.data.eval_id, true, 0, 0.1,
                                  cfg.threads)
                .without_tie;
        const double grpo_acc =
            train::evaluate_split(g_pipe.s2_grpo.state, g_pipe.data.eval_id, true, 0, 0.1,
                                  cfg.threads)
                .without_tie;

        std::ostringstream detail;
        detail << "cot " << fmt(full_acc) << " vs " << fmt(no_cot_acc) << "; mask "
               << fmt(full_acc) << " vs " << fmt(no_mask_acc) << "; dual " << fmt(dual_acc)
               << " vs grpo-only " << fmt(grpo_acc);
        bool ok = true;
        auto judge = [&](const char* name, double a, double b) {
            if (a - b >= 0.01) return;
            if (a - b > -0.01) {
                detail << "; " << name << " inconclusive (|gap|<0.01, seed 1234)";
                return;
            }
            detail << "; " << name << " REVERSED";
            ok = false;
        };
        judge("cot", full_acc, no_cot_acc);
        judge("mask", full_acc, no_mask_acc);
        judge("dual", dual_acc, grpo_acc);
        return {ok, detail.str()};
    });

    run_criterion(8, "stability contrast", 600.0, only, []() -> std::pair<bool, std::string> {
        ensure_stage2_grpo();
        const double bt_fluct = train::trace_fluctuation(g_pipe.s1_sink.rows(), 50);
        const double grpo_fluct = train::trace_fluctuation(g_pipe.s2_grpo_sink.rows(), 50);
        const bool trace_ok = grpo_fluct >= 2.0 * bt_fluct;

        const std::vector<synth::PreferencePair> sample = {g_pipe.data.train[0]};
        const std::vector<int> lens = {24};
        const theory::ContrastReport contrast = theory::grpo_vs_bt_gradient_variance(
            g_pipe.s1.state, sample, 4, 6, lens, {0.1, 0.2, 0.7}, 0.002, 88, g_pipe.cfg.threads);
        const bool grad_ok = contrast.points[0].bt_var == 0.0 && contrast.points[0].grpo_var > 0.0;

        return {trace_ok && grad_ok,
                "grpo-only fluct " + fmt(grpo_fluct) + " vs stage-1 " + fmt(bt_fluct) +
                    "; grad-norm var grpo " + fmt(contrast.points[0].grpo_var) + " bt " +
                    fmt(contrast.points[0].bt_var)};
    });

    run_criterion(11, "stage-2 composite reward improves", 900.0, only,
                  []() -> std::pair<bool, std::string> {
        ensure_stage2_dual();
        std::vector<double> rewards;
        for (const json& row : g_pipe.s2_dual_sink.rows()) {
            if (row.contains("kind") && row["kind"] == "step") {
                rewards.push_back(row["mean_reward"].get<double>());
            }
        }
        if (rewards.size() < 20) return {false, "too few stage-2 steps"};
        double first = 0.0, last = 0.0;
        for (int i = 0; i < 10; ++i) {
            first += rewards[static_cast<size_t>(i)];
            last += rewards[rewards.size() - 10 + static_cast<size_t>(i)];
        }
        first /= 10.0;
        last /= 10.0;
        const bool ok = last >= 1.2 * first;
        return {ok, "first-10 mean " + fmt(first) + ", last-10 mean " + fmt(last) + " (" +
                        fmt(first > 0 ? last / first : 0.0) + "x)"};
    });

    run_criterion(12, "masking equivalences", 120.0, only, []() -> std::pair<bool, std::string> {
        const synth::Dataset data = small_dataset(96, 32, 120);
        train::Stage1Config masked;
        masked.lr = 1e-3;
        masked.batch_size = 8;
        masked.epochs = 1;
        masked.mask_prob = 1.0;
        masked.use_cot = true;
        masked.eval_every = 4;
        masked.eval_with_cot = false;
        masked.seed = 121;
        masked.threads = 8;
        train::Stage1Config no_cot = masked;
        no_cot.use_cot = false;

        train::MetricSink a, b;
        const train::TrainResult ra =
            train_stage1(train::ModelState::init(small_backbone(), 9), {}, data, masked, a);
        const train::TrainResult rb =
            train_stage1(train::ModelState::init(small_backbone(), 9), {}, data, no_cot, b);
        if (rows_without_wall(a.rows()) != rows_without_wall(b.rows())) {
            return {false, "p=1 trace differs from the no-cot trace"};
        }
        if (ra.cot_uses != 0) return {false, "p=1 run used the cot"};

        train::Stage1Config always = masked;
        always.mask_prob = 0.0;
        always.use_cot = true;
        train::MetricSink c;
        const train::TrainResult rc =
            train_stage1(train::ModelState::init(small_backbone(), 9), {}, data, always, c);
        if (rc.mask_decisions == 0 || rc.cot_uses != rc.mask_decisions) {
            return {false, "p=0 run did not use the cot on every decision"};
        }
        return {true, "p=1 trace bitwise-equal; p=0 cot usage " +
                          std::to_string(rc.cot_uses) + "/" + std::to_string(rc.mask_decisions)};
    });

    run_criterion(13, "text-grammar corpus verdicts", 1.0, only, []() -> std::pair<bool, std::string> {
        const std::string dir = TEST_CORPUS_DIR;
        std::ifstream manifest(dir + "/manifest.jsonl");
        if (!manifest.good()) return {false, "corpus manifest missing"};
        std::string line;
        int n = 0;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            const json m = json::parse(line);
            std::ifstream in(dir + "/" + m["file"].get<std::string>());
            std::stringstream buf;
            buf << in.rdbuf();
            const reward::FormatResult r = reward::format_reward_text(buf.str());
            if (r.reward != m["expect"].get<int>()) {
                return {false, "verdict mismatch on " + m["file"].get<std::string>()};
            }
            ++n;
        }
        return {n == 30, std::to_string(n) + "/30 verdicts exact"};
    });

    run_criterion(14, "determinism and persistence", 600.0, only, []() -> std::pair<bool, std::string> {
        const synth::Dataset data = small_dataset(64, 24, 140);
        train::Stage1Config cfg;
        cfg.lr = 1e-3;
        cfg.batch_size = 8;
        cfg.epochs = 2;
        cfg.eval_every = 4;
        cfg.seed = 141;
        cfg.threads = 8;
        train::MetricSink a, b;
        const train::TrainResult ra =
            train_stage1(train::ModelState::init(small_backbone(), 14), {}, data, cfg, a);
        (void)train_stage1(train::ModelState::init(small_backbone(), 14), {}, data, cfg, b);
        if (rows_without_wall(a.rows()) != rows_without_wall(b.rows())) {
            return {false, "repeated run produced a different metric trace"};
        }

        // checkpoint round trip preserves a probe score bitwise
        train::Checkpoint ckpt;
        ckpt.stage = 1;
        ckpt.step = ra.steps_done;
        ckpt.master_seed = cfg.seed;
        ckpt.state = ra.state;
        ckpt.opt = ra.opt;
        const std::filesystem::path path =
            std::filesystem::temp_directory_path() / "descore_acceptance_ckpt.bin";
        train::save_checkpoint(ckpt, path);
        const train::Checkpoint loaded = train::load_checkpoint(path);
        std::filesystem::remove(path);
        const synth::PreferencePair& probe = data.eval_id[0];
        const double s_before = scoring::score(ckpt.state.policy, ckpt.state.head,
                                               probe.winner.tokens, probe.prompt, probe.cot_w);
        const double s_after = scoring::score(loaded.state.policy, loaded.state.head,
                                              probe.winner.tokens, probe.prompt, probe.cot_w);
        if (s_before != s_after) return {false, "checkpoint round trip changed a probe score"};

        // interrupted + resumed stage 2 equals the uninterrupted run
        train::Stage2Config s2;
        s2.lr = 1e-3;
        s2.steps = 4;
        s2.group_size = 4;
        s2.rollout_pairs = 2;
        s2.minibatch_pairs = 1;
        s2.max_rollout_len = 8;
        s2.eval_every = 1;
        s2.eval_pairs = 8;
        s2.seed = 142;
        s2.threads = 8;
        const std::filesystem::path dir =
            std::filesystem::temp_directory_path() / "descore_acceptance_resume";
        std::filesystem::remove_all(dir);
        train::MetricSink full;
        train::Stage2Init fi;
        fi.state = ra.state;
        (void)train_stage2(std::move(fi), data, s2, full);
        train::MetricSink part1, part2;
        train::TrainHooks hooks;
        hooks.stop_after_step = 2;
        hooks.checkpoint_dir = dir;
        train::Stage2Init pi;
        pi.state = ra.state;
        (void)train_stage2(std::move(pi), data, s2, part1, hooks);
        const train::Checkpoint mid = train::load_checkpoint(dir / "checkpoint_step2.bin");
        train::Stage2Init ri;
        ri.state = mid.state;
        ri.opt = mid.opt;
        ri.ref_policy = mid.ref_policy;
        ri.old_policy = mid.old_policy;
        ri.start_step = mid.step;
        (void)train_stage2(std::move(ri), data, s2, part2);
        std::filesystem::remove_all(dir);
        std::vector<json> combined;
        for (const json& row : part1.rows()) {
            if (row["kind"] != "summary") combined.push_back(row);
        }
        for (const json& row : part2.rows()) combined.push_back(row);
        if (rows_without_wall(combined) != rows_without_wall(full.rows())) {
            return {false, "resumed stage-2 trace differs from the uninterrupted run"};
        }
        return {true, "trace determinism, bitwise checkpoint round trip, exact resume"};
    });

    int failures = 0;
    for (const Outcome& o : g_results) {
        if (!o.pass) ++failures;
    }
    std::printf("\n%zu criteria run, %d failed\n", g_results.size(), failures);
    return failures == 0 ? 0 : 1;
}
