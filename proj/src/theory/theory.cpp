#include "descore/theory.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "descore/parallel.hpp"

namespace descore::theory {

using numkit::Tape;
using numkit::Tensor;
using policy::SequenceInput;

namespace {

// Gradient slice: first probe_rows rows of the output projection.
std::vector<double> probe_grad(const numkit::Gradients& grads, const Tensor& bound_out_proj,
                               int probe_rows) {
    const Tensor& g = grads.at(bound_out_proj);
    const int cols = g.shape[1];
    return std::vector<double>(g.data.begin(),
                               g.data.begin() + static_cast<ptrdiff_t>(probe_rows) * cols);
}

double vec_norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

}  // namespace

std::vector<TokenScore> enumerate_scores(const policy::PolicyParams& params,
                                         const SequenceInput& prefix, int probe_rows) {
    const int vocab = params.cfg.vocab_size();
    if (vocab > 64) throw DataError("enumerate_scores: vocab too large for exact enumeration");
    if (probe_rows < 1 || probe_rows > params.cfg.width) {
        throw ConfigError("enumerate_scores: probe_rows out of range");
    }

    // probabilities from one plain forward
    Tape value_tape(false);
    const policy::BoundPolicy vb = policy::bind(value_tape, params);
    const Tensor all_logits = policy::logits(value_tape, vb, prefix);
    std::vector<double> probs(static_cast<size_t>(vocab));
    numkit::softmax_row(all_logits.data.data() +
                            static_cast<size_t>(all_logits.rows() - 1) * vocab,
                        probs.data(), vocab);

    std::vector<TokenScore> out(static_cast<size_t>(vocab));
    for (int o = 0; o < vocab; ++o) {
        Tape tape;
        const policy::BoundPolicy bound = policy::bind(tape, params);
        const std::vector<int> cont = {o};
        const Tensor lp = policy::log_prob_t(tape, bound, prefix, cont);
        const numkit::Gradients grads = tape.backward(tape.sum(lp));
        out[static_cast<size_t>(o)] = {o, probs[static_cast<size_t>(o)],
                                       probe_grad(grads, bound.out_proj, probe_rows)};
    }
    return out;
}

MdsReport check_mds(const policy::PolicyParams& params,
                    std::span<const SequenceInput> prefixes, int probe_rows) {
    if (prefixes.empty()) throw DataError("check_mds: no prefixes");
    MdsReport report;
    for (const SequenceInput& prefix : prefixes) {
        const std::vector<TokenScore> scores = enumerate_scores(params, prefix, probe_rows);
        std::vector<double> mean(scores[0].grad.size(), 0.0);
        for (const TokenScore& ts : scores) {
            for (size_t k = 0; k < mean.size(); ++k) mean[k] += ts.prob * ts.grad[k];
        }
        report.norms.push_back(vec_norm(mean));
        report.max_norm = std::max(report.max_norm, report.norms.back());
    }
    return report;
}

void linear_fit(std::span<const double> xs, std::span<const double> ys, double& slope,
                double& intercept, double& r2) {
    const size_t n = xs.size();
    if (n < 2 || ys.size() != n) throw NumericError("linear_fit: need at least two points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) throw NumericError("linear_fit: degenerate x values");
    slope = sxy / sxx;
    intercept = my - slope * mx;
    double ss_res = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (intercept + slope * xs[i]);
        ss_res += r * r;
    }
    r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
}

VarianceReport variance_vs_length(const policy::PolicyParams& params, const SequenceInput& ctx,
                                  std::span<const int> lengths, int samples, int probe_rows,
                                  int step_var_samples, uint64_t seed, int threads) {
    if (samples < 100) throw ConfigError("variance_vs_length: need at least 100 samples");
    for (size_t i = 1; i < lengths.size(); ++i) {
        if (lengths[i] <= lengths[i - 1]) {
            throw ConfigError("variance_vs_length: lengths must be strictly increasing");
        }
    }

    VarianceReport report;
    report.samples = samples;
    report.seed = seed;

    for (const int t_len : lengths) {
        policy::SampleConfig sc;
        sc.max_len = t_len;
        sc.stop_at_eos = false;  // exact length, the terminator is an ordinary token here
        const int m = samples;

        std::vector<std::vector<int>> rollouts(static_cast<size_t>(m));
        parallel_for(m, threads, [&](int k) {
            Rng rng = Rng::derive(seed, {kTagTheory, 1, static_cast<uint64_t>(t_len),
                                         static_cast<uint64_t>(k)});
            rollouts[static_cast<size_t>(k)] = policy::sample(params, ctx, sc, rng).tokens;
        });

        std::vector<std::vector<double>> svecs(static_cast<size_t>(m));
        parallel_for(m, threads, [&](int k) {
            Tape tape;
            const policy::BoundPolicy bound = policy::bind(tape, params);
            const Tensor lp = policy::log_prob_t(tape, bound, ctx, rollouts[static_cast<size_t>(k)]);
            const numkit::Gradients grads = tape.backward(tape.sum(lp));
            svecs[static_cast<size_t>(k)] = probe_grad(grads, bound.out_proj, probe_rows);
        });

        const size_t dim = svecs[0].size();
        std::vector<double> mean(dim, 0.0);
        for (const auto& s : svecs) {
            for (size_t k = 0; k < dim; ++k) mean[k] += s[k];
        }
        for (double& v : mean) v /= m;
        std::vector<double> sq_dev(static_cast<size_t>(m), 0.0);
        for (int k = 0; k < m; ++k) {
            double sq = 0.0;
            for (size_t j = 0; j < dim; ++j) {
                const double d = svecs[static_cast<size_t>(k)][j] - mean[j];
                sq += d * d;
            }
            sq_dev[static_cast<size_t>(k)] = sq;
        }
        const double var_s =
            std::accumulate(sq_dev.begin(), sq_dev.end(), 0.0) / static_cast<double>(m - 1);

        // bootstrap error bar on var_s
        Rng boot_rng = Rng::derive(seed, {kTagTheory, 2, static_cast<uint64_t>(t_len)});
        const int n_boot = 200;
        double bsum = 0.0, bsq = 0.0;
        for (int b = 0; b < n_boot; ++b) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k) {
                acc += sq_dev[static_cast<size_t>(boot_rng.uniform_int(0, m - 1))];
            }
            const double v = acc / static_cast<double>(m - 1);
            bsum += v;
            bsq += v * v;
        }
        const double bmean = bsum / n_boot;
        const double bootstrap_sigma = std::sqrt(std::max(0.0, bsq / n_boot - bmean * bmean));

        // per-step variance on a subsample of the same rollouts
        const int ms = std::min(step_var_samples, m);
        double min_step_var = 0.0;
        if (ms >= 2) {
            std::vector<std::vector<double>> step_vecs(
                static_cast<size_t>(ms) * static_cast<size_t>(t_len));
            parallel_for(ms, threads, [&](int k) {
                const std::vector<int>& tokens = rollouts[static_cast<size_t>(k)];
                for (int t = 0; t < t_len; ++t) {
                    SequenceInput prefix = ctx;
                    for (int j = 0; j < t; ++j) prefix.push_cot(tokens[static_cast<size_t>(j)]);
                    Tape tape;
                    const policy::BoundPolicy bound = policy::bind(tape, params);
                    const std::vector<int> cont = {tokens[static_cast<size_t>(t)]};
                    const Tensor lp = policy::log_prob_t(tape, bound, prefix, cont);
                    const numkit::Gradients grads = tape.backward(tape.sum(lp));
                    step_vecs[static_cast<size_t>(t) * ms + static_cast<size_t>(k)] =
                        probe_grad(grads, bound.out_proj, probe_rows);
                }
            });
            min_step_var = std::numeric_limits<double>::infinity();
            for (int t = 0; t < t_len; ++t) {
                std::vector<double> smean(dim, 0.0);
                for (int k = 0; k < ms; ++k) {
                    const auto& v = step_vecs[static_cast<size_t>(t) * ms + static_cast<size_t>(k)];
                    for (size_t j = 0; j < dim; ++j) smean[j] += v[j];
                }
                for (double& v : smean) v /= ms;
                // per-sample subtotal first, then the sample sum, matching the
                // cumulative-path accumulation order exactly
                double acc = 0.0;
                for (int k = 0; k < ms; ++k) {
                    const auto& v = step_vecs[static_cast<size_t>(t) * ms + static_cast<size_t>(k)];
                    double sq = 0.0;
                    for (size_t j = 0; j < dim; ++j) {
                        sq += (v[j] - smean[j]) * (v[j] - smean[j]);
                    }
                    acc += sq;
                }
                min_step_var = std::min(min_step_var, acc / static_cast<double>(ms - 1));
            }
        }

        report.points.push_back({t_len, var_s, bootstrap_sigma, min_step_var});
    }

    std::vector<double> xs, ys;
    for (const VariancePoint& p : report.points) {
        xs.push_back(static_cast<double>(p.length));
        ys.push_back(p.var_s);
    }
    if (xs.size() >= 2) linear_fit(xs, ys, report.slope, report.intercept, report.r2);
    return report;
}

ContrastReport grpo_vs_bt_gradient_variance(const train::ModelState& state,
                                            std::span<const synth::PreferencePair> pairs,
                                            int group_size, int repeats,
                                            std::span<const int> max_lens,
                                            const reward::RewardWeights& weights, double len_scale,
                                            uint64_t seed, int threads) {
    if (pairs.empty()) throw DataError("contrast: no pairs");
    if (repeats < 2) throw ConfigError("contrast: need at least 2 repeats");
    const Vocab vocab{state.policy.cfg.n_free};

    ContrastReport report;
    report.repeats = repeats;

    for (const int max_len : max_lens) {
        ContrastPoint point;
        point.max_len = max_len;
        point.grpo_norms.resize(static_cast<size_t>(repeats));

        parallel_for(repeats, threads, [&](int rep) {
            Tape tape;
            const train::ModelState bound = train::bind_state(tape, state);
            Tensor loss_acc;
            int n_groups = 0;
            for (size_t pi = 0; pi < pairs.size(); ++pi) {
                const synth::PreferencePair& pair = pairs[pi];
                for (int side = 0; side < 2; ++side) {
                    const bool winner = side == 0;
                    const SequenceInput ctx = SequenceInput::assemble(
                        winner ? pair.winner.tokens : pair.loser.tokens, pair.prompt, {}, false);
                    std::vector<policy::Rollout> rollouts;
                    std::vector<double> rewards;
                    for (int i = 0; i < group_size; ++i) {
                        Rng rng = Rng::derive(seed, {kTagTheory, 3, static_cast<uint64_t>(max_len),
                                                     static_cast<uint64_t>(rep),
                                                     static_cast<uint64_t>(pi * 2 + side),
                                                     static_cast<uint64_t>(i)});
                        policy::SampleConfig sc;
                        sc.max_len = max_len;
                        rollouts.push_back(policy::sample(state.policy, ctx, sc, rng));
                        rewards.push_back(reward::composite_reward(
                                              rollouts.back().tokens,
                                              winner ? pair.truth_w : pair.truth_l, vocab, weights,
                                              len_scale)
                                              .composite);
                    }
                    const objectives::AdvantageGroup adv = objectives::group_advantages(rewards);
                    // per-chain estimator A_i * sum_t grad log pi: the object whose
                    // variance grows with length (no per-token averaging here)
                    Tensor group_acc;
                    for (size_t i = 0; i < rollouts.size(); ++i) {
                        const Tensor lp =
                            policy::log_prob_t(tape, bound.policy, ctx, rollouts[i].tokens);
                        const Tensor chain =
                            tape.mul_scalar(tape.sum(lp), -adv.advantages[i]);
                        group_acc = group_acc.data.empty() ? chain : tape.add(group_acc, chain);
                    }
                    const Tensor group_loss =
                        tape.mul_scalar(group_acc, 1.0 / static_cast<double>(rollouts.size()));
                    loss_acc = loss_acc.data.empty() ? group_loss : tape.add(loss_acc, group_loss);
                    ++n_groups;
                }
            }
            const Tensor loss = tape.mul_scalar(loss_acc, 1.0 / n_groups);
            const numkit::Gradients grads = tape.backward(loss);
            train::GradBuffer buf = train::GradBuffer::zeros_like(state);
            buf.accumulate(grads, bound, 1.0);
            point.grpo_norms[static_cast<size_t>(rep)] = buf.l2_norm();
        });

        // fixed-input pairwise loss: identical every repeat
        std::vector<double> bt_norms(static_cast<size_t>(repeats));
        for (int rep = 0; rep < repeats; ++rep) {
            Tape tape;
            const train::ModelState bound = train::bind_state(tape, state);
            Tensor loss_acc;
            for (const synth::PreferencePair& pair : pairs) {
                const Tensor sw = scoring::score_t(tape, bound.policy, bound.head,
                                                   pair.winner.tokens, pair.prompt, pair.cot_w);
                const Tensor sl = scoring::score_t(tape, bound.policy, bound.head,
                                                   pair.loser.tokens, pair.prompt, pair.cot_l);
                const Tensor l = objectives::bt_loss_t(tape, sw, sl);
                loss_acc = loss_acc.data.empty() ? l : tape.add(loss_acc, l);
            }
            const Tensor loss = tape.mul_scalar(loss_acc, 1.0 / static_cast<double>(pairs.size()));
            const numkit::Gradients grads = tape.backward(loss);
            train::GradBuffer buf = train::GradBuffer::zeros_like(state);
            buf.accumulate(grads, bound, 1.0);
            bt_norms[static_cast<size_t>(rep)] = buf.l2_norm();
        }

        auto variance = [](std::span<const double> xs) {
            bool all_equal = true;
            for (double x : xs) all_equal = all_equal && x == xs[0];
            if (all_equal) return 0.0;  // deterministic repeats: exactly zero
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double acc = 0.0;
            for (double x : xs) acc += (x - mean) * (x - mean);
            return acc / static_cast<double>(xs.size() - 1);
        };
        point.grpo_var = variance(point.grpo_norms);
        point.bt_var = variance(bt_norms);
        report.points.push_back(std::move(point));
    }
    return report;
}

CurriculumReport bt_curriculum_profile(std::span<const double> deltas) {
    if (deltas.empty()) throw DataError("curriculum: empty grid");
    CurriculumReport report;
    for (double delta : deltas) {
        Tape tape;
        const Tensor sw = tape.watch(Tensor::scalar(delta));
        const Tensor sl = tape.watch(Tensor::scalar(0.0));
        const numkit::Gradients grads = tape.backward(objectives::bt_loss_t(tape, sw, sl));
        report.rows.push_back({delta, std::abs(grads.at(sw).item())});
    }
    report.strictly_decreasing = true;
    for (size_t i = 1; i < report.rows.size(); ++i) {
        if (report.rows[i].delta > report.rows[i - 1].delta &&
            !(report.rows[i].grad_mag < report.rows[i - 1].grad_mag)) {
            report.strictly_decreasing = false;
        }
    }
    return report;
}

void write_plot(const std::filesystem::path& path,
                std::span<const std::array<double, 3>> rows) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out.good()) throw IoError("plot: cannot write " + path.string());
    out.precision(17);
    for (const auto& row : rows) {
        out << row[0] << " " << row[1] << " " << row[2] << "\n";
    }
    if (!out.good()) throw IoError("plot: short write to " + path.string());
}

}  // namespace descore::theory
