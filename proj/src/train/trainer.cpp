#include "descore/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "descore/parallel.hpp"

namespace descore::train {

using numkit::Tape;
using policy::SequenceInput;
using synth::PreferencePair;

void Stage1Config::validate() const {
    if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("stage1: lr/weight_decay must be >= 0");
    if (batch_size < 1 || epochs < 1) throw ConfigError("stage1: batch_size/epochs must be >= 1");
    if (mask_prob < 0.0 || mask_prob > 1.0) throw ConfigError("stage1: mask_prob must be in [0,1]");
    if (eval_every < 0 || eval_pairs < 0 || max_steps < 0) {
        throw ConfigError("stage1: eval_every/eval_pairs/max_steps must be >= 0");
    }
    if (threads < 1) throw ConfigError("stage1: threads must be >= 1");
}

void Stage2Config::validate() const {
    if (lr < 0.0) throw ConfigError("stage2: lr must be >= 0");
    if (steps < 1) throw ConfigError("stage2: steps must be >= 1");
    if (group_size < 2) throw ConfigError("stage2: group_size must be >= 2");
    if (rollout_pairs < 1 || minibatch_pairs < 1) {
        throw ConfigError("stage2: rollout/minibatch pairs must be >= 1");
    }
    if (rollout_pairs % minibatch_pairs != 0) {
        throw ConfigError("stage2: minibatch_pairs must divide rollout_pairs");
    }
    objectives::GrpoConfig{clip_eps, kl_beta, group_size}.validate();
    objectives::DualConfig{bt_alpha, 1.0}.validate();
    weights.validate();
    if (!(len_scale > 0.0)) throw ConfigError("stage2: len_scale must be > 0");
    if (max_rollout_len < 1) throw ConfigError("stage2: max_rollout_len must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("stage2: temperature must be > 0");
    if (snapshot_every < 1) throw ConfigError("stage2: snapshot_every must be >= 1");
    if (threads < 1) throw ConfigError("stage2: threads must be >= 1");
}

namespace {

std::span<const int> side_item(const PreferencePair& p, bool winner) {
    return winner ? p.winner.tokens : p.loser.tokens;
}

std::span<const int> side_cot(const PreferencePair& p, bool winner) {
    return winner ? p.cot_w : p.cot_l;
}

const reward::AnswerBlock& side_truth(const PreferencePair& p, bool winner) {
    return winner ? p.truth_w : p.truth_l;
}

double elapsed_ms(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Stage1Config stage1_from(const RunConfig& cfg) {
    Stage1Config s;
    s.lr = cfg.s1_lr;
    s.weight_decay = cfg.s1_weight_decay;
    s.batch_size = cfg.s1_batch_size;
    s.epochs = cfg.s1_epochs;
    s.mask_prob = cfg.s1_mask_prob;
    s.use_cot = cfg.s1_use_cot;
    s.eval_every = cfg.s1_eval_every;
    s.eval_pairs = cfg.s1_eval_pairs;
    s.max_steps = cfg.s1_max_steps;
    s.eval_with_cot = cfg.s1_eval_with_cot < 0 ? cfg.s1_use_cot : cfg.s1_eval_with_cot != 0;
    s.tau_scale = cfg.eval_tau_scale;
    s.seed = cfg.seed;
    s.threads = cfg.threads;
    return s;
}

Stage2Config stage2_from(const RunConfig& cfg) {
    Stage2Config s;
    s.lr = cfg.s2_lr;
    s.steps = cfg.s2_steps;
    s.group_size = cfg.s2_group_size;
    s.rollout_pairs = cfg.s2_rollout_pairs;
    s.minibatch_pairs = cfg.s2_minibatch_pairs;
    s.clip_eps = cfg.s2_clip_eps;
    s.kl_beta = cfg.s2_kl_beta;
    s.bt_alpha = cfg.s2_bt_alpha;
    s.weights = cfg.weights;
    s.len_scale = cfg.s2_len_scale;
    s.max_rollout_len = cfg.s2_max_rollout_len;
    s.temperature = cfg.s2_temperature;
    s.snapshot_every = cfg.s2_snapshot_every;
    s.eval_every = cfg.s2_eval_every;
    s.eval_pairs = cfg.s2_eval_pairs;
    s.eval_with_cot = true;
    s.tau_scale = cfg.eval_tau_scale;
    s.checkpoint_every = cfg.s2_checkpoint_every;
    s.seed = cfg.seed;
    s.threads = cfg.threads;
    return s;
}

synth::Accuracy evaluate_split(const ModelState& state, std::span<const PreferencePair> pairs,
                               bool with_cot, int max_pairs, double tau_scale, int threads,
                               double* tau_out) {
    if (pairs.empty()) throw DataError("evaluate: empty split");
    const size_t n = max_pairs > 0 ? std::min(pairs.size(), static_cast<size_t>(max_pairs))
                                   : pairs.size();
    const auto sub = pairs.first(n);
    const synth::ScoreFn fn = [&](const PreferencePair& p, bool winner) {
        const std::span<const int> cot = with_cot ? side_cot(p, winner) : std::span<const int>{};
        return scoring::score(state.policy, state.head, side_item(p, winner), p.prompt, cot);
    };
    const auto scores = synth::score_pairs(fn, sub, threads);
    const double tau = synth::tau_from_scores(scores, tau_scale);
    if (tau_out) *tau_out = tau;
    return synth::accuracy_from_scores(scores, tau);
}

TrainResult train_stage1(ModelState init, AdamState opt, const synth::Dataset& data,
                         const Stage1Config& cfg, MetricSink& sink, int64_t start_step,
                         const TrainHooks& hooks) {
    cfg.validate();
    if (data.train.empty()) throw DataError("stage1: empty training split");

    TrainResult result;
    result.state = std::move(init);
    result.opt = opt.m.empty() ? AdamState::init_like(result.state) : std::move(opt);

    const AdamWConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8};
    const scoring::MaskPolicy mask{cfg.mask_prob};
    const int n = static_cast<int>(data.train.size());
    const auto t0 = std::chrono::steady_clock::now();

    struct Slot {
        double loss = 0.0;
        int cot_uses = 0;
        int decisions = 0;
        GradBuffer grads;
    };

    int64_t step = 0;
    bool done = false;
    for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng::derive(cfg.seed, {kTagShuffle, static_cast<uint64_t>(epoch)});
        for (int i = n - 1; i > 0; --i) {
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
        }

        for (int base = 0; base < n && !done; base += cfg.batch_size) {
            ++step;
            if (cfg.max_steps > 0 && step > cfg.max_steps) {
                --step;
                done = true;
                break;
            }
            if (step <= start_step) continue;

            const int batch_n = std::min(cfg.batch_size, n - base);
            std::vector<Slot> slots(static_cast<size_t>(batch_n));
            try {
                parallel_for(batch_n, cfg.threads, [&](int bi) {
                    const PreferencePair& pair =
                        data.train[static_cast<size_t>(order[static_cast<size_t>(base + bi)])];
                    Slot& slot = slots[static_cast<size_t>(bi)];
                    Tape tape;
                    const ModelState bound = bind_state(tape, result.state);
                    numkit::Tensor scores[2];
                    for (int side = 0; side < 2; ++side) {
                        const bool winner = side == 0;
                        std::span<const int> cot;
                        if (cfg.use_cot) {
                            Rng mask_rng = Rng::derive(
                                cfg.seed, {kTagMask, static_cast<uint64_t>(step),
                                           static_cast<uint64_t>(bi), static_cast<uint64_t>(side)});
                            slot.decisions++;
                            if (!scoring::draw_mask(mask, mask_rng)) {
                                cot = side_cot(pair, winner);
                                slot.cot_uses++;
                            }
                        }
                        scores[side] = scoring::score_t(tape, bound.policy, bound.head,
                                                        side_item(pair, winner), pair.prompt, cot);
                    }
                    const numkit::Tensor loss = objectives::bt_loss_t(tape, scores[0], scores[1]);
                    slot.loss = loss.item();
                    const numkit::Gradients grads = tape.backward(loss);
                    slot.grads = GradBuffer::zeros_like(result.state);
                    slot.grads.accumulate(grads, bound, 1.0);
                });
            } catch (const NumericError& e) {
                throw NumericError("stage1 step " + std::to_string(step) + ": " + e.what());
            }

            GradBuffer total = GradBuffer::zeros_like(result.state);
            double mean_loss = 0.0;
            for (const Slot& slot : slots) {
                mean_loss += slot.loss;
                result.cot_uses += slot.cot_uses;
                result.mask_decisions += slot.decisions;
                for (size_t k = 0; k < total.slots.size(); ++k) {
                    auto& dst = total.slots[k].data;
                    const auto& src = slot.grads.slots[k].data;
                    for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
            }
            total.scale(1.0 / batch_n);
            mean_loss /= batch_n;
            if (!std::isfinite(mean_loss)) {
                throw NumericError("stage1 step " + std::to_string(step) + ": non-finite loss");
            }
            adamw_step(result.state, total, adam, result.opt);

            sink.log({{"kind", "step"},
                      {"stage", 1},
                      {"step", step},
                      {"loss", mean_loss},
                      {"grad_norm", total.l2_norm()},
                      {"wall_ms", elapsed_ms(t0)}});

            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
                double tau = 0.0;
                const synth::Accuracy acc =
                    evaluate_split(result.state, data.eval_id, cfg.eval_with_cot, cfg.eval_pairs,
                                   cfg.tau_scale, cfg.threads, &tau);
                sink.log({{"kind", "eval"},
                          {"stage", 1},
                          {"step", step},
                          {"acc_with_tie", acc.with_tie},
                          {"acc_without_tie", acc.without_tie},
                          {"tau", tau},
                          {"pairs", acc.n},
                          {"wall_ms", elapsed_ms(t0)}});
            }
            if (hooks.stop_after_step > 0 && step >= hooks.stop_after_step) done = true;
        }
    }
    result.steps_done = step;
    sink.log({{"kind", "summary"},
              {"stage", 1},
              {"steps", step},
              {"cot_uses", result.cot_uses},
              {"wall_ms", elapsed_ms(t0)}});
    return result;
}

namespace {

struct RolloutRecord {
    policy::Rollout rollout;
    reward::RewardBreakdown breakdown;
    std::vector<double> ref_lp;
};

struct GroupRecord {
    int pair_index = 0;
    bool winner = false;
    std::vector<RolloutRecord> rollouts;
    objectives::AdvantageGroup adv;
};

}  // namespace

TrainResult train_stage2(Stage2Init init, const synth::Dataset& data, const Stage2Config& cfg,
                         MetricSink& sink, const TrainHooks& hooks) {
    cfg.validate();
    if (data.train.empty()) throw DataError("stage2: empty training split");
    if (static_cast<int>(data.train.size()) < cfg.rollout_pairs) {
        throw DataError("stage2: fewer training pairs than rollout_pairs");
    }

    TrainResult result;
    result.state = std::move(init.state);
    result.opt = init.opt.m.empty() ? AdamState::init_like(result.state) : std::move(init.opt);
    result.ref_policy =
        init.ref_policy ? std::move(init.ref_policy) : std::optional(result.state.policy.snapshot());
    result.old_policy =
        init.old_policy ? std::move(init.old_policy) : std::optional(result.state.policy.snapshot());

    const Vocab vocab{result.state.policy.cfg.n_free};
    const AdamWConfig adam{cfg.lr, 0.0, 0.9, 0.999, 1e-8};
    const objectives::GrpoConfig grpo_cfg{cfg.clip_eps, cfg.kl_beta, cfg.group_size};
    const objectives::DualConfig dual_cfg{cfg.bt_alpha, 1.0};
    const policy::SampleConfig sample_cfg{cfg.max_rollout_len, cfg.temperature, false, true};
    const int n = static_cast<int>(data.train.size());
    const int n_slots = cfg.rollout_pairs * 2;
    const auto t0 = std::chrono::steady_clock::now();

    for (int64_t step = init.start_step + 1; step <= cfg.steps; ++step) {
        try {
            if ((step - 1) % cfg.snapshot_every == 0) {
                result.old_policy = result.state.policy.snapshot();
            }
            const policy::PolicyParams& old_policy = *result.old_policy;
            const policy::PolicyParams& ref_policy = *result.ref_policy;

            // pick this step's pairs
            Rng pick_rng = Rng::derive(cfg.seed, {kTagPairPick, static_cast<uint64_t>(step)});
            std::vector<int> pool(static_cast<size_t>(n));
            std::iota(pool.begin(), pool.end(), 0);
            std::vector<int> picked(static_cast<size_t>(cfg.rollout_pairs));
            for (int j = 0; j < cfg.rollout_pairs; ++j) {
                std::swap(pool[static_cast<size_t>(j)],
                          pool[static_cast<size_t>(pick_rng.uniform_int(j, n - 1))]);
                picked[static_cast<size_t>(j)] = pool[static_cast<size_t>(j)];
            }

            // rollout + rule-reward + advantage phase; the scalar score plays
            // no part here, checked via the scoring call counter.
            const uint64_t score_calls_before = scoring::score_call_count();
            std::vector<GroupRecord> groups(static_cast<size_t>(n_slots));
            parallel_for(n_slots, cfg.threads, [&](int slot) {
                GroupRecord& group = groups[static_cast<size_t>(slot)];
                group.pair_index = picked[static_cast<size_t>(slot / 2)];
                group.winner = slot % 2 == 0;
                const PreferencePair& pair = data.train[static_cast<size_t>(group.pair_index)];
                const SequenceInput ctx = SequenceInput::assemble(
                    side_item(pair, group.winner), pair.prompt, {}, false);
                std::vector<double> composites;
                composites.reserve(static_cast<size_t>(cfg.group_size));
                for (int i = 0; i < cfg.group_size; ++i) {
                    Rng rng = Rng::derive(cfg.seed, {kTagRollout, static_cast<uint64_t>(step),
                                                     static_cast<uint64_t>(slot),
                                                     static_cast<uint64_t>(i)});
                    RolloutRecord rec;
                    rec.rollout = policy::sample(old_policy, ctx, sample_cfg, rng);
                    rec.breakdown =
                        reward::composite_reward(rec.rollout.tokens, side_truth(pair, group.winner),
                                                 vocab, cfg.weights, cfg.len_scale);
                    composites.push_back(rec.breakdown.composite);
                    group.rollouts.push_back(std::move(rec));
                }
                group.adv = objectives::group_advantages(composites);
            });
            const bool decoupled = scoring::score_call_count() == score_calls_before;

            // reference log-probs for the KL term
            parallel_for(n_slots, cfg.threads, [&](int slot) {
                GroupRecord& group = groups[static_cast<size_t>(slot)];
                const PreferencePair& pair = data.train[static_cast<size_t>(group.pair_index)];
                const SequenceInput ctx = SequenceInput::assemble(
                    side_item(pair, group.winner), pair.prompt, {}, false);
                for (RolloutRecord& rec : group.rollouts) {
                    rec.ref_lp = policy::log_prob(ref_policy, ctx, rec.rollout.tokens);
                }
            });

            int degenerate_groups = 0;
            double reward_sum = 0.0, adv_abs_sum = 0.0;
            double fmt_sum = 0.0, qual_sum = 0.0, len_sum = 0.0;
            int64_t rollout_count = 0;
            for (const GroupRecord& g : groups) {
                if (g.adv.degenerate) ++degenerate_groups;
                for (size_t i = 0; i < g.rollouts.size(); ++i) {
                    reward_sum += g.rollouts[i].breakdown.composite;
                    fmt_sum += g.rollouts[i].breakdown.r_fmt;
                    qual_sum += g.rollouts[i].breakdown.r_qual;
                    len_sum += g.rollouts[i].breakdown.r_len;
                    adv_abs_sum += std::abs(g.adv.advantages[i]);
                    ++rollout_count;
                }
            }
            const bool all_degenerate = degenerate_groups == n_slots;

            // optimization over minibatches
            const int n_mb = cfg.rollout_pairs / cfg.minibatch_pairs;
            double loss_sum = 0.0, surr_sum = 0.0, kl_sum = 0.0, aux_sum = 0.0, gnorm_sum = 0.0;
            int clamp_hits = 0;
            for (int mb = 0; mb < n_mb; ++mb) {
                const int mb_pairs = cfg.minibatch_pairs;
                const double group_weight = 1.0 / (2.0 * mb_pairs);
                const double pair_weight = 1.0 / mb_pairs;

                struct PairSlot {
                    GradBuffer grads;
                    double loss = 0.0;
                    double surr = 0.0;
                    double kl = 0.0;
                    double aux = 0.0;
                    int clamp_hits = 0;
                };
                std::vector<PairSlot> pair_slots(static_cast<size_t>(mb_pairs));
                parallel_for(mb_pairs, cfg.threads, [&](int pi) {
                    PairSlot& ps = pair_slots[static_cast<size_t>(pi)];
                    const int slot_w = (mb * mb_pairs + pi) * 2;
                    GroupRecord& gw = groups[static_cast<size_t>(slot_w)];
                    GroupRecord& gl = groups[static_cast<size_t>(slot_w + 1)];
                    const PreferencePair& pair = data.train[static_cast<size_t>(gw.pair_index)];

                    Tape tape;
                    const ModelState bound = bind_state(tape, result.state);
                    numkit::Tensor grpo_acc;
                    std::vector<numkit::Tensor> s_w, s_l;
                    for (const GroupRecord* g : {&gw, &gl}) {
                        const SequenceInput ctx = SequenceInput::assemble(
                            side_item(pair, g->winner), pair.prompt, {}, false);
                        std::vector<objectives::RolloutLogProbs> rlps;
                        rlps.reserve(g->rollouts.size());
                        for (const RolloutRecord& rec : g->rollouts) {
                            objectives::RolloutLogProbs rlp;
                            rlp.current =
                                policy::log_prob_t(tape, bound.policy, ctx, rec.rollout.tokens);
                            rlp.old_lp = rec.rollout.logprobs;
                            rlp.ref_lp = rec.ref_lp;
                            rlps.push_back(std::move(rlp));

                            const numkit::Tensor s = scoring::score_t(
                                tape, bound.policy, bound.head, side_item(pair, g->winner),
                                pair.prompt, scoring::strip_eos(rec.rollout.tokens));
                            (g->winner ? s_w : s_l).push_back(s);
                        }
                        const objectives::GrpoLossParts parts =
                            objectives::grpo_loss_t(tape, rlps, g->adv, grpo_cfg);
                        ps.surr += parts.surrogate * group_weight;
                        ps.kl += parts.kl * group_weight;
                        ps.clamp_hits += parts.ratio_clamp_hits;
                        grpo_acc = grpo_acc.data.empty() ? parts.loss : tape.add(grpo_acc, parts.loss);
                    }
                    const numkit::Tensor grpo_term = tape.mul_scalar(grpo_acc, group_weight);
                    const numkit::Tensor aux = objectives::aux_bt_loss_t(tape, s_w, s_l);
                    ps.aux = aux.item() * pair_weight;
                    const numkit::Tensor aux_term = tape.mul_scalar(aux, pair_weight);
                    const numkit::Tensor pair_loss =
                        objectives::total_loss_t(tape, grpo_term, aux_term, dual_cfg);
                    ps.loss = pair_loss.item();
                    const numkit::Gradients grads = tape.backward(pair_loss);
                    ps.grads = GradBuffer::zeros_like(result.state);
                    ps.grads.accumulate(grads, bound, 1.0);
                });

                GradBuffer total = GradBuffer::zeros_like(result.state);
                double mb_loss = 0.0;
                for (const PairSlot& ps : pair_slots) {
                    mb_loss += ps.loss;
                    surr_sum += ps.surr;
                    kl_sum += ps.kl;
                    aux_sum += ps.aux;
                    clamp_hits += ps.clamp_hits;
                    for (size_t k = 0; k < total.slots.size(); ++k) {
                        auto& dst = total.slots[k].data;
                        const auto& src = ps.grads.slots[k].data;
                        for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                    }
                }
                if (!std::isfinite(mb_loss)) {
                    throw NumericError("non-finite minibatch loss");
                }
                adamw_step(result.state, total, adam, result.opt);
                loss_sum += mb_loss;
                gnorm_sum += total.l2_norm();
            }

            nlohmann::json row = {{"kind", "step"},
                                  {"stage", 2},
                                  {"step", step},
                                  {"loss", loss_sum / n_mb},
                                  {"grpo_surrogate", surr_sum / n_mb},
                                  {"kl", kl_sum / n_mb},
                                  {"bt_aux", aux_sum / n_mb},
                                  {"mean_reward", reward_sum / static_cast<double>(rollout_count)},
                                  {"mean_fmt", fmt_sum / static_cast<double>(rollout_count)},
                                  {"mean_qual", qual_sum / static_cast<double>(rollout_count)},
                                  {"mean_len_reward", len_sum / static_cast<double>(rollout_count)},
                                  {"mean_abs_adv", adv_abs_sum / static_cast<double>(rollout_count)},
                                  {"degenerate_groups", degenerate_groups},
                                  {"ratio_clamp_hits", clamp_hits},
                                  {"grad_norm", gnorm_sum / n_mb},
                                  {"decoupled_scoring", decoupled},
                                  {"mask_decisions", 0},
                                  {"wall_ms", elapsed_ms(t0)}};
            if (all_degenerate) row["warning"] = "all advantage groups degenerate";
            sink.log(row);

            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
                double tau = 0.0;
                const synth::Accuracy acc =
                    evaluate_split(result.state, data.eval_id, cfg.eval_with_cot, cfg.eval_pairs,
                                   cfg.tau_scale, cfg.threads, &tau);
                sink.log({{"kind", "eval"},
                          {"stage", 2},
                          {"step", step},
                          {"acc_with_tie", acc.with_tie},
                          {"acc_without_tie", acc.without_tie},
                          {"tau", tau},
                          {"pairs", acc.n},
                          {"wall_ms", elapsed_ms(t0)}});
            }

            result.steps_done = step;
            const bool interrupt = hooks.stop_after_step > 0 && step >= hooks.stop_after_step;
            if (!hooks.checkpoint_dir.empty() &&
                ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || interrupt)) {
                Checkpoint ckpt;
                ckpt.config_fingerprint = hooks.config_fingerprint;
                ckpt.stage = 2;
                ckpt.step = step;
                ckpt.master_seed = cfg.seed;
                ckpt.state = result.state;
                ckpt.opt = result.opt;
                ckpt.ref_policy = result.ref_policy;
                ckpt.old_policy = result.old_policy;
                save_checkpoint(ckpt, hooks.checkpoint_dir /
                                          ("checkpoint_step" + std::to_string(step) + ".bin"));
            }
            if (interrupt) break;
        } catch (const NumericError& e) {
            throw NumericError("stage2 step " + std::to_string(step) + ": " + e.what());
        }
    }

    sink.log({{"kind", "summary"},
              {"stage", 2},
              {"steps", result.steps_done},
              {"cot_uses", result.cot_uses},
              {"wall_ms", elapsed_ms(t0)}});
    return result;
}

}  // namespace descore::train
