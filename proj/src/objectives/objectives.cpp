#include "descore/objectives.hpp"

#include <cmath>

namespace descore::objectives {

namespace {
constexpr double kLogRatioClamp = 20.0;
}

AdvantageGroup group_advantages(std::span<const double> rewards, double eps_std) {
    if (rewards.size() < 2) throw NumericError("group_advantages: need at least 2 rewards");
    AdvantageGroup out;
    out.rewards.assign(rewards.begin(), rewards.end());
    const int g = static_cast<int>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        if (!std::isfinite(r)) throw NumericError("group_advantages: non-finite reward");
        mean += r;
    }
    mean /= g;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= g;  // population variance
    const double std = std::sqrt(var);
    out.advantages.resize(rewards.size());
    if (std < eps_std) {
        out.degenerate = true;
        std::fill(out.advantages.begin(), out.advantages.end(), 0.0);
    } else {
        for (size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - mean) / std;
    }
    return out;
}

void GrpoConfig::validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("grpo: clip_eps must be in (0,1)");
    if (kl_beta < 0.0) throw ConfigError("grpo: kl_beta must be >= 0");
    if (group_size < 2) throw ConfigError("grpo: group_size must be >= 2");
}

void DualConfig::validate() const {
    if (alpha < 0.0) throw ConfigError("dual: alpha must be >= 0");
}

Tensor bt_loss_t(Tape& tape, const Tensor& s_w, const Tensor& s_l) {
    if (!s_w.is_scalar() || !s_l.is_scalar()) throw NumericError("bt_loss: scores must be scalars");
    return tape.softplus(tape.mul_scalar(tape.sub(s_w, s_l), -1.0));
}

double bt_loss(double s_w, double s_l) {
    if (!std::isfinite(s_w) || !std::isfinite(s_l)) throw NumericError("bt_loss: non-finite score");
    return numkit::softplus_stable(-(s_w - s_l));
}

Tensor aux_bt_loss_t(Tape& tape, std::span<const Tensor> s_w, std::span<const Tensor> s_l) {
    if (s_w.empty() || s_w.size() != s_l.size()) {
        throw NumericError("aux_bt_loss: group size mismatch");
    }
    Tensor acc = bt_loss_t(tape, s_w[0], s_l[0]);
    for (size_t i = 1; i < s_w.size(); ++i) {
        acc = tape.add(acc, bt_loss_t(tape, s_w[i], s_l[i]));
    }
    return tape.mul_scalar(acc, 1.0 / static_cast<double>(s_w.size()));
}

double aux_bt_loss(std::span<const double> s_w, std::span<const double> s_l) {
    if (s_w.empty() || s_w.size() != s_l.size()) {
        throw NumericError("aux_bt_loss: group size mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < s_w.size(); ++i) acc += bt_loss(s_w[i], s_l[i]);
    return acc / static_cast<double>(s_w.size());
}

GrpoLossParts grpo_loss_t(Tape& tape, std::span<const RolloutLogProbs> rollouts,
                          const AdvantageGroup& adv, const GrpoConfig& cfg) {
    cfg.validate();
    if (rollouts.empty()) throw NumericError("grpo_loss: no rollouts");
    if (rollouts.size() != adv.advantages.size()) {
        throw NumericError("grpo_loss: advantage count does not match rollouts");
    }

    GrpoLossParts parts;
    const double inv_g = 1.0 / static_cast<double>(rollouts.size());
    Tensor surr_acc;
    Tensor kl_acc;
    bool first = true;
    for (size_t i = 0; i < rollouts.size(); ++i) {
        const RolloutLogProbs& r = rollouts[i];
        const size_t n = r.current.data.size();
        if (r.current.ndim() != 1 || n == 0) {
            throw NumericError("grpo_loss: per-token log-probs must be a non-empty vector");
        }
        if (r.old_lp.size() != n || r.ref_lp.size() != n) {
            throw NumericError("grpo_loss: misaligned old/ref log-prob lengths");
        }
        const Tensor old_t(r.current.shape, r.old_lp);
        const Tensor ref_t(r.current.shape, r.ref_lp);

        const Tensor delta = tape.sub(r.current, old_t);
        for (double d : delta.data) {
            if (d <= -kLogRatioClamp || d >= kLogRatioClamp) parts.ratio_clamp_hits++;
        }
        const Tensor ratio = tape.exp(tape.clip(delta, -kLogRatioClamp, kLogRatioClamp));
        const double a = adv.advantages[i];
        const Tensor unclipped = tape.mul_scalar(ratio, a);
        const Tensor clipped = tape.mul_scalar(tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a);
        const Tensor surr_i = tape.mean(tape.minimum(unclipped, clipped));

        const Tensor kd = tape.sub(ref_t, r.current);
        const Tensor k = tape.add_scalar(tape.sub(tape.exp(kd), kd), -1.0);
        const Tensor kl_i = tape.mean(k);

        if (first) {
            surr_acc = surr_i;
            kl_acc = kl_i;
            first = false;
        } else {
            surr_acc = tape.add(surr_acc, surr_i);
            kl_acc = tape.add(kl_acc, kl_i);
        }
    }
    const Tensor surrogate = tape.mul_scalar(surr_acc, -inv_g);
    const Tensor kl = tape.mul_scalar(kl_acc, inv_g);
    parts.surrogate = surrogate.item();
    parts.kl = kl.item();
    parts.loss = tape.add(surrogate, tape.mul_scalar(kl, cfg.kl_beta));
    return parts;
}

double kl_estimate(std::span<const std::vector<double>> new_lp,
                   std::span<const std::vector<double>> ref_lp) {
    if (new_lp.empty() || new_lp.size() != ref_lp.size()) {
        throw NumericError("kl_estimate: group size mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < new_lp.size(); ++i) {
        if (new_lp[i].size() != ref_lp[i].size() || new_lp[i].empty()) {
            throw NumericError("kl_estimate: misaligned per-token log-probs");
        }
        double rollout_acc = 0.0;
        for (size_t t = 0; t < new_lp[i].size(); ++t) {
            const double d = ref_lp[i][t] - new_lp[i][t];
            rollout_acc += std::exp(d) - d - 1.0;
        }
        acc += rollout_acc / static_cast<double>(new_lp[i].size());
    }
    return acc / static_cast<double>(new_lp.size());
}

Tensor total_loss_t(Tape& tape, const Tensor& grpo, const Tensor& aux_bt, const DualConfig& cfg) {
    cfg.validate();
    return tape.add(tape.mul_scalar(grpo, cfg.grpo_weight), tape.mul_scalar(aux_bt, cfg.alpha));
}

double total_loss(double grpo, double aux_bt, const DualConfig& cfg) {
    cfg.validate();
    return cfg.grpo_weight * grpo + cfg.alpha * aux_bt;
}

}  // namespace descore::objectives
