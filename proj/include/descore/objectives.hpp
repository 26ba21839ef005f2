#pragma once

#include <span>
#include <vector>

#include "descore/numkit/tape.hpp"

namespace descore::objectives {

using numkit::Tape;
using numkit::Tensor;

/// Group-normalized rewards. Non-degenerate groups have mean-zero advantages
/// with unit population variance; a group whose reward spread is below
/// eps_std is degenerate and gets all-zero advantages instead of an error.
struct AdvantageGroup {
    std::vector<double> rewards;
    std::vector<double> advantages;
    bool degenerate = false;
};

AdvantageGroup group_advantages(std::span<const double> rewards, double eps_std = 1e-8);

struct GrpoConfig {
    double clip_eps = 0.2;
    double kl_beta = 0.01;
    int group_size = 8;
    void validate() const;
};

struct DualConfig {
    double alpha = 0.005;
    double grpo_weight = 1.0;
    void validate() const;
};

/// -log sigmoid(s_w - s_l), assembled from primitives so one backward covers
/// it; numerically it is softplus(-(s_w - s_l)).
Tensor bt_loss_t(Tape& tape, const Tensor& s_w, const Tensor& s_l);
double bt_loss(double s_w, double s_l);

/// Index-paired mean of the pairwise loss over two equally sized groups of
/// scalar scores.
Tensor aux_bt_loss_t(Tape& tape, std::span<const Tensor> s_w, std::span<const Tensor> s_l);
double aux_bt_loss(std::span<const double> s_w, std::span<const double> s_l);

/// Log-prob triple for one rollout: `current` lives on the tape; `old` and
/// `ref` are detached per-token values captured at sampling / stage start.
struct RolloutLogProbs {
    Tensor current;
    std::vector<double> old_lp;
    std::vector<double> ref_lp;
};

struct GrpoLossParts {
    Tensor loss;             // scalar on the tape
    double surrogate = 0.0;  // -(1/G) sum_i mean_t min(...)
    double kl = 0.0;         // weighted estimator value (before beta)
    int ratio_clamp_hits = 0;  // log-ratio clamp triggers (overflow guard)
};

/// Clipped importance-ratio surrogate with group-relative advantages plus the
/// KL penalty, averaged 1/G over rollouts and 1/|o_i| over tokens. Ratios are
/// formed from log-prob differences with the exponent clamped to +-20.
GrpoLossParts grpo_loss_t(Tape& tape, std::span<const RolloutLogProbs> rollouts,
                          const AdvantageGroup& adv, const GrpoConfig& cfg);

/// Per-token estimator exp(ref-new) - (ref-new) - 1 >= 0 with the same
/// 1/G, 1/|o_i| weighting as the surrogate.
double kl_estimate(std::span<const std::vector<double>> new_lp,
                   std::span<const std::vector<double>> ref_lp);

Tensor total_loss_t(Tape& tape, const Tensor& grpo, const Tensor& aux_bt, const DualConfig& cfg);
double total_loss(double grpo, double aux_bt, const DualConfig& cfg);

}  // namespace descore::objectives
