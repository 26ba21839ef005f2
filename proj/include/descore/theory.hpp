#pragma once

#include <filesystem>
#include <span>

#include "descore/train/trainer.hpp"

namespace descore::theory {

/// One candidate next token: its probability under the policy and the
/// gradient of its log-probability restricted to the probe block (the first
/// probe_rows rows of the output projection).
struct TokenScore {
    int token = 0;
    double prob = 0.0;
    std::vector<double> grad;
};

/// Exact per-token enumeration at the position following `prefix`. Requires a
/// vocabulary small enough to enumerate (<= 64).
std::vector<TokenScore> enumerate_scores(const policy::PolicyParams& params,
                                         const policy::SequenceInput& prefix, int probe_rows);

struct MdsReport {
    std::vector<double> norms;
    double max_norm = 0.0;
};

/// Norm of the exactly-enumerated conditional mean of the per-token score
/// vector, per prefix: sum_o pi(o|H) grad log pi(o|H). Zero up to rounding.
MdsReport check_mds(const policy::PolicyParams& params,
                    std::span<const policy::SequenceInput> prefixes, int probe_rows);

struct VariancePoint {
    int length = 0;
    double var_s = 0.0;           // total variance of the cumulative score vector
    double bootstrap_sigma = 0.0;  // bootstrap std of var_s
    double min_step_var = 0.0;     // measured min per-step variance (subsampled)
};

struct VarianceReport {
    std::vector<VariancePoint> points;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int samples = 0;
    uint64_t seed = 0;
};

/// Monte-Carlo estimate of Var[S], S = sum_t grad log pi(o_t | .) on the probe
/// block, over rollouts of exact length T for each T in `lengths`, plus a
/// least-squares fit of Var[S] against T.
VarianceReport variance_vs_length(const policy::PolicyParams& params,
                                  const policy::SequenceInput& ctx, std::span<const int> lengths,
                                  int samples, int probe_rows, int step_var_samples, uint64_t seed,
                                  int threads);

struct ContrastPoint {
    int max_len = 0;
    double grpo_var = 0.0;
    double bt_var = 0.0;
    std::vector<double> grpo_norms;  // per-repeat gradient norms, for bootstrap tests
};

struct ContrastReport {
    std::vector<ContrastPoint> points;
    int repeats = 0;
};

/// Variance across repeats of the full-parameter gradient norm: the grouped
/// surrogate on fresh rollouts versus the pairwise loss on fixed CoTs.
ContrastReport grpo_vs_bt_gradient_variance(const train::ModelState& state,
                                            std::span<const synth::PreferencePair> pairs,
                                            int group_size, int repeats,
                                            std::span<const int> max_lens,
                                            const reward::RewardWeights& weights, double len_scale,
                                            uint64_t seed, int threads);

struct CurriculumRow {
    double delta = 0.0;
    double grad_mag = 0.0;
};

struct CurriculumReport {
    std::vector<CurriculumRow> rows;
    bool strictly_decreasing = false;
};

/// |d loss / d s_w| of the pairwise logistic loss across a margin grid,
/// computed through backward().
CurriculumReport bt_curriculum_profile(std::span<const double> deltas);

/// x / y / sigma columns, one line per point.
void write_plot(const std::filesystem::path& path,
                std::span<const std::array<double, 3>> rows);

void linear_fit(std::span<const double> xs, std::span<const double> ys, double& slope,
                double& intercept, double& r2);

}  // namespace descore::theory
