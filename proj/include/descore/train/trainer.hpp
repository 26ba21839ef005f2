#pragma once

#include <optional>

#include "descore/objectives.hpp"
#include "descore/train/config.hpp"
#include "descore/synth.hpp"
#include "descore/train/checkpoint.hpp"
#include "descore/train/metrics.hpp"

namespace descore::train {

struct Stage1Config {
    double lr = 3e-4;
    double weight_decay = 0.01;
    int batch_size = 8;
    int epochs = 8;
    double mask_prob = 0.5;
    bool use_cot = true;
    int eval_every = 10;
    int eval_pairs = 0;      // 0 = whole eval split
    int max_steps = 0;       // 0 = run all epochs
    bool eval_with_cot = true;
    double tau_scale = 0.1;
    uint64_t seed = 0;
    int threads = 1;
    void validate() const;
};

struct Stage2Config {
    double lr = 1e-4;
    int steps = 50;
    int group_size = 8;
    int rollout_pairs = 4;
    int minibatch_pairs = 2;
    double clip_eps = 0.2;
    double kl_beta = 0.01;
    double bt_alpha = 0.005;
    reward::RewardWeights weights{};
    double len_scale = 0.05;
    int max_rollout_len = 40;
    double temperature = 1.0;
    int snapshot_every = 1;
    int eval_every = 1;
    int eval_pairs = 150;
    bool eval_with_cot = true;
    double tau_scale = 0.1;
    int checkpoint_every = 0;
    uint64_t seed = 0;
    int threads = 1;
    void validate() const;
};

struct TrainHooks {
    int64_t stop_after_step = 0;  // 0 = run to completion; used by resume tests
    std::filesystem::path checkpoint_dir;  // periodic stage-2 checkpoints land here
    uint64_t config_fingerprint = 0;
};

struct TrainResult {
    ModelState state;
    AdamState opt;
    int64_t steps_done = 0;
    int64_t cot_uses = 0;        // scoring calls that actually saw a CoT (stage 1)
    int64_t mask_decisions = 0;  // masking draws made (stage 1 only; must stay 0 in stage 2)
    std::optional<policy::PolicyParams> ref_policy;  // stage-2 frozen reference
    std::optional<policy::PolicyParams> old_policy;  // stage-2 last rollout snapshot
};

/// Scores an evaluation split with the attached oracle CoTs (or without,
/// matching the training variant) and a spread-relative tie threshold.
synth::Accuracy evaluate_split(const ModelState& state, std::span<const synth::PreferencePair> pairs,
                               bool with_cot, int max_pairs, double tau_scale, int threads,
                               double* tau_out = nullptr);

/// Stage configs resolved from a full run configuration.
Stage1Config stage1_from(const RunConfig& cfg);
Stage2Config stage2_from(const RunConfig& cfg);

/// Discriminative cold start: pairwise logistic loss over masked scores.
TrainResult train_stage1(ModelState init, AdamState opt, const synth::Dataset& data,
                         const Stage1Config& cfg, MetricSink& sink, int64_t start_step = 0,
                         const TrainHooks& hooks = {});

struct Stage2Init {
    ModelState state;
    AdamState opt;
    std::optional<policy::PolicyParams> ref_policy;  // defaults to state at entry
    std::optional<policy::PolicyParams> old_policy;
    int64_t start_step = 0;
};

/// Dual-objective reinforcement stage: grouped rollouts from the frozen
/// rollout policy, rule-based composite rewards, clipped surrogate with KL,
/// and the index-paired auxiliary pairwise loss on the scalar scores.
TrainResult train_stage2(Stage2Init init, const synth::Dataset& data, const Stage2Config& cfg,
                         MetricSink& sink, const TrainHooks& hooks = {});

}  // namespace descore::train
