#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "descore/policy.hpp"
#include "descore/rewards.hpp"
#include "descore/synth.hpp"

namespace descore::train {

/// Full resolved run configuration. The on-disk form is flat dotted-key text
/// (`section.key = value`, `#` comments); unknown keys are hard errors so
/// typos cannot silently change a training run.
struct RunConfig {
    // run
    uint64_t seed = 0;
    int threads = 8;

    // model
    int model_width = 64;
    int model_layers = 2;
    int model_heads = 2;
    int model_context = 160;
    int model_n_free = 48;
    double model_init_std = 0.02;

    // data
    std::string data_dir;
    synth::DatasetConfig data;

    // stage 1
    double s1_lr = 3e-4;
    double s1_weight_decay = 0.01;
    int s1_batch_size = 16;
    int s1_epochs = 2;
    double s1_mask_prob = 0.5;
    bool s1_use_cot = true;
    int s1_eval_every = 1;
    int s1_eval_pairs = 0;  // 0 = full split
    int s1_max_steps = 0;   // 0 = epochs decide
    int s1_eval_with_cot = -1;  // -1 auto (follows use_cot), 0 no, 1 yes

    // stage 2
    double s2_lr = 1e-4;
    int s2_steps = 50;
    int s2_group_size = 8;
    int s2_rollout_pairs = 4;
    int s2_minibatch_pairs = 2;
    double s2_clip_eps = 0.2;
    double s2_kl_beta = 0.01;
    double s2_bt_alpha = 0.005;
    double s2_len_scale = 0.05;
    int s2_max_rollout_len = 56;
    double s2_temperature = 1.0;
    int s2_snapshot_every = 1;
    int s2_eval_every = 1;
    int s2_eval_pairs = 0;  // full split
    int s2_checkpoint_every = 0;

    // reward weights
    reward::RewardWeights weights;

    // eval
    double eval_tau = 0.0;  // 0 = relative mode via tau_scale
    double eval_tau_scale = 0.1;

    // theory experiments
    int theory_variance_samples = 2000;
    int theory_step_var_samples = 100;

    policy::PolicyConfig policy_config() const;
    Vocab vocab() const { return Vocab{model_n_free}; }

    /// Canonical sorted `key = value` text; its hash is the config fingerprint.
    std::string resolved_text() const;
    uint64_t fingerprint() const;
};

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

/// Applies key/value pairs over the defaults. Unknown keys and malformed
/// values throw ConfigError naming the key. `require_seed` enforces that
/// run.seed was given either in the map or via a positive `seed_override`.
RunConfig resolve_config(const std::map<std::string, std::string>& kv, bool require_seed = true,
                         const std::optional<uint64_t>& seed_override = {});

RunConfig load_config(const std::filesystem::path& path, bool require_seed = true,
                      const std::optional<uint64_t>& seed_override = {});

uint64_t fnv1a64(std::string_view bytes);

}  // namespace descore::train
