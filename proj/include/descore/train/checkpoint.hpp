#pragma once

#include <filesystem>
#include <optional>

#include "descore/train/adamw.hpp"

namespace descore::train {

/// Everything needed to resume a run exactly: parameters, optimizer moments,
/// stage/step position, the master seed (streams are derived statelessly from
/// it), and, mid-stage-2, the frozen reference and rollout policies.
struct Checkpoint {
    uint64_t config_fingerprint = 0;
    int32_t stage = 0;
    int64_t step = 0;
    uint64_t master_seed = 0;
    ModelState state;
    AdamState opt;
    std::optional<policy::PolicyParams> ref_policy;
    std::optional<policy::PolicyParams> old_policy;
};

/// Single binary file: magic, version, checksummed payload. Loading verifies
/// the checksum and the format version; forward outputs round-trip bitwise.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace descore::train
