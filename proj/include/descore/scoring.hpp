#pragma once

#include <cstdint>
#include <span>

#include "descore/policy.hpp"

namespace descore::scoring {

using numkit::Tape;
using numkit::Tensor;

/// Learnable query token embedding plus a two-layer regression head mapping
/// the query position's hidden state to one scalar.
struct ScoringHead {
    Tensor query;  // [1, d]
    Tensor w1, b1;  // [d, d], [d]
    Tensor w2, b2;  // [d, 1], [1]

    static ScoringHead init(int width, uint64_t seed);
    ScoringHead snapshot() const { return *this; }
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

/// Tape-bound copy of the head, mirroring policy::bind.
using BoundHead = ScoringHead;

BoundHead bind_head(Tape& tape, const ScoringHead& head);

/// Total score() invocations since process start; lets callers assert that a
/// code region (for instance advantage computation) performed no scoring.
uint64_t score_call_count();

/// Differentiable scalar score of (item, prompt, cot?, [query]). Pass an empty
/// cot for the no-reasoning path.
Tensor score_t(Tape& tape, const policy::BoundPolicy& p, const BoundHead& head,
               std::span<const int> item, std::span<const int> prompt,
               std::span<const int> cot);

double score(const policy::PolicyParams& params, const ScoringHead& head,
             std::span<const int> item, std::span<const int> prompt,
             std::span<const int> cot = {});

struct MaskPolicy {
    double p = 0.5;
    void validate() const;
};

struct MaskedScore {
    double value = 0.0;
    bool used_cot = false;
};

/// True means drop the CoT for this use. Draw is made per use.
bool draw_mask(const MaskPolicy& mask, Rng& rng);

/// With probability p scores (item, prompt) alone; otherwise includes the cot.
MaskedScore score_with_mask(const policy::PolicyParams& params, const ScoringHead& head,
                            std::span<const int> item, std::span<const int> prompt,
                            std::span<const int> cot, const MaskPolicy& mask, Rng& rng);

/// Trailing EOS carries no judgment content; scoring inputs drop it.
std::span<const int> strip_eos(std::span<const int> tokens);

struct ThinkScoreResult {
    policy::Rollout rollout;
    double reward = 0.0;
};

/// Two-step inference: generate a reasoning sequence, then score the full
/// input with the query token appended.
ThinkScoreResult think_then_score(const policy::PolicyParams& params, const ScoringHead& head,
                                  std::span<const int> item, std::span<const int> prompt,
                                  const policy::SampleConfig& cfg, Rng& rng);

}  // namespace descore::scoring
