#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "descore/vocab.hpp"

namespace descore::reward {

/// Parsed judgment: one label per sub-dimension, plus the overall score that
/// only the text grammar carries.
struct AnswerBlock {
    std::array<Label, 5> scores = {Label::kNA, Label::kNA, Label::kNA, Label::kNA, Label::kNA};
    std::optional<double> overall;

    int numeric_sum() const;
    void validate() const;
};

struct FormatResult {
    int reward = 0;  // 0 or 1
    std::optional<AnswerBlock> block;
};

/// Token grammar:
///   THINK_OPEN body* THINK_CLOSE ANS_OPEN (DIM SCORE){5, canonical order}
///   ANS_CLOSE [EOS]
/// where body tokens may be anything except the structural delimiters
/// (THINK_OPEN, ANS_OPEN, ANS_CLOSE, EOS, PAD, BOS). Malformed input scores 0.
FormatResult format_reward_tokens(std::span<const int> rollout, const Vocab& vocab);

/// Text grammar: optional whitespace, a <think>...</think> span, then an
/// <answer>...</answer> span whose body is a JSON object with exactly the
/// keys "dimensional_scores" (five fixed sub-dimension keys, values "0", "1",
/// "2", "N/A" or integers 0/1/2) and "overall_score" in [1.00, 5.00].
FormatResult format_reward_text(std::string_view text);

/// Fraction of the five sub-dimensions where pred matches truth exactly;
/// N/A is a label like any other.
double quality_reward(const AnswerBlock& pred, const AnswerBlock& truth);

/// Piecewise length reward: 0 below 500, 0.2*floor(len/500) up to 2000,
/// then 1.
double length_reward(long long len);

/// Same shape with breakpoints 500*scale and 2000*scale; scale 1 reproduces
/// length_reward exactly.
double length_reward_scaled(long long len, double scale);

struct RewardWeights {
    double fmt = 0.1;
    double qual = 0.7;
    double len = 0.2;
    void validate() const;
};

struct RewardBreakdown {
    double r_fmt = 0.0;
    double r_qual = 0.0;
    double r_len = 0.0;
    double composite = 0.0;
    long long length = 0;
    std::optional<AnswerBlock> block;
};

/// Rule-based rollout reward. Quality contributes 0 when the format gate
/// fails (no parsed block); the length counts every generated token.
RewardBreakdown composite_reward(std::span<const int> rollout, const AnswerBlock& truth,
                                 const Vocab& vocab, const RewardWeights& weights,
                                 double len_scale = 1.0);

}  // namespace descore::reward
