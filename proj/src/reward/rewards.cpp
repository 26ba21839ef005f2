#include "descore/rewards.hpp"

#include <cmath>
#include <string>

#include <json.hpp>

namespace descore::reward {

using nlohmann::json;

int AnswerBlock::numeric_sum() const {
    int s = 0;
    for (Label l : scores) s += label_numeric(l);
    return s;
}

void AnswerBlock::validate() const {
    if (overall && (!(*overall >= 1.0) || !(*overall <= 5.0))) {
        throw DataError("answer block: overall score out of [1.00, 5.00]");
    }
}

FormatResult format_reward_tokens(std::span<const int> rollout, const Vocab& vocab) {
    const FormatResult fail{};
    const size_t n = rollout.size();
    size_t i = 0;
    if (i >= n || rollout[i] != Vocab::kThinkOpen) return fail;
    ++i;
    while (i < n && rollout[i] != Vocab::kThinkClose) {
        const int t = rollout[i];
        if (t == Vocab::kThinkOpen || t == Vocab::kAnsOpen || t == Vocab::kAnsClose ||
            t == Vocab::kEos || t == Vocab::kPad || t == Vocab::kBos || t < 0 || t >= vocab.size()) {
            return fail;
        }
        ++i;
    }
    if (i >= n) return fail;  // missing THINK_CLOSE
    ++i;
    if (i >= n || rollout[i] != Vocab::kAnsOpen) return fail;
    ++i;
    AnswerBlock block;
    for (int d = 0; d < 5; ++d) {
        if (i >= n || rollout[i] != Vocab::kDim0 + d) return fail;  // each dim once, fixed order
        ++i;
        if (i >= n || !Vocab::is_score_token(rollout[i])) return fail;
        block.scores[static_cast<size_t>(d)] = Vocab::label_of(rollout[i]);
        ++i;
    }
    if (i >= n || rollout[i] != Vocab::kAnsClose) return fail;
    ++i;
    if (i < n && rollout[i] == Vocab::kEos) ++i;
    if (i != n) return fail;
    return FormatResult{1, block};
}

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool ws_only(std::string_view s) {
    for (char c : s) {
        if (!is_ws(c)) return false;
    }
    return true;
}

// Reads a label from a JSON value: the quoted forms "0","1","2","N/A" or the
// bare integers 0/1/2.
bool label_from_json(const json& v, Label& out) {
    if (v.is_string()) return label_from_str(v.get<std::string>(), out);
    if (v.is_number_integer()) {
        const int64_t n = v.get<int64_t>();
        if (n < 0 || n > 2) return false;
        out = static_cast<Label>(n);
        return true;
    }
    return false;
}

}  // namespace

FormatResult format_reward_text(std::string_view text) {
    const FormatResult fail{};
    const size_t think_open = text.find("<think>");
    if (think_open == std::string_view::npos || !ws_only(text.substr(0, think_open))) return fail;
    const size_t think_close = text.find("</think>", think_open + 7);
    if (think_close == std::string_view::npos) return fail;
    const size_t after_think = think_close + 8;
    const size_t ans_open = text.find("<answer>", after_think);
    if (ans_open == std::string_view::npos || !ws_only(text.substr(after_think, ans_open - after_think))) {
        return fail;
    }
    const size_t ans_close = text.find("</answer>", ans_open + 8);
    if (ans_close == std::string_view::npos) return fail;
    if (!ws_only(text.substr(ans_close + 9))) return fail;

    const std::string body(text.substr(ans_open + 8, ans_close - ans_open - 8));
    const json parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() || parsed.size() != 2) return fail;
    if (!parsed.contains("dimensional_scores") || !parsed.contains("overall_score")) return fail;

    const json& dims = parsed["dimensional_scores"];
    if (!dims.is_object() || dims.size() != kDimNames.size()) return fail;
    AnswerBlock block;
    for (size_t d = 0; d < kDimNames.size(); ++d) {
        if (!dims.contains(kDimNames[d])) return fail;
        if (!label_from_json(dims[kDimNames[d]], block.scores[d])) return fail;
    }

    const json& overall = parsed["overall_score"];
    if (!overall.is_number()) return fail;
    const double score = overall.get<double>();
    if (!(score >= 1.0 && score <= 5.0)) return fail;
    block.overall = score;
    return FormatResult{1, block};
}

double quality_reward(const AnswerBlock& pred, const AnswerBlock& truth) {
    pred.validate();
    truth.validate();
    int correct = 0;
    for (size_t d = 0; d < pred.scores.size(); ++d) {
        if (pred.scores[d] == truth.scores[d]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pred.scores.size());
}

double length_reward(long long len) { return length_reward_scaled(len, 1.0); }

double length_reward_scaled(long long len, double scale) {
    if (len < 0) throw NumericError("length_reward: negative length");
    if (!(scale > 0.0)) throw NumericError("length_reward: scale must be positive");
    // Work on the equivalent unscaled length so the step values stay the exact
    // literals 0.2/0.4/0.6 rather than accumulated products.
    const long long eq =
        scale == 1.0 ? len : std::llround(static_cast<double>(len) / scale);
    if (eq < 500) return 0.0;
    if (eq >= 2000) return 1.0;
    switch (eq / 500) {
        case 1: return 0.2;
        case 2: return 0.4;
        default: return 0.6;
    }
}

void RewardWeights::validate() const {
    if (fmt < 0.0 || qual < 0.0 || len < 0.0) {
        throw ConfigError("reward weights: components must be non-negative");
    }
    if (fmt == 0.0 && qual == 0.0 && len == 0.0) {
        throw ConfigError("reward weights: at least one component must be positive");
    }
}

RewardBreakdown composite_reward(std::span<const int> rollout, const AnswerBlock& truth,
                                 const Vocab& vocab, const RewardWeights& weights,
                                 double len_scale) {
    weights.validate();
    RewardBreakdown out;
    const FormatResult fmt = format_reward_tokens(rollout, vocab);
    out.r_fmt = fmt.reward;
    out.block = fmt.block;
    out.r_qual = fmt.block ? quality_reward(*fmt.block, truth) : 0.0;
    out.length = static_cast<long long>(rollout.size());
    out.r_len = length_reward_scaled(out.length, len_scale);
    out.composite = weights.fmt * out.r_fmt + weights.qual * out.r_qual + weights.len * out.r_len;
    return out;
}

}  // namespace descore::reward
