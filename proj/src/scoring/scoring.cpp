#include "descore/scoring.hpp"

#include <atomic>
#include <cmath>

namespace descore::scoring {

namespace {
std::atomic<uint64_t> g_score_calls{0};
}

uint64_t score_call_count() { return g_score_calls.load(); }

ScoringHead ScoringHead::init(int width, uint64_t seed) {
    if (width <= 0) throw ConfigError("scoring: width must be positive");
    Rng rng = Rng::derive(seed, {kTagInit, 0x51});
    const double w_std = 1.0 / std::sqrt(static_cast<double>(width));
    ScoringHead h;
    h.query = Tensor::zeros({1, width});
    for (double& v : h.query.data) v = rng.normal(0.0, 0.02);
    h.w1 = Tensor::zeros({width, width});
    for (double& v : h.w1.data) v = rng.normal(0.0, w_std);
    h.b1 = Tensor::zeros({width});
    h.w2 = Tensor::zeros({width, 1});
    for (double& v : h.w2.data) v = rng.normal(0.0, w_std);
    h.b2 = Tensor::zeros({1});
    return h;
}

void ScoringHead::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("head.query", query);
    fn("head.w1", w1);
    fn("head.b1", b1);
    fn("head.w2", w2);
    fn("head.b2", b2);
}

void ScoringHead::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    fn("head.query", query);
    fn("head.w1", w1);
    fn("head.b1", b1);
    fn("head.w2", w2);
    fn("head.b2", b2);
}

BoundHead bind_head(Tape& tape, const ScoringHead& head) {
    BoundHead b = head;
    if (tape.recording()) {
        b.visit([&tape](const std::string&, Tensor& t) { t = tape.watch(t); });
    }
    return b;
}

Tensor score_t(Tape& tape, const policy::BoundPolicy& p, const BoundHead& head,
               std::span<const int> item, std::span<const int> prompt,
               std::span<const int> cot) {
    g_score_calls.fetch_add(1, std::memory_order_relaxed);
    const policy::SequenceInput seq = policy::SequenceInput::assemble(item, prompt, cot, true);
    const Tensor hidden = policy::hidden_states(tape, p, seq, &head.query);
    const int n = static_cast<int>(seq.size());
    const Tensor h_reward = tape.rows(hidden, n - 1, n);
    const Tensor z = tape.tanh(tape.add(tape.matmul(h_reward, head.w1), head.b1));
    // sum of the single [1,1] element: exact value, scalar [1] shape
    return tape.sum(tape.add(tape.matmul(z, head.w2), head.b2));
}

double score(const policy::PolicyParams& params, const ScoringHead& head,
             std::span<const int> item, std::span<const int> prompt,
             std::span<const int> cot) {
    Tape tape(false);
    const policy::BoundPolicy bound = policy::bind(tape, params);
    const BoundHead bh = bind_head(tape, head);
    return score_t(tape, bound, bh, item, prompt, cot).item();
}

void MaskPolicy::validate() const {
    if (p < 0.0 || p > 1.0) throw ConfigError("mask: probability must be in [0,1]");
}

bool draw_mask(const MaskPolicy& mask, Rng& rng) {
    mask.validate();
    return rng.bernoulli(mask.p);
}

MaskedScore score_with_mask(const policy::PolicyParams& params, const ScoringHead& head,
                            std::span<const int> item, std::span<const int> prompt,
                            std::span<const int> cot, const MaskPolicy& mask, Rng& rng) {
    if (cot.empty()) throw DataError("score_with_mask: cot must be present");
    MaskedScore out;
    out.used_cot = !draw_mask(mask, rng);
    out.value = out.used_cot ? score(params, head, item, prompt, cot)
                             : score(params, head, item, prompt, {});
    return out;
}

std::span<const int> strip_eos(std::span<const int> tokens) {
    if (!tokens.empty() && tokens.back() == Vocab::kEos) return tokens.first(tokens.size() - 1);
    return tokens;
}

ThinkScoreResult think_then_score(const policy::PolicyParams& params, const ScoringHead& head,
                                  std::span<const int> item, std::span<const int> prompt,
                                  const policy::SampleConfig& cfg, Rng& rng) {
    const policy::SequenceInput ctx = policy::SequenceInput::assemble(item, prompt, {}, false);
    ThinkScoreResult out;
    out.rollout = policy::sample(params, ctx, cfg, rng);
    out.reward = score(params, head, item, prompt, strip_eos(out.rollout.tokens));
    return out;
}

}  // namespace descore::scoring
