#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "descore/numkit/tape.hpp"
#include "descore/rng.hpp"
#include "descore/vocab.hpp"

namespace descore::policy {

using numkit::Gradients;
using numkit::Tape;
using numkit::Tensor;

enum class Segment : uint8_t { kItem = 0, kPrompt = 1, kCot = 2, kQuery = 3 };

/// Token sequence with per-position role tags. Segments appear in the order
/// item, prompt, cot, query; the query slot (token -1), when present, is last
/// and its embedding is supplied by the scoring module.
struct SequenceInput {
    std::vector<int> tokens;
    std::vector<Segment> segments;

    static SequenceInput assemble(std::span<const int> item, std::span<const int> prompt,
                                  std::span<const int> cot, bool with_query);

    size_t size() const { return tokens.size(); }
    bool has_query() const { return !segments.empty() && segments.back() == Segment::kQuery; }
    void push_cot(int token);
    void validate(int vocab_size, int context) const;
};

struct PolicyConfig {
    int width = 64;
    int layers = 2;
    int heads = 2;
    int context = 160;
    int n_free = 48;
    double init_std = 0.02;

    int vocab_size() const { return Vocab::kNumSpecial + n_free; }
    int ffn_width() const { return 4 * width; }
    void validate() const;
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

/// Decoder-only causal transformer parameters (token + positional + segment
/// embeddings, pre-LN blocks, final LN, vocab projection).
struct PolicyParams {
    PolicyConfig cfg;
    Tensor tok_emb;  // [V, d]
    Tensor pos_emb;  // [context, d]
    Tensor seg_emb;  // [4, d]
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;
    Tensor out_proj;  // [d, V]

    static PolicyParams init(const PolicyConfig& cfg, uint64_t seed);

    /// Frozen deep copy; later updates to the live policy never touch it.
    PolicyParams snapshot() const { return *this; }

    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

/// Tape-bound copy of the parameters: every tensor carries a watched leaf
/// handle when the tape is recording, or stays detached otherwise. Create one
/// per forward pass when recording, or once per rollout otherwise.
using BoundPolicy = PolicyParams;

BoundPolicy bind(Tape& tape, const PolicyParams& params);

/// Per-position hidden states [T, d]. `query_emb` must be a bound [1, d]
/// tensor when the input carries a query slot, null otherwise.
Tensor hidden_states(Tape& tape, const BoundPolicy& p, const SequenceInput& input,
                     const Tensor* query_emb = nullptr);

/// Vocabulary logits [T, V] (no query slot allowed).
Tensor logits(Tape& tape, const BoundPolicy& p, const SequenceInput& input);

/// Per-token log-probabilities of `continuation` after `ctx` -> [n].
Tensor log_prob_t(Tape& tape, const BoundPolicy& p, const SequenceInput& ctx,
                  std::span<const int> continuation, Segment cont_segment = Segment::kCot);

std::vector<double> log_prob(const PolicyParams& params, const SequenceInput& ctx,
                             std::span<const int> continuation,
                             Segment cont_segment = Segment::kCot);

struct SampleConfig {
    int max_len = 40;
    double temperature = 1.0;
    bool greedy = false;
    bool stop_at_eos = true;
};

/// One sampled continuation and the (untempered) log-probabilities its tokens
/// had under the sampling parameters; matches log_prob() on the same tokens.
struct Rollout {
    std::vector<int> tokens;
    std::vector<double> logprobs;
};

Rollout sample(const PolicyParams& params, const SequenceInput& ctx, const SampleConfig& cfg,
               Rng& rng);

}  // namespace descore::policy
