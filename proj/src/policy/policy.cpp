#include "descore/policy.hpp"

#include <algorithm>
#include <cmath>

namespace descore {

const char* label_str(Label l) {
    switch (l) {
        case Label::kZero: return "0";
        case Label::kOne: return "1";
        case Label::kTwo: return "2";
        case Label::kNA: return "N/A";
    }
    return "?";
}

bool label_from_str(const std::string& s, Label& out) {
    if (s == "0") {
        out = Label::kZero;
    } else if (s == "1") {
        out = Label::kOne;
    } else if (s == "2") {
        out = Label::kTwo;
    } else if (s == "N/A") {
        out = Label::kNA;
    } else {
        return false;
    }
    return true;
}

Label Vocab::label_of(int score_tok) {
    if (!is_score_token(score_tok)) throw DataError("vocab: not a score token");
    return static_cast<Label>(score_tok - kScore0);
}

Dim Vocab::dim_of(int dim_tok) {
    if (!is_dim_token(dim_tok)) throw DataError("vocab: not a dimension token");
    return static_cast<Dim>(dim_tok - kDim0);
}

}  // namespace descore

namespace descore::policy {

SequenceInput SequenceInput::assemble(std::span<const int> item, std::span<const int> prompt,
                                      std::span<const int> cot, bool with_query) {
    SequenceInput s;
    s.tokens.reserve(item.size() + prompt.size() + cot.size() + 1);
    s.segments.reserve(s.tokens.capacity());
    for (int t : item) {
        s.tokens.push_back(t);
        s.segments.push_back(Segment::kItem);
    }
    for (int t : prompt) {
        s.tokens.push_back(t);
        s.segments.push_back(Segment::kPrompt);
    }
    for (int t : cot) {
        s.tokens.push_back(t);
        s.segments.push_back(Segment::kCot);
    }
    if (with_query) {
        s.tokens.push_back(-1);
        s.segments.push_back(Segment::kQuery);
    }
    if (s.tokens.empty()) throw DataError("sequence: empty input");
    return s;
}

void SequenceInput::push_cot(int token) {
    if (has_query()) throw DataError("sequence: cannot extend past the query slot");
    tokens.push_back(token);
    segments.push_back(Segment::kCot);
}

void SequenceInput::validate(int vocab_size, int context) const {
    if (tokens.empty()) throw DataError("sequence: empty input");
    if (tokens.size() != segments.size()) throw DataError("sequence: tag/token length mismatch");
    if (static_cast<int>(tokens.size()) > context) {
        throw DataError("sequence: length " + std::to_string(tokens.size()) +
                        " exceeds context " + std::to_string(context));
    }
    int n_query = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0 && segments[i] < segments[i - 1]) {
            throw DataError("sequence: segments out of order");
        }
        if (segments[i] == Segment::kQuery) {
            ++n_query;
            if (tokens[i] != -1) throw DataError("sequence: query slot must carry token -1");
            if (i + 1 != tokens.size()) throw DataError("sequence: query must be last");
        } else if (tokens[i] < 0 || tokens[i] >= vocab_size) {
            throw DataError("sequence: token id " + std::to_string(tokens[i]) + " out of vocab " +
                            std::to_string(vocab_size));
        }
    }
    if (n_query > 1) throw DataError("sequence: multiple query slots");
}

void PolicyConfig::validate() const {
    if (width <= 0 || layers <= 0 || heads <= 0 || context <= 0) {
        throw ConfigError("policy: width/layers/heads/context must be positive");
    }
    if (width % heads != 0) throw ConfigError("policy: width must be divisible by heads");
    if (n_free < 0) throw ConfigError("policy: n_free must be non-negative");
    if (init_std <= 0.0) throw ConfigError("policy: init_std must be positive");
}

namespace {

Tensor normal_tensor(std::vector<int> shape, double std, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, std);
    return t;
}

}  // namespace

PolicyParams PolicyParams::init(const PolicyConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = Rng::derive(seed, {kTagInit, 0x70});
    PolicyParams p;
    p.cfg = cfg;
    const int d = cfg.width;
    const int v = cfg.vocab_size();
    p.tok_emb = normal_tensor({v, d}, cfg.init_std, rng);
    p.pos_emb = normal_tensor({cfg.context, d}, cfg.init_std, rng);
    p.seg_emb = normal_tensor({4, d}, cfg.init_std, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        BlockParams b;
        b.ln1_g = Tensor::full({d}, 1.0);
        b.ln1_b = Tensor::zeros({d});
        b.wq = normal_tensor({d, d}, cfg.init_std, rng);
        b.bq = Tensor::zeros({d});
        b.wk = normal_tensor({d, d}, cfg.init_std, rng);
        b.bk = Tensor::zeros({d});
        b.wv = normal_tensor({d, d}, cfg.init_std, rng);
        b.bv = Tensor::zeros({d});
        b.wo = normal_tensor({d, d}, cfg.init_std, rng);
        b.bo = Tensor::zeros({d});
        b.ln2_g = Tensor::full({d}, 1.0);
        b.ln2_b = Tensor::zeros({d});
        b.w1 = normal_tensor({d, cfg.ffn_width()}, cfg.init_std, rng);
        b.b1 = Tensor::zeros({cfg.ffn_width()});
        b.w2 = normal_tensor({cfg.ffn_width(), d}, cfg.init_std, rng);
        b.b2 = Tensor::zeros({d});
        p.blocks.push_back(std::move(b));
    }
    p.lnf_g = Tensor::full({d}, 1.0);
    p.lnf_b = Tensor::zeros({d});
    p.out_proj = normal_tensor({d, v}, cfg.init_std, rng);
    return p;
}

namespace {

template <class Params, class Fn>
void visit_impl(Params& p, Fn&& fn) {
    fn("tok_emb", p.tok_emb);
    fn("pos_emb", p.pos_emb);
    fn("seg_emb", p.seg_emb);
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        const std::string pre = "block" + std::to_string(l) + ".";
        fn(pre + "ln1_g", b.ln1_g);
        fn(pre + "ln1_b", b.ln1_b);
        fn(pre + "wq", b.wq);
        fn(pre + "bq", b.bq);
        fn(pre + "wk", b.wk);
        fn(pre + "bk", b.bk);
        fn(pre + "wv", b.wv);
        fn(pre + "bv", b.bv);
        fn(pre + "wo", b.wo);
        fn(pre + "bo", b.bo);
        fn(pre + "ln2_g", b.ln2_g);
        fn(pre + "ln2_b", b.ln2_b);
        fn(pre + "w1", b.w1);
        fn(pre + "b1", b.b1);
        fn(pre + "w2", b.w2);
        fn(pre + "b2", b.b2);
    }
    fn("lnf_g", p.lnf_g);
    fn("lnf_b", p.lnf_b);
    fn("out_proj", p.out_proj);
}

}  // namespace

void PolicyParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_impl(*this, fn);
}

void PolicyParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    visit_impl(*this, fn);
}

BoundPolicy bind(Tape& tape, const PolicyParams& params) {
    BoundPolicy b = params;
    if (tape.recording()) {
        b.visit([&tape](const std::string&, Tensor& t) { t = tape.watch(t); });
    }
    return b;
}

namespace {

Tensor causal_mask(int n) {
    Tensor m = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
    }
    return m;
}

}  // namespace

Tensor hidden_states(Tape& tape, const BoundPolicy& p, const SequenceInput& input,
                     const Tensor* query_emb) {
    input.validate(p.cfg.vocab_size(), p.cfg.context);
    if (input.has_query() && query_emb == nullptr) {
        throw DataError("forward: input has a query slot but no query embedding was supplied");
    }
    const int n = static_cast<int>(input.size());
    const int d = p.cfg.width;
    const int dh = d / p.cfg.heads;

    const int n_tok = input.has_query() ? n - 1 : n;
    Tensor x;
    if (n_tok > 0) {
        x = tape.embed(p.tok_emb, std::span<const int>(input.tokens.data(), static_cast<size_t>(n_tok)));
        if (input.has_query()) x = tape.concat_rows(x, *query_emb);
    } else {
        x = *query_emb;
    }

    std::vector<int> pos_ids(static_cast<size_t>(n));
    std::vector<int> seg_ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        pos_ids[static_cast<size_t>(i)] = i;
        seg_ids[static_cast<size_t>(i)] = static_cast<int>(input.segments[static_cast<size_t>(i)]);
    }
    x = tape.add(x, tape.embed(p.pos_emb, pos_ids));
    x = tape.add(x, tape.embed(p.seg_emb, seg_ids));

    const Tensor mask = causal_mask(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (const BlockParams& blk : p.blocks) {
        const Tensor h = tape.layernorm(x, blk.ln1_g, blk.ln1_b);
        const Tensor q = tape.add(tape.matmul(h, blk.wq), blk.bq);
        const Tensor k = tape.add(tape.matmul(h, blk.wk), blk.bk);
        const Tensor v = tape.add(tape.matmul(h, blk.wv), blk.bv);
        std::vector<Tensor> head_outs;
        head_outs.reserve(static_cast<size_t>(p.cfg.heads));
        for (int hd = 0; hd < p.cfg.heads; ++hd) {
            const int c0 = hd * dh, c1 = (hd + 1) * dh;
            const Tensor qh = tape.cols(q, c0, c1);
            const Tensor kh = tape.cols(k, c0, c1);
            const Tensor vh = tape.cols(v, c0, c1);
            Tensor scores = tape.mul_scalar(tape.matmul(qh, tape.transpose(kh)), scale);
            scores = tape.add(scores, mask);
            const Tensor probs = tape.softmax(scores);
            head_outs.push_back(tape.matmul(probs, vh));
        }
        const Tensor attn = tape.add(tape.matmul(tape.concat_cols(head_outs), blk.wo), blk.bo);
        x = tape.add(x, attn);

        const Tensor h2 = tape.layernorm(x, blk.ln2_g, blk.ln2_b);
        const Tensor ff = tape.tanh(tape.add(tape.matmul(h2, blk.w1), blk.b1));
        const Tensor ff2 = tape.add(tape.matmul(ff, blk.w2), blk.b2);
        x = tape.add(x, ff2);
    }
    return tape.layernorm(x, p.lnf_g, p.lnf_b);
}

Tensor logits(Tape& tape, const BoundPolicy& p, const SequenceInput& input) {
    if (input.has_query()) throw DataError("logits: query slot has no next-token distribution");
    return tape.matmul(hidden_states(tape, p, input), p.out_proj);
}

Tensor log_prob_t(Tape& tape, const BoundPolicy& p, const SequenceInput& ctx,
                  std::span<const int> continuation, Segment cont_segment) {
    if (continuation.empty()) throw DataError("log_prob: empty continuation");
    if (ctx.has_query()) throw DataError("log_prob: context must not contain a query slot");
    SequenceInput full = ctx;
    for (int t : continuation) {
        full.tokens.push_back(t);
        full.segments.push_back(cont_segment);
    }
    const int base = static_cast<int>(ctx.size());
    const int n = static_cast<int>(continuation.size());
    const Tensor hidden = hidden_states(tape, p, full);
    const Tensor pred_rows = tape.rows(hidden, base - 1, base + n - 1);
    const Tensor pred_logits = tape.matmul(pred_rows, p.out_proj);
    const Tensor logp = tape.log_softmax(pred_logits);
    return tape.gather_per_row(logp, continuation);
}

std::vector<double> log_prob(const PolicyParams& params, const SequenceInput& ctx,
                             std::span<const int> continuation, Segment cont_segment) {
    Tape tape(false);
    const BoundPolicy bound = bind(tape, params);
    return log_prob_t(tape, bound, ctx, continuation, cont_segment).data;
}

Rollout sample(const PolicyParams& params, const SequenceInput& ctx, const SampleConfig& cfg,
               Rng& rng) {
    if (cfg.max_len < 1) throw DataError("sample: max_len must be >= 1");
    if (!(cfg.temperature > 0.0)) throw DataError("sample: temperature must be positive");
    if (ctx.has_query()) throw DataError("sample: context must not contain a query slot");

    Tape tape(false);
    const BoundPolicy bound = bind(tape, params);
    const int vocab = params.cfg.vocab_size();

    Rollout out;
    SequenceInput seq = ctx;
    std::vector<double> probs(static_cast<size_t>(vocab));
    std::vector<double> logp(static_cast<size_t>(vocab));
    for (int step = 0; step < cfg.max_len; ++step) {
        const Tensor hidden = hidden_states(tape, bound, seq);
        const Tensor last = tape.rows(hidden, static_cast<int>(seq.size()) - 1,
                                      static_cast<int>(seq.size()));
        const Tensor row_logits = tape.matmul(last, bound.out_proj);
        numkit::log_softmax_row(row_logits.data.data(), logp.data(), vocab);

        int token;
        if (cfg.greedy) {
            token = 0;
            for (int i = 1; i < vocab; ++i) {
                if (row_logits.data[static_cast<size_t>(i)] >
                    row_logits.data[static_cast<size_t>(token)]) {
                    token = i;
                }
            }
        } else if (cfg.temperature == 1.0) {
            numkit::softmax_row(row_logits.data.data(), probs.data(), vocab);
            token = rng.categorical(probs);
        } else {
            std::vector<double> scaled(row_logits.data);
            for (double& v : scaled) v /= cfg.temperature;
            numkit::softmax_row(scaled.data(), probs.data(), vocab);
            token = rng.categorical(probs);
        }

        out.tokens.push_back(token);
        out.logprobs.push_back(logp[static_cast<size_t>(token)]);
        seq.push_cot(token);
        if (cfg.stop_at_eos && token == Vocab::kEos) break;
    }
    return out;
}

}  // namespace descore::policy
