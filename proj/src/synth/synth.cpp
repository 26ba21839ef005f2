#include "descore/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "descore/parallel.hpp"

namespace descore::synth {

using nlohmann::json;

void DatasetConfig::validate() const {
    if (n_train < 1 || n_eval < 1 || n_ood < 0) {
        throw ConfigError("dataset: split sizes must be positive");
    }
    if (prompt_tokens < 1) throw ConfigError("dataset: prompt_tokens must be >= 1");
    for (double eta : {item_noise, ood_item_noise}) {
        if (eta < 0.0 || eta >= 0.5) throw ConfigError("dataset: item noise must be in [0, 0.5)");
    }
    for (double kappa : {cot_noise_train, cot_noise_eval, cot_noise_ood}) {
        if (kappa < 0.0 || kappa > 1.0) throw ConfigError("dataset: cot noise must be in [0, 1]");
    }
    if (think_len_min < 0 || think_len_max < think_len_min) {
        throw ConfigError("dataset: bad think length range");
    }
}

namespace {

Label flip_label(Label l, Rng& rng) {
    const int shift = rng.uniform_int(1, 3);
    return static_cast<Label>((static_cast<int>(l) + shift) % 4);
}

std::array<Label, 5> random_quality(Rng& rng) {
    std::array<Label, 5> q;
    for (Label& l : q) l = static_cast<Label>(rng.uniform_int(0, 3));
    return q;
}

int quality_sum(const std::array<Label, 5>& q) {
    int s = 0;
    for (Label l : q) s += label_numeric(l);
    return s;
}

std::string pair_key(const PreferencePair& p) {
    std::ostringstream out;
    for (int t : p.prompt) out << t << ',';
    out << '|';
    for (int t : p.winner.tokens) out << t << ',';
    out << '|';
    for (int t : p.loser.tokens) out << t << ',';
    return out.str();
}

}  // namespace

std::vector<int> render_item(const std::array<Label, 5>& quality, double eta, Rng& rng) {
    std::vector<int> tokens;
    tokens.reserve(10);
    for (int d = 0; d < 5; ++d) {
        tokens.push_back(Vocab::kDim0 + d);
        Label shown = quality[static_cast<size_t>(d)];
        if (eta > 0.0 && rng.bernoulli(eta)) shown = flip_label(shown, rng);
        tokens.push_back(Vocab::score_token(shown));
    }
    return tokens;
}

std::array<Label, 5> decode_item(std::span<const int> tokens) {
    if (tokens.size() != 10) throw DataError("decode_item: expected 10 tokens");
    std::array<Label, 5> q;
    for (int d = 0; d < 5; ++d) {
        if (tokens[static_cast<size_t>(2 * d)] != Vocab::kDim0 + d) {
            throw DataError("decode_item: bad dimension tag");
        }
        q[static_cast<size_t>(d)] = Vocab::label_of(tokens[static_cast<size_t>(2 * d + 1)]);
    }
    return q;
}

std::vector<int> oracle_cot(const reward::AnswerBlock& truth, std::span<const int> pool,
                            double kappa, int think_min, int think_max, Rng& rng) {
    truth.validate();
    if (pool.empty()) throw DataError("oracle_cot: empty think-token pool");
    std::vector<int> t = {Vocab::kThinkOpen};
    const int think_len = think_min == think_max ? think_min : rng.uniform_int(think_min, think_max);
    for (int i = 0; i < think_len; ++i) {
        t.push_back(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    }
    t.push_back(Vocab::kThinkClose);
    t.push_back(Vocab::kAnsOpen);
    for (int d = 0; d < 5; ++d) {
        Label l = truth.scores[static_cast<size_t>(d)];
        if (kappa > 0.0 && rng.bernoulli(kappa)) l = flip_label(l, rng);
        t.push_back(Vocab::kDim0 + d);
        t.push_back(Vocab::score_token(l));
    }
    t.push_back(Vocab::kAnsClose);
    return t;
}

namespace {

struct SplitSpec {
    uint64_t id;
    int n_pairs;
    double eta;
    double kappa;
    std::span<const int> prompt_pool;
};

std::vector<PreferencePair> generate_split(const DatasetConfig& cfg, uint64_t seed,
                                           const SplitSpec& spec,
                                           std::unordered_set<std::string>& seen) {
    std::vector<PreferencePair> pairs;
    pairs.reserve(static_cast<size_t>(spec.n_pairs));
    for (int i = 0; i < spec.n_pairs; ++i) {
        Rng rng = Rng::derive(seed, {kTagDataGen, spec.id, static_cast<uint64_t>(i)});
        PreferencePair pair;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            std::array<Label, 5> qa = random_quality(rng);
            std::array<Label, 5> qb = random_quality(rng);
            while (quality_sum(qa) == quality_sum(qb)) qb = random_quality(rng);
            if (quality_sum(qa) < quality_sum(qb)) std::swap(qa, qb);

            pair.prompt.clear();
            for (int p = 0; p < cfg.prompt_tokens; ++p) {
                pair.prompt.push_back(spec.prompt_pool[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(spec.prompt_pool.size()) - 1))]);
            }
            pair.winner.quality = qa;
            pair.winner.tokens = render_item(qa, spec.eta, rng);
            pair.loser.quality = qb;
            pair.loser.tokens = render_item(qb, spec.eta, rng);
            pair.truth_w = reward::AnswerBlock{qa, {}};
            pair.truth_l = reward::AnswerBlock{qb, {}};
            placed = seen.insert(pair_key(pair)).second;
        }
        if (!placed) {
            throw DataError("generate_dataset: token space too small to keep splits disjoint");
        }
        Rng cot_rng = Rng::derive(seed, {kTagCot, spec.id, static_cast<uint64_t>(i)});
        pair.cot_w = oracle_cot(pair.truth_w, spec.prompt_pool, spec.kappa, cfg.think_len_min,
                                cfg.think_len_max, cot_rng);
        pair.cot_l = oracle_cot(pair.truth_l, spec.prompt_pool, spec.kappa, cfg.think_len_min,
                                cfg.think_len_max, cot_rng);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg, const Vocab& vocab, uint64_t seed) {
    cfg.validate();
    vocab.validate();
    if (vocab.n_free < 4) {
        throw DataError("generate_dataset: vocab too small, need at least 4 free tokens");
    }
    // Two disjoint prompt families: in-domain draws from the lower half of the
    // free-token range, the shifted split from the upper half.
    std::vector<int> pool_a, pool_b;
    for (int t = vocab.first_free(); t < vocab.size(); ++t) {
        if (t - vocab.first_free() < vocab.n_free / 2) {
            pool_a.push_back(t);
        } else {
            pool_b.push_back(t);
        }
    }

    std::unordered_set<std::string> seen;
    Dataset ds;
    ds.train = generate_split(cfg, seed, {1, cfg.n_train, cfg.item_noise, cfg.cot_noise_train, pool_a},
                              seen);
    ds.eval_id = generate_split(cfg, seed, {2, cfg.n_eval, cfg.item_noise, cfg.cot_noise_eval, pool_a},
                                seen);
    if (cfg.n_ood > 0) {
        ds.eval_ood = generate_split(
            cfg, seed, {3, cfg.n_ood, cfg.ood_item_noise, cfg.cot_noise_ood, pool_b}, seen);
    }
    return ds;
}

FilterReport consistency_filter(std::vector<PreferencePair>& pairs, const Vocab& vocab) {
    FilterReport report;
    report.input = pairs.size();
    std::vector<PreferencePair> kept;
    kept.reserve(pairs.size());
    for (PreferencePair& p : pairs) {
        const reward::FormatResult fw = reward::format_reward_tokens(p.cot_w, vocab);
        const reward::FormatResult fl = reward::format_reward_tokens(p.cot_l, vocab);
        if (!fw.block || !fl.block) {
            report.dropped_unparsable++;
            continue;
        }
        if (fw.block->numeric_sum() > fl.block->numeric_sum()) {
            kept.push_back(std::move(p));
        } else {
            report.dropped_disagree++;
        }
    }
    pairs = std::move(kept);
    report.kept = pairs.size();
    report.retention = report.input == 0
                           ? 0.0
                           : static_cast<double>(report.kept) / static_cast<double>(report.input);
    return report;
}

void EvalConfig::validate() const {
    if (tau < 0.0) throw ConfigError("eval: tau must be non-negative");
}

std::vector<std::pair<double, double>> score_pairs(const ScoreFn& fn,
                                                   std::span<const PreferencePair> pairs,
                                                   int threads) {
    std::vector<std::pair<double, double>> scores(pairs.size());
    parallel_for(static_cast<int>(pairs.size()), threads, [&](int i) {
        const PreferencePair& p = pairs[static_cast<size_t>(i)];
        scores[static_cast<size_t>(i)] = {fn(p, true), fn(p, false)};
    });
    return scores;
}

Accuracy accuracy_from_scores(std::span<const std::pair<double, double>> scores, double tau) {
    if (scores.empty()) throw DataError("eval_accuracy: empty pair set");
    Accuracy acc;
    acc.n = scores.size();
    size_t wins = 0, margin_wins = 0;
    for (const auto& [sw, sl] : scores) {
        if (sw > sl) ++wins;
        if (sw - sl > tau) ++margin_wins;
    }
    acc.without_tie = static_cast<double>(wins) / static_cast<double>(scores.size());
    acc.with_tie = static_cast<double>(margin_wins) / static_cast<double>(scores.size());
    return acc;
}

double tau_from_scores(std::span<const std::pair<double, double>> scores, double scale) {
    if (scores.empty()) throw DataError("tau_from_scores: empty pair set");
    double mean = 0.0;
    for (const auto& [sw, sl] : scores) mean += sw - sl;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (const auto& [sw, sl] : scores) var += (sw - sl - mean) * (sw - sl - mean);
    var /= static_cast<double>(scores.size());
    const double tau = scale * std::sqrt(var);
    return tau > 0.0 ? tau : 1e-12;
}

Accuracy eval_accuracy(const ScoreFn& fn, std::span<const PreferencePair> pairs,
                       const EvalConfig& cfg, int threads) {
    cfg.validate();
    const auto scores = score_pairs(fn, pairs, threads);
    return accuracy_from_scores(scores, cfg.tau);
}

namespace {

json labels_to_json(const std::array<Label, 5>& q) {
    json arr = json::array();
    for (Label l : q) arr.push_back(label_str(l));
    return arr;
}

std::array<Label, 5> labels_from_json(const json& arr) {
    if (!arr.is_array() || arr.size() != 5) throw DataError("dataset: bad label array");
    std::array<Label, 5> q;
    for (size_t i = 0; i < 5; ++i) {
        if (!label_from_str(arr[i].get<std::string>(), q[i])) {
            throw DataError("dataset: bad label value");
        }
    }
    return q;
}

constexpr int kDatasetVersion = 1;

void write_split(const std::vector<PreferencePair>& pairs, const std::string& name,
                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out.good()) throw IoError("dataset: cannot write " + path.string());
    json header = {{"format", "descore.dataset"},
                   {"version", kDatasetVersion},
                   {"split", name},
                   {"pairs", pairs.size()}};
    out << header.dump() << "\n";
    for (const PreferencePair& p : pairs) {
        json rec = {{"prompt", p.prompt},
                    {"winner", {{"q", labels_to_json(p.winner.quality)},
                                {"v", p.winner.tokens},
                                {"cot", p.cot_w}}},
                    {"loser", {{"q", labels_to_json(p.loser.quality)},
                               {"v", p.loser.tokens},
                               {"cot", p.cot_l}}}};
        out << rec.dump() << "\n";
    }
    if (!out.good()) throw IoError("dataset: short write to " + path.string());
}

std::vector<PreferencePair> load_split(const std::string& name,
                                       const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("dataset: cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("dataset: missing header in " + path.string());
    const json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "descore.dataset") {
        throw DataError("dataset: bad header in " + path.string());
    }
    if (header.value("version", -1) != kDatasetVersion) {
        throw DataError("dataset: unsupported version in " + path.string());
    }
    if (header.value("split", "") != name) {
        throw DataError("dataset: split name mismatch in " + path.string());
    }
    std::vector<PreferencePair> pairs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) throw DataError("dataset: bad record in " + path.string());
        PreferencePair p;
        p.prompt = rec.at("prompt").get<std::vector<int>>();
        p.winner.quality = labels_from_json(rec.at("winner").at("q"));
        p.winner.tokens = rec.at("winner").at("v").get<std::vector<int>>();
        p.cot_w = rec.at("winner").at("cot").get<std::vector<int>>();
        p.loser.quality = labels_from_json(rec.at("loser").at("q"));
        p.loser.tokens = rec.at("loser").at("v").get<std::vector<int>>();
        p.cot_l = rec.at("loser").at("cot").get<std::vector<int>>();
        p.truth_w = reward::AnswerBlock{p.winner.quality, {}};
        p.truth_l = reward::AnswerBlock{p.loser.quality, {}};
        pairs.push_back(std::move(p));
    }
    if (pairs.size() != header.value("pairs", size_t{0})) {
        throw DataError("dataset: pair count mismatch in " + path.string());
    }
    return pairs;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_split(ds.train, "train", dir / "train.jsonl");
    write_split(ds.eval_id, "eval_id", dir / "eval_id.jsonl");
    write_split(ds.eval_ood, "eval_ood", dir / "eval_ood.jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.train = load_split("train", dir / "train.jsonl");
    ds.eval_id = load_split("eval_id", dir / "eval_id.jsonl");
    ds.eval_ood = load_split("eval_ood", dir / "eval_ood.jsonl");
    return ds;
}

}  // namespace descore::synth
