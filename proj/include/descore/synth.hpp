#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "descore/rewards.hpp"
#include "descore/rng.hpp"
#include "descore/vocab.hpp"

namespace descore::synth {

/// One generated "item": a latent five-dimension quality vector and its token
/// rendering (per-dimension tag/score pairs, flipped with rate eta).
struct LatentItem {
    std::array<Label, 5> quality;
    std::vector<int> tokens;
};

struct PreferencePair {
    std::vector<int> prompt;
    LatentItem winner;
    LatentItem loser;
    reward::AnswerBlock truth_w;
    reward::AnswerBlock truth_l;
    std::vector<int> cot_w;
    std::vector<int> cot_l;
};

struct DatasetConfig {
    int n_train = 2000;
    int n_eval = 300;
    int n_ood = 300;
    int prompt_tokens = 4;
    double item_noise = 0.12;       // eta for train + in-domain eval
    double ood_item_noise = 0.25;   // eta for the shifted split
    double cot_noise_train = 0.02;  // per-dimension flip rate of attached CoTs
    double cot_noise_eval = 0.1;
    double cot_noise_ood = 0.3;
    int think_len_min = 4;
    int think_len_max = 12;
    void validate() const;
};

struct Dataset {
    std::vector<PreferencePair> train;
    std::vector<PreferencePair> eval_id;
    std::vector<PreferencePair> eval_ood;
};

std::vector<int> render_item(const std::array<Label, 5>& quality, double eta, Rng& rng);

/// Inverse of render_item at eta=0; throws on malformed token layout.
std::array<Label, 5> decode_item(std::span<const int> tokens);

/// Grammar-valid reasoning rollout whose answer block equals `truth` with each
/// dimension independently flipped at rate kappa (0 = clean tier). Think
/// tokens come from `pool`.
std::vector<int> oracle_cot(const reward::AnswerBlock& truth, std::span<const int> pool,
                            double kappa, int think_min, int think_max, Rng& rng);

/// Train / in-domain eval / shifted-eval splits, reproducible from the seed,
/// pairwise disjoint, with oracle CoTs attached per split tier. The shifted
/// split uses a disjoint prompt family and higher item noise.
Dataset generate_dataset(const DatasetConfig& cfg, const Vocab& vocab, uint64_t seed);

struct FilterReport {
    size_t input = 0;
    size_t kept = 0;
    size_t dropped_disagree = 0;
    size_t dropped_unparsable = 0;
    double retention = 0.0;
};

/// Keeps a pair iff both attached CoTs parse and their implied preference
/// (sum of numeric labels) agrees with the pair label.
FilterReport consistency_filter(std::vector<PreferencePair>& pairs, const Vocab& vocab);

struct EvalConfig {
    double tau = 0.1;
    void validate() const;
};

struct Accuracy {
    double with_tie = 0.0;
    double without_tie = 0.0;
    size_t n = 0;
};

/// Scores one side of a pair (winner_side true for the winner item).
using ScoreFn = std::function<double(const PreferencePair&, bool winner_side)>;

/// (s_w, s_l) per pair; parallel over pairs, results in pair order.
std::vector<std::pair<double, double>> score_pairs(const ScoreFn& fn,
                                                   std::span<const PreferencePair> pairs,
                                                   int threads = 1);

Accuracy accuracy_from_scores(std::span<const std::pair<double, double>> scores, double tau);

/// tau = scale * population std of the score differences (floored at a tiny
/// positive value so the threshold stays meaningful for constant scorers).
double tau_from_scores(std::span<const std::pair<double, double>> scores, double scale = 0.1);

Accuracy eval_accuracy(const ScoreFn& fn, std::span<const PreferencePair> pairs,
                       const EvalConfig& cfg, int threads = 1);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace descore::synth
