#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "descore/errors.hpp"

namespace descore {

/// Judgment labels for one sub-dimension. NA is a first-class label;
/// numeric_value(NA) is 0 when labels are summed.
enum class Label : uint8_t { kZero = 0, kOne = 1, kTwo = 2, kNA = 3 };

/// The five scored sub-dimensions, in canonical order.
enum class Dim : uint8_t { kSubject = 0, kDynamics = 1, kCamera = 2, kEnvironment = 3, kStyle = 4 };

inline constexpr std::array<const char*, 5> kDimNames = {"subject", "dynamics", "camera",
                                                         "environment", "style"};

inline int label_numeric(Label l) { return l == Label::kNA ? 0 : static_cast<int>(l); }

const char* label_str(Label l);
bool label_from_str(const std::string& s, Label& out);

/// Token space: fixed special tokens followed by n_free generic reasoning tokens.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kThinkOpen = 3;
    static constexpr int kThinkClose = 4;
    static constexpr int kAnsOpen = 5;
    static constexpr int kAnsClose = 6;
    static constexpr int kDim0 = 7;   // subject..style occupy 7..11
    static constexpr int kScore0 = 12;  // S0,S1,S2,SNA occupy 12..15
    static constexpr int kNumSpecial = 16;

    int n_free = 48;

    int size() const { return kNumSpecial + n_free; }
    int first_free() const { return kNumSpecial; }

    static int dim_token(Dim d) { return kDim0 + static_cast<int>(d); }
    static int score_token(Label l) { return kScore0 + static_cast<int>(l); }
    static bool is_dim_token(int t) { return t >= kDim0 && t < kDim0 + 5; }
    static bool is_score_token(int t) { return t >= kScore0 && t < kScore0 + 4; }
    static Label label_of(int score_tok);
    static Dim dim_of(int dim_tok);

    void validate() const {
        if (n_free < 0) throw ConfigError("vocab: n_free must be non-negative");
    }
};

}  // namespace descore
