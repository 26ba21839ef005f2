#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "descore/numkit/tensor.hpp"

namespace descore::numkit {

/// Gradient map produced by Tape::backward. Keys are node handles of watched
/// leaves; leaves not reached by the loss carry zero gradients.
class Gradients {
public:
    const Tensor& at(const Tensor& watched_leaf) const;
    bool has(const Tensor& t) const;
    size_t size() const { return by_node_.size(); }

private:
    friend class Tape;
    std::unordered_map<int, Tensor> by_node_;
};

/// Append-only record of a differentiable computation.
///
/// Ops validate shapes, compute values with the same kernels whether or not
/// recording is on, and reject non-finite results. With recording off the
/// tape is a plain evaluator: no nodes are appended and results come back
/// detached, which is what sampling and evaluation paths use.
///
/// A tape is confined to one thread. backward() may run once per tape.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }

    /// Registers a gradient-tracked leaf; returns the bound handle to use in ops.
    Tensor watch(const Tensor& t);

    // Elementwise / broadcast arithmetic. add/sub accept equal shapes, and add
    // also accepts a [n] row vector against a [m,n] matrix (bias form).
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor add_scalar(const Tensor& a, double c);
    Tensor mul_scalar(const Tensor& a, double c);

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);

    Tensor sigmoid(const Tensor& a);
    Tensor tanh(const Tensor& a);
    Tensor exp(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor softplus(const Tensor& a);

    // Over the last axis.
    Tensor softmax(const Tensor& a);
    Tensor log_softmax(const Tensor& a);
    Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

    Tensor mean(const Tensor& a);
    Tensor sum(const Tensor& a);

    /// Hard clip; gradient is zero outside (lo, hi) — no straight-through.
    Tensor clip(const Tensor& a, double lo, double hi);
    Tensor minimum(const Tensor& a, const Tensor& b);

    /// Row gather from an embedding table [V,d] by token ids -> [n,d].
    Tensor embed(const Tensor& table, std::span<const int> ids);

    // 2-D structural ops.
    Tensor rows(const Tensor& a, int r0, int r1);
    Tensor cols(const Tensor& a, int c0, int c1);
    Tensor concat_rows(const Tensor& a, const Tensor& b);
    Tensor concat_cols(const std::vector<Tensor>& parts);

    /// out[i] = m[i, col_of_row[i]] -> [rows].
    Tensor gather_per_row(const Tensor& m, std::span<const int> col_of_row);

    /// Reverse pass from a scalar loss. Fills a gradient for every watched
    /// leaf (zero when unreached) and consumes the tape.
    Gradients backward(const Tensor& loss);

private:
    enum class Op : uint8_t {
        kLeaf,
        kConst,
        kAdd,
        kAddRow,
        kSub,
        kMul,
        kAddScalar,
        kMulScalar,
        kMatmul,
        kTranspose,
        kSigmoid,
        kTanh,
        kExp,
        kLog,
        kSoftplus,
        kSoftmax,
        kLogSoftmax,
        kLayernorm,
        kMean,
        kSum,
        kClip,
        kMinimum,
        kEmbed,
        kRows,
        kCols,
        kConcatRows,
        kConcatCols,
        kGatherPerRow,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        int c = -1;  // third input (layernorm beta)
        std::vector<int> inputs;  // concat_cols
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<int> iargs;
        std::vector<double> dargs;
        bool watched = false;
    };

    int ensure_node(const Tensor& t);
    Tensor finish(Op op, std::vector<int> shape, std::vector<double> value, const Tensor* a,
                  const Tensor* b = nullptr, const Tensor* c = nullptr,
                  std::vector<int> iargs = {}, std::vector<double> dargs = {},
                  const std::vector<Tensor>* extra = nullptr);
    const std::vector<double>& node_value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    std::vector<Node> nodes_;
    std::vector<int> watched_;
    bool recording_ = true;
    bool consumed_ = false;
};

// Kernels shared by forward ops; exposed for reuse in tests and reports.
void softmax_row(const double* x, double* y, int n);
void log_softmax_row(const double* x, double* y, int n);
double sigmoid_stable(double x);
double softplus_stable(double x);

}  // namespace descore::numkit
