#include "descore/numkit/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace descore::numkit {

namespace {

// c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * n;
        double* crow = c + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* brow = b + static_cast<size_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_stable(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void softmax_row(const double* x, double* y, int n) {
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - m);
        s += y[i];
    }
    const double inv = 1.0 / s;
    for (int i = 0; i < n; ++i) y[i] *= inv;
}

void log_softmax_row(const double* x, double* y, int n) {
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
    const double lse = std::log(s);
    for (int i = 0; i < n; ++i) y[i] = x[i] - m - lse;
}

const Tensor& Gradients::at(const Tensor& watched_leaf) const {
    const auto it = by_node_.find(watched_leaf.node);
    if (it == by_node_.end()) {
        throw NumericError("gradients: tensor is not a watched leaf of this tape");
    }
    return it->second;
}

bool Gradients::has(const Tensor& t) const { return by_node_.count(t.node) > 0; }

int Tape::ensure_node(const Tensor& t) {
    if (t.node >= 0) {
        if (static_cast<size_t>(t.node) >= nodes_.size() ||
            nodes_[static_cast<size_t>(t.node)].value.size() != t.data.size()) {
            throw NumericError("tape: tensor handle does not belong to this tape");
        }
        return t.node;
    }
    Node n;
    n.op = Op::kConst;
    n.shape = t.shape;
    n.value = t.data;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::watch(const Tensor& t) {
    if (!all_finite(t.data)) throw NumericError("watch: non-finite leaf value");
    Tensor out(t.shape, t.data);
    if (!recording_) return out;
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.value = t.data;
    n.watched = true;
    nodes_.push_back(std::move(n));
    out.node = static_cast<int>(nodes_.size()) - 1;
    watched_.push_back(out.node);
    return out;
}

Tensor Tape::finish(Op op, std::vector<int> shape, std::vector<double> value, const Tensor* a,
                    const Tensor* b, const Tensor* c, std::vector<int> iargs,
                    std::vector<double> dargs, const std::vector<Tensor>* extra) {
    if (!all_finite(value)) {
        throw NumericError("tape: non-finite result in op " + std::to_string(static_cast<int>(op)));
    }
    Tensor out(std::move(shape), std::move(value));
    if (!recording_) return out;
    Node n;
    n.op = op;
    if (a) n.a = ensure_node(*a);
    if (b) n.b = ensure_node(*b);
    if (c) n.c = ensure_node(*c);
    if (extra) {
        n.inputs.reserve(extra->size());
        for (const Tensor& t : *extra) n.inputs.push_back(ensure_node(t));
    }
    n.shape = out.shape;
    n.value = out.data;
    n.iargs = std::move(iargs);
    n.dargs = std::move(dargs);
    nodes_.push_back(std::move(n));
    out.node = static_cast<int>(nodes_.size()) - 1;
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) {
        std::vector<double> v(a.data.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = a.data[i] + b.data[i];
        return finish(Op::kAdd, a.shape, std::move(v), &a, &b);
    }
    if (a.ndim() == 2 && b.ndim() == 1 && a.cols() == b.shape[0]) {
        const int m = a.rows(), n = a.cols();
        std::vector<double> v(a.data.size());
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                v[static_cast<size_t>(i) * n + j] = a.data[static_cast<size_t>(i) * n + j] + b.data[j];
            }
        }
        return finish(Op::kAddRow, a.shape, std::move(v), &a, &b);
    }
    throw NumericError("add: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw NumericError("sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data[i] - b.data[i];
    return finish(Op::kSub, a.shape, std::move(v), &a, &b);
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw NumericError("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data[i] * b.data[i];
    return finish(Op::kMul, a.shape, std::move(v), &a, &b);
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data[i] + c;
    return finish(Op::kAddScalar, a.shape, std::move(v), &a, nullptr, nullptr, {}, {c});
}

Tensor Tape::mul_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data[i] * c;
    return finish(Op::kMulScalar, a.shape, std::move(v), &a, nullptr, nullptr, {}, {c});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw NumericError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                           shape_str(b.shape));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
    matmul_acc(a.data.data(), b.data.data(), v.data(), m, k, n);
    return finish(Op::kMatmul, {m, n}, std::move(v), &a, &b);
}

Tensor Tape::transpose(const Tensor& a) {
    if (a.ndim() != 2) throw NumericError("transpose: expected matrix, got " + shape_str(a.shape));
    const int m = a.rows(), n = a.cols();
    std::vector<double> v(a.data.size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) v[static_cast<size_t>(j) * m + i] = a.data[static_cast<size_t>(i) * n + j];
    }
    return finish(Op::kTranspose, {n, m}, std::move(v), &a);
}

Tensor Tape::sigmoid(const Tensor& a) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_stable(a.data[i]);
    return finish(Op::kSigmoid, a.shape, std::move(v), &a);
}

Tensor Tape::tanh(const Tensor& a) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.data[i]);
    return finish(Op::kTanh, a.shape, std::move(v), &a);
}

Tensor Tape::exp(const Tensor& a) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.data[i]);
    return finish(Op::kExp, a.shape, std::move(v), &a);
}

Tensor Tape::log(const Tensor& a) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.data[i]);
    return finish(Op::kLog, a.shape, std::move(v), &a);
}

Tensor Tape::softplus(const Tensor& a) {
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = softplus_stable(a.data[i]);
    return finish(Op::kSoftplus, a.shape, std::move(v), &a);
}

Tensor Tape::softmax(const Tensor& a) {
    if (a.ndim() < 1) throw NumericError("softmax: empty shape");
    const int n = a.shape.back();
    const int rows = static_cast<int>(a.numel() / n);
    std::vector<double> v(a.data.size());
    for (int r = 0; r < rows; ++r) {
        softmax_row(a.data.data() + static_cast<size_t>(r) * n, v.data() + static_cast<size_t>(r) * n, n);
    }
    return finish(Op::kSoftmax, a.shape, std::move(v), &a);
}

Tensor Tape::log_softmax(const Tensor& a) {
    if (a.ndim() < 1) throw NumericError("log_softmax: empty shape");
    const int n = a.shape.back();
    const int rows = static_cast<int>(a.numel() / n);
    std::vector<double> v(a.data.size());
    for (int r = 0; r < rows; ++r) {
        log_softmax_row(a.data.data() + static_cast<size_t>(r) * n, v.data() + static_cast<size_t>(r) * n, n);
    }
    return finish(Op::kLogSoftmax, a.shape, std::move(v), &a);
}

Tensor Tape::layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() != 2) throw NumericError("layernorm: expected matrix, got " + shape_str(x.shape));
    const int m = x.rows(), n = x.cols();
    if (gamma.ndim() != 1 || gamma.shape[0] != n || beta.ndim() != 1 || beta.shape[0] != n) {
        throw NumericError("layernorm: gamma/beta must be [" + std::to_string(n) + "]");
    }
    std::vector<double> v(x.data.size());
    std::vector<double> saved(static_cast<size_t>(2 * m) + 1);
    saved[0] = eps;
    for (int i = 0; i < m; ++i) {
        const double* row = x.data.data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        saved[static_cast<size_t>(1 + 2 * i)] = mu;
        saved[static_cast<size_t>(2 + 2 * i)] = inv;
        for (int j = 0; j < n; ++j) {
            v[static_cast<size_t>(i) * n + j] = (row[j] - mu) * inv * gamma.data[j] + beta.data[j];
        }
    }
    return finish(Op::kLayernorm, x.shape, std::move(v), &x, &gamma, &beta, {}, std::move(saved));
}

Tensor Tape::mean(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return finish(Op::kMean, {1}, {s / static_cast<double>(a.numel())}, &a);
}

Tensor Tape::sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return finish(Op::kSum, {1}, {s}, &a);
}

Tensor Tape::clip(const Tensor& a, double lo, double hi) {
    if (!(lo < hi)) throw NumericError("clip: lo must be < hi");
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(std::max(a.data[i], lo), hi);
    return finish(Op::kClip, a.shape, std::move(v), &a, nullptr, nullptr, {}, {lo, hi});
}

Tensor Tape::minimum(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw NumericError("minimum: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    std::vector<double> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(a.data[i], b.data[i]);
    return finish(Op::kMinimum, a.shape, std::move(v), &a, &b);
}

Tensor Tape::embed(const Tensor& table, std::span<const int> ids) {
    if (table.ndim() != 2) throw NumericError("embed: table must be a matrix");
    const int vocab = table.rows(), d = table.cols();
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw NumericError("embed: empty id list");
    std::vector<double> v(static_cast<size_t>(n) * d);
    std::vector<int> idx(ids.begin(), ids.end());
    for (int i = 0; i < n; ++i) {
        if (idx[i] < 0 || idx[i] >= vocab) {
            throw NumericError("embed: id " + std::to_string(idx[i]) + " out of table rows " +
                               std::to_string(vocab));
        }
        std::memcpy(v.data() + static_cast<size_t>(i) * d,
                    table.data.data() + static_cast<size_t>(idx[i]) * d, sizeof(double) * d);
    }
    return finish(Op::kEmbed, {n, d}, std::move(v), &table, nullptr, nullptr, std::move(idx));
}

Tensor Tape::rows(const Tensor& a, int r0, int r1) {
    if (a.ndim() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1) {
        throw NumericError("rows: bad slice [" + std::to_string(r0) + "," + std::to_string(r1) +
                           ") of " + shape_str(a.shape));
    }
    const int n = a.cols();
    std::vector<double> v(a.data.begin() + static_cast<size_t>(r0) * n,
                          a.data.begin() + static_cast<size_t>(r1) * n);
    return finish(Op::kRows, {r1 - r0, n}, std::move(v), &a, nullptr, nullptr, {r0, r1});
}

Tensor Tape::cols(const Tensor& a, int c0, int c1) {
    if (a.ndim() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1) {
        throw NumericError("cols: bad slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                           ") of " + shape_str(a.shape));
    }
    const int m = a.rows(), n = a.cols(), w = c1 - c0;
    std::vector<double> v(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i) {
        std::memcpy(v.data() + static_cast<size_t>(i) * w,
                    a.data.data() + static_cast<size_t>(i) * n + c0, sizeof(double) * w);
    }
    return finish(Op::kCols, {m, w}, std::move(v), &a, nullptr, nullptr, {c0, c1});
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw NumericError("concat_rows: column mismatch " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
    }
    std::vector<double> v;
    v.reserve(a.data.size() + b.data.size());
    v.insert(v.end(), a.data.begin(), a.data.end());
    v.insert(v.end(), b.data.begin(), b.data.end());
    return finish(Op::kConcatRows, {a.rows() + b.rows(), a.cols()}, std::move(v), &a, &b, nullptr,
                  {a.rows(), b.rows()});
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: no parts");
    const int m = parts[0].rows();
    int total = 0;
    std::vector<int> widths;
    widths.reserve(parts.size());
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.rows() != m) throw NumericError("concat_cols: row mismatch");
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> v(static_cast<size_t>(m) * total);
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.cols();
        for (int i = 0; i < m; ++i) {
            std::memcpy(v.data() + static_cast<size_t>(i) * total + off,
                        p.data.data() + static_cast<size_t>(i) * w, sizeof(double) * w);
        }
        off += w;
    }
    return finish(Op::kConcatCols, {m, total}, std::move(v), nullptr, nullptr, nullptr,
                  std::move(widths), {}, &parts);
}

Tensor Tape::gather_per_row(const Tensor& m, std::span<const int> col_of_row) {
    if (m.ndim() != 2 || static_cast<int>(col_of_row.size()) != m.rows()) {
        throw NumericError("gather_per_row: need one column index per row");
    }
    const int rows = m.rows(), n = m.cols();
    std::vector<double> v(static_cast<size_t>(rows));
    std::vector<int> idx(col_of_row.begin(), col_of_row.end());
    for (int i = 0; i < rows; ++i) {
        if (idx[i] < 0 || idx[i] >= n) throw NumericError("gather_per_row: column index out of range");
        v[static_cast<size_t>(i)] = m.data[static_cast<size_t>(i) * n + idx[i]];
    }
    return finish(Op::kGatherPerRow, {rows}, std::move(v), &m, nullptr, nullptr, std::move(idx));
}

Gradients Tape::backward(const Tensor& loss) {
    if (!recording_) throw NumericError("backward: tape is not recording");
    if (consumed_) throw NumericError("backward: tape already consumed");
    if (!loss.is_scalar()) throw NumericError("backward: loss must be scalar, got " + shape_str(loss.shape));
    if (loss.node < 0 || static_cast<size_t>(loss.node) >= nodes_.size()) {
        throw NumericError("backward: loss is not on this tape");
    }
    consumed_ = true;

    std::vector<std::vector<double>> grad(static_cast<size_t>(loss.node) + 1);
    auto g = [&](int id) -> std::vector<double>& {
        auto& buf = grad[static_cast<size_t>(id)];
        if (buf.empty()) buf.assign(nodes_[static_cast<size_t>(id)].value.size(), 0.0);
        return buf;
    };
    g(loss.node)[0] = 1.0;

    for (int id = loss.node; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const auto& gy = grad[static_cast<size_t>(id)];
        if (gy.empty()) continue;
        switch (n.op) {
            case Op::kLeaf:
            case Op::kConst:
                break;
            case Op::kAdd: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                for (size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i];
                    gb[i] += gy[i];
                }
                break;
            }
            case Op::kAddRow: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                const int cols = n.shape[1];
                for (size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i];
                    gb[i % static_cast<size_t>(cols)] += gy[i];
                }
                break;
            }
            case Op::kSub: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                for (size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i];
                    gb[i] -= gy[i];
                }
                break;
            }
            case Op::kMul: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                const auto& va = node_value(n.a);
                const auto& vb = node_value(n.b);
                for (size_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i] * vb[i];
                    gb[i] += gy[i] * va[i];
                }
                break;
            }
            case Op::kAddScalar: {
                auto& ga = g(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                break;
            }
            case Op::kMulScalar: {
                auto& ga = g(n.a);
                const double c = n.dargs[0];
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += c * gy[i];
                break;
            }
            case Op::kMatmul: {
                const auto& va = node_value(n.a);
                const auto& vb = node_value(n.b);
                const int m = nodes_[static_cast<size_t>(n.a)].shape[0];
                const int k = nodes_[static_cast<size_t>(n.a)].shape[1];
                const int cols = n.shape[1];
                matmul_nt_acc(gy.data(), vb.data(), g(n.a).data(), m, cols, k);
                matmul_tn_acc(va.data(), gy.data(), g(n.b).data(), m, k, cols);
                break;
            }
            case Op::kTranspose: {
                auto& ga = g(n.a);
                const int m = n.shape[0], cols = n.shape[1];  // output dims
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < cols; ++j) {
                        ga[static_cast<size_t>(j) * m + i] += gy[static_cast<size_t>(i) * cols + j];
                    }
                }
                break;
            }
            case Op::kSigmoid: {
                auto& ga = g(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.value[i] * (1.0 - n.value[i]);
                break;
            }
            case Op::kTanh: {
                auto& ga = g(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (1.0 - n.value[i] * n.value[i]);
                break;
            }
            case Op::kExp: {
                auto& ga = g(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.value[i];
                break;
            }
            case Op::kLog: {
                auto& ga = g(n.a);
                const auto& va = node_value(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / va[i];
                break;
            }
            case Op::kSoftplus: {
                auto& ga = g(n.a);
                const auto& va = node_value(n.a);
                for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * sigmoid_stable(va[i]);
                break;
            }
            case Op::kSoftmax: {
                auto& ga = g(n.a);
                const int cols = n.shape.back();
                const int rows_n = static_cast<int>(gy.size()) / cols;
                for (int r = 0; r < rows_n; ++r) {
                    const double* y = n.value.data() + static_cast<size_t>(r) * cols;
                    const double* dy = gy.data() + static_cast<size_t>(r) * cols;
                    double dot = 0.0;
                    for (int j = 0; j < cols; ++j) dot += dy[j] * y[j];
                    double* da = ga.data() + static_cast<size_t>(r) * cols;
                    for (int j = 0; j < cols; ++j) da[j] += y[j] * (dy[j] - dot);
                }
                break;
            }
            case Op::kLogSoftmax: {
                auto& ga = g(n.a);
                const int cols = n.shape.back();
                const int rows_n = static_cast<int>(gy.size()) / cols;
                for (int r = 0; r < rows_n; ++r) {
                    const double* y = n.value.data() + static_cast<size_t>(r) * cols;
                    const double* dy = gy.data() + static_cast<size_t>(r) * cols;
                    double s = 0.0;
                    for (int j = 0; j < cols; ++j) s += dy[j];
                    double* da = ga.data() + static_cast<size_t>(r) * cols;
                    for (int j = 0; j < cols; ++j) da[j] += dy[j] - std::exp(y[j]) * s;
                }
                break;
            }
            case Op::kLayernorm: {
                auto& gx = g(n.a);
                auto& gg = g(n.b);
                auto& gb = g(n.c);
                const auto& vx = node_value(n.a);
                const auto& vgamma = node_value(n.b);
                const int m = n.shape[0], cols = n.shape[1];
                for (int i = 0; i < m; ++i) {
                    const double mu = n.dargs[static_cast<size_t>(1 + 2 * i)];
                    const double inv = n.dargs[static_cast<size_t>(2 + 2 * i)];
                    const double* x = vx.data() + static_cast<size_t>(i) * cols;
                    const double* dy = gy.data() + static_cast<size_t>(i) * cols;
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        const double xhat = (x[j] - mu) * inv;
                        const double dxhat = dy[j] * vgamma[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        gg[static_cast<size_t>(j)] += dy[j] * xhat;
                        gb[static_cast<size_t>(j)] += dy[j];
                    }
                    mean_dxhat /= cols;
                    mean_dxhat_xhat /= cols;
                    double* dx = gx.data() + static_cast<size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) {
                        const double xhat = (x[j] - mu) * inv;
                        const double dxhat = dy[j] * vgamma[j];
                        dx[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                break;
            }
            case Op::kMean: {
                auto& ga = g(n.a);
                const double d = gy[0] / static_cast<double>(ga.size());
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += d;
                break;
            }
            case Op::kSum: {
                auto& ga = g(n.a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[0];
                break;
            }
            case Op::kClip: {
                auto& ga = g(n.a);
                const auto& va = node_value(n.a);
                const double lo = n.dargs[0], hi = n.dargs[1];
                for (size_t i = 0; i < gy.size(); ++i) {
                    if (va[i] > lo && va[i] < hi) ga[i] += gy[i];
                }
                break;
            }
            case Op::kMinimum: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                const auto& va = node_value(n.a);
                const auto& vb = node_value(n.b);
                for (size_t i = 0; i < gy.size(); ++i) {
                    if (va[i] <= vb[i]) {
                        ga[i] += gy[i];
                    } else {
                        gb[i] += gy[i];
                    }
                }
                break;
            }
            case Op::kEmbed: {
                auto& gt = g(n.a);
                const int d = n.shape[1];
                for (size_t i = 0; i < n.iargs.size(); ++i) {
                    double* dst = gt.data() + static_cast<size_t>(n.iargs[i]) * d;
                    const double* src = gy.data() + i * static_cast<size_t>(d);
                    for (int j = 0; j < d; ++j) dst[j] += src[j];
                }
                break;
            }
            case Op::kRows: {
                auto& ga = g(n.a);
                const int cols = n.shape[1];
                const size_t base = static_cast<size_t>(n.iargs[0]) * cols;
                for (size_t i = 0; i < gy.size(); ++i) ga[base + i] += gy[i];
                break;
            }
            case Op::kCols: {
                auto& ga = g(n.a);
                const int w = n.shape[1];
                const int src_cols = nodes_[static_cast<size_t>(n.a)].shape[1];
                const int c0 = n.iargs[0];
                const int m = n.shape[0];
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < w; ++j) {
                        ga[static_cast<size_t>(i) * src_cols + c0 + j] += gy[static_cast<size_t>(i) * w + j];
                    }
                }
                break;
            }
            case Op::kConcatRows: {
                auto& ga = g(n.a);
                auto& gb = g(n.b);
                const size_t na = ga.size();
                for (size_t i = 0; i < na; ++i) ga[i] += gy[i];
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
                break;
            }
            case Op::kConcatCols: {
                const int m = n.shape[0];
                const int total = n.shape[1];
                int off = 0;
                for (size_t p = 0; p < n.inputs.size(); ++p) {
                    auto& gp = g(n.inputs[p]);
                    const int w = n.iargs[p];
                    for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < w; ++j) {
                            gp[static_cast<size_t>(i) * w + j] += gy[static_cast<size_t>(i) * total + off + j];
                        }
                    }
                    off += w;
                }
                break;
            }
            case Op::kGatherPerRow: {
                auto& gm = g(n.a);
                const int src_cols = nodes_[static_cast<size_t>(n.a)].shape[1];
                for (size_t i = 0; i < n.iargs.size(); ++i) {
                    gm[i * static_cast<size_t>(src_cols) + n.iargs[i]] += gy[i];
                }
                break;
            }
        }
    }

    Gradients out;
    for (int leaf : watched_) {
        const Node& n = nodes_[static_cast<size_t>(leaf)];
        Tensor gt = Tensor::zeros(n.shape);
        if (leaf <= loss.node && !grad[static_cast<size_t>(leaf)].empty()) {
            gt.data = std::move(grad[static_cast<size_t>(leaf)]);
        }
        out.by_node_.emplace(leaf, std::move(gt));
    }
    return out;
}

}  // namespace descore::numkit
