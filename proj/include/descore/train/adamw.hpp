#pragma once

#include <vector>

#include "descore/scoring.hpp"

namespace descore::train {

using numkit::Tensor;

/// Backbone plus scoring head: everything the optimizer updates and the
/// checkpoint persists. visit() order is the canonical parameter order.
struct ModelState {
    policy::PolicyParams policy;
    scoring::ScoringHead head;

    static ModelState init(const policy::PolicyConfig& cfg, uint64_t seed);
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    size_t tensor_count() const;
};

/// Bound copy for one recording pass; tensors line up with ModelState::visit.
ModelState bind_state(numkit::Tape& tape, const ModelState& state);

/// Gradient accumulator aligned with ModelState::visit order.
struct GradBuffer {
    std::vector<Tensor> slots;
    static GradBuffer zeros_like(const ModelState& state);
    void accumulate(const numkit::Gradients& grads, const ModelState& bound, double scale);
    void scale(double factor);
    double l2_norm() const;
};

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    int64_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    static AdamState init_like(const ModelState& state);
};

/// Decoupled weight decay, bias-corrected moments.
void adamw_step(ModelState& state, const GradBuffer& grads, const AdamWConfig& cfg,
                AdamState& opt);

}  // namespace descore::train
