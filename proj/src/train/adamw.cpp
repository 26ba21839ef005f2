#include "descore/train/adamw.hpp"

#include <cmath>

namespace descore::train {

ModelState ModelState::init(const policy::PolicyConfig& cfg, uint64_t seed) {
    ModelState s;
    s.policy = policy::PolicyParams::init(cfg, seed);
    s.head = scoring::ScoringHead::init(cfg.width, seed);
    return s;
}

void ModelState::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    policy.visit(fn);
    head.visit(fn);
}

void ModelState::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    policy.visit(fn);
    head.visit(fn);
}

size_t ModelState::tensor_count() const {
    size_t n = 0;
    visit([&n](const std::string&, const Tensor&) { ++n; });
    return n;
}

ModelState bind_state(numkit::Tape& tape, const ModelState& state) {
    ModelState b = state;
    if (tape.recording()) {
        b.visit([&tape](const std::string&, Tensor& t) { t = tape.watch(t); });
    }
    return b;
}

GradBuffer GradBuffer::zeros_like(const ModelState& state) {
    GradBuffer g;
    state.visit([&g](const std::string&, const Tensor& t) { g.slots.push_back(Tensor::zeros(t.shape)); });
    return g;
}

void GradBuffer::accumulate(const numkit::Gradients& grads, const ModelState& bound, double scale) {
    size_t i = 0;
    bound.visit([&](const std::string&, const Tensor& bt) {
        const Tensor& g = grads.at(bt);
        Tensor& slot = slots[i++];
        for (size_t k = 0; k < slot.data.size(); ++k) slot.data[k] += scale * g.data[k];
    });
}

void GradBuffer::scale(double factor) {
    for (Tensor& t : slots) {
        for (double& v : t.data) v *= factor;
    }
}

double GradBuffer::l2_norm() const {
    double sq = 0.0;
    for (const Tensor& t : slots) {
        for (double v : t.data) sq += v * v;
    }
    return std::sqrt(sq);
}

AdamState AdamState::init_like(const ModelState& state) {
    AdamState a;
    state.visit([&a](const std::string&, const Tensor& t) {
        a.m.push_back(Tensor::zeros(t.shape));
        a.v.push_back(Tensor::zeros(t.shape));
    });
    return a;
}

void adamw_step(ModelState& state, const GradBuffer& grads, const AdamWConfig& cfg,
                AdamState& opt) {
    if (grads.slots.size() != opt.m.size()) {
        throw NumericError("adamw: gradient/moment slot mismatch");
    }
    opt.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
    size_t i = 0;
    state.visit([&](const std::string& name, Tensor& p) {
        const Tensor& g = grads.slots[i];
        Tensor& m = opt.m[i];
        Tensor& v = opt.v[i];
        if (g.data.size() != p.data.size()) {
            throw NumericError("adamw: shape mismatch at " + name);
        }
        for (size_t k = 0; k < p.data.size(); ++k) {
            m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
            v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
            const double mhat = m.data[k] / bc1;
            const double vhat = v.data[k] / bc2;
            p.data[k] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data[k]);
        }
        ++i;
    });
}

}  // namespace descore::train
