#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "planaudio/common.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

// Named parameter tensors plus matching gradient slots. std::map keeps
// iteration name-sorted, which doubles as the canonical serialization order.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init) {
        if (values_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
        grads_.emplace(name, Tensor::zeros(init.shape));
        return values_.emplace(name, std::move(init)).first->second;
    }

    Tensor& value(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw IndexError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    const Tensor& value(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw IndexError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    Tensor& grad(const std::string& name) {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw IndexError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return values_.count(name) != 0; }

    void zero_grads() {
        for (auto& [name, t] : grads_) t.v.assign(t.numel(), 0.0);
    }

    size_t tensor_count() const { return values_.size(); }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& [name, t] : values_) n += t.numel();
        return n;
    }

    std::map<std::string, Tensor>& values() { return values_; }
    const std::map<std::string, Tensor>& values() const { return values_; }
    const std::map<std::string, Tensor>& grads() const { return grads_; }

private:
    std::map<std::string, Tensor> values_;
    std::map<std::string, Tensor> grads_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment estimates, keyed like the store. Serialized alongside
// checkpoints so a resumed run continues the same trajectory.
struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    int64_t step = 0;
};

// One Adam update with bias correction over every parameter in the store,
// consuming the store's accumulated gradients. Moment slots are created on
// first use.
inline void adam_step(ParamStore& store, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : store.values()) {
        const Tensor& g = store.grad(name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor::zeros(p.shape)).first;
            state.v.emplace(name, Tensor::zeros(p.shape));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        if (!m.same_shape(p) || !v.same_shape(p)) {
            throw ShapeError("adam_step: moment shape mismatch for " + name);
        }
        for (size_t i = 0; i < p.numel(); ++i) {
            m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
            v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace planaudio
