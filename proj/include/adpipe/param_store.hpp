#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "adpipe/autograd.hpp"
#include "adpipe/rng.hpp"
#include "adpipe/tensor.hpp"

namespace adpipe {

/// Named trainable parameters with same-shaped gradient slots. Iteration is
/// always in name order, which keeps optimizer updates and checkpoint layout
/// deterministic.
template <class T>
class ParamStore {
public:
    Tensor<T>& create(const std::string& name, std::vector<std::size_t> shape) {
        if (values_.count(name)) throw std::invalid_argument("param '" + name + "' already exists");
        values_[name] = Tensor<T>(shape);
        grads_[name] = Tensor<T>(std::move(shape));
        return values_[name];
    }

    Tensor<T>& create_normal(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                             double stddev) {
        Tensor<T>& t = create(name, std::move(shape));
        for (T& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
        return t;
    }

    /// Kaiming-style init: stddev 1/sqrt(fan_in) with fan_in = last dimension
    /// for matrices, total length for vectors.
    Tensor<T>& create_kaiming(const std::string& name, std::vector<std::size_t> shape, Rng& rng) {
        const std::size_t fan_in = shape.size() >= 2 ? shape[0] : shape.back();
        return create_normal(name, std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    }

    bool has(const std::string& name) const { return values_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw std::invalid_argument("unknown param '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw std::invalid_argument("unknown param '" + name + "'");
        return it->second;
    }

    Tensor<T>& grad(const std::string& name) {
        auto it = grads_.find(name);
        if (it == grads_.end()) throw std::invalid_argument("unknown param '" + name + "'");
        return it->second;
    }
    const Tensor<T>& grad(const std::string& name) const { return grads_.at(name); }

    void zero_grads() {
        for (auto& [name, g] : grads_) std::fill(g.data.begin(), g.data.end(), T(0));
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(values_.size());
        for (const auto& [name, v] : values_) out.push_back(name);
        return out;
    }

    std::size_t size() const { return values_.size(); }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, v] : values_) out.create(name, v.shape) = v.template cast<U>();
        return out;
    }

    /// First parameter containing a non-finite entry, or empty string.
    std::string first_non_finite() const {
        for (const auto& [name, v] : values_)
            if (!v.all_finite()) return name;
        return {};
    }

    auto begin() { return values_.begin(); }
    auto end() { return values_.end(); }
    auto begin() const { return values_.begin(); }
    auto end() const { return values_.end(); }

private:
    std::map<std::string, Tensor<T>> values_;
    std::map<std::string, Tensor<T>> grads_;
};

namespace ag {

/// Handle set passed to loss builders: parameters appear as tape leaves (or
/// constants when gradients are not wanted), addressable by name.
template <class T>
struct ParamVars {
    Tape<T>* tape = nullptr;
    std::map<std::string, typename Tape<T>::VarId> ids;

    typename Tape<T>::VarId operator()(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw std::invalid_argument("loss builder: unknown param '" + name + "'");
        return it->second;
    }
};

template <class T>
ParamVars<T> make_leaves(Tape<T>& tape, const ParamStore<T>& store) {
    ParamVars<T> vars;
    vars.tape = &tape;
    for (const auto& [name, value] : store) vars.ids[name] = tape.leaf(value);
    return vars;
}

template <class T>
ParamVars<T> make_constants(Tape<T>& tape, const ParamStore<T>& store) {
    ParamVars<T> vars;
    vars.tape = &tape;
    for (const auto& [name, value] : store) vars.ids[name] = tape.constant(value);
    return vars;
}

/// Leaves only where `trainable` says so; everything else enters the graph
/// as a constant and keeps a zero gradient slot.
template <class T>
ParamVars<T> make_leaves_filtered(Tape<T>& tape, const ParamStore<T>& store,
                                  const std::function<bool(const std::string&)>& trainable) {
    ParamVars<T> vars;
    vars.tape = &tape;
    for (const auto& [name, value] : store)
        vars.ids[name] = trainable(name) ? tape.leaf(value) : tape.constant(value);
    return vars;
}

}  // namespace ag

/// A loss builder constructs a scalar loss on the given tape from parameter
/// variables. Builders must be pure: same parameters, same loss.
template <class T>
using LossBuilder = std::function<typename ag::Tape<T>::VarId(ag::Tape<T>&, const ag::ParamVars<T>&)>;

/// Evaluates `build` and fills every gradient slot of `store`. Throws
/// NumericalError naming the offending parameter (or "loss") if anything
/// turns non-finite.
template <class T>
T evaluate_with_gradients(ParamStore<T>& store, const LossBuilder<T>& build,
                          const std::function<bool(const std::string&)>& trainable = {}) {
    ag::Tape<T> tape;
    ag::ParamVars<T> vars = trainable ? ag::make_leaves_filtered(tape, store, trainable)
                                      : ag::make_leaves(tape, store);
    const auto loss = build(tape, vars);
    const T value = tape.scalar(loss);
    if (!std::isfinite(static_cast<double>(value))) {
        const std::string bad = store.first_non_finite();
        throw NumericalError(bad.empty() ? "loss" : bad);
    }
    tape.backward(loss);
    for (const auto& [name, id] : vars.ids) {
        Tensor<T>& slot = store.grad(name);
        const Tensor<T>& g = tape.grad(id);
        if (g.numel() == 0) {
            std::fill(slot.data.begin(), slot.data.end(), T(0));
        } else {
            slot.data = g.data;
            if (!slot.all_finite()) throw NumericalError(name);
        }
    }
    return value;
}

/// Evaluates the loss only, without touching gradient slots.
template <class T>
T evaluate_loss(const ParamStore<T>& store, const LossBuilder<T>& build) {
    ag::Tape<T> tape;
    ag::ParamVars<T> vars = ag::make_constants(tape, store);
    return tape.scalar(build(tape, vars));
}

/// Result of comparing analytic gradients against central finite differences.
struct GradReport {
    std::map<std::string, double> max_rel_error;
    double worst = 0.0;
    std::string worst_param;
    bool pass = false;
    double tolerance = 0.0;
};

/// Central-difference gradient verification:
///   numeric = (f(x+h) - f(x-h)) / 2h
///   rel_err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// Meant to run on a 64-bit store; failures are reported, never thrown.
template <class T>
GradReport grad_check(ParamStore<T>& store, const LossBuilder<T>& build, double h = 1e-5,
                      double tolerance = 1e-4) {
    GradReport report;
    report.tolerance = tolerance;
    evaluate_with_gradients(store, build);
    std::map<std::string, Tensor<T>> analytic;
    for (const std::string& name : store.names()) analytic[name] = store.grad(name);

    for (const std::string& name : store.names()) {
        Tensor<T>& value = store.at(name);
        double worst = 0.0;
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const T original = value.data[i];
            value.data[i] = original + static_cast<T>(h);
            const T up = evaluate_loss(store, build);
            value.data[i] = original - static_cast<T>(h);
            const T down = evaluate_loss(store, build);
            value.data[i] = original;
            // difference taken in T so extended-precision runs keep their digits
            const double numeric = static_cast<double>((up - down) / (T(2) * static_cast<T>(h)));
            const double a = static_cast<double>(analytic[name].data[i]);
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
        report.max_rel_error[name] = worst;
        if (worst >= report.worst) {
            report.worst = worst;
            report.worst_param = name;
        }
    }
    report.pass = report.worst <= tolerance;
    return report;
}

/// Adam with optional decoupled weight decay. Step order follows name order
/// of the store, so runs are reproducible.
template <class T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                           double weight_decay = 0.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }

    void step(ParamStore<T>& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const std::string& name : store.names()) {
            Tensor<T>& p = store.at(name);
            const Tensor<T>& g = store.grad(name);
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
            if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g.data[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                if (weight_decay_ != 0.0) update += weight_decay_ * static_cast<double>(p.data[i]);
                p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) - lr_ * update);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace adpipe
