#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "endx/common.hpp"
#include "endx/tape.hpp"

namespace endx {

enum class ScheduleKind { constant, linear_decay };

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;  // decoupled, scaled by the current lr
    ScheduleKind schedule = ScheduleKind::constant;
    std::uint64_t total_steps = 0;

    void validate() const {
        if (learning_rate <= 0) fail("optimizer: learning rate must be positive");
        if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            fail("optimizer: betas must lie in (0, 1)");
        if (epsilon <= 0) fail("optimizer: epsilon must be positive");
        if (weight_decay < 0) fail("optimizer: weight decay must be >= 0");
    }
};

inline double schedule_value(ScheduleKind kind, std::uint64_t step,
                             std::uint64_t total_steps, double base) {
    switch (kind) {
        case ScheduleKind::constant:
            return base;
        case ScheduleKind::linear_decay:
            if (total_steps == 0)
                fail("schedule: linear decay needs total steps > 0");
            if (step > total_steps)
                fail("schedule: step " + std::to_string(step) +
                     " exceeds total " + std::to_string(total_steps));
            return base * (1.0 - static_cast<double>(step) /
                                     static_cast<double>(total_steps));
    }
    fail("schedule: unknown kind");
}

enum class InitKind { xavier_uniform, zeros, ones };

/// Named trainable arrays plus per-parameter Adam state. std::map keeps
/// iteration order deterministic regardless of creation order.
template <typename S>
class ParameterStore {
public:
    struct Entry {
        Mat<S> value;
        Mat<S> m;  // first moment
        Mat<S> v;  // second moment
        std::uint64_t step = 0;
    };

    /// Creates a parameter. Initial values depend only on (seed, name), so
    /// two stores holding the same names are identical no matter the order
    /// in which the names were registered.
    void create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                InitKind init, std::uint64_t seed) {
        if (entries_.count(name)) fail("parameter store: duplicate name '" + name + "'");
        if (rows < 1 || cols < 1)
            fail("parameter store: bad shape for '" + name + "'");
        Entry e;
        e.value.resize(rows, cols);
        switch (init) {
            case InitKind::zeros:
                e.value.setZero();
                break;
            case InitKind::ones:
                e.value.setOnes();
                break;
            case InitKind::xavier_uniform: {
                auto rng = seeded_rng(seed, name);
                double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
                std::uniform_real_distribution<double> dist(-bound, bound);
                for (Eigen::Index i = 0; i < rows; ++i)
                    for (Eigen::Index j = 0; j < cols; ++j)
                        e.value(i, j) = static_cast<S>(dist(rng));
                break;
            }
        }
        e.m = Mat<S>::Zero(rows, cols);
        e.v = Mat<S>::Zero(rows, cols);
        entries_.emplace(name, std::move(e));
    }

    /// Registers a raw tensor (checkpoint restore path).
    void adopt(const std::string& name, Mat<S> value) {
        if (entries_.count(name)) fail("parameter store: duplicate name '" + name + "'");
        Entry e;
        e.m = Mat<S>::Zero(value.rows(), value.cols());
        e.v = Mat<S>::Zero(value.rows(), value.cols());
        e.value = std::move(value);
        entries_.emplace(name, std::move(e));
    }

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    const Mat<S>& value(const std::string& name) const { return find(name).value; }
    Mat<S>& mutable_value(const std::string& name) { return find(name).value; }
    const Entry& entry(const std::string& name) const { return find(name); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    std::size_t size() const { return entries_.size(); }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    Entry& find(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end())
            fail("parameter store: unknown parameter '" + name + "'");
        return it->second;
    }
    const Entry& find(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->find(name);
    }

    std::map<std::string, Entry> entries_;
};

/// Extracts d(loss)/d(param) for every parameter in the store. Parameters
/// bound on the tape report the tape gradient; parameters that never made
/// it onto the graph get zeros of their own shape.
template <typename S>
std::map<std::string, Mat<S>> gradient_of(
    Tape<S>& tape, Var loss, const std::map<std::string, Var>& bound,
    const ParameterStore<S>& store) {
    tape.backward(loss);
    std::map<std::string, Mat<S>> grads;
    for (const auto& [name, entry] : store) {
        auto it = bound.find(name);
        if (it != bound.end())
            grads[name] = tape.grad(it->second);
        else
            grads[name] = Mat<S>::Zero(entry.value.rows(), entry.value.cols());
    }
    return grads;
}

/// One AdamW update over every parameter named in grads. Decoupled decay
/// multiplies weights by (1 - lr*decay) before the moment-based update; the
/// effective lr comes from the schedule at the given global step. Bias
/// correction uses the parameter's own update count (1-based).
template <typename S>
void optimizer_step(ParameterStore<S>& store,
                    const std::map<std::string, Mat<S>>& grads,
                    const OptimizerConfig& cfg, std::uint64_t global_step) {
    cfg.validate();
    const double lr = schedule_value(cfg.schedule, global_step, cfg.total_steps,
                                     cfg.learning_rate);
    for (const auto& [name, g] : grads) {
        if (!store.contains(name))
            fail("optimizer_step: gradient for unknown parameter '" + name + "'");
        auto& e = const_cast<typename ParameterStore<S>::Entry&>(store.entry(name));
        if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
            fail("optimizer_step: gradient shape mismatch for '" + name + "'");
        const std::uint64_t t = ++e.step;
        if (cfg.weight_decay != 0.0)
            e.value *= static_cast<S>(1.0 - lr * cfg.weight_decay);
        const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
        e.m = b1 * e.m + (S(1) - b1) * g;
        e.v = (b2 * e.v.array() + (S(1) - b2) * g.array().square()).matrix();
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (Eigen::Index i = 0; i < e.value.rows(); ++i)
            for (Eigen::Index j = 0; j < e.value.cols(); ++j) {
                double mhat = static_cast<double>(e.m(i, j)) / c1;
                double vhat = static_cast<double>(e.v(i, j)) / c2;
                e.value(i, j) -= static_cast<S>(lr * mhat /
                                                (std::sqrt(vhat) + cfg.epsilon));
            }
    }
}

/// Binds store parameters as trainable tape leaves, memoizing per name so a
/// parameter shared by several graph sites accumulates one gradient.
template <typename S>
class TapeBinding {
public:
    TapeBinding(Tape<S>& tape, const ParameterStore<S>& store)
        : tape_(tape), store_(store) {}

    Var operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Var v = tape_.leaf(store_.value(name), true);
        bound_.emplace(name, v);
        return v;
    }

    /// Pre-bind a name to an existing tape variable (e.g. a leaf owned by a
    /// test harness) instead of materializing it from the store.
    void bind(const std::string& name, Var v) {
        if (!bound_.emplace(name, v).second)
            fail("TapeBinding: '" + name + "' is already bound");
    }

    const std::map<std::string, Var>& bound() const { return bound_; }

private:
    Tape<S>& tape_;
    const ParameterStore<S>& store_;
    std::map<std::string, Var> bound_;
};

}  // namespace endx
