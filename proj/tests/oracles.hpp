#pragma once

// Test-side oracles. Everything here recomputes expectations independently
// of the library's gradient path (central differences, scalar reference
// loops), so the checks stay meaningful if the implementation changes.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include "mcc/params.hpp"
#include "mcc/tape.hpp"
#include "mcc/two_point.hpp"

namespace oracles {

// Central finite differences over every component of every store entry,
// compared against the analytic gradients already sitting in the store.
// Returns the worst relative error (floored denominator for tiny gradients).
inline double max_fd_rel_err(mcc::ParameterStore& store,
                             const std::function<double()>& eval, double h = 1e-5) {
    double worst = 0.0;
    store.for_each([&](mcc::Parameter& p) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double old = p.value[i];
            p.value[i] = old + h;
            const double fp = eval();
            p.value[i] = old - h;
            const double fm = eval();
            p.value[i] = old;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = p.grad[i];
            const double denom = std::max({std::fabs(fd), std::fabs(g), 1e-6});
            worst = std::max(worst, std::fabs(fd - g) / denom);
        }
    });
    return worst;
}

// ---------------------------------------------------------------------------
// Random op compositions (depth <= 6) over rank-2 tensors. The plan is fixed
// up front so the finite-difference eval rebuilds the identical graph.
// ---------------------------------------------------------------------------

struct CompositionPlan {
    enum Kind {
        Sigmoid,
        Tanh,
        Square,
        AddBias,
        Matmul,
        Scale,
        Neighborhood,
        ExpSmall,
        DivSafe,
        AddParam,
        SubParam,
        KindCount
    };
    struct Step {
        Kind kind;
        std::string pname;  // parameter consumed by this step, if any
        std::size_t out_cols = 0;
    };
    std::size_t rows = 0, cols = 0;
    std::vector<Step> steps;
    bool final_logmeanexp = false;
};

inline CompositionPlan make_composition_plan(mcc::Rng& rng, mcc::ParameterStore& store) {
    CompositionPlan plan;
    plan.rows = 2 + rng.below(3);
    plan.cols = 2 + rng.below(3);
    store.create("x", mcc::glorot_uniform(rng, plan.cols, plan.cols,
                                          {plan.rows, plan.cols}));
    const std::size_t depth = 1 + rng.below(6);
    std::size_t cols = plan.cols;
    for (std::size_t d = 0; d < depth; ++d) {
        CompositionPlan::Step step;
        step.kind = static_cast<CompositionPlan::Kind>(
            rng.below(CompositionPlan::KindCount));
        const std::string pname = "p" + std::to_string(d);
        switch (step.kind) {
            case CompositionPlan::AddBias:
                store.create(pname, mcc::glorot_uniform(rng, cols, cols, {cols}));
                step.pname = pname;
                break;
            case CompositionPlan::Matmul: {
                step.out_cols = 2 + rng.below(3);
                store.create(pname,
                             mcc::glorot_uniform(rng, cols, step.out_cols,
                                                 {cols, step.out_cols}));
                step.pname = pname;
                cols = step.out_cols;
                break;
            }
            case CompositionPlan::AddParam:
            case CompositionPlan::SubParam:
                store.create(pname, mcc::glorot_uniform(rng, cols, cols,
                                                        {plan.rows, cols}));
                step.pname = pname;
                break;
            default:
                break;
        }
        plan.steps.push_back(step);
    }
    plan.final_logmeanexp = rng.below(2) == 0;
    return plan;
}

inline mcc::Var eval_composition(const CompositionPlan& plan, mcc::ParameterStore& store,
                                 mcc::Tape& tape) {
    using mcc::Var;
    Var cur = tape.param(store.get("x"));
    for (const auto& step : plan.steps) {
        switch (step.kind) {
            case CompositionPlan::Sigmoid: cur = mcc::sigmoid(cur); break;
            case CompositionPlan::Tanh: cur = mcc::tanh(cur); break;
            case CompositionPlan::Square: cur = mcc::mul(cur, cur); break;
            case CompositionPlan::AddBias:
                cur = mcc::add_bias(cur, tape.param(store.get(step.pname)));
                break;
            case CompositionPlan::Matmul:
                cur = mcc::matmul(cur, tape.param(store.get(step.pname)));
                break;
            case CompositionPlan::Scale: cur = mcc::scale(cur, 0.7); break;
            case CompositionPlan::Neighborhood: cur = mcc::neighborhood_mean(cur); break;
            case CompositionPlan::ExpSmall: cur = mcc::exp(mcc::scale(cur, 0.3)); break;
            case CompositionPlan::DivSafe:
                cur = mcc::div(cur, mcc::add(mcc::sigmoid(cur), tape.leaf(1.0)));
                break;
            case CompositionPlan::AddParam:
                cur = mcc::add(cur, tape.param(store.get(step.pname)));
                break;
            case CompositionPlan::SubParam:
                cur = mcc::sub(cur, tape.param(store.get(step.pname)));
                break;
            case CompositionPlan::KindCount: break;
        }
    }
    return plan.final_logmeanexp ? mcc::logmeanexp(cur) : mcc::mean(cur);
}

inline double composition_case_rel_err(std::uint64_t seed) {
    mcc::Rng rng(seed);
    mcc::ParameterStore store;
    CompositionPlan plan = make_composition_plan(rng, store);
    auto eval = [&]() {
        mcc::Tape tape;
        return eval_composition(plan, store, tape).val().scalar_value();
    };
    {
        mcc::Tape tape;
        mcc::Var loss = eval_composition(plan, store, tape);
        tape.backward(loss, store);
    }
    return max_fd_rel_err(store, eval);
}

// Composed two-point layer (the full RF/contexts/memory/integration/
// modulation/activation chain) with the ReLU output the simulations use.
// Draws are retried until the modulated preactivation sits away from the
// ReLU corner, where central differences are meaningless.
inline double mcc_dense_layer_case_rel_err(std::uint64_t seed) {
    using namespace mcc;
    Rng rng(seed);
    for (int attempt = 0; attempt < 50; ++attempt) {
        ParameterStore store;
        Rng init = rng.split(2 * static_cast<std::uint64_t>(attempt));
        Rng data = rng.split(2 * static_cast<std::uint64_t>(attempt) + 1);
        TwoPointDenseConfig cfg;
        cfg.in_dim = 3;
        cfg.cross_dim = 4;
        cfg.units = 5;
        TwoPointDenseLayer layer(store, "L", cfg, init);
        const std::size_t b = 2;
        Tensor a_prev({b, 3}), abar_prev({b, 4}), rbar_prev({b, 4}), m_prev({b, 5});
        for (std::size_t i = 0; i < a_prev.size(); ++i) a_prev[i] = data.normal();
        for (std::size_t i = 0; i < abar_prev.size(); ++i) abar_prev[i] = data.normal();
        for (std::size_t i = 0; i < rbar_prev.size(); ++i) rbar_prev[i] = data.normal();
        for (std::size_t i = 0; i < m_prev.size(); ++i) m_prev[i] = data.normal();
        auto build = [&](Tape& t) {
            auto out = layer.forward(t, t.leaf(a_prev), t.leaf(abar_prev), t.leaf(rbar_prev),
                                     t.leaf(m_prev));
            return std::make_pair(out, mean(out.activation));
        };
        Tape t0;
        auto built = build(t0);
        const Tensor& r = t0.val(built.first.rf);
        const Tensor& c = t0.val(built.first.context);
        double min_abs = 1e9;
        for (std::size_t i = 0; i < r.size(); ++i) {
            min_abs = std::min(min_abs, std::fabs(r[i] * c[i]));
        }
        if (min_abs < 1e-3) continue;
        t0.backward(built.second, store);
        auto eval = [&]() {
            Tape t;
            return build(t).second.val().scalar_value();
        };
        return max_fd_rel_err(store, eval);
    }
    throw std::runtime_error("no kink-safe two-point draw found");
}

// conv2d -> tanh -> conv2d_transpose -> bias chain, differentiated through
// input, kernels, and bias.
inline double conv_ops_case_rel_err(std::uint64_t seed) {
    using namespace mcc;
    Rng rng(seed);
    ParameterStore store;
    store.create("x", glorot_uniform(rng, 8, 8, {2, 3, 8, 8}));
    store.create("k1", glorot_uniform(rng, 27, 36, {4, 3, 3, 3}));
    store.create("k2", glorot_uniform(rng, 16, 8, {4, 2, 2, 2}));
    store.create("b", glorot_uniform(rng, 2, 2, {2}));
    auto build = [&](Tape& t) {
        Var h = mcc::tanh(conv2d(t.param(store.get("x")), t.param(store.get("k1")), 2));
        Var u = conv2d_transpose(h, t.param(store.get("k2")), 2);
        return mean(mcc::tanh(add_bias(u, t.param(store.get("b")))));
    };
    {
        Tape t;
        Var loss = build(t);
        t.backward(loss, store);
    }
    auto eval = [&]() {
        Tape t;
        return build(t).val().scalar_value();
    };
    return max_fd_rel_err(store, eval);
}

// trilinear + concat + bce_with_logits + rank-4 neighborhood mean.
inline double aux_ops_case_rel_err(std::uint64_t seed) {
    using namespace mcc;
    Rng rng(seed);
    ParameterStore store;
    store.create("p", glorot_uniform(rng, 2, 2, {3, 2}));
    store.create("d", glorot_uniform(rng, 2, 2, {3, 2}));
    store.create("m", glorot_uniform(rng, 2, 2, {3, 2}));
    store.create("theta", glorot_uniform(rng, 6, 2, {2, 2, 2, 2}));
    store.create("x4", glorot_uniform(rng, 4, 4, {1, 2, 4, 4}));
    Tensor targets({3, 4});
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.below(2) ? 1.0 : 0.0;
    auto build = [&](Tape& t) {
        Var c = trilinear(t.param(store.get("theta")), t.param(store.get("p")),
                          t.param(store.get("d")), t.param(store.get("m")));
        Var h = concat_cols(c, sigmoid(c));
        Var l1 = bce_with_logits(h, t.leaf(targets));
        Var x4 = t.param(store.get("x4"));
        Var l2 = mean(mul(neighborhood_mean(x4), x4));
        return add(l1, l2);
    };
    {
        Tape t;
        Var loss = build(t);
        t.backward(loss, store);
    }
    auto eval = [&]() {
        Tape t;
        return build(t).val().scalar_value();
    };
    return max_fd_rel_err(store, eval);
}

// Scalar reference Adam, one parameter, mirrors the published update rule.
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    std::size_t t = 0;
    double step(double theta, double grad, double lr, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8) {
        ++t;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        const double mhat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
        return theta - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace oracles
