#include "mcc/objectives.hpp"

#include <cmath>

namespace mcc {

Var dv_bound(Var joint_scores, Var marginal_scores) {
    if (joint_scores.val().size() < 2) throw ShapeError("dv_bound needs n >= 2 scores");
    return sub(mean(joint_scores), logmeanexp(marginal_scores));
}

double dv_bound_value(const Tensor& joint_scores, const Tensor& marginal_scores) {
    if (joint_scores.size() < 2) throw ShapeError("dv_bound needs n >= 2 scores");
    double jm = 0.0;
    for (std::size_t i = 0; i < joint_scores.size(); ++i) jm += joint_scores[i];
    jm /= static_cast<double>(joint_scores.size());
    double mx = marginal_scores[0];
    for (std::size_t i = 1; i < marginal_scores.size(); ++i) {
        mx = std::max(mx, marginal_scores[i]);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < marginal_scores.size(); ++i) {
        s += std::exp(marginal_scores[i] - mx);
    }
    return jm - (mx + std::log(s / static_cast<double>(marginal_scores.size())));
}

Tensor shuffle_marginals(const Tensor& y_batch, Rng& rng) {
    if (y_batch.rank() != 2) throw ShapeError("shuffle_marginals expects [n x d]");
    const std::size_t n = y_batch.extent(0), d = y_batch.extent(1);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(perm[i], perm[j]);
    }
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = y_batch.data() + perm[i] * d;
        double* dst = out.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    return out;
}

Var energy_term(const std::vector<Var>& activations, double tau_f) {
    if (activations.empty()) throw ContractError("energy_term: no activations");
    if (tau_f <= 0.0) throw DomainError("energy_term: tau_f must be positive");
    std::size_t total = 0;
    for (const Var& a : activations) {
        const Tensor& v = a.val();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] < 0.0) {
                throw ContractError("energy_term: negative activation (not post-ReLU)");
            }
        }
        total += v.size();
    }
    Tape& t = *activations.front().tape;
    Var acc = t.leaf(0.0);
    for (const Var& a : activations) {
        acc = add(acc, sum(tanh(scale(a, 1.0 / tau_f))));
    }
    return scale(acc, 1.0 / static_cast<double>(total));
}

double energy_value(const std::vector<const Tensor*>& activations, double tau_f) {
    if (tau_f <= 0.0) throw DomainError("energy_value: tau_f must be positive");
    double s = 0.0;
    std::size_t total = 0;
    for (const Tensor* a : activations) {
        for (std::size_t i = 0; i < a->size(); ++i) {
            if ((*a)[i] < 0.0) {
                throw ContractError("energy_value: negative activation (not post-ReLU)");
            }
            s += std::tanh((*a)[i] / tau_f);
        }
        total += a->size();
    }
    return total == 0 ? 0.0 : s / static_cast<double>(total);
}

Var loss_mi(Var mi_estimate, Var energy, const LossConfig& cfg) {
    return add(scale(mi_estimate, -cfg.alpha), scale(energy, cfg.gamma));
}

Var mse(Var target, Var prediction) {
    Var d = sub(prediction, target);
    return mean(mul(d, d));
}

double mse_value(const Tensor& target, const Tensor& prediction) {
    if (!target.same_dims(prediction)) throw ShapeError("mse_value dims mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = prediction[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(target.size());
}

Var loss_reconstruction(Var target, Var prediction, Var energy, const LossConfig& cfg) {
    return add(scale(mse(target, prediction), cfg.beta), scale(energy, cfg.gamma));
}

Tensor ideal_binary_mask(const Tensor& clean, const Tensor& noise, double threshold_db) {
    if (!clean.same_dims(noise)) throw ShapeError("ideal_binary_mask dims mismatch");
    Tensor mask(clean.dims());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double c = clean[i], n = noise[i];
        if (c < 0.0 || n < 0.0) throw DomainError("ideal_binary_mask: negative magnitude");
        if (n == 0.0) {
            mask[i] = 1.0;
        } else if (c == 0.0) {
            mask[i] = 0.0;
        } else {
            mask[i] = (20.0 * std::log10(c / n) > threshold_db) ? 1.0 : 0.0;
        }
    }
    return mask;
}

Var mask_loss(Var predicted_mask_logits, Var ibm) {
    return bce_with_logits(predicted_mask_logits, ibm);
}

Tensor firing_probability(const Tensor& activation_records, double theta_f) {
    if (activation_records.rank() != 2) {
        throw ShapeError("firing_probability expects [samples x units]");
    }
    const std::size_t n = activation_records.extent(0), u = activation_records.extent(1);
    Tensor out({u});
    for (std::size_t j = 0; j < u; ++j) {
        std::size_t fired = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (activation_records[i * u + j] > theta_f) ++fired;
        }
        out[j] = static_cast<double>(fired) / static_cast<double>(n);
    }
    return out;
}

double firing_fraction(const std::vector<const Tensor*>& activations, double theta_f) {
    std::size_t fired = 0, total = 0;
    for (const Tensor* a : activations) {
        for (std::size_t i = 0; i < a->size(); ++i) {
            if ((*a)[i] > theta_f) ++fired;
        }
        total += a->size();
    }
    return total == 0 ? 0.0 : static_cast<double>(fired) / static_cast<double>(total);
}

double analytic_gaussian_mi(const std::vector<double>& correlations) {
    double s = 0.0;
    for (double r : correlations) {
        if (std::fabs(r) >= 1.0) throw DomainError("analytic_gaussian_mi: |rho| must be < 1");
        s += -0.5 * std::log(1.0 - r * r);
    }
    return s;
}

// ---------------------------------------------------------------------------
// StatisticsNetwork
// ---------------------------------------------------------------------------

StatisticsNetwork::StatisticsNetwork(ParameterStore& store, const std::string& name,
                                     StatisticsNetworkConfig cfg, Rng& rng)
    : store_(&store), name_(name), cfg_(std::move(cfg)) {
    if (cfg_.x_dim == 0 || cfg_.y_dim == 0 || cfg_.widths.empty()) {
        throw ConfigError("statistics network needs positive dims and one layer");
    }
    std::size_t in0 = cfg_.x_dim, in1 = cfg_.y_dim;
    for (std::size_t l = 0; l < cfg_.widths.size(); ++l) {
        const std::size_t u = cfg_.widths[l];
        const std::string lname = name + "/l" + std::to_string(l);
        if (cfg_.baseline) {
            PointDenseConfig pc;
            pc.units = u;
            pc.fuse = FuseMode::Concat;
            pc.in_dim = in0;
            pc.cross_dim = in1;
            point_layers_.emplace_back(store, lname + "/s0", pc, rng);
            PointDenseConfig pc1 = pc;
            pc1.in_dim = in1;
            pc1.cross_dim = in0;
            point_layers_.emplace_back(store, lname + "/s1", pc1, rng);
        } else {
            TwoPointDenseConfig c0;
            c0.in_dim = in0;
            c0.cross_dim = in1;
            c0.units = u;
            c0.ctx_act = cfg_.ctx_act;
            if (l > 0) c0.mem_prev_dim = cfg_.widths[l - 1];
            TwoPointDenseConfig c1 = c0;
            c1.in_dim = in1;
            c1.cross_dim = in0;
            pairs_.emplace_back(store, lname, c0, c1, /*shared_memory=*/true, rng);
        }
        in0 = u;
        in1 = u;
    }
    const std::size_t joint = 2 * cfg_.widths.back();
    head_w_ = &store.create(name + "/head_w",
                            glorot_uniform(rng, joint, cfg_.global_dim,
                                           {joint, cfg_.global_dim}));
    head_b_ = &store.create(name + "/head_b", Tensor({cfg_.global_dim}));
    out_w_ = &store.create(name + "/out_w",
                           glorot_uniform(rng, cfg_.global_dim, 1, {cfg_.global_dim, 1}));
    out_b_ = &store.create(name + "/out_b", Tensor({1}));
}

StatisticsNetwork::Out StatisticsNetwork::score(Tape& t, Var x, Var y) const {
    const std::size_t batch = x.val().extent(0);
    std::vector<Var> acts;
    Var a0 = x, a1 = y;
    if (cfg_.baseline) {
        for (std::size_t l = 0; l < point_layers_.size(); l += 2) {
            Var n0 = point_layers_[l].forward(t, a0, a1);
            Var n1 = point_layers_[l + 1].forward(t, a1, a0);
            a0 = n0;
            a1 = n1;
            acts.push_back(a0);
            acts.push_back(a1);
        }
    } else {
        Var r0 = x, r1 = y;
        Var m0 = t.leaf(Tensor({batch, pairs_.front().stream0().mem_dim()}));
        Var m1 = m0;
        for (const auto& pair : pairs_) {
            auto out = pair.forward(t, a0, a1, r0, r1, m0, m1);
            a0 = out.a0;
            a1 = out.a1;
            r0 = out.r0;
            r1 = out.r1;
            m0 = out.m0;
            m1 = out.m1;
            acts.push_back(a0);
            acts.push_back(a1);
        }
    }
    Var h = relu(affine(concat_cols(a0, a1), t.param(*head_w_), t.param(*head_b_)));
    acts.push_back(h);
    Var s = affine(h, t.param(*out_w_), t.param(*out_b_));
    return Out{reshape(s, {batch}), std::move(acts)};
}

}  // namespace mcc
