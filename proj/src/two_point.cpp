#include "mcc/two_point.hpp"

#include <utility>

namespace mcc {

Var apply_activation(Var x, Activation a) {
    switch (a) {
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Tanh: return tanh(x);
        case Activation::Identity: return x;
    }
    throw ContractError("unknown activation");
}

Var affine(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

namespace {

Parameter* dense_param(ParameterStore& store, Rng& rng, const std::string& name,
                       std::size_t in, std::size_t out) {
    return &store.create(name, glorot_uniform(rng, in, out, {in, out}));
}

Parameter* bias_param(ParameterStore& store, const std::string& name, std::size_t n) {
    return &store.create(name, Tensor({n}));
}

Parameter* conv_param(ParameterStore& store, Rng& rng, const std::string& name,
                      std::size_t f, std::size_t c, std::size_t k) {
    return &store.create(name, glorot_uniform(rng, c * k * k, f * k * k, {f, c, k, k}));
}

}  // namespace

// ---------------------------------------------------------------------------
// TwoPointDenseLayer
// ---------------------------------------------------------------------------

TwoPointDenseLayer::TwoPointDenseLayer(ParameterStore& store, std::string name,
                                       TwoPointDenseConfig cfg, Rng& rng)
    : store_(&store), name_(std::move(name)), cfg_(cfg) {
    if (cfg_.in_dim == 0 || cfg_.cross_dim == 0 || cfg_.units == 0) {
        throw ConfigError("two-point layer dims must be positive: " + name_);
    }
    if (cfg_.mem_dim == 0) cfg_.mem_dim = cfg_.units;
    if (cfg_.mem_prev_dim == 0) cfg_.mem_prev_dim = cfg_.mem_dim;
    const std::size_t u = cfg_.units, in = cfg_.in_dim, cr = cfg_.cross_dim;
    const std::size_t mm = cfg_.mem_dim, mp = cfg_.mem_prev_dim;

    rf_w_ = dense_param(store, rng, name_ + "/rf_w", in, u);
    rf_b_ = bias_param(store, name_ + "/rf_b", u);
    p_w_ = dense_param(store, rng, name_ + "/p_w", u, u);
    p_b_ = bias_param(store, name_ + "/p_b", u);
    d_w_ = dense_param(store, rng, name_ + "/d_w", cr, u);
    d_b_ = bias_param(store, name_ + "/d_b", u);
    if (cfg_.with_memory) {
        m_rec_ = dense_param(store, rng, name_ + "/m_rec", mp, mm);
        m_self_ = dense_param(store, rng, name_ + "/m_self", in, mm);
        m_cross_ = dense_param(store, rng, name_ + "/m_cross", cr, mm);
        m_b_ = bias_param(store, name_ + "/m_b", mm);
    }
    if (cfg_.integration == IntegrationMode::Additive) {
        iw_p_ = dense_param(store, rng, name_ + "/ic_wp", u, u);
        iw_d_ = dense_param(store, rng, name_ + "/ic_wd", u, u);
        iw_m_ = dense_param(store, rng, name_ + "/ic_wm", mm, u);
        i_b_ = bias_param(store, name_ + "/ic_b", u);
    } else {
        if (u * u * mm > kTrilinearCap) {
            throw ResourceError("trilinear integration extent product " +
                                std::to_string(u * u * mm) + " exceeds cap");
        }
        i_theta_ = &store.create(name_ + "/ic_theta",
                                 glorot_uniform(rng, u + u + mm, u, {u, u, u, mm}));
    }
}

Var TwoPointDenseLayer::rf_transform(Tape& t, Var a_prev) const {
    return affine(a_prev, t.param(*rf_w_), t.param(*rf_b_));
}

Var TwoPointDenseLayer::proximal_context(Tape& t, Var r) const {
    return affine(r, t.param(*p_w_), t.param(*p_b_));
}

Var TwoPointDenseLayer::distal_context(Tape& t, Var rbar_prev) const {
    return affine(rbar_prev, t.param(*d_w_), t.param(*d_b_));
}

Var TwoPointDenseLayer::universal_context_update(Tape& t, Var m_prev, Var a_prev,
                                                 Var abar_prev) const {
    if (!cfg_.with_memory) {
        throw ContractError("layer " + name_ + " does not own memory maps");
    }
    Var rec = matmul(m_prev, t.param(*m_rec_));
    Var self = matmul(a_prev, t.param(*m_self_));
    Var cross = matmul(abar_prev, t.param(*m_cross_));
    return add_bias(add(add(rec, self), cross), t.param(*m_b_));
}

Var TwoPointDenseLayer::integrate_context(Tape& t, Var p, Var d, Var m) const {
    if (cfg_.integration == IntegrationMode::Trilinear) {
        return trilinear(t.param(*i_theta_), p, d, m);
    }
    Var lin = add(add(matmul(p, t.param(*iw_p_)), matmul(d, t.param(*iw_d_))),
                  matmul(m, t.param(*iw_m_)));
    return apply_activation(add_bias(lin, t.param(*i_b_)), cfg_.ctx_act);
}

Var TwoPointDenseLayer::modulate(Var r, Var c) {
    if (!r.val().same_dims(c.val())) {
        throw ShapeError("modulate: r " + r.val().dims_str() + " vs c " + c.val().dims_str());
    }
    return mul(r, c);
}

Var TwoPointDenseLayer::modulate_neighborhood(Var r, Var c) {
    if (!r.val().same_dims(c.val())) {
        throw ShapeError("modulate: r " + r.val().dims_str() + " vs c " + c.val().dims_str());
    }
    Tape& t = *r.tape;
    Var s = div(neighborhood_mean(c), add(mean(c), t.leaf(1e-8)));
    return mul(mul(r, c), s);
}

TwoPointDenseLayer::Output TwoPointDenseLayer::forward(Tape& t, Var a_prev, Var abar_prev,
                                                       Var rbar_prev, Var m_prev) const {
    Var m = universal_context_update(t, m_prev, a_prev, abar_prev);
    return forward_with_memory(t, a_prev, rbar_prev, m);
}

TwoPointDenseLayer::Output TwoPointDenseLayer::forward_with_memory(Tape& t, Var a_prev,
                                                                   Var rbar_prev,
                                                                   Var m) const {
    Var r = rf_transform(t, a_prev);
    Var p = proximal_context(t, r);
    Var d = distal_context(t, rbar_prev);
    Var c = integrate_context(t, p, d, m);
    Var a = cfg_.neighborhood ? modulate_neighborhood(r, c) : modulate(r, c);
    return Output{apply_activation(a, cfg_.act), r, m, c};
}

std::size_t TwoPointDenseLayer::parameter_count() const {
    return store_->scalar_count(name_ + "/");
}

std::size_t TwoPointDenseLayer::expected_parameter_count(const TwoPointDenseConfig& cfg) {
    const std::size_t u = cfg.units, in = cfg.in_dim, cr = cfg.cross_dim;
    const std::size_t mm = cfg.mem_dim == 0 ? u : cfg.mem_dim;
    const std::size_t mp = cfg.mem_prev_dim == 0 ? mm : cfg.mem_prev_dim;
    std::size_t n = in * u + u;   // rf
    n += u * u + u;               // proximal
    n += cr * u + u;              // distal
    if (cfg.with_memory) n += mp * mm + in * mm + cr * mm + mm;
    if (cfg.integration == IntegrationMode::Additive) {
        n += u * u + u * u + mm * u + u;
    } else {
        n += u * u * u * mm;
    }
    return n;
}

// ---------------------------------------------------------------------------
// TwoPointDensePair
// ---------------------------------------------------------------------------

namespace {
TwoPointDenseConfig follower_cfg(TwoPointDenseConfig cfg, bool shared) {
    if (shared) cfg.with_memory = false;
    return cfg;
}
TwoPointConvConfig follower_cfg(TwoPointConvConfig cfg, bool shared) {
    if (shared) cfg.with_memory = false;
    return cfg;
}
}  // namespace

TwoPointDensePair::TwoPointDensePair(ParameterStore& store, const std::string& name,
                                     TwoPointDenseConfig cfg0, TwoPointDenseConfig cfg1,
                                     bool shared_memory, Rng& rng)
    : l0_(store, name + "/s0", cfg0, rng),
      l1_(store, name + "/s1", follower_cfg(cfg1, shared_memory), rng),
      shared_(shared_memory) {}

TwoPointDensePair::Output TwoPointDensePair::forward(Tape& t, Var a0_prev, Var a1_prev,
                                                     Var r0_prev, Var r1_prev, Var m0_prev,
                                                     Var m1_prev) const {
    if (shared_) {
        Var m = l0_.universal_context_update(t, m0_prev, a0_prev, a1_prev);
        auto o0 = l0_.forward_with_memory(t, a0_prev, r1_prev, m);
        auto o1 = l1_.forward_with_memory(t, a1_prev, r0_prev, m);
        return Output{o0.activation, o1.activation, o0.rf, o1.rf, m, m};
    }
    auto o0 = l0_.forward(t, a0_prev, a1_prev, r1_prev, m0_prev);
    auto o1 = l1_.forward(t, a1_prev, a0_prev, r0_prev, m1_prev);
    return Output{o0.activation, o1.activation, o0.rf, o1.rf, o0.memory, o1.memory};
}

// ---------------------------------------------------------------------------
// PointDenseLayer
// ---------------------------------------------------------------------------

PointDenseLayer::PointDenseLayer(ParameterStore& store, std::string name, PointDenseConfig cfg,
                                 Rng& rng)
    : store_(&store), name_(std::move(name)), cfg_(cfg) {
    if (cfg_.in_dim == 0 || cfg_.cross_dim == 0 || cfg_.units == 0) {
        throw ConfigError("point layer dims must be positive: " + name_);
    }
    if (cfg_.fuse == FuseMode::Concat) {
        w_ = dense_param(store, rng, name_ + "/w", cfg_.in_dim + cfg_.cross_dim, cfg_.units);
    } else {
        w_self_ = dense_param(store, rng, name_ + "/w_self", cfg_.in_dim, cfg_.units);
        w_cross_ = dense_param(store, rng, name_ + "/w_cross", cfg_.cross_dim, cfg_.units);
    }
    b_ = bias_param(store, name_ + "/b", cfg_.units);
}

Var PointDenseLayer::forward(Tape& t, Var a_prev, Var abar_prev) const {
    Var pre{nullptr, 0};
    switch (cfg_.fuse) {
        case FuseMode::Concat:
            pre = matmul(concat_cols(a_prev, abar_prev), t.param(*w_));
            break;
        case FuseMode::Add:
            pre = add(matmul(a_prev, t.param(*w_self_)), matmul(abar_prev, t.param(*w_cross_)));
            break;
        case FuseMode::Mul:
            pre = mul(matmul(a_prev, t.param(*w_self_)), matmul(abar_prev, t.param(*w_cross_)));
            break;
    }
    return apply_activation(add_bias(pre, t.param(*b_)), cfg_.act);
}

// ---------------------------------------------------------------------------
// TwoPointConvLayer
// ---------------------------------------------------------------------------

TwoPointConvLayer::TwoPointConvLayer(ParameterStore& store, std::string name,
                                     TwoPointConvConfig cfg, Rng& rng)
    : store_(&store), name_(std::move(name)), cfg_(cfg) {
    if (cfg_.in_channels == 0 || cfg_.cross_channels == 0 || cfg_.filters == 0) {
        throw ConfigError("two-point conv layer channels must be positive: " + name_);
    }
    if (cfg_.mem_prev_channels == 0) cfg_.mem_prev_channels = cfg_.filters;
    const std::size_t f = cfg_.filters;
    rf_k_ = conv_param(store, rng, name_ + "/rf_k", f, cfg_.in_channels, cfg_.kernel);
    rf_b_ = bias_param(store, name_ + "/rf_b", f);
    p_k_ = conv_param(store, rng, name_ + "/p_k", f, f, 1);
    p_b_ = bias_param(store, name_ + "/p_b", f);
    d_k_ = conv_param(store, rng, name_ + "/d_k", f, cfg_.cross_channels, cfg_.cross_kernel);
    d_b_ = bias_param(store, name_ + "/d_b", f);
    if (cfg_.with_memory) {
        m_rec_ = conv_param(store, rng, name_ + "/m_rec", f, cfg_.mem_prev_channels,
                            cfg_.mem_rec_kernel);
        m_self_ = conv_param(store, rng, name_ + "/m_self", f, cfg_.in_channels, cfg_.kernel);
        m_cross_ = conv_param(store, rng, name_ + "/m_cross", f, cfg_.cross_channels,
                              cfg_.cross_kernel);
        m_b_ = bias_param(store, name_ + "/m_b", f);
    }
    iw_p_ = conv_param(store, rng, name_ + "/ic_wp", f, f, 1);
    iw_d_ = conv_param(store, rng, name_ + "/ic_wd", f, f, 1);
    iw_m_ = conv_param(store, rng, name_ + "/ic_wm", f, f, 1);
    i_b_ = bias_param(store, name_ + "/ic_b", f);
}

Var TwoPointConvLayer::rf_transform(Tape& t, Var a_prev) const {
    return add_bias(conv2d(a_prev, t.param(*rf_k_), cfg_.stride), t.param(*rf_b_));
}

Var TwoPointConvLayer::proximal_context(Tape& t, Var r) const {
    return add_bias(conv2d(r, t.param(*p_k_), 1), t.param(*p_b_));
}

Var TwoPointConvLayer::distal_context(Tape& t, Var rbar_prev) const {
    return add_bias(conv2d(rbar_prev, t.param(*d_k_), cfg_.cross_stride), t.param(*d_b_));
}

Var TwoPointConvLayer::universal_context_update(Tape& t, Var m_prev, Var a_prev,
                                                Var abar_prev) const {
    if (!cfg_.with_memory) {
        throw ContractError("layer " + name_ + " does not own memory maps");
    }
    Var rec = conv2d(m_prev, t.param(*m_rec_), cfg_.mem_rec_stride);
    Var self = conv2d(a_prev, t.param(*m_self_), cfg_.stride);
    Var cross = conv2d(abar_prev, t.param(*m_cross_), cfg_.cross_stride);
    return add_bias(add(add(rec, self), cross), t.param(*m_b_));
}

Var TwoPointConvLayer::integrate_context(Tape& t, Var p, Var d, Var m) const {
    Var lin = add(add(conv2d(p, t.param(*iw_p_), 1), conv2d(d, t.param(*iw_d_), 1)),
                  conv2d(m, t.param(*iw_m_), 1));
    return apply_activation(add_bias(lin, t.param(*i_b_)), cfg_.ctx_act);
}

TwoPointConvLayer::Output TwoPointConvLayer::forward(Tape& t, Var a_prev, Var abar_prev,
                                                     Var rbar_prev, Var m_prev) const {
    Var m = universal_context_update(t, m_prev, a_prev, abar_prev);
    return forward_with_memory(t, a_prev, rbar_prev, m);
}

TwoPointConvLayer::Output TwoPointConvLayer::forward_with_memory(Tape& t, Var a_prev,
                                                                 Var rbar_prev, Var m) const {
    Var r = rf_transform(t, a_prev);
    Var p = proximal_context(t, r);
    Var d = distal_context(t, rbar_prev);
    Var c = integrate_context(t, p, d, m);
    Var a = cfg_.neighborhood ? TwoPointDenseLayer::modulate_neighborhood(r, c)
                              : TwoPointDenseLayer::modulate(r, c);
    return Output{apply_activation(a, cfg_.act), r, m, c};
}

TwoPointConvPair::TwoPointConvPair(ParameterStore& store, const std::string& name,
                                   TwoPointConvConfig cfg0, TwoPointConvConfig cfg1,
                                   bool shared_memory, Rng& rng)
    : l0_(store, name + "/s0", cfg0, rng),
      l1_(store, name + "/s1", follower_cfg(cfg1, shared_memory), rng),
      shared_(shared_memory) {}

TwoPointConvPair::Output TwoPointConvPair::forward(Tape& t, Var a0_prev, Var a1_prev,
                                                   Var r0_prev, Var r1_prev, Var m0_prev,
                                                   Var m1_prev) const {
    if (shared_) {
        Var m = l0_.universal_context_update(t, m0_prev, a0_prev, a1_prev);
        auto o0 = l0_.forward_with_memory(t, a0_prev, r1_prev, m);
        auto o1 = l1_.forward_with_memory(t, a1_prev, r0_prev, m);
        return Output{o0.activation, o1.activation, o0.rf, o1.rf, m, m};
    }
    auto o0 = l0_.forward(t, a0_prev, a1_prev, r1_prev, m0_prev);
    auto o1 = l1_.forward(t, a1_prev, a0_prev, r0_prev, m1_prev);
    return Output{o0.activation, o1.activation, o0.rf, o1.rf, o0.memory, o1.memory};
}

// ---------------------------------------------------------------------------
// PointConvLayer
// ---------------------------------------------------------------------------

PointConvLayer::PointConvLayer(ParameterStore& store, std::string name, PointConvConfig cfg,
                               Rng& rng)
    : store_(&store), name_(std::move(name)), cfg_(cfg) {
    k_self_ = conv_param(store, rng, name_ + "/k_self", cfg_.filters, cfg_.in_channels,
                         cfg_.kernel);
    k_cross_ = conv_param(store, rng, name_ + "/k_cross", cfg_.filters, cfg_.cross_channels,
                          cfg_.cross_kernel);
    b_ = bias_param(store, name_ + "/b", cfg_.filters);
}

Var PointConvLayer::forward(Tape& t, Var a_prev, Var abar_prev) const {
    Var self = conv2d(a_prev, t.param(*k_self_), cfg_.stride);
    Var cross = conv2d(abar_prev, t.param(*k_cross_), cfg_.cross_stride);
    return apply_activation(add_bias(add(self, cross), t.param(*b_)), cfg_.act);
}

std::pair<std::size_t, std::size_t> fit_conv_geometry(std::size_t in, std::size_t out) {
    if (out == 0 || in < out) {
        throw ShapeError("no valid conv geometry from extent " + std::to_string(in) + " to " +
                         std::to_string(out));
    }
    if (out == 1) return {in, 1};
    const std::size_t stride = std::max<std::size_t>(1, (in - 1) / (out - 1));
    const std::size_t kernel = in - stride * (out - 1);
    return {kernel, stride};
}

}  // namespace mcc
