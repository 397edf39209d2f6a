#include <cmath>

#include "doctest.h"
#include "mcc/two_point.hpp"
#include "oracles.hpp"

using namespace mcc;

namespace {

void set_identity(ParameterStore& s, const std::string& name) {
    Tensor& v = s.get(name).value;
    REQUIRE(v.rank() == 2);
    REQUIRE(v.extent(0) == v.extent(1));
    v.fill(0.0);
    for (std::size_t i = 0; i < v.extent(0); ++i) v[i * v.extent(1) + i] = 1.0;
}

void set_fill(ParameterStore& s, const std::string& name, double x) {
    s.get(name).value.fill(x);
}

// identity maps, zero biases, identity context activation: the hand-traceable
// configuration used by several cases below
TwoPointDenseLayer make_plain_layer(ParameterStore& store, std::size_t n, Rng& rng,
                                    Activation ctx_act = Activation::Identity,
                                    Activation act = Activation::Relu) {
    TwoPointDenseConfig cfg;
    cfg.in_dim = n;
    cfg.cross_dim = n;
    cfg.units = n;
    cfg.ctx_act = ctx_act;
    cfg.act = act;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    for (const char* w : {"L/rf_w", "L/p_w", "L/d_w", "L/m_rec", "L/m_self", "L/m_cross",
                          "L/ic_wp", "L/ic_wd", "L/ic_wm"}) {
        set_identity(store, w);
    }
    for (const char* b : {"L/rf_b", "L/p_b", "L/d_b", "L/m_b", "L/ic_b"}) {
        set_fill(store, b, 0.0);
    }
    return layer;
}

}  // namespace

TEST_SUITE("two_point") {

TEST_CASE("rf transform: identity and bias-only maps") {
    ParameterStore store;
    Rng rng(1);
    TwoPointDenseLayer layer = make_plain_layer(store, 2, rng);
    Tape t;
    Var r = layer.rf_transform(t, t.leaf(Tensor({1, 2}, {1, 2})));
    CHECK(t.val(r).vec() == std::vector<double>{1, 2});
    set_fill(store, "L/rf_w", 0.0);
    set_fill(store, "L/rf_b", 0.25);
    Var r2 = layer.rf_transform(t, t.leaf(Tensor({1, 2}, {9, -3})));
    CHECK(t.val(r2).vec() == std::vector<double>{0.25, 0.25});
}

TEST_CASE("proximal and distal contexts under identity and zero maps") {
    ParameterStore store;
    Rng rng(2);
    TwoPointDenseLayer layer = make_plain_layer(store, 2, rng);
    Tape t;
    Var r = t.leaf(Tensor({1, 2}, {3, -4}));
    CHECK(t.val(layer.proximal_context(t, r)).vec() == std::vector<double>{3, -4});
    Var rb = t.leaf(Tensor({1, 2}, {0.5, 2}));
    CHECK(t.val(layer.distal_context(t, rb)).vec() == std::vector<double>{0.5, 2});
    set_fill(store, "L/p_w", 0.0);
    set_fill(store, "L/p_b", 7.0);
    CHECK(t.val(layer.proximal_context(t, r)).vec() == std::vector<double>{7, 7});
}

TEST_CASE("universal context update arithmetic") {
    ParameterStore store;
    Rng rng(3);
    TwoPointDenseLayer layer = make_plain_layer(store, 2, rng);
    Tape t;
    Var m = layer.universal_context_update(t, t.leaf(Tensor({1, 2}, {1, 0})),
                                           t.leaf(Tensor({1, 2}, {0, 1})),
                                           t.leaf(Tensor({1, 2}, {1, 1})));
    CHECK(t.val(m).vec() == std::vector<double>{2, 2});
    Var m2 = layer.universal_context_update(t, t.leaf(Tensor({1, 2}, {0, 0})),
                                            t.leaf(Tensor({1, 2}, {2, 3})),
                                            t.leaf(Tensor({1, 2}, {4, 5})));
    CHECK(t.val(m2).vec() == std::vector<double>{6, 8});
}

TEST_CASE("two-step memory recursion against a scalar oracle") {
    ParameterStore store;
    Rng rng(4);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 1;
    cfg.cross_dim = 1;
    cfg.units = 1;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    const double w_rec = 0.5, w_self = 2.0, w_cross = -1.0, b = 0.25;
    store.get("L/m_rec").value[0] = w_rec;
    store.get("L/m_self").value[0] = w_self;
    store.get("L/m_cross").value[0] = w_cross;
    store.get("L/m_b").value[0] = b;
    Tape t;
    const double a1 = 0.7, ab1 = -0.2, a2 = 1.1, ab2 = 0.4;
    Var m1 = layer.universal_context_update(t, t.leaf(Tensor({1, 1}, {0.0})),
                                            t.leaf(Tensor({1, 1}, {a1})),
                                            t.leaf(Tensor({1, 1}, {ab1})));
    Var m2 = layer.universal_context_update(t, m1, t.leaf(Tensor({1, 1}, {a2})),
                                            t.leaf(Tensor({1, 1}, {ab2})));
    const double m1_ref = w_self * a1 + w_cross * ab1 + b;
    const double m2_ref = w_rec * m1_ref + w_self * a2 + w_cross * ab2 + b;
    CHECK(t.val(m1)[0] == doctest::Approx(m1_ref).epsilon(1e-12));
    CHECK(t.val(m2)[0] == doctest::Approx(m2_ref).epsilon(1e-12));
}

TEST_CASE("additive integration with identity pieces sums the contexts") {
    ParameterStore store;
    Rng rng(5);
    TwoPointDenseLayer layer = make_plain_layer(store, 2, rng);
    Tape t;
    Var c = layer.integrate_context(t, t.leaf(Tensor({1, 2}, {1, 2})),
                                    t.leaf(Tensor({1, 2}, {10, 20})),
                                    t.leaf(Tensor({1, 2}, {100, 200})));
    CHECK(t.val(c).vec() == std::vector<double>{111, 222});
}

TEST_CASE("trilinear integration literal case") {
    ParameterStore store;
    Rng rng(6);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 1;
    cfg.cross_dim = 1;
    cfg.units = 1;
    cfg.integration = IntegrationMode::Trilinear;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    store.get("L/ic_theta").value.fill(1.0);
    Tape t;
    Var one = t.leaf(Tensor({1, 1}, {1.0}));
    Var c = layer.integrate_context(t, one, one, one);
    CHECK(t.val(c).vec() == std::vector<double>{1.0});
}

TEST_CASE("trilinear theta can encode an additive map on 2-dim inputs") {
    // with d = m = all-ones, theta[e,i,j,l] = W[i,e]/4 reproduces c = p W
    ParameterStore store;
    Rng rng(7);
    TwoPointDenseConfig add_cfg;
    add_cfg.in_dim = 2;
    add_cfg.cross_dim = 2;
    add_cfg.units = 2;
    add_cfg.ctx_act = Activation::Identity;
    TwoPointDenseLayer additive(store, "A", add_cfg, rng);
    TwoPointDenseConfig tri_cfg = add_cfg;
    tri_cfg.integration = IntegrationMode::Trilinear;
    TwoPointDenseLayer trilin(store, "T", tri_cfg, rng);

    Rng wr(71);
    Tensor w = glorot_uniform(wr, 2, 2, {2, 2});
    store.get("A/ic_wp").value = w;
    set_fill(store, "A/ic_wd", 0.0);
    set_fill(store, "A/ic_wm", 0.0);
    set_fill(store, "A/ic_b", 0.0);
    Tensor& theta = store.get("T/ic_theta").value;  // [e,i,j,l]
    for (std::size_t e = 0; e < 2; ++e) {
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                for (std::size_t l = 0; l < 2; ++l) {
                    theta[((e * 2 + i) * 2 + j) * 2 + l] = w[i * 2 + e] / 4.0;
                }
            }
        }
    }
    Tape t;
    Var p = t.leaf(Tensor({3, 2}, {0.3, -1.2, 2.0, 0.7, -0.4, 0.9}));
    Var ones = t.leaf(Tensor::ones({3, 2}));
    Var ca = additive.integrate_context(t, p, ones, ones);
    Var ct = trilin.integrate_context(t, p, ones, ones);
    CHECK(Tensor::max_abs_diff(t.val(ca), t.val(ct)) < 1e-12);
}

TEST_CASE("modulation definition") {
    Tape t;
    Var r = t.leaf(Tensor({1, 2}, {2, 3}));
    CHECK(t.val(TwoPointDenseLayer::modulate(r, t.leaf(Tensor::ones({1, 2})))).vec() ==
          std::vector<double>{2, 3});
    CHECK(t.val(TwoPointDenseLayer::modulate(r, t.leaf(Tensor({1, 2})))).vec() ==
          std::vector<double>{0, 0});
    CHECK(t.val(TwoPointDenseLayer::modulate(r, t.leaf(Tensor({1, 2}, {0.5, -1})))).vec() ==
          std::vector<double>{1, -3});
    CHECK_THROWS_AS(TwoPointDenseLayer::modulate(r, t.leaf(Tensor({1, 3}))), ShapeError);
}

TEST_CASE("hand-traced forward: identity everything gives A = 4") {
    ParameterStore store;
    Rng rng(8);
    TwoPointDenseLayer layer = make_plain_layer(store, 1, rng);
    Tape t;
    Var one = t.leaf(Tensor({1, 1}, {1.0}));
    Var zero = t.leaf(Tensor({1, 1}, {0.0}));
    auto out = layer.forward(t, one, one, one, zero);
    CHECK(t.val(out.rf)[0] == 1.0);
    CHECK(t.val(out.memory)[0] == 2.0);
    CHECK(t.val(out.context)[0] == 4.0);
    CHECK(t.val(out.activation)[0] == 4.0);
}

TEST_CASE("zero cross-stream input with zero biases isolates the streams") {
    ParameterStore store;
    Rng rng(9);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 3;
    cfg.cross_dim = 3;
    cfg.units = 3;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    for (const char* b : {"L/rf_b", "L/p_b", "L/d_b", "L/m_b", "L/ic_b"}) {
        set_fill(store, b, 0.0);
    }
    Tape t;
    Rng dr(91);
    Tensor a({2, 3});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    Var a_prev = t.leaf(a);
    Var zeros = t.leaf(Tensor({2, 3}));
    Var d = layer.distal_context(t, zeros);
    CHECK(Tensor::max_abs_diff(t.val(d), Tensor({2, 3})) == 0.0);
    Var m = layer.universal_context_update(t, t.leaf(Tensor({2, 3})), a_prev, zeros);
    Var m_self_only = add_bias(matmul(a_prev, t.leaf(store.get("L/m_self").value)),
                               t.leaf(store.get("L/m_b").value));
    CHECK(Tensor::max_abs_diff(t.val(m), t.val(m_self_only)) < 1e-14);
}

TEST_CASE("context veto and context identity") {
    ParameterStore store;
    Rng rng(10);
    TwoPointDenseLayer layer = make_plain_layer(store, 2, rng);
    set_fill(store, "L/ic_wp", 0.0);
    set_fill(store, "L/ic_wd", 0.0);
    set_fill(store, "L/ic_wm", 0.0);
    Tape t;
    Rng dr(101);
    Tensor a({2, 2}), ab({2, 2}), rb({2, 2}), m({2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        a[i] = dr.normal();
        ab[i] = dr.normal();
        rb[i] = dr.normal();
        m[i] = dr.normal();
    }
    set_fill(store, "L/ic_b", 0.0);
    auto veto = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(rb), t.leaf(m));
    CHECK(Tensor::max_abs_diff(t.val(veto.activation), Tensor({2, 2})) == 0.0);
    set_fill(store, "L/ic_b", 1.0);
    auto ident = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(rb), t.leaf(m));
    const Tensor& r = t.val(ident.rf);
    Tensor expect({2, 2});
    for (std::size_t i = 0; i < 4; ++i) expect[i] = r[i] > 0 ? r[i] : 0.0;
    CHECK(Tensor::max_abs_diff(t.val(ident.activation), expect) == 0.0);
}

TEST_CASE("forward is bit-deterministic") {
    ParameterStore store;
    Rng rng(11);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 4;
    cfg.cross_dim = 3;
    cfg.units = 5;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    Rng dr(111);
    Tensor a({3, 4}), ab({3, 3}), rb({3, 3}), m({3, 5});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = dr.normal();
    for (std::size_t i = 0; i < rb.size(); ++i) rb[i] = dr.normal();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = dr.normal();
    Tape t1, t2;
    auto o1 = layer.forward(t1, t1.leaf(a), t1.leaf(ab), t1.leaf(rb), t1.leaf(m));
    auto o2 = layer.forward(t2, t2.leaf(a), t2.leaf(ab), t2.leaf(rb), t2.leaf(m));
    for (std::size_t i = 0; i < t1.val(o1.activation).size(); ++i) {
        CHECK(t1.val(o1.activation)[i] == t2.val(o2.activation)[i]);
    }
}

TEST_CASE("parameter count equals the closed-form count") {
    ParameterStore store;
    Rng rng(12);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 7;
    cfg.cross_dim = 5;
    cfg.units = 6;
    cfg.mem_dim = 4;
    cfg.mem_prev_dim = 3;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    const std::size_t in = 7, cr = 5, u = 6, mm = 4, mp = 3;
    const std::size_t expect = (in * u + u) + (u * u + u) + (cr * u + u) +
                               (mp * mm + in * mm + cr * mm + mm) +
                               (u * u + u * u + mm * u + u);
    CHECK(layer.parameter_count() == expect);
    CHECK(TwoPointDenseLayer::expected_parameter_count(cfg) == expect);
}

TEST_CASE("composed layer gradient matches finite differences") {
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        CHECK(oracles::mcc_dense_layer_case_rel_err(seed) < 1e-4);
    }
}

TEST_CASE("neighborhood modulation: uniform context reduces to a scaled forward") {
    ParameterStore store;
    Rng rng(13);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 2;
    cfg.cross_dim = 2;
    cfg.units = 4;
    cfg.neighborhood = true;
    cfg.ctx_act = Activation::Identity;
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    set_fill(store, "L/ic_wp", 0.0);
    set_fill(store, "L/ic_wd", 0.0);
    set_fill(store, "L/ic_wm", 0.0);
    const double v = 0.8;
    set_fill(store, "L/ic_b", v);
    Tape t;
    Rng dr(131);
    Tensor a({2, 2}), ab({2, 2}), m({2, 4});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = dr.normal();
    auto out = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(ab), t.leaf(m));
    const double s0 = v / (v + 1e-8);
    const Tensor& r = t.val(out.rf);
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double plain = r[i] * v * s0;
        const double expect = plain > 0 ? plain : 0.0;
        CHECK(t.val(out.activation)[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    set_fill(store, "L/ic_b", 0.0);
    auto dead = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(ab), t.leaf(m));
    CHECK(Tensor::max_abs_diff(t.val(dead.activation), Tensor({2, 4})) == 0.0);
}

TEST_CASE("neighborhood modulation gradient check") {
    ParameterStore store;
    Rng rng(14);
    TwoPointDenseConfig cfg;
    cfg.in_dim = 3;
    cfg.cross_dim = 3;
    cfg.units = 4;
    cfg.neighborhood = true;
    cfg.act = Activation::Tanh;  // smooth output for differencing
    TwoPointDenseLayer layer(store, "L", cfg, rng);
    Rng dr(141);
    Tensor a({2, 3}), ab({2, 3}), m({2, 4});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = dr.normal();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = dr.normal();
    auto build = [&](Tape& t) {
        auto out = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(ab), t.leaf(m));
        return mean(out.activation);
    };
    {
        Tape t;
        t.backward(build(t), store);
    }
    auto eval = [&]() {
        Tape t;
        return build(t).val().scalar_value();
    };
    CHECK(oracles::max_fd_rel_err(store, eval) < 1e-4);
}

TEST_CASE("point baseline fusion modes") {
    ParameterStore store;
    Rng rng(15);
    PointDenseConfig cfg;
    cfg.in_dim = 2;
    cfg.cross_dim = 2;
    cfg.units = 2;
    cfg.fuse = FuseMode::Add;
    PointDenseLayer add_layer(store, "P", cfg, rng);
    set_identity(store, "P/w_self");
    set_identity(store, "P/w_cross");
    set_fill(store, "P/b", 0.0);
    Tape t;
    Var a = t.leaf(Tensor({1, 2}, {1, -3}));
    Var ab = t.leaf(Tensor({1, 2}, {2, 1}));
    CHECK(t.val(add_layer.forward(t, a, ab)).vec() == std::vector<double>{3, 0});

    PointDenseConfig ccfg;
    ccfg.in_dim = 3;
    ccfg.cross_dim = 2;
    ccfg.units = 4;
    ccfg.fuse = FuseMode::Concat;
    PointDenseLayer cat_layer(store, "C", ccfg, rng);
    CHECK(store.get("C/w").value.dims() == std::vector<std::size_t>{5, 4});
    Var a3 = t.leaf(Tensor({2, 3}));
    Var ab2 = t.leaf(Tensor({2, 2}));
    CHECK(t.val(cat_layer.forward(t, a3, ab2)).dims() == std::vector<std::size_t>{2, 4});

    PointDenseConfig mcfg = cfg;
    mcfg.fuse = FuseMode::Mul;
    PointDenseLayer mul_layer(store, "M", mcfg, rng);
    set_identity(store, "M/w_self");
    set_identity(store, "M/w_cross");
    set_fill(store, "M/b", 0.0);
    CHECK(t.val(mul_layer.forward(t, a, ab)).vec() == std::vector<double>{2, 0});
}

TEST_CASE("point baseline gradient check") {
    ParameterStore store;
    Rng rng(16);
    PointDenseConfig cfg;
    cfg.in_dim = 3;
    cfg.cross_dim = 2;
    cfg.units = 4;
    cfg.fuse = FuseMode::Concat;
    cfg.act = Activation::Sigmoid;
    PointDenseLayer layer(store, "P", cfg, rng);
    Rng dr(161);
    Tensor a({2, 3}), ab({2, 2});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = dr.normal();
    auto build = [&](Tape& t) { return mean(layer.forward(t, t.leaf(a), t.leaf(ab))); };
    {
        Tape t;
        t.backward(build(t), store);
    }
    auto eval = [&]() {
        Tape t;
        return build(t).val().scalar_value();
    };
    CHECK(oracles::max_fd_rel_err(store, eval) < 1e-4);
}

TEST_CASE("dense pair: shared memory hands one reservoir to both streams") {
    ParameterStore store;
    Rng rng(17);
    TwoPointDenseConfig c0;
    c0.in_dim = 3;
    c0.cross_dim = 2;
    c0.units = 4;
    TwoPointDenseConfig c1 = c0;
    c1.in_dim = 2;
    c1.cross_dim = 3;
    TwoPointDensePair pair(store, "pair", c0, c1, true, rng);
    Tape t;
    Rng dr(171);
    Tensor a0({2, 3}), a1({2, 2}), m({2, 4});
    for (std::size_t i = 0; i < a0.size(); ++i) a0[i] = dr.normal();
    for (std::size_t i = 0; i < a1.size(); ++i) a1[i] = dr.normal();
    auto out = pair.forward(t, t.leaf(a0), t.leaf(a1), t.leaf(a0), t.leaf(a1), t.leaf(m),
                            t.leaf(m));
    CHECK(out.m0.id == out.m1.id);
    CHECK(!store.contains("pair/s1/m_rec"));
    CHECK(store.contains("pair/s0/m_rec"));
    CHECK(t.val(out.a0).dims() == std::vector<std::size_t>{2, 4});
    CHECK(t.val(out.a1).dims() == std::vector<std::size_t>{2, 4});
}

TEST_CASE("conv layer forward geometry and gradient") {
    ParameterStore store;
    Rng rng(18);
    TwoPointConvConfig cfg;
    cfg.in_channels = 1;
    cfg.cross_channels = 1;
    cfg.filters = 2;
    cfg.kernel = 3;
    cfg.stride = 2;
    cfg.cross_kernel = 2;
    cfg.cross_stride = 1;
    cfg.mem_rec_kernel = 1;
    cfg.mem_rec_stride = 1;
    cfg.act = Activation::Tanh;
    TwoPointConvLayer layer(store, "C", cfg, rng);
    Rng dr(181);
    // own stream 8x8 -> 3x3; cross stream 4x4 -> 3x3 via k2 s1
    Tensor a({1, 1, 8, 8}), ab({1, 1, 4, 4}), rb({1, 1, 4, 4}), m({1, 2, 3, 3});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = dr.normal();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = dr.normal();
    for (std::size_t i = 0; i < rb.size(); ++i) rb[i] = dr.normal();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = dr.normal();
    auto build = [&](Tape& t) {
        auto out = layer.forward(t, t.leaf(a), t.leaf(ab), t.leaf(rb), t.leaf(m));
        return std::make_pair(out, mean(out.activation));
    };
    Tape t0;
    auto built = build(t0);
    CHECK(t0.val(built.first.activation).dims() == std::vector<std::size_t>{1, 2, 3, 3});
    CHECK(t0.val(built.first.rf).dims() == std::vector<std::size_t>{1, 2, 3, 3});
    CHECK(t0.val(built.first.memory).dims() == std::vector<std::size_t>{1, 2, 3, 3});
    t0.backward(built.second, store);
    auto eval = [&]() {
        Tape t;
        return build(t).second.val().scalar_value();
    };
    CHECK(oracles::max_fd_rel_err(store, eval) < 1e-4);
}

TEST_CASE("fit_conv_geometry produces exact valid geometries") {
    for (std::size_t in : {8u, 9u, 16u, 17u}) {
        for (std::size_t out = 1; out <= in; ++out) {
            const auto [k, s] = fit_conv_geometry(in, out);
            CHECK(k >= 1);
            CHECK(k <= in);
            CHECK(conv_out_extent(in, k, s) == out);
        }
    }
    CHECK_THROWS_AS(fit_conv_geometry(4, 5), ShapeError);
}

}  // TEST_SUITE
