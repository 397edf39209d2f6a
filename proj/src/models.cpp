#include "mcc/models.hpp"

#include <cmath>

namespace mcc {

namespace {

Parameter* mk_dense(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in,
                    std::size_t out) {
    return &store.create(name, glorot_uniform(rng, in, out, {in, out}));
}

Parameter* mk_bias(ParameterStore& store, const std::string& name, std::size_t n) {
    return &store.create(name, Tensor({n}));
}

}  // namespace

Tensor expand_mask(const Tensor& mask, std::size_t batch) {
    if (mask.rank() != 3) throw ShapeError("expand_mask expects [F,h,w]");
    std::vector<std::size_t> dims = {batch, mask.extent(0), mask.extent(1), mask.extent(2)};
    Tensor out(dims);
    const std::size_t per = mask.size();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] = mask[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// TwoStreamConvEncoder
// ---------------------------------------------------------------------------

TwoStreamConvEncoder::TwoStreamConvEncoder(ParameterStore& store, const std::string& name,
                                           ConvEncoderConfig cfg, Rng& rng)
    : store_(&store), name_(name), cfg_(std::move(cfg)) {
    if (cfg_.h0 != cfg_.w0 || cfg_.h1 != cfg_.w1) {
        throw ConfigError("encoder expects square patches per stream");
    }
    if (cfg_.filters.empty()) throw ConfigError("encoder needs at least one conv layer");

    std::size_t c0 = 1, c1 = 1;
    std::size_t e0 = cfg_.h0, e1 = cfg_.h1;  // current spatial extents per stream
    for (std::size_t l = 0; l < cfg_.filters.size(); ++l) {
        const std::size_t f = cfg_.filters[l];
        const std::string lname = name + "/conv" + std::to_string(l);
        std::size_t k0 = cfg_.kernel, s0 = cfg_.stride;
        const std::size_t oh = conv_out_extent(e0, k0, s0);
        // Bridge stream 1 (and the cross maps) onto the same output extent.
        const auto [k1, s1] = fit_conv_geometry(e1, oh);
        if (cfg_.kind == ModelKind::Mcc) {
            TwoPointConvConfig tc0;
            tc0.in_channels = c0;
            tc0.cross_channels = c1;
            tc0.filters = f;
            tc0.kernel = k0;
            tc0.stride = s0;
            tc0.cross_kernel = k1;
            tc0.cross_stride = s1;
            tc0.mem_prev_channels = l == 0 ? f : cfg_.filters[l - 1];
            if (l == 0) {
                tc0.mem_rec_kernel = 1;
                tc0.mem_rec_stride = 1;
            } else {
                tc0.mem_rec_kernel = k0;
                tc0.mem_rec_stride = s0;
            }
            tc0.neighborhood = cfg_.neighborhood;
            tc0.ctx_act = cfg_.ctx_act;
            TwoPointConvConfig tc1 = tc0;
            tc1.in_channels = c1;
            tc1.cross_channels = c0;
            tc1.kernel = k1;
            tc1.stride = s1;
            tc1.cross_kernel = k0;
            tc1.cross_stride = s0;
            pairs_.emplace_back(store, lname, tc0, tc1, cfg_.shared_memory, rng);
        } else {
            PointConvConfig pc0;
            pc0.in_channels = c0;
            pc0.cross_channels = c1;
            pc0.filters = f;
            pc0.kernel = k0;
            pc0.stride = s0;
            pc0.cross_kernel = k1;
            pc0.cross_stride = s1;
            PointConvConfig pc1 = pc0;
            pc1.in_channels = c1;
            pc1.cross_channels = c0;
            pc1.kernel = k1;
            pc1.stride = s1;
            pc1.cross_kernel = k0;
            pc1.cross_stride = s0;
            point_layers_.emplace_back(store, lname + "/s0", pc0, rng);
            point_layers_.emplace_back(store, lname + "/s1", pc1, rng);
        }
        act_geoms_.push_back({f, oh, oh});
        act_geoms_.push_back({f, oh, oh});
        c0 = f;
        c1 = f;
        e0 = oh;
        e1 = oh;
    }
    out_h_ = e0;
    out_w_ = e0;
    const std::size_t flat = cfg_.filters.back() * e0 * e0;
    ce0_w_ = mk_dense(store, rng, name + "/ce0_w", flat, cfg_.channel_embed);
    ce0_b_ = mk_bias(store, name + "/ce0_b", cfg_.channel_embed);
    ce1_w_ = mk_dense(store, rng, name + "/ce1_w", flat, cfg_.channel_embed);
    ce1_b_ = mk_bias(store, name + "/ce1_b", cfg_.channel_embed);
    g_w_ = mk_dense(store, rng, name + "/g_w", 2 * cfg_.channel_embed, cfg_.global_embed);
    g_b_ = mk_bias(store, name + "/g_b", cfg_.global_embed);
}

TwoStreamConvEncoder::Out TwoStreamConvEncoder::forward(
    Tape& t, Var x, Var v, const std::vector<Tensor>* kill_masks) const {
    const std::size_t batch = x.val().extent(0);
    if (kill_masks && kill_masks->size() != act_geoms_.size()) {
        throw ContractError("kill mask count does not match conv activation count");
    }
    Out out;
    Var a0 = x, a1 = v;
    auto maybe_kill = [&](Var a, std::size_t act_index) {
        if (!kill_masks) return a;
        return mul(a, t.leaf(expand_mask((*kill_masks)[act_index], batch)));
    };
    if (cfg_.kind == ModelKind::Mcc) {
        Var r0 = x, r1 = v;
        const std::size_t f1 = cfg_.filters[0];
        const auto& g0 = act_geoms_[0];
        Var m0 = t.leaf(Tensor({batch, f1, g0.h, g0.w}));
        Var m1 = m0;
        for (std::size_t l = 0; l < pairs_.size(); ++l) {
            auto po = pairs_[l].forward(t, a0, a1, r0, r1, m0, m1);
            a0 = maybe_kill(po.a0, 2 * l);
            a1 = maybe_kill(po.a1, 2 * l + 1);
            r0 = po.r0;
            r1 = po.r1;
            m0 = po.m0;
            m1 = po.m1;
            out.conv_acts.push_back(a0);
            out.conv_acts.push_back(a1);
        }
    } else {
        for (std::size_t l = 0; l < point_layers_.size(); l += 2) {
            Var n0 = point_layers_[l].forward(t, a0, a1);
            Var n1 = point_layers_[l + 1].forward(t, a1, a0);
            a0 = maybe_kill(n0, l);
            a1 = maybe_kill(n1, l + 1);
            out.conv_acts.push_back(a0);
            out.conv_acts.push_back(a1);
        }
    }
    const std::size_t flat = cfg_.filters.back() * out_h_ * out_w_;
    Var f0 = reshape(a0, {batch, flat});
    Var f1 = reshape(a1, {batch, flat});
    Var ce0 = relu(affine(f0, t.param(*ce0_w_), t.param(*ce0_b_)));
    Var ce1 = relu(affine(f1, t.param(*ce1_w_), t.param(*ce1_b_)));
    Var g = relu(affine(concat_cols(ce0, ce1), t.param(*g_w_), t.param(*g_b_)));
    out.dense_acts = {ce0, ce1, g};
    out.embed = g;
    return out;
}

// ---------------------------------------------------------------------------
// ConvDecoder
// ---------------------------------------------------------------------------

ConvDecoder::ConvDecoder(ParameterStore& store, const std::string& name, DecoderConfig cfg,
                         Rng& rng)
    : store_(&store), name_(name), cfg_(std::move(cfg)) {
    const std::size_t flat = cfg_.reshape_c * cfg_.reshape_h * cfg_.reshape_w;
    fc_w_ = mk_dense(store, rng, name + "/fc_w", cfg_.embed_dim, flat);
    fc_b_ = mk_bias(store, name + "/fc_b", flat);
    std::size_t c = cfg_.reshape_c;
    std::size_t e = cfg_.reshape_h;
    for (std::size_t i = 0; i < cfg_.tconvs.size(); ++i) {
        const auto& spec = cfg_.tconvs[i];
        const std::string base = name + "/t" + std::to_string(i);
        // Transpose kernels are stored conv-style [c_in, c_out, k, k].
        t_k_.push_back(&store.create(
            base + "_k", glorot_uniform(rng, c * spec.kernel * spec.kernel,
                                        spec.filters * spec.kernel * spec.kernel,
                                        {c, spec.filters, spec.kernel, spec.kernel})));
        t_b_.push_back(mk_bias(store, base + "_b", spec.filters));
        e = tconv_out_extent(e, spec.kernel, spec.stride);
        c = spec.filters;
    }
    out_h_ = e;
    out_w_ = e;
}

ConvDecoder::Out ConvDecoder::forward(Tape& t, Var embed) const {
    const std::size_t batch = embed.val().extent(0);
    Out out;
    Var h = relu(affine(embed, t.param(*fc_w_), t.param(*fc_b_)));
    out.hidden_acts.push_back(h);
    Var cur = reshape(h, {batch, cfg_.reshape_c, cfg_.reshape_h, cfg_.reshape_w});
    for (std::size_t i = 0; i < cfg_.tconvs.size(); ++i) {
        const auto& spec = cfg_.tconvs[i];
        Var z = add_bias(conv2d_transpose(cur, t.param(*t_k_[i]), spec.stride),
                         t.param(*t_b_[i]));
        const bool last = i + 1 == cfg_.tconvs.size();
        cur = apply_activation(z, last ? cfg_.final_act : cfg_.hidden_act);
        if (!last) out.hidden_acts.push_back(cur);
    }
    out.output = cur;
    return out;
}

// ---------------------------------------------------------------------------
// ReconModel
// ---------------------------------------------------------------------------

ReconModel::ReconModel(ParameterStore& store, const std::string& name, ReconModelConfig cfg,
                       Rng& rng)
    : cfg_(cfg),
      encoder_(store, name + "/enc", cfg.encoder, rng),
      decoder_(store, name + "/dec", cfg.decoder, rng) {
    if (cfg_.variational) {
        const std::size_t g = cfg_.encoder.global_embed;
        mu_w_ = mk_dense(store, rng, name + "/mu_w", g, g);
        mu_b_ = mk_bias(store, name + "/mu_b", g);
        lv_w_ = mk_dense(store, rng, name + "/lv_w", g, g);
        lv_b_ = mk_bias(store, name + "/lv_b", g);
    }
}

ReconModel::Out ReconModel::forward(Tape& t, Var x, Var v,
                                    const std::vector<Tensor>* kill_masks,
                                    Rng* noise_rng) const {
    auto enc = encoder_.forward(t, x, v, kill_masks);
    Out out;
    out.conv_acts = enc.conv_acts;
    out.hidden_acts = enc.dense_acts;
    Var embed = enc.embed;
    if (cfg_.variational) {
        if (!noise_rng) throw ContractError("variational forward needs a noise rng");
        Var mu = affine(embed, t.param(*mu_w_), t.param(*mu_b_));
        Var logvar = affine(embed, t.param(*lv_w_), t.param(*lv_b_));
        Tensor eps(mu.val().dims());
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise_rng->normal();
        Var z = add(mu, mul(exp(scale(logvar, 0.5)), t.leaf(std::move(eps))));
        // KL(q || N(0,1)) = -1/2 mean(1 + logvar - mu^2 - exp(logvar))
        Var one = t.leaf(1.0);
        Var kl = scale(mean(sub(sub(add(one, logvar), mul(mu, mu)), exp(logvar))), -0.5);
        out.kl = kl;
        embed = z;
    }
    auto dec = decoder_.forward(t, embed);
    for (const Var& a : dec.hidden_acts) out.hidden_acts.push_back(a);
    out.output = dec.output;
    return out;
}

// ---------------------------------------------------------------------------
// ConvScoreModel
// ---------------------------------------------------------------------------

ConvScoreModel::ConvScoreModel(ParameterStore& store, const std::string& name,
                               ConvEncoderConfig cfg, Rng& rng)
    : encoder_(store, name + "/enc", std::move(cfg), rng) {
    const std::size_t g = encoder_.config().global_embed;
    out_w_ = mk_dense(store, rng, name + "/out_w", g, 1);
    out_b_ = mk_bias(store, name + "/out_b", 1);
}

ConvScoreModel::Out ConvScoreModel::score(Tape& t, Var x, Var v) const {
    auto enc = encoder_.forward(t, x, v);
    const std::size_t batch = x.val().extent(0);
    Var s = affine(enc.embed, t.param(*out_w_), t.param(*out_b_));
    return Out{reshape(s, {batch}), std::move(enc.conv_acts), std::move(enc.dense_acts)};
}

}  // namespace mcc
