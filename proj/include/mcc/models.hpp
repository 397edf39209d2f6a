#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcc/objectives.hpp"
#include "mcc/two_point.hpp"

namespace mcc {

enum class ModelKind { Mcc, Baseline };

// Two-stream convolutional encoder. Stream 0 carries the corrupted target
// patches, stream 1 the clean side stream; the streams land on a common
// spatial geometry after layer 1 (cross-map kernels are fitted to bridge the
// differing input extents).
struct ConvEncoderConfig {
    std::size_t h0 = 16, w0 = 16;
    std::size_t h1 = 8, w1 = 8;
    std::vector<std::size_t> filters = {16, 16};
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t channel_embed = 32;
    std::size_t global_embed = 64;
    ModelKind kind = ModelKind::Mcc;
    bool neighborhood = false;
    bool shared_memory = true;
    Activation ctx_act = Activation::Sigmoid;
};

class TwoStreamConvEncoder {
public:
    TwoStreamConvEncoder(ParameterStore& store, const std::string& name,
                         ConvEncoderConfig cfg, Rng& rng);

    struct ActGeom {
        std::size_t channels, h, w;
    };

    struct Out {
        Var embed;                     // [B, global_embed]
        std::vector<Var> conv_acts;    // layer-major: l0s0, l0s1, l1s0, l1s1, ...
        std::vector<Var> dense_acts;   // channel embeds + global embed
    };
    // kill_masks: one [F,h,w] mask per conv activation (conv_acts order),
    // multiplied into the post-activation maps; pass nullptr for none.
    Out forward(Tape& t, Var x, Var v, const std::vector<Tensor>* kill_masks = nullptr) const;

    const std::vector<ActGeom>& conv_act_geoms() const { return act_geoms_; }
    const ConvEncoderConfig& config() const { return cfg_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    ConvEncoderConfig cfg_;
    std::vector<TwoPointConvPair> pairs_;       // mcc
    std::vector<PointConvLayer> point_layers_;  // baseline (two per layer)
    std::vector<ActGeom> act_geoms_;
    std::size_t out_h_ = 0, out_w_ = 0;
    Parameter* ce0_w_ = nullptr;
    Parameter* ce0_b_ = nullptr;
    Parameter* ce1_w_ = nullptr;
    Parameter* ce1_b_ = nullptr;
    Parameter* g_w_ = nullptr;
    Parameter* g_b_ = nullptr;
};

// Dense layer + reshape + transpose-conv stack. The default geometry walks
// 2 -> 5 -> 11 -> 13 -> 16 so the output matches the 16x16 patches.
struct DecoderConfig {
    std::size_t embed_dim = 64;
    std::size_t reshape_c = 64, reshape_h = 2, reshape_w = 2;
    struct Tconv {
        std::size_t filters, kernel, stride;
    };
    std::vector<Tconv> tconvs = {{16, 3, 2}, {8, 3, 2}, {4, 3, 1}, {1, 4, 1}};
    Activation hidden_act = Activation::Relu;
    Activation final_act = Activation::Relu;  // Identity for mask logits
};

class ConvDecoder {
public:
    ConvDecoder(ParameterStore& store, const std::string& name, DecoderConfig cfg, Rng& rng);

    struct Out {
        Var output;                   // [B, C, H, W]
        std::vector<Var> hidden_acts; // post-ReLU stages (dense + hidden tconvs)
    };
    Out forward(Tape& t, Var embed) const;

    std::size_t out_h() const { return out_h_; }
    std::size_t out_w() const { return out_w_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    DecoderConfig cfg_;
    Parameter* fc_w_ = nullptr;
    Parameter* fc_b_ = nullptr;
    std::vector<Parameter*> t_k_;
    std::vector<Parameter*> t_b_;
    std::size_t out_h_ = 0, out_w_ = 0;
};

// Encoder + decoder for the reconstruction and mask tasks, with an optional
// variational embedding (mu/logvar heads, reparameterized sample, KL term).
struct ReconModelConfig {
    ConvEncoderConfig encoder;
    DecoderConfig decoder;
    bool variational = false;
    double vae_beta = 4.0;
};

class ReconModel {
public:
    ReconModel(ParameterStore& store, const std::string& name, ReconModelConfig cfg, Rng& rng);

    struct Out {
        Var output;
        std::vector<Var> conv_acts;
        std::vector<Var> hidden_acts;  // encoder dense + decoder hidden
        std::optional<Var> kl;
    };
    // noise_rng drives the variational sample; required when variational.
    Out forward(Tape& t, Var x, Var v, const std::vector<Tensor>* kill_masks = nullptr,
                Rng* noise_rng = nullptr) const;

    const TwoStreamConvEncoder& encoder() const { return encoder_; }
    const ConvDecoder& decoder() const { return decoder_; }
    const ReconModelConfig& config() const { return cfg_; }

private:
    ReconModelConfig cfg_;
    TwoStreamConvEncoder encoder_;
    ConvDecoder decoder_;
    Parameter* mu_w_ = nullptr;
    Parameter* mu_b_ = nullptr;
    Parameter* lv_w_ = nullptr;
    Parameter* lv_b_ = nullptr;
};

// Encoder + scalar head: the statistics function for corpus-level MI.
class ConvScoreModel {
public:
    ConvScoreModel(ParameterStore& store, const std::string& name, ConvEncoderConfig cfg,
                   Rng& rng);
    struct Out {
        Var scores;  // [B]
        std::vector<Var> conv_acts;
        std::vector<Var> hidden_acts;
    };
    Out score(Tape& t, Var x, Var v) const;

private:
    TwoStreamConvEncoder encoder_;
    Parameter* out_w_ = nullptr;
    Parameter* out_b_ = nullptr;
};

// Repeats a [F,h,w] unit mask across a batch: [B,F,h,w].
Tensor expand_mask(const Tensor& mask, std::size_t batch);

}  // namespace mcc
