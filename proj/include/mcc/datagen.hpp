#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcc/rng.hpp"
#include "mcc/tensor.hpp"

namespace mcc {

// Component-wise correlated standard-normal pairs: Y_k = rho_k X_k +
// sqrt(1-rho_k^2) xi, components independent across k.
struct GaussianPairSpec {
    std::size_t dim = 20;
    std::vector<double> rhos;  // per component; a single entry applies to all
    std::size_t count = 0;
};

struct GaussianPairs {
    Tensor x;  // [n x d]
    Tensor y;  // [n x d]
};

GaussianPairs sample_correlated_gaussians(const GaussianPairSpec& spec, Rng& rng);

// Non-negative patch built from a few smooth harmonic ridges (band-limited
// structure standing in for formants), normalized to unit max.
Tensor synth_clean_signal(Rng& rng, std::size_t h, std::size_t w);

// noisy = clean + s * noise with s chosen so the measured power ratio equals
// snr_db exactly. Throws DomainError when either power is zero.
Tensor mix_at_snr(const Tensor& clean, const Tensor& noise, double snr_db);

// Deterministic side stream: 2x downsample, box low-pass, sqrt compression.
// The cross-stream dependence is high by construction.
Tensor visual_stream_transform(const Tensor& clean);

// Two-stream synthetic corpus standing in for the AV data: a corrupted
// target stream plus a clean, statistically coherent side stream.
struct TwoStreamCorpus {
    Tensor clean;   // [n,1,h,w] raw magnitudes
    Tensor noisy;   // [n,1,h,w] globally normalized mixtures
    Tensor visual;  // [n,1,h/2,w/2]
    std::vector<int> snr_db;
    double norm_mu = 0.0;
    double norm_sigma = 1.0;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;

    std::size_t count() const { return snr_db.size(); }
    std::size_t patch_h() const { return clean.extent(2); }
    std::size_t patch_w() const { return clean.extent(3); }

    struct Batch {
        Tensor clean;   // [B,1,h,w]
        Tensor noisy;   // [B,1,h,w] (normalized)
        Tensor visual;  // [B,1,h/2,w/2]
        std::vector<int> snr;
    };
    // Gathers rows and bumps the split access counters (train/test audit).
    Batch gather(const std::vector<std::size_t>& indices) const;

    Tensor denormalize(const Tensor& x) const;

    mutable std::size_t train_reads = 0;
    mutable std::size_t test_reads = 0;
    std::vector<std::uint8_t> split_tag;  // 0 = train, 1 = test
};

std::vector<int> default_snr_grid();  // +12 dB down to -12 dB in 3 dB steps

TwoStreamCorpus make_corpus(std::size_t n, const std::vector<int>& snr_grid, Rng& rng,
                            std::size_t h = 16, std::size_t w = 16);

// Directory layout: clean.mcct, noisy.mcct, visual.mcct, snr.csv, norm.csv,
// split.csv.
void save_corpus(const TwoStreamCorpus& corpus, const std::string& dir);
TwoStreamCorpus load_corpus(const std::string& dir);

}  // namespace mcc
