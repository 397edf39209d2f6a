#include "mcc/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mcc/csv.hpp"
#include "mcc/errors.hpp"

namespace mcc {

GaussianPairs sample_correlated_gaussians(const GaussianPairSpec& spec, Rng& rng) {
    if (spec.dim < 1 || spec.count < 1) {
        throw DomainError("gaussian pairs: dim and count must be >= 1");
    }
    std::vector<double> rhos = spec.rhos;
    if (rhos.size() == 1) rhos.assign(spec.dim, rhos[0]);
    if (rhos.size() != spec.dim) {
        throw DomainError("gaussian pairs: need one rho per component");
    }
    for (double r : rhos) {
        if (std::fabs(r) >= 1.0) throw DomainError("gaussian pairs: |rho| must be < 1");
    }
    GaussianPairs out;
    out.x = Tensor({spec.count, spec.dim});
    out.y = Tensor({spec.count, spec.dim});
    for (std::size_t i = 0; i < spec.count; ++i) {
        for (std::size_t k = 0; k < spec.dim; ++k) {
            const double xv = rng.normal();
            const double xi = rng.normal();
            out.x[i * spec.dim + k] = xv;
            out.y[i * spec.dim + k] = rhos[k] * xv + std::sqrt(1.0 - rhos[k] * rhos[k]) * xi;
        }
    }
    return out;
}

Tensor synth_clean_signal(Rng& rng, std::size_t h, std::size_t w) {
    if (h < 8 || w < 8) throw DomainError("synth_clean_signal: h and w must be >= 8");
    const std::size_t ridges = 3 + static_cast<std::size_t>(rng.below(3));
    Tensor patch({h, w});
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < ridges; ++k) {
        const double f0 = rng.uniform(1.0, static_cast<double>(h) - 2.0);
        const double width = rng.uniform(0.6, 1.8);
        const double drift_amp = rng.uniform(0.0, 2.0);
        const double drift_freq = rng.uniform(0.5, 2.0);
        const double drift_phase = rng.uniform(0.0, two_pi);
        const double amp_freq = rng.uniform(0.5, 3.0);
        const double amp_phase = rng.uniform(0.0, two_pi);
        const double base_amp = rng.uniform(0.4, 1.0);
        for (std::size_t x = 0; x < w; ++x) {
            const double ph = static_cast<double>(x) / static_cast<double>(w);
            const double cy = f0 + drift_amp * std::sin(two_pi * drift_freq * ph + drift_phase);
            const double amp =
                base_amp * (0.55 + 0.45 * std::sin(two_pi * amp_freq * ph + amp_phase));
            for (std::size_t y = 0; y < h; ++y) {
                const double dy = static_cast<double>(y) - cy;
                patch[y * w + x] += amp * std::exp(-(dy * dy) / (2.0 * width * width));
            }
        }
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < patch.size(); ++i) mx = std::max(mx, patch[i]);
    for (std::size_t i = 0; i < patch.size(); ++i) patch[i] /= mx;
    return patch;
}

namespace {

double power_of(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s / static_cast<double>(t.size());
}

}  // namespace

Tensor mix_at_snr(const Tensor& clean, const Tensor& noise, double snr_db) {
    if (!clean.same_dims(noise)) throw ShapeError("mix_at_snr: dims mismatch");
    const double p_clean = power_of(clean);
    const double p_noise = power_of(noise);
    if (p_noise <= 0.0) throw DomainError("mix_at_snr: noise power must be positive");
    if (p_clean <= 0.0) throw DomainError("mix_at_snr: clean power must be positive");
    const double s = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    Tensor out(clean.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean[i] + s * noise[i];
    return out;
}

Tensor visual_stream_transform(const Tensor& clean) {
    if (clean.rank() != 2) throw ShapeError("visual_stream_transform expects [h x w]");
    const std::size_t h = clean.extent(0), w = clean.extent(1);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("visual_stream_transform: extents must be even");
    }
    const std::size_t h2 = h / 2, w2 = w / 2;
    Tensor pooled({h2, w2});
    for (std::size_t y = 0; y < h2; ++y) {
        for (std::size_t x = 0; x < w2; ++x) {
            pooled[y * w2 + x] = 0.25 * (clean[(2 * y) * w + 2 * x] +
                                         clean[(2 * y) * w + 2 * x + 1] +
                                         clean[(2 * y + 1) * w + 2 * x] +
                                         clean[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    Tensor out({h2, w2});
    for (std::size_t y = 0; y < h2; ++y) {
        for (std::size_t x = 0; x < w2; ++x) {
            const std::size_t y0 = y == 0 ? 0 : y - 1, y1 = std::min(h2 - 1, y + 1);
            const std::size_t x0 = x == 0 ? 0 : x - 1, x1 = std::min(w2 - 1, x + 1);
            double s = 0.0;
            std::size_t cnt = 0;
            for (std::size_t a = y0; a <= y1; ++a) {
                for (std::size_t b = x0; b <= x1; ++b) {
                    s += pooled[a * w2 + b];
                    ++cnt;
                }
            }
            out[y * w2 + x] = std::sqrt(s / static_cast<double>(cnt));
        }
    }
    return out;
}

std::vector<int> default_snr_grid() { return {12, 9, 6, 3, 0, -3, -6, -9, -12}; }

namespace {

Tensor noise_patch(Rng& rng, std::size_t kind, std::size_t h, std::size_t w) {
    if (kind == 0) {  // white
        Tensor t({h, w});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
        return t;
    }
    if (kind == 1) {  // low-passed white, a pink-ish spatial spectrum
        Tensor t({h, w});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            Tensor s({h, w});
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t y0 = y == 0 ? 0 : y - 1, y1 = std::min(h - 1, y + 1);
                    const std::size_t x0 = x == 0 ? 0 : x - 1, x1 = std::min(w - 1, x + 1);
                    double acc = 0.0;
                    std::size_t cnt = 0;
                    for (std::size_t a = y0; a <= y1; ++a) {
                        for (std::size_t b = x0; b <= x1; ++b) {
                            acc += t[a * w + b];
                            ++cnt;
                        }
                    }
                    s[y * w + x] = acc / static_cast<double>(cnt);
                }
            }
            t = s;
        }
        return t;
    }
    // patterned interference: a competing structured signal
    return synth_clean_signal(rng, h, w);
}

}  // namespace

TwoStreamCorpus make_corpus(std::size_t n, const std::vector<int>& snr_grid, Rng& rng,
                            std::size_t h, std::size_t w) {
    if (n < 10) throw ContractError("make_corpus: n must be >= 10");
    if (snr_grid.empty()) throw ContractError("make_corpus: empty snr grid");
    TwoStreamCorpus c;
    c.clean = Tensor({n, 1, h, w});
    c.noisy = Tensor({n, 1, h, w});
    c.visual = Tensor({n, 1, h / 2, w / 2});
    c.snr_db.resize(n);

    std::vector<Tensor> cleans(n), noisies(n), visuals(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng ri = rng.split(i);
        Tensor clean = synth_clean_signal(ri, h, w);
        Tensor noise = noise_patch(ri, i % 3, h, w);
        const int snr = snr_grid[i % snr_grid.size()];
        cleans[i] = clean;
        noisies[i] = mix_at_snr(clean, noise, static_cast<double>(snr));
        visuals[i] = visual_stream_transform(clean);
        c.snr_db[i] = snr;
    }

    // Presort-breaking shuffle: one seeded permutation applied to all streams.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng shuffle_rng = rng.split(0x5u + n);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i + 1));
        std::swap(perm[i], perm[j]);
    }

    std::vector<int> snr_shuffled(n);
    const std::size_t hw = h * w, vhw = (h / 2) * (w / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = perm[i];
        for (std::size_t k = 0; k < hw; ++k) {
            c.clean[i * hw + k] = cleans[s][k];
            c.noisy[i * hw + k] = noisies[s][k];
        }
        for (std::size_t k = 0; k < vhw; ++k) c.visual[i * vhw + k] = visuals[s][k];
        snr_shuffled[i] = c.snr_db[s];
    }
    c.snr_db = snr_shuffled;

    // Global normalization of the corrupted stream, stats kept for inversion.
    double mu = 0.0;
    for (std::size_t i = 0; i < c.noisy.size(); ++i) mu += c.noisy[i];
    mu /= static_cast<double>(c.noisy.size());
    double var = 0.0;
    for (std::size_t i = 0; i < c.noisy.size(); ++i) {
        const double d = c.noisy[i] - mu;
        var += d * d;
    }
    var /= static_cast<double>(c.noisy.size());
    c.norm_mu = mu;
    c.norm_sigma = std::sqrt(var);
    if (c.norm_sigma <= 0.0) throw DomainError("make_corpus: degenerate corpus variance");
    for (std::size_t i = 0; i < c.noisy.size(); ++i) {
        c.noisy[i] = (c.noisy[i] - mu) / c.norm_sigma;
    }

    const std::size_t train_n = (n * 8) / 10;
    c.train_idx.resize(train_n);
    c.test_idx.resize(n - train_n);
    c.split_tag.assign(n, 0);
    for (std::size_t i = 0; i < train_n; ++i) c.train_idx[i] = i;
    for (std::size_t i = train_n; i < n; ++i) {
        c.test_idx[i - train_n] = i;
        c.split_tag[i] = 1;
    }
    return c;
}

TwoStreamCorpus::Batch TwoStreamCorpus::gather(const std::vector<std::size_t>& indices) const {
    const std::size_t b = indices.size();
    const std::size_t h = patch_h(), w = patch_w();
    const std::size_t hw = h * w, vhw = (h / 2) * (w / 2);
    Batch out;
    out.clean = Tensor({b, 1, h, w});
    out.noisy = Tensor({b, 1, h, w});
    out.visual = Tensor({b, 1, h / 2, w / 2});
    out.snr.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t s = indices[i];
        if (s >= count()) throw ContractError("gather: index out of range");
        if (!split_tag.empty()) {
            if (split_tag[s]) {
                ++test_reads;
            } else {
                ++train_reads;
            }
        }
        for (std::size_t k = 0; k < hw; ++k) {
            out.clean[i * hw + k] = clean[s * hw + k];
            out.noisy[i * hw + k] = noisy[s * hw + k];
        }
        for (std::size_t k = 0; k < vhw; ++k) out.visual[i * vhw + k] = visual[s * vhw + k];
        out.snr[i] = snr_db[s];
    }
    return out;
}

Tensor TwoStreamCorpus::denormalize(const Tensor& x) const {
    Tensor out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * norm_sigma + norm_mu;
    return out;
}

void save_corpus(const TwoStreamCorpus& corpus, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_mcct(dir + "/clean.mcct", corpus.clean);
    save_mcct(dir + "/noisy.mcct", corpus.noisy);
    save_mcct(dir + "/visual.mcct", corpus.visual);
    {
        std::ofstream f(dir + "/snr.csv");
        if (!f) throw IoError("cannot write " + dir + "/snr.csv");
        f << "index,snr_db\n";
        for (std::size_t i = 0; i < corpus.snr_db.size(); ++i) {
            f << i << "," << corpus.snr_db[i] << "\n";
        }
    }
    {
        std::ofstream f(dir + "/norm.csv");
        if (!f) throw IoError("cannot write " + dir + "/norm.csv");
        f << "mu,sigma\n";
        f << fmt_exact(corpus.norm_mu) << "," << fmt_exact(corpus.norm_sigma) << "\n";
    }
    {
        std::ofstream f(dir + "/split.csv");
        if (!f) throw IoError("cannot write " + dir + "/split.csv");
        f << "index,split\n";
        for (std::size_t i = 0; i < corpus.split_tag.size(); ++i) {
            f << i << "," << (corpus.split_tag[i] ? "test" : "train") << "\n";
        }
    }
}

TwoStreamCorpus load_corpus(const std::string& dir) {
    TwoStreamCorpus c;
    c.clean = load_mcct(dir + "/clean.mcct");
    c.noisy = load_mcct(dir + "/noisy.mcct");
    c.visual = load_mcct(dir + "/visual.mcct");
    const auto snr_rows = read_csv(dir + "/snr.csv", true);
    c.snr_db.resize(snr_rows.size());
    for (const auto& row : snr_rows) {
        if (row.size() != 2) throw IoError("malformed snr.csv in " + dir);
        c.snr_db[std::stoul(row[0])] = std::stoi(row[1]);
    }
    const auto norm_rows = read_csv(dir + "/norm.csv", true);
    if (norm_rows.size() != 1 || norm_rows[0].size() != 2) {
        throw IoError("malformed norm.csv in " + dir);
    }
    c.norm_mu = std::stod(norm_rows[0][0]);
    c.norm_sigma = std::stod(norm_rows[0][1]);
    const auto split_rows = read_csv(dir + "/split.csv", true);
    c.split_tag.assign(split_rows.size(), 0);
    for (const auto& row : split_rows) {
        if (row.size() != 2) throw IoError("malformed split.csv in " + dir);
        const std::size_t idx = std::stoul(row[0]);
        const bool test = row[1] == "test";
        c.split_tag[idx] = test ? 1 : 0;
        if (test) {
            c.test_idx.push_back(idx);
        } else {
            c.train_idx.push_back(idx);
        }
    }
    if (c.snr_db.size() != c.clean.extent(0) || c.split_tag.size() != c.snr_db.size()) {
        throw IoError("inconsistent corpus files in " + dir);
    }
    return c;
}

}  // namespace mcc
