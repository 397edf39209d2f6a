#include "mcc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mcc/csv.hpp"

namespace mcc {

Task task_from_name(const std::string& s) {
    if (s == "reconstruction") return Task::Reconstruction;
    if (s == "mi") return Task::Mi;
    if (s == "mask") return Task::Mask;
    throw ConfigError("unknown task: " + s);
}

Model model_from_name(const std::string& s) {
    if (s == "mcc") return Model::Mcc;
    if (s == "mcc-sparse") return Model::MccSparse;
    if (s == "baseline") return Model::Baseline;
    if (s == "ae") return Model::Ae;
    if (s == "vae") return Model::Vae;
    throw ConfigError("unknown model: " + s);
}

std::string task_name(Task t) {
    switch (t) {
        case Task::Reconstruction: return "reconstruction";
        case Task::Mi: return "mi";
        case Task::Mask: return "mask";
    }
    return "?";
}

std::string model_name(Model m) {
    switch (m) {
        case Model::Mcc: return "mcc";
        case Model::MccSparse: return "mcc-sparse";
        case Model::Baseline: return "baseline";
        case Model::Ae: return "ae";
        case Model::Vae: return "vae";
    }
    return "?";
}

namespace {

bool is_mcc_model(Model m) { return m == Model::Mcc || m == Model::MccSparse; }

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i-- > 1;) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(v[i], v[j]);
    }
}

// [B, units] record matrix over a list of per-batch activation tensors.
Tensor unit_records(const std::vector<const Tensor*>& acts) {
    if (acts.empty()) throw ContractError("unit_records: no activations");
    const std::size_t batch = acts.front()->extent(0);
    std::size_t total = 0;
    for (const Tensor* a : acts) total += a->size() / batch;
    Tensor rec({batch, total});
    std::size_t off = 0;
    for (const Tensor* a : acts) {
        const std::size_t per = a->size() / batch;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t k = 0; k < per; ++k) {
                rec[b * total + off + k] = (*a)[b * per + k];
            }
        }
        off += per;
    }
    return rec;
}

std::vector<const Tensor*> act_values(Tape& t, const std::vector<Var>& vars) {
    std::vector<const Tensor*> out;
    out.reserve(vars.size());
    for (const Var& v : vars) out.push_back(&t.value_of(v.id));
    return out;
}

Tensor ibm_for(const TwoStreamCorpus& corpus, const TwoStreamCorpus::Batch& b) {
    Tensor raw = corpus.denormalize(b.noisy);
    Tensor noise_mag(raw.dims());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        noise_mag[i] = std::fabs(raw[i] - b.clean[i]);
    }
    return ideal_binary_mask(b.clean, noise_mag, 0.0);
}

struct StepOutcome {
    Var loss;       // task + gamma * energy (what training minimizes)
    Var task_loss;  // energy excluded
    Var energy;
    MetricsRow row;
};

}  // namespace

std::unique_ptr<Experiment> make_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.seeds.empty()) throw ConfigError("config needs at least one seed");
    if (cfg.task == Task::Mi && cfg.batch < 2) {
        throw ConfigError("mi task needs batch >= 2 (marginal shuffling)");
    }
    auto ex = std::make_unique<Experiment>();
    ex->cfg = cfg;
    ex->seed = seed;
    Rng init_rng = Rng(seed).split(1);
    if (cfg.task == Task::Mi && cfg.mi_source == MiSource::Gaussian) {
        StatisticsNetworkConfig sc;
        sc.x_dim = cfg.mi_dim;
        sc.y_dim = cfg.mi_dim;
        sc.widths = cfg.mi_widths;
        sc.global_dim = cfg.global_embed;
        sc.baseline = !is_mcc_model(cfg.model);
        ex->stats = std::make_unique<StatisticsNetwork>(ex->store, "stats", sc, init_rng);
        return ex;
    }
    ConvEncoderConfig ec;
    ec.h0 = cfg.patch_h;
    ec.w0 = cfg.patch_w;
    ec.h1 = cfg.patch_h / 2;
    ec.w1 = cfg.patch_w / 2;
    ec.filters = cfg.filters;
    ec.kernel = cfg.kernel;
    ec.stride = cfg.stride;
    ec.channel_embed = cfg.channel_embed;
    ec.global_embed = cfg.global_embed;
    ec.kind = is_mcc_model(cfg.model) ? ModelKind::Mcc : ModelKind::Baseline;
    ec.neighborhood = cfg.neighborhood;
    if (cfg.task == Task::Mi) {
        ex->score = std::make_unique<ConvScoreModel>(ex->store, "score", ec, init_rng);
        return ex;
    }
    ReconModelConfig rc;
    rc.encoder = ec;
    rc.decoder.embed_dim = cfg.global_embed;
    rc.decoder.final_act =
        cfg.task == Task::Mask ? Activation::Identity : Activation::Relu;
    rc.variational = cfg.model == Model::Vae;
    rc.vae_beta = cfg.vae_beta;
    ex->recon = std::make_unique<ReconModel>(ex->store, "model", rc, init_rng);
    if (ex->recon->decoder().out_h() != cfg.patch_h ||
        ex->recon->decoder().out_w() != cfg.patch_w) {
        throw ConfigError("decoder geometry lands on " +
                          std::to_string(ex->recon->decoder().out_h()) +
                          ", expected patch extent " + std::to_string(cfg.patch_h));
    }
    return ex;
}

namespace {

std::vector<Tensor> draw_kill_masks(const std::vector<TwoStreamConvEncoder::ActGeom>& geoms,
                                    double p, Rng& rng) {
    std::vector<Tensor> masks;
    masks.reserve(geoms.size());
    for (const auto& g : geoms) {
        Tensor m({g.channels, g.h, g.w});
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p) ? 0.0 : 1.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

// One optimization step's forward pass; fills the loss and the metric row.
StepOutcome forward_step(Experiment& ex, Tape& tape, const TwoStreamCorpus* corpus,
                         const std::vector<std::size_t>* batch_idx, Rng& batch_rng,
                         Rng& marg_rng, Rng& kill_rng, Rng& vae_rng, double gamma_eff) {
    const ExperimentConfig& cfg = ex.cfg;
    LossConfig lc = cfg.loss;
    lc.gamma = gamma_eff;
    StepOutcome so;
    if (cfg.task == Task::Mi && cfg.mi_source == MiSource::Gaussian) {
        GaussianPairSpec spec{cfg.mi_dim, {cfg.mi_rho}, cfg.batch};
        GaussianPairs pairs = sample_correlated_gaussians(spec, batch_rng);
        Tensor yshuf = shuffle_marginals(pairs.y, marg_rng);
        Var x = tape.leaf(std::move(pairs.x));
        Var y = tape.leaf(std::move(pairs.y));
        auto joint = ex.stats->score(tape, x, y);
        auto marg = ex.stats->score(tape, x, tape.leaf(std::move(yshuf)));
        Var mi = dv_bound(joint.scores, marg.scores);
        Var energy = energy_term(joint.activations, lc.tau_f);
        so.task_loss = scale(mi, -lc.alpha);
        so.energy = energy;
        so.loss = loss_mi(mi, energy, lc);
        so.row.mi_estimate = mi.val().scalar_value();
        so.row.energy = energy.val().scalar_value();
        so.row.mean_firing = firing_fraction(act_values(tape, joint.activations), lc.theta_f);
        return so;
    }
    if (!corpus || !batch_idx) throw ContractError("corpus task without corpus batch");
    auto batch = corpus->gather(*batch_idx);
    Var x = tape.leaf(batch.noisy);
    Var v = tape.leaf(batch.visual);
    std::vector<Tensor> kills;
    const std::vector<Tensor>* kills_ptr = nullptr;
    if (cfg.model == Model::MccSparse) {
        const auto& geoms = cfg.task == Task::Mi ? std::vector<TwoStreamConvEncoder::ActGeom>{}
                                                 : ex.recon->encoder().conv_act_geoms();
        if (!geoms.empty()) {
            kills = draw_kill_masks(geoms, cfg.kill_p_train, kill_rng);
            kills_ptr = &kills;
        }
    }
    if (cfg.task == Task::Mi) {
        // corpus MI: score pairs (noisy, visual), marginal shuffles the visuals
        const std::size_t b = batch.visual.extent(0);
        const std::size_t flat = batch.visual.size() / b;
        Tensor v2 = Tensor({b, flat}, batch.visual.vec());
        Tensor vshuf = shuffle_marginals(v2, marg_rng);
        Tensor vshuf4(batch.visual.dims(), vshuf.vec());
        auto joint = ex.score->score(tape, x, v);
        auto marg = ex.score->score(tape, x, tape.leaf(std::move(vshuf4)));
        Var mi = dv_bound(joint.scores, marg.scores);
        std::vector<Var> acts = joint.conv_acts;
        for (const Var& a : joint.hidden_acts) acts.push_back(a);
        Var energy = energy_term(acts, lc.tau_f);
        so.task_loss = scale(mi, -lc.alpha);
        so.energy = energy;
        so.loss = loss_mi(mi, energy, lc);
        so.row.mi_estimate = mi.val().scalar_value();
        so.row.energy = energy.val().scalar_value();
        so.row.mean_firing = firing_fraction(act_values(tape, acts), lc.theta_f);
        return so;
    }
    auto out = ex.recon->forward(tape, x, v, kills_ptr, &vae_rng);
    std::vector<Var> acts = out.conv_acts;
    for (const Var& a : out.hidden_acts) acts.push_back(a);
    Var energy = energy_term(acts, lc.tau_f);
    so.energy = energy;
    if (cfg.task == Task::Reconstruction) {
        Var target = tape.leaf(batch.clean);
        Var task = scale(mse(target, out.output), lc.beta);
        if (out.kl) task = add(task, scale(*out.kl, cfg.vae_beta));
        so.task_loss = task;
        so.loss = add(task, scale(energy, lc.gamma));
        so.row.mse = mse_value(batch.clean, out.output.val());
    } else {  // Mask
        Tensor ibm = ibm_for(*corpus, batch);
        Var l = scale(mask_loss(out.output, tape.leaf(ibm)), lc.beta);
        so.task_loss = l;
        so.loss = add(l, scale(energy, lc.gamma));
        // error rate of the thresholded mask
        const Tensor& z = out.output.val();
        std::size_t wrong = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double pred = z[i] > 0.0 ? 1.0 : 0.0;
            if (pred != ibm[i]) ++wrong;
        }
        so.row.mse = static_cast<double>(wrong) / static_cast<double>(z.size());
    }
    so.row.energy = energy.val().scalar_value();
    so.row.mean_firing = firing_fraction(act_values(tape, acts), lc.theta_f);
    return so;
}

double gaussian_mi_eval(Experiment& ex, std::size_t batches, std::size_t batch_size,
                        Rng rng, double* se_out) {
    std::vector<double> ests;
    for (std::size_t e = 0; e < batches; ++e) {
        GaussianPairSpec spec{ex.cfg.mi_dim, {ex.cfg.mi_rho}, batch_size};
        GaussianPairs pairs = sample_correlated_gaussians(spec, rng);
        Tensor yshuf = shuffle_marginals(pairs.y, rng);
        Tape tape;
        Var x = tape.leaf(std::move(pairs.x));
        auto joint = ex.stats->score(tape, x, tape.leaf(std::move(pairs.y)));
        auto marg = ex.stats->score(tape, x, tape.leaf(std::move(yshuf)));
        ests.push_back(dv_bound_value(joint.scores.val(), marg.scores.val()));
    }
    double m = 0.0;
    for (double v : ests) m += v;
    m /= static_cast<double>(ests.size());
    if (se_out) {
        double var = 0.0;
        for (double v : ests) var += (v - m) * (v - m);
        var = ests.size() > 1 ? var / static_cast<double>(ests.size() - 1) : 0.0;
        *se_out = std::sqrt(var / static_cast<double>(ests.size()));
    }
    return m;
}

}  // namespace

RunRecord train_one(Experiment& ex, const TwoStreamCorpus* corpus, const std::string& run_dir) {
    const ExperimentConfig& cfg = ex.cfg;
    const bool gaussian_mi = cfg.task == Task::Mi && cfg.mi_source == MiSource::Gaussian;
    if (!gaussian_mi && !corpus) throw ConfigError("task requires a corpus");
    std::filesystem::create_directories(run_dir);

    Rng root(ex.seed);
    Rng batch_rng = root.split(2);
    Rng marg_rng = root.split(3);
    Rng kill_rng = root.split(4);
    Rng probe_rng = root.split(5);
    Rng vae_rng = root.split(6);
    Rng gcheck_rng = root.split(7);

    const std::size_t test_reads_before = corpus ? corpus->test_reads : 0;

    RunRecord rec;
    const std::size_t firing_every =
        cfg.firing_every == 0 ? std::max<std::size_t>(1, cfg.updates / 10) : cfg.firing_every;

    // Probe inputs for the firing evolution (train split only).
    std::vector<std::size_t> probe_idx;
    GaussianPairs probe_pairs;
    if (gaussian_mi) {
        GaussianPairSpec spec{cfg.mi_dim, {cfg.mi_rho}, std::max<std::size_t>(2, cfg.probe_size)};
        probe_pairs = sample_correlated_gaussians(spec, probe_rng);
    } else {
        const std::size_t pn = std::min<std::size_t>(cfg.probe_size, corpus->train_idx.size());
        probe_idx.assign(corpus->train_idx.begin(), corpus->train_idx.begin() + pn);
    }

    auto probe_firing = [&]() -> Tensor {
        Tape tape;
        std::vector<Var> acts;
        if (gaussian_mi) {
            auto out = ex.stats->score(tape, tape.leaf(probe_pairs.x), tape.leaf(probe_pairs.y));
            acts = out.activations;
        } else {
            auto batch = corpus->gather(probe_idx);
            Var x = tape.leaf(batch.noisy);
            Var v = tape.leaf(batch.visual);
            if (cfg.task == Task::Mi) {
                auto out = ex.score->score(tape, x, v);
                acts = out.conv_acts;
                for (const Var& a : out.hidden_acts) acts.push_back(a);
            } else {
                Rng probe_vae = root.split(8);
                auto out = ex.recon->forward(tape, x, v, nullptr, &probe_vae);
                acts = out.conv_acts;
                for (const Var& a : out.hidden_acts) acts.push_back(a);
            }
        }
        Tensor recs = unit_records(act_values(tape, acts));
        return firing_probability(recs, cfg.loss.theta_f);
    };

    // Deterministic epoch-shuffled batching over the train split.
    std::vector<std::size_t> order = corpus ? corpus->train_idx : std::vector<std::size_t>{};
    std::size_t pos = order.size();
    auto next_batch = [&]() {
        std::vector<std::size_t> idx(cfg.batch);
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            if (pos >= order.size()) {
                fisher_yates(order, batch_rng);
                pos = 0;
            }
            idx[i] = order[pos++];
        }
        return idx;
    };

    // Keep the energy signal well below the task signal at initialization:
    // measure both gradient magnitudes on an out-of-stream batch and scale
    // gamma down when it would dominate.
    double gamma_eff = cfg.loss.gamma;
    if (cfg.loss.gamma > 0.0) {
        std::vector<std::size_t> gb;
        if (!gaussian_mi) {
            gb.resize(cfg.batch);
            for (std::size_t i = 0; i < cfg.batch; ++i) {
                gb[i] = corpus->train_idx[i % corpus->train_idx.size()];
            }
        }
        Rng gb_rng = gcheck_rng;
        Rng gm_rng = gcheck_rng.split(1);
        Rng gk_rng = gcheck_rng.split(2);
        Rng gv_rng = gcheck_rng.split(3);
        Tape tape;
        auto so = forward_step(ex, tape, corpus, gaussian_mi ? nullptr : &gb, gb_rng, gm_rng,
                               gk_rng, gv_rng, 0.0);
        tape.backward(so.task_loss, ex.store);
        const double gnorm_task = ex.store.grad_norm();
        tape.backward(so.energy, ex.store);
        const double gnorm_energy = ex.store.grad_norm();
        if (gnorm_energy > 0.0 && gamma_eff * gnorm_energy > 0.1 * gnorm_task) {
            gamma_eff = 0.1 * gnorm_task / gnorm_energy;
        }
        std::ofstream gf(run_dir + "/gamma_check.txt");
        gf << "gamma=" << fmt_g(cfg.loss.gamma) << "\n";
        gf << "gnorm_task=" << fmt_g(gnorm_task) << "\n";
        gf << "gnorm_energy=" << fmt_g(gnorm_energy) << "\n";
        gf << "gamma_effective=" << fmt_g(gamma_eff) << "\n";
        ex.store.zero_grads();
    }

    AdamConfig adam;
    adam.lr = cfg.lr;

    std::size_t mi_streak = 0;
    Rng eval_rng_base(ex.seed ^ 0xE7A1E7A1ull);

    for (std::size_t u = 1; u <= cfg.updates; ++u) {
        Tape tape;
        std::vector<std::size_t> bidx;
        if (!gaussian_mi) bidx = next_batch();
        auto so = forward_step(ex, tape, corpus, gaussian_mi ? nullptr : &bidx, batch_rng,
                               marg_rng, kill_rng, vae_rng, gamma_eff);
        so.row.step = u;
        so.row.loss = so.loss.val().scalar_value();
        if (!std::isfinite(so.row.loss)) {
            rec.diverged = true;
            rec.divergence_note = "non-finite loss at update " + std::to_string(u);
            std::ofstream df(run_dir + "/diverged.txt");
            df << rec.divergence_note << "\n";
            break;
        }
        tape.backward(so.loss, ex.store);
        ex.store.adam_step(adam);
        rec.metrics.push_back(so.row);
        if (u % firing_every == 0 || u == cfg.updates) {
            rec.firing_probs.emplace_back(u, probe_firing());
        }
        if (gaussian_mi && cfg.mi_target > 0.0 && u >= cfg.mi_burn_in &&
            u % cfg.mi_check_every == 0) {
            const double est = gaussian_mi_eval(ex, 4, cfg.mi_eval_batch_size,
                                                eval_rng_base.split(u), nullptr);
            if (std::fabs(est - cfg.mi_target) <= 0.08 * cfg.mi_target) {
                ++mi_streak;
            } else {
                mi_streak = 0;
            }
            if (mi_streak >= 2) {
                rec.stopped_at = u;
                break;
            }
        }
    }
    if (rec.stopped_at == 0) rec.stopped_at = rec.metrics.empty() ? 0 : rec.metrics.back().step;

    write_metrics_csv(run_dir + "/metrics.csv", rec.metrics);
    for (std::size_t i = 0; i < rec.firing_probs.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "/firing_epoch_%03zu.csv", i);
        std::ofstream f(run_dir + name);
        f << "step,bin_lo,bin_hi,count\n";
        const auto hist = firing_histogram(rec.firing_probs[i].second, 20);
        for (std::size_t b = 0; b < hist.size(); ++b) {
            f << rec.firing_probs[i].first << "," << fmt_g(b * 0.05) << ","
              << fmt_g((b + 1) * 0.05) << "," << hist[b] << "\n";
        }
    }
    rec.checkpoint_dir = run_dir + "/checkpoint";
    ex.store.save(rec.checkpoint_dir);

    if (gaussian_mi && !rec.diverged) {
        rec.final_mi_estimate = gaussian_mi_eval(ex, cfg.mi_eval_batches,
                                                 cfg.mi_eval_batch_size,
                                                 eval_rng_base.split(0), &rec.final_mi_se);
        std::ofstream f(run_dir + "/final_mi.csv");
        f << "estimate,se,stopped_at\n";
        f << fmt_g(rec.final_mi_estimate) << "," << fmt_g(rec.final_mi_se) << ","
          << rec.stopped_at << "\n";
    }

    if (corpus && corpus->test_reads != test_reads_before) {
        throw ContractError("training touched the test split");
    }
    return rec;
}

std::vector<RunRecord> train(const ExperimentConfig& cfg, const TwoStreamCorpus* corpus) {
    std::vector<RunRecord> records;
    std::vector<std::string> metric_files;
    for (const std::uint64_t seed : cfg.seeds) {
        auto ex = make_experiment(cfg, seed);
        const std::string run_dir = cfg.out_dir + "/seed_" + std::to_string(seed);
        records.push_back(train_one(*ex, corpus, run_dir));
        metric_files.push_back(run_dir + "/metrics.csv");
    }
    // Summary = row-wise mean over the per-seed CSVs, recomputed from the
    // files themselves.
    std::vector<std::vector<MetricsRow>> all;
    std::size_t min_rows = SIZE_MAX;
    for (const auto& f : metric_files) {
        all.push_back(read_metrics_csv(f));
        min_rows = std::min(min_rows, all.back().size());
    }
    if (min_rows == SIZE_MAX) min_rows = 0;
    std::vector<MetricsRow> summary;
    for (std::size_t i = 0; i < min_rows; ++i) {
        MetricsRow m;
        m.step = all[0][i].step;
        for (const auto& rows : all) {
            m.loss += rows[i].loss;
            m.mse += rows[i].mse;
            m.mi_estimate += rows[i].mi_estimate;
            m.energy += rows[i].energy;
            m.mean_firing += rows[i].mean_firing;
        }
        const double k = static_cast<double>(all.size());
        m.loss /= k;
        m.mse /= k;
        m.mi_estimate /= k;
        m.energy /= k;
        m.mean_firing /= k;
        summary.push_back(m);
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_metrics_csv(cfg.out_dir + "/summary_metrics.csv", summary);
    return records;
}

double evaluate_gaussian_mi(Experiment& ex, std::uint64_t eval_seed, double* se_out) {
    if (ex.cfg.task != Task::Mi || ex.cfg.mi_source != MiSource::Gaussian) {
        throw ContractError("evaluate_gaussian_mi: not a gaussian mi experiment");
    }
    return gaussian_mi_eval(ex, ex.cfg.mi_eval_batches, ex.cfg.mi_eval_batch_size,
                            Rng(eval_seed), se_out);
}

EvalMetrics evaluate(Experiment& ex, const TwoStreamCorpus& corpus, bool test_split,
                     const std::vector<Tensor>* kill_masks) {
    const ExperimentConfig& cfg = ex.cfg;
    if (cfg.task == Task::Mi && cfg.mi_source == MiSource::Gaussian) {
        throw ContractError("evaluate: gaussian mi uses evaluate_gaussian_mi");
    }
    const std::vector<std::size_t>& idx = test_split ? corpus.test_idx : corpus.train_idx;
    EvalMetrics m;
    m.samples = idx.size();
    Rng eval_marg(0xEA12u);
    Rng eval_vae(0xEA13u);

    double sse = 0.0;
    std::size_t n_elems = 0;
    std::size_t correct = 0, mask_cells = 0, ibm_ones = 0;
    double masked_sse = 0.0, ones_sse = 0.0, zeros_sse = 0.0;
    std::vector<double> joint_scores, marg_scores;
    std::vector<Tensor> batch_act_records;      // all hidden units
    std::vector<std::vector<Tensor>> conv_recs; // per stage pooled [b x filters]
    std::vector<std::vector<Tensor>> conv_unit; // per stage [b x units]

    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
        const std::size_t stop = std::min(idx.size(), start + cfg.batch);
        std::vector<std::size_t> bidx(idx.begin() + start, idx.begin() + stop);
        auto batch = corpus.gather(bidx);
        Tape tape;
        Var x = tape.leaf(batch.noisy);
        Var v = tape.leaf(batch.visual);
        std::vector<Var> conv_acts, hidden_acts;
        if (cfg.task == Task::Mi) {
            const std::size_t b = batch.visual.extent(0);
            if (b < 2) continue;  // marginal shuffle needs at least two rows
            const std::size_t flat = batch.visual.size() / b;
            Tensor v2 = Tensor({b, flat}, batch.visual.vec());
            Tensor vshuf = shuffle_marginals(v2, eval_marg);
            Tensor vshuf4(batch.visual.dims(), vshuf.vec());
            auto joint = ex.score->score(tape, x, v);
            auto marg = ex.score->score(tape, x, tape.leaf(std::move(vshuf4)));
            for (std::size_t i = 0; i < b; ++i) {
                joint_scores.push_back(joint.scores.val()[i]);
                marg_scores.push_back(marg.scores.val()[i]);
            }
            conv_acts = joint.conv_acts;
            hidden_acts = joint.hidden_acts;
        } else {
            auto out = ex.recon->forward(tape, x, v, kill_masks, &eval_vae);
            conv_acts = out.conv_acts;
            hidden_acts = out.hidden_acts;
            if (cfg.task == Task::Reconstruction) {
                const Tensor& z = out.output.val();
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const double d = z[i] - batch.clean[i];
                    sse += d * d;
                }
                n_elems += z.size();
            } else {
                Tensor ibm = ibm_for(corpus, batch);
                Tensor raw = corpus.denormalize(batch.noisy);
                const Tensor& z = out.output.val();
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const double pred = z[i] > 0.0 ? 1.0 : 0.0;
                    if (pred == ibm[i]) ++correct;
                    if (ibm[i] > 0.5) ++ibm_ones;
                    const double mag = std::fabs(raw[i]);
                    const double dm = pred * mag - batch.clean[i];
                    masked_sse += dm * dm;
                    const double d1 = mag - batch.clean[i];
                    ones_sse += d1 * d1;
                    zeros_sse += batch.clean[i] * batch.clean[i];
                }
                mask_cells += z.size();
            }
        }
        std::vector<Var> all_acts = conv_acts;
        for (const Var& a : hidden_acts) all_acts.push_back(a);
        batch_act_records.push_back(unit_records(act_values(tape, all_acts)));
        if (conv_recs.empty()) {
            conv_recs.resize(conv_acts.size());
            conv_unit.resize(conv_acts.size());
        }
        for (std::size_t s = 0; s < conv_acts.size(); ++s) {
            const Tensor& a = tape.value_of(conv_acts[s].id);
            const std::size_t b = a.extent(0), f = a.extent(1);
            const std::size_t sp = a.extent(2) * a.extent(3);
            Tensor pooled({b, f});
            for (std::size_t bb = 0; bb < b; ++bb) {
                for (std::size_t ff = 0; ff < f; ++ff) {
                    double s2 = 0.0;
                    for (std::size_t k = 0; k < sp; ++k) {
                        s2 += a[(bb * f + ff) * sp + k];
                    }
                    pooled[bb * f + ff] = s2 / static_cast<double>(sp);
                }
            }
            conv_recs[s].push_back(std::move(pooled));
            Tensor units({b, f * sp});
            for (std::size_t i = 0; i < units.size(); ++i) units[i] = a[i];
            conv_unit[s].push_back(std::move(units));
        }
    }

    auto vcat = [](const std::vector<Tensor>& parts) {
        std::size_t rows = 0;
        const std::size_t cols = parts.front().extent(1);
        for (const Tensor& p : parts) rows += p.extent(0);
        Tensor out({rows, cols});
        std::size_t r = 0;
        for (const Tensor& p : parts) {
            for (std::size_t i = 0; i < p.size(); ++i) out[r * cols + i] = p[i];
            r += p.extent(0);
        }
        return out;
    };

    if (!batch_act_records.empty()) {
        Tensor recs = vcat(batch_act_records);
        m.unit_firing = firing_probability(recs, cfg.loss.theta_f);
        double mf = 0.0;
        for (std::size_t i = 0; i < m.unit_firing.size(); ++i) mf += m.unit_firing[i];
        m.mean_firing = mf / static_cast<double>(m.unit_firing.size());
        for (std::size_t s = 0; s < conv_recs.size(); ++s) {
            m.conv_records.push_back(vcat(conv_recs[s]));
            m.conv_firing.push_back(firing_probability(vcat(conv_unit[s]), cfg.loss.theta_f));
        }
    }
    if (cfg.task == Task::Reconstruction && n_elems > 0) {
        m.mse = sse / static_cast<double>(n_elems);
    }
    if (cfg.task == Task::Mask && mask_cells > 0) {
        m.mask_accuracy = static_cast<double>(correct) / static_cast<double>(mask_cells);
        const double p1 = static_cast<double>(ibm_ones) / static_cast<double>(mask_cells);
        m.mask_prior = std::max(p1, 1.0 - p1);
        m.masked_mse = masked_sse / static_cast<double>(mask_cells);
        m.const_mask_mse = (p1 >= 0.5 ? ones_sse : zeros_sse) / static_cast<double>(mask_cells);
    }
    if (cfg.task == Task::Mi && joint_scores.size() >= 2) {
        Tensor j({joint_scores.size()}, joint_scores);
        Tensor g({marg_scores.size()}, marg_scores);
        m.mi_estimate = dv_bound_value(j, g);
    }
    return m;
}

Tensor correlation_matrix(const Tensor& activations) {
    if (activations.rank() != 2 || activations.extent(0) < 2) {
        throw ShapeError("correlation_matrix expects [samples x units], samples >= 2");
    }
    const std::size_t n = activations.extent(0), u = activations.extent(1);
    std::vector<double> mean(u, 0.0), sd(u, 0.0);
    for (std::size_t j = 0; j < u; ++j) {
        for (std::size_t i = 0; i < n; ++i) mean[j] += activations[i * u + j];
        mean[j] /= static_cast<double>(n);
    }
    for (std::size_t j = 0; j < u; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d = activations[i * u + j] - mean[j];
            sd[j] += d * d;
        }
        sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
    }
    Tensor corr({u, u});
    for (std::size_t a = 0; a < u; ++a) {
        corr[a * u + a] = 1.0;
        for (std::size_t b = a + 1; b < u; ++b) {
            double v = 0.0;
            if (sd[a] > 0.0 && sd[b] > 0.0) {
                double cov = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    cov += (activations[i * u + a] - mean[a]) *
                           (activations[i * u + b] - mean[b]);
                }
                cov /= static_cast<double>(n);
                v = cov / (sd[a] * sd[b]);
                v = std::clamp(v, -1.0, 1.0);
            }
            corr[a * u + b] = v;
            corr[b * u + a] = v;
        }
    }
    return corr;
}

double mean_abs_offdiag(const Tensor& corr) {
    const std::size_t u = corr.extent(0);
    if (u < 2) return 0.0;
    double s = 0.0;
    for (std::size_t a = 0; a < u; ++a) {
        for (std::size_t b = 0; b < u; ++b) {
            if (a != b) s += std::fabs(corr[a * u + b]);
        }
    }
    return s / static_cast<double>(u * (u - 1));
}

std::vector<std::size_t> firing_histogram(const Tensor& per_unit_probs, std::size_t bins) {
    std::vector<std::size_t> hist(bins, 0);
    for (std::size_t i = 0; i < per_unit_probs.size(); ++i) {
        const double p = per_unit_probs[i];
        std::size_t b = static_cast<std::size_t>(p * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        ++hist[b];
    }
    return hist;
}

Tensor filter_relevance_map(const Tensor& conv_activations) {
    if (conv_activations.rank() != 4) {
        throw ShapeError("filter_relevance_map expects [N,F,H,W]");
    }
    const std::size_t n = conv_activations.extent(0), f = conv_activations.extent(1);
    const std::size_t h = conv_activations.extent(2), w = conv_activations.extent(3);
    Tensor map({w, f});
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ff = 0; ff < f; ++ff) {
            double s = 0.0;
            for (std::size_t nn = 0; nn < n; ++nn) {
                for (std::size_t y = 0; y < h; ++y) {
                    s += std::fabs(conv_activations[((nn * f + ff) * h + y) * w + x]);
                }
            }
            map[x * f + ff] = s / static_cast<double>(n * h);
        }
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) mx = std::max(mx, map[i]);
    if (mx > 0.0) {
        for (std::size_t i = 0; i < map.size(); ++i) map[i] /= mx;
    }
    return map;
}

std::vector<ResiliencePoint> resilience_sweep(Experiment& ex, const TwoStreamCorpus& corpus,
                                              const std::vector<double>& p_grid,
                                              std::size_t passes, Rng& rng) {
    if (!ex.recon) throw ConfigError("resilience sweep needs a reconstruction/mask model");
    const auto& geoms = ex.recon->encoder().conv_act_geoms();
    std::vector<ResiliencePoint> curve;
    for (const double p : p_grid) {
        if (p < 0.0 || p > 1.0) throw DomainError("kill probability outside [0,1]");
        std::vector<double> errs;
        for (std::size_t pass = 0; pass < passes; ++pass) {
            std::vector<Tensor> masks = draw_kill_masks(geoms, p, rng);
            EvalMetrics m = evaluate(ex, corpus, true, &masks);
            errs.push_back(ex.cfg.task == Task::Mask ? 1.0 - m.mask_accuracy : m.mse);
        }
        ResiliencePoint pt;
        pt.p = p;
        for (double e : errs) pt.mean_err += e;
        pt.mean_err /= static_cast<double>(errs.size());
        double var = 0.0;
        for (double e : errs) var += (e - pt.mean_err) * (e - pt.mean_err);
        pt.std_err = errs.size() > 1
                         ? std::sqrt(var / static_cast<double>(errs.size() - 1))
                         : 0.0;
        curve.push_back(pt);
    }
    return curve;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "step,loss,mse,mi_estimate,energy,mean_firing_prob\n";
    for (const auto& r : rows) {
        f << r.step << "," << fmt_g(r.loss) << "," << fmt_g(r.mse) << ","
          << fmt_g(r.mi_estimate) << "," << fmt_g(r.energy) << "," << fmt_g(r.mean_firing)
          << "\n";
    }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    const auto rows = read_csv(path, true);
    std::vector<MetricsRow> out;
    for (const auto& r : rows) {
        if (r.size() != 6) throw IoError("malformed metrics csv: " + path);
        MetricsRow m;
        m.step = std::stoul(r[0]);
        m.loss = std::stod(r[1]);
        m.mse = std::stod(r[2]);
        m.mi_estimate = std::stod(r[3]);
        m.energy = std::stod(r[4]);
        m.mean_firing = std::stod(r[5]);
        out.push_back(m);
    }
    return out;
}

void write_resilience_csv(const std::string& path, const std::vector<ResiliencePoint>& pts) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "p,mean_err,std_err\n";
    for (const auto& pt : pts) {
        f << fmt_g(pt.p) << "," << fmt_g(pt.mean_err) << "," << fmt_g(pt.std_err) << "\n";
    }
}

}  // namespace mcc
