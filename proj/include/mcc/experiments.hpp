#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcc/datagen.hpp"
#include "mcc/models.hpp"
#include "mcc/objectives.hpp"

namespace mcc {

enum class Task { Reconstruction, Mi, Mask };
enum class Model { Mcc, MccSparse, Baseline, Ae, Vae };
enum class MiSource { Gaussian, Corpus };

Task task_from_name(const std::string& s);
Model model_from_name(const std::string& s);
std::string task_name(Task t);
std::string model_name(Model m);

struct ExperimentConfig {
    Task task = Task::Reconstruction;
    Model model = Model::Mcc;
    std::vector<std::size_t> filters = {16, 16};
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t channel_embed = 32;
    std::size_t global_embed = 64;
    std::size_t patch_h = 16, patch_w = 16;  // set from the corpus when loaded
    LossConfig loss;
    double lr = 1e-4;
    std::size_t batch = 32;
    std::size_t updates = 800;
    std::vector<std::uint64_t> seeds = {1};
    std::string corpus_dir;
    std::string out_dir;

    // mi task
    MiSource mi_source = MiSource::Gaussian;
    std::size_t mi_dim = 20;
    double mi_rho = 0.5;
    std::vector<std::size_t> mi_widths = {32, 32};
    std::size_t mi_eval_batches = 10;
    std::size_t mi_eval_batch_size = 1024;
    double mi_target = 0.0;          // early-stop target (0 = run full budget)
    std::size_t mi_check_every = 500;
    std::size_t mi_burn_in = 2000;

    // variants
    double kill_p_train = 0.25;      // used by model = mcc-sparse
    bool neighborhood = false;
    double vae_beta = 4.0;

    // bookkeeping
    std::size_t firing_every = 0;    // 0 => updates / 10
    std::size_t probe_size = 64;
};

struct MetricsRow {
    std::size_t step = 0;
    double loss = 0, mse = 0, mi_estimate = 0, energy = 0, mean_firing = 0;
};

struct RunRecord {
    std::vector<MetricsRow> metrics;
    bool diverged = false;
    std::string divergence_note;
    std::string checkpoint_dir;
    double final_mi_estimate = 0.0;
    double final_mi_se = 0.0;
    std::size_t stopped_at = 0;
    // (step, per-unit firing probabilities over the probe batch)
    std::vector<std::pair<std::size_t, Tensor>> firing_probs;
};

// A config instantiated with a seed: deterministic parameter init plus the
// derived RNG streams used by training and evaluation.
struct Experiment {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    ParameterStore store;
    std::unique_ptr<ReconModel> recon;
    std::unique_ptr<StatisticsNetwork> stats;
    std::unique_ptr<ConvScoreModel> score;
};

std::unique_ptr<Experiment> make_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

RunRecord train_one(Experiment& ex, const TwoStreamCorpus* corpus, const std::string& run_dir);

// Runs each seed into out_dir/seed_<s>/ and writes summary_metrics.csv as the
// row-wise mean of the per-seed CSV files (recomputed from the files, so
// re-deriving it from them reproduces the summary exactly).
std::vector<RunRecord> train(const ExperimentConfig& cfg, const TwoStreamCorpus* corpus);

struct EvalMetrics {
    double mse = 0;
    double mask_accuracy = 0;
    double mask_prior = 0;
    double masked_mse = 0;
    double const_mask_mse = 0;
    double mi_estimate = 0;
    double mean_firing = 0;
    std::size_t samples = 0;
    std::vector<Tensor> conv_firing;   // per conv stage: per-unit firing probs
    std::vector<Tensor> conv_records;  // per conv stage: [samples x filters] pooled
    Tensor unit_firing;                // all hidden units concatenated
};

EvalMetrics evaluate(Experiment& ex, const TwoStreamCorpus& corpus, bool test_split,
                     const std::vector<Tensor>* kill_masks = nullptr);

// Held-out DV estimate for the Gaussian MI task: mean and standard error
// over cfg.mi_eval_batches fresh batches drawn from eval_seed.
double evaluate_gaussian_mi(Experiment& ex, std::uint64_t eval_seed, double* se_out);

// Pearson correlation matrix over [samples x units]; constant units get unit
// diagonal and zero off-diagonals.
Tensor correlation_matrix(const Tensor& activations);
double mean_abs_offdiag(const Tensor& corr);

std::vector<std::size_t> firing_histogram(const Tensor& per_unit_probs, std::size_t bins = 20);

// [N,F,H,W] -> [frames x filters] mean-|activation| map, max-normalized.
Tensor filter_relevance_map(const Tensor& conv_activations);

struct ResiliencePoint {
    double p = 0, mean_err = 0, std_err = 0;
};

std::vector<ResiliencePoint> resilience_sweep(Experiment& ex, const TwoStreamCorpus& corpus,
                                              const std::vector<double>& p_grid,
                                              std::size_t passes, Rng& rng);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
void write_resilience_csv(const std::string& path, const std::vector<ResiliencePoint>& pts);

}  // namespace mcc
