// Command-line entry point: data generation, training, evaluation, the
// single-cell surface simulator, and the post-hoc analyses, all driven by a
// flat key=value config with CLI overrides.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mcc/cell_model.hpp"
#include "mcc/csv.hpp"
#include "mcc/datagen.hpp"
#include "mcc/experiments.hpp"

namespace {

using KeyValues = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// Flat config: one `key = value` per line, '#' starts a comment.
KeyValues parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw mcc::ConfigError("cannot open config file: " + path);
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw mcc::ConfigError(path + ":" + std::to_string(lineno) +
                                   ": malformed line (expected key = value)");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw mcc::ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

const std::string& require(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw mcc::ConfigError("missing config key: " + key);
    return it->second;
}

std::string get_or(const KeyValues& kv, const std::string& key, const std::string& dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
}

double num_or(const KeyValues& kv, const std::string& key, double dflt) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw mcc::ConfigError("config key '" + key + "' is not a number: " + it->second);
    }
}

std::size_t size_or(const KeyValues& kv, const std::string& key, std::size_t dflt) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw mcc::ConfigError("config key '" + key + "' is not an integer: " + it->second);
    }
}

template <typename T, typename Parse>
std::vector<T> list_or(const KeyValues& kv, const std::string& key, std::vector<T> dflt,
                       Parse parse) {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    std::vector<T> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse(item));
    }
    if (out.empty()) throw mcc::ConfigError("config key '" + key + "' has an empty list");
    return out;
}

KeyValues preset_config(const std::string& name) {
    // Named starting points; config files and CLI flags override these.
    static const std::map<std::string, KeyValues> presets = {
        {"gen-small", {{"n", "400"}, {"patch", "16"}}},
        {"recon-mcc",
         {{"task", "reconstruction"}, {"model", "mcc"}, {"gamma", "0.003"},
          {"lr", "0.001"}, {"batch", "32"}, {"updates", "1200"}}},
        {"recon-mcc-sparse",
         {{"task", "reconstruction"}, {"model", "mcc-sparse"}, {"gamma", "0.003"},
          {"lr", "0.001"}, {"batch", "32"}, {"updates", "1200"}, {"kill_p_train", "0.25"}}},
        {"recon-baseline",
         {{"task", "reconstruction"}, {"model", "baseline"}, {"gamma", "0"},
          {"lr", "0.001"}, {"batch", "32"}, {"updates", "1200"}}},
        {"mask-mcc",
         {{"task", "mask"}, {"model", "mcc"}, {"gamma", "0.001"}, {"lr", "0.001"},
          {"batch", "32"}, {"updates", "1200"}}},
        {"mask-baseline",
         {{"task", "mask"}, {"model", "baseline"}, {"gamma", "0"}, {"lr", "0.001"},
          {"batch", "32"}, {"updates", "1200"}}},
        {"mi-gaussian",
         {{"task", "mi"}, {"model", "mcc"}, {"batch", "256"}, {"updates", "20000"},
          {"lr", "0.0005"}, {"gamma", "0.0001"}, {"mi_dim", "20"}, {"mi_rho", "0.5"},
          {"mi_target", "auto"}}},
        {"mi-gaussian-fast",
         {{"task", "mi"}, {"model", "mcc"}, {"batch", "256"}, {"updates", "20000"},
          {"lr", "0.005"}, {"gamma", "0.0001"}, {"mi_dim", "20"}, {"mi_rho", "0.5"},
          {"mi_target", "auto"}}},
        {"mi-gaussian-baseline",
         {{"task", "mi"}, {"model", "baseline"}, {"batch", "256"}, {"updates", "20000"},
          {"lr", "0.0005"}, {"gamma", "0"}, {"mi_dim", "20"}, {"mi_rho", "0.5"},
          {"mi_target", "auto"}}},
    };
    auto it = presets.find(name);
    if (it == presets.end()) {
        // cell-surface presets name the transfer-function variant directly
        try {
            mcc::amtf_variant_from_name(name);
            return {{"variant", name}};
        } catch (const mcc::ConfigError&) {
        }
        throw mcc::ConfigError("unknown preset: " + name);
    }
    return it->second;
}

struct CommonArgs {
    std::string config_path;
    std::string preset;
    std::string out;
    std::optional<std::uint64_t> seed;
};

KeyValues resolve_config(const CommonArgs& args) {
    KeyValues kv;
    if (!args.preset.empty()) kv = preset_config(args.preset);
    if (!args.config_path.empty()) {
        for (auto& [k, v] : parse_config_file(args.config_path)) kv[k] = v;
    }
    if (!args.out.empty()) kv["out"] = args.out;
    if (args.seed) kv["seeds"] = std::to_string(*args.seed);
    return kv;
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const KeyValues& kv) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/manifest.txt");
    if (!f) throw mcc::IoError("cannot write manifest in " + dir);
    f << "# resolved configuration\n";
    f << "subcommand = " << subcommand << "\n";
    for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    f << "timestamp = " << buf << "\n";
}

void write_config_echo(const std::string& dir, const KeyValues& kv) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/config.txt");
    for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
}

mcc::ExperimentConfig experiment_config_from(const KeyValues& kv) {
    mcc::ExperimentConfig cfg;
    cfg.task = mcc::task_from_name(require(kv, "task"));
    cfg.model = mcc::model_from_name(require(kv, "model"));
    cfg.filters = list_or<std::size_t>(kv, "filters", {16, 16}, [](const std::string& s) {
        return static_cast<std::size_t>(std::stoull(s));
    });
    cfg.kernel = size_or(kv, "kernel", 3);
    cfg.stride = size_or(kv, "stride", 2);
    cfg.channel_embed = size_or(kv, "channel_embed", 32);
    cfg.global_embed = size_or(kv, "global_embed", 64);
    cfg.patch_h = size_or(kv, "patch", 16);
    cfg.patch_w = cfg.patch_h;
    cfg.loss.alpha = num_or(kv, "alpha", 1.0);
    cfg.loss.beta = num_or(kv, "beta", 1.0);
    cfg.loss.gamma = num_or(kv, "gamma", 0.0);
    cfg.loss.tau_f = num_or(kv, "tau_f", 0.1);
    cfg.loss.theta_f = num_or(kv, "theta_f", 0.0);
    cfg.lr = num_or(kv, "lr", 1e-4);
    cfg.batch = size_or(kv, "batch", 32);
    cfg.updates = size_or(kv, "updates", 800);
    cfg.seeds = list_or<std::uint64_t>(kv, "seeds", {1}, [](const std::string& s) {
        return static_cast<std::uint64_t>(std::stoull(s));
    });
    cfg.corpus_dir = get_or(kv, "corpus", "");
    cfg.out_dir = get_or(kv, "out", "");
    cfg.mi_source = get_or(kv, "mi_source", "gaussian") == "corpus" ? mcc::MiSource::Corpus
                                                                    : mcc::MiSource::Gaussian;
    cfg.mi_dim = size_or(kv, "mi_dim", 20);
    cfg.mi_rho = num_or(kv, "mi_rho", 0.5);
    cfg.mi_widths = list_or<std::size_t>(kv, "mi_widths", {32, 32}, [](const std::string& s) {
        return static_cast<std::size_t>(std::stoull(s));
    });
    cfg.mi_eval_batches = size_or(kv, "mi_eval_batches", 10);
    cfg.mi_eval_batch_size = size_or(kv, "mi_eval_batch_size", 1024);
    const std::string target = get_or(kv, "mi_target", "0");
    if (target == "auto") {
        cfg.mi_target = mcc::analytic_gaussian_mi(
            std::vector<double>(cfg.mi_dim, cfg.mi_rho));
    } else {
        cfg.mi_target = std::stod(target);
    }
    cfg.mi_check_every = size_or(kv, "mi_check_every", 500);
    cfg.mi_burn_in = size_or(kv, "mi_burn_in", 2000);
    cfg.kill_p_train = num_or(kv, "kill_p_train", 0.25);
    cfg.neighborhood = size_or(kv, "neighborhood", 0) != 0;
    cfg.vae_beta = num_or(kv, "vae_beta", 4.0);
    cfg.firing_every = size_or(kv, "firing_every", 0);
    cfg.probe_size = size_or(kv, "probe_size", 64);
    return cfg;
}

std::optional<mcc::TwoStreamCorpus> maybe_load_corpus(const mcc::ExperimentConfig& cfg) {
    const bool gaussian_mi =
        cfg.task == mcc::Task::Mi && cfg.mi_source == mcc::MiSource::Gaussian;
    if (gaussian_mi) return std::nullopt;
    if (cfg.corpus_dir.empty()) throw mcc::ConfigError("missing config key: corpus");
    return mcc::load_corpus(cfg.corpus_dir);
}

int cmd_gen_data(const CommonArgs& args) {
    KeyValues kv = resolve_config(args);
    const std::string out = require(kv, "out");
    const std::size_t n = size_or(kv, "n", 500);
    const std::size_t patch = size_or(kv, "patch", 16);
    const std::uint64_t seed = args.seed ? *args.seed : size_or(kv, "seed", 1);
    kv["seed"] = std::to_string(seed);
    auto grid = list_or<int>(kv, "snr_grid", mcc::default_snr_grid(),
                             [](const std::string& s) { return std::stoi(s); });
    mcc::Rng rng(seed);
    mcc::TwoStreamCorpus corpus = mcc::make_corpus(n, grid, rng, patch, patch);
    mcc::save_corpus(corpus, out);
    write_manifest(out, "gen-data", kv);
    std::cout << "corpus: " << n << " samples (" << corpus.train_idx.size() << " train, "
              << corpus.test_idx.size() << " test) -> " << out << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, bool force_mi) {
    KeyValues kv = resolve_config(args);
    if (force_mi && !kv.count("task")) kv["task"] = "mi";
    if (force_mi && !kv.count("model")) kv["model"] = "mcc";
    mcc::ExperimentConfig cfg = experiment_config_from(kv);
    if (cfg.out_dir.empty()) throw mcc::ConfigError("missing config key: out");
    auto corpus = maybe_load_corpus(cfg);
    if (corpus) {
        cfg.patch_h = corpus->patch_h();
        cfg.patch_w = corpus->patch_w();
        kv["patch"] = std::to_string(cfg.patch_h);
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_config_echo(cfg.out_dir, kv);
    auto records = mcc::train(cfg, corpus ? &*corpus : nullptr);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string run_dir =
            cfg.out_dir + "/seed_" + std::to_string(cfg.seeds[i]);
        write_config_echo(run_dir, kv);
        if (records[i].diverged) {
            std::cout << "seed " << cfg.seeds[i] << ": DIVERGED ("
                      << records[i].divergence_note << ")\n";
        } else {
            const auto& last = records[i].metrics.back();
            std::cout << "seed " << cfg.seeds[i] << ": " << records[i].stopped_at
                      << " updates, loss " << mcc::fmt_g(last.loss, 6);
            if (cfg.task == mcc::Task::Mi) {
                std::cout << ", mi " << mcc::fmt_g(records[i].final_mi_estimate, 6);
            }
            std::cout << ", firing " << mcc::fmt_g(last.mean_firing, 6) << "\n";
        }
    }
    write_manifest(cfg.out_dir, force_mi ? "mi" : "train", kv);
    return 0;
}

// Rebuilds the experiment recorded in a run directory and loads its
// checkpoint.
std::unique_ptr<mcc::Experiment> reopen_run(const std::string& run_dir,
                                            std::optional<std::uint64_t> seed_override) {
    KeyValues kv = parse_config_file(run_dir + "/config.txt");
    mcc::ExperimentConfig cfg = experiment_config_from(kv);
    const std::uint64_t seed = seed_override ? *seed_override : cfg.seeds.front();
    auto ex = mcc::make_experiment(cfg, seed);
    ex->store.load(run_dir + "/checkpoint");
    return ex;
}

int cmd_eval(const CommonArgs& args) {
    KeyValues kv = resolve_config(args);
    const std::string run = require(kv, "run");
    auto ex = reopen_run(run, args.seed);
    if (!ex->cfg.corpus_dir.empty() && kv.count("corpus")) ex->cfg.corpus_dir = kv["corpus"];
    const std::string out = get_or(kv, "out", run);
    if (ex->cfg.task == mcc::Task::Mi && ex->cfg.mi_source == mcc::MiSource::Gaussian) {
        double se = 0.0;
        const double est = mcc::evaluate_gaussian_mi(*ex, 0xEA11u, &se);
        std::filesystem::create_directories(out);
        std::ofstream f(out + "/eval.csv");
        f << "mi_estimate,se\n" << mcc::fmt_g(est) << "," << mcc::fmt_g(se) << "\n";
        std::cout << "mi_estimate " << mcc::fmt_g(est, 6) << " (se " << mcc::fmt_g(se, 3)
                  << ")\n";
    } else {
        mcc::TwoStreamCorpus corpus = mcc::load_corpus(
            kv.count("corpus") ? kv["corpus"] : ex->cfg.corpus_dir);
        mcc::EvalMetrics m = mcc::evaluate(*ex, corpus, true);
        std::filesystem::create_directories(out);
        std::ofstream f(out + "/eval.csv");
        f << "mse,mask_accuracy,mask_prior,masked_mse,const_mask_mse,mi_estimate,"
             "mean_firing\n";
        f << mcc::fmt_g(m.mse) << "," << mcc::fmt_g(m.mask_accuracy) << ","
          << mcc::fmt_g(m.mask_prior) << "," << mcc::fmt_g(m.masked_mse) << ","
          << mcc::fmt_g(m.const_mask_mse) << "," << mcc::fmt_g(m.mi_estimate) << ","
          << mcc::fmt_g(m.mean_firing) << "\n";
        std::cout << "test mse " << mcc::fmt_g(m.mse, 6) << ", firing "
                  << mcc::fmt_g(m.mean_firing, 6) << "\n";
    }
    write_manifest(out, "eval", kv);
    return 0;
}

int cmd_cell_surface(const CommonArgs& args) {
    KeyValues kv = resolve_config(args);
    const std::string out = require(kv, "out");
    mcc::TransferFunctionSpec spec;
    spec.variant = mcc::amtf_variant_from_name(get_or(kv, "variant", "proposed-hgf"));
    spec.sigma = num_or(kv, "sigma", 0.35);
    spec.gain = num_or(kv, "gain", 8.0);
    spec.threshold = num_or(kv, "threshold", 1.0);
    const std::size_t n = size_or(kv, "grid_n", 101);
    std::filesystem::create_directories(out);
    mcc::SurfaceGrid grid = mcc::surface_grid(spec, n);
    mcc::write_surface_csv(grid, out + "/surface.csv");
    mcc::OrderingReport rep = mcc::ordering_check(spec, n);
    {
        std::ofstream f(out + "/ordering.txt");
        f << "variant = " << mcc::amtf_variant_name(spec.variant) << "\n";
        f << "pass = " << (rep.pass ? "yes" : "no") << "\n";
        f << "Y(0,1) = " << mcc::fmt_g(rep.y01) << "\n";
        f << "Y(1,0) = " << mcc::fmt_g(rep.y10) << "\n";
        f << "Y(1,1) = " << mcc::fmt_g(rep.y11) << "\n";
        f << "grid_max = " << mcc::fmt_g(rep.grid_max) << "\n";
        for (const auto& v : rep.violations) f << "violation: " << v << "\n";
    }
    write_manifest(out, "cell-surface", kv);
    std::cout << mcc::amtf_variant_name(spec.variant) << ": ordering "
              << (rep.pass ? "pass" : "FAIL") << ", surface " << n << "x" << n << " -> "
              << out << "/surface.csv\n";
    return 0;
}

int cmd_analyze(const CommonArgs& args) {
    KeyValues kv = resolve_config(args);
    const std::string run = require(kv, "run");
    auto ex = reopen_run(run, args.seed);
    mcc::TwoStreamCorpus corpus =
        mcc::load_corpus(kv.count("corpus") ? kv["corpus"] : ex->cfg.corpus_dir);
    const std::string out = get_or(kv, "out", run);
    std::filesystem::create_directories(out);
    mcc::EvalMetrics m = mcc::evaluate(*ex, corpus, true);
    std::ofstream summary(out + "/corr_summary.csv");
    summary << "stage,mean_abs_offdiag\n";
    for (std::size_t s = 0; s < m.conv_records.size(); ++s) {
        mcc::Tensor corr = mcc::correlation_matrix(m.conv_records[s]);
        const std::size_t u = corr.extent(0);
        std::ofstream f(out + "/corr_layer_" + std::to_string(s) + ".csv");
        for (std::size_t a = 0; a < u; ++a) {
            for (std::size_t b = 0; b < u; ++b) {
                f << mcc::fmt_g(corr[a * u + b]) << (b + 1 == u ? "\n" : ",");
            }
        }
        summary << s << "," << mcc::fmt_g(mcc::mean_abs_offdiag(corr)) << "\n";
    }
    // Relevance maps over a probe subset of the test split.
    const std::size_t probe_n = std::min<std::size_t>(64, corpus.test_idx.size());
    std::vector<std::size_t> probe(corpus.test_idx.begin(),
                                   corpus.test_idx.begin() + probe_n);
    auto batch = corpus.gather(probe);
    mcc::Tape tape;
    mcc::Var x = tape.leaf(batch.noisy);
    mcc::Var v = tape.leaf(batch.visual);
    std::vector<mcc::Var> conv_acts;
    if (ex->cfg.task == mcc::Task::Mi) {
        auto o = ex->score->score(tape, x, v);
        conv_acts = o.conv_acts;
    } else {
        mcc::Rng vr(0xA11CE);
        auto o = ex->recon->forward(tape, x, v, nullptr, &vr);
        conv_acts = o.conv_acts;
    }
    for (std::size_t s = 0; s < conv_acts.size(); ++s) {
        mcc::Tensor map = mcc::filter_relevance_map(tape.val(conv_acts[s]));
        std::ofstream f(out + "/relevance_" + std::to_string(s) + ".csv");
        const std::size_t rows = map.extent(0), cols = map.extent(1);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                f << mcc::fmt_g(map[r * cols + c]) << (c + 1 == cols ? "\n" : ",");
            }
        }
    }
    write_manifest(out, "analyze", kv);
    std::cout << "analysis written to " << out << "\n";
    return 0;
}

int cmd_resilience(const CommonArgs& args) {
    KeyValues kv = resolve_config(args);
    const std::string run = require(kv, "run");
    auto ex = reopen_run(run, args.seed);
    mcc::TwoStreamCorpus corpus =
        mcc::load_corpus(kv.count("corpus") ? kv["corpus"] : ex->cfg.corpus_dir);
    const std::string out = get_or(kv, "out", run);
    const double p_min = num_or(kv, "p_min", 0.0);
    const double p_max = num_or(kv, "p_max", 0.5);
    const double p_step = num_or(kv, "p_step", 0.025);
    const std::size_t passes = size_or(kv, "passes", 50);
    std::vector<double> grid;
    for (double p = p_min; p <= p_max + 1e-12; p += p_step) grid.push_back(p);
    const std::uint64_t seed = args.seed ? *args.seed : size_or(kv, "seed", 1);
    mcc::Rng rng(seed ^ 0x5EEDull);
    auto curve = mcc::resilience_sweep(*ex, corpus, grid, passes, rng);
    std::filesystem::create_directories(out);
    mcc::write_resilience_csv(out + "/resilience.csv", curve);
    write_manifest(out, "resilience", kv);
    std::cout << "resilience curve (" << grid.size() << " points, " << passes
              << " passes) -> " << out << "/resilience.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-sensitive two-point neural computation toolbox"};
    app.require_subcommand(1);

    struct SubSpec {
        CLI::App* cmd;
        CommonArgs args;
    };
    std::map<std::string, SubSpec> subs;
    for (const char* name : {"gen-data", "train", "eval", "mi", "cell-surface", "analyze",
                             "resilience"}) {
        CLI::App* c = app.add_subcommand(name);
        auto& spec = subs[name];
        spec.cmd = c;
        c->add_option("--config", spec.args.config_path, "flat key=value config file");
        c->add_option("--preset", spec.args.preset, "named preset configuration");
        c->add_option("--out", spec.args.out, "output directory");
        c->add_option("--seed", spec.args.seed, "seed override");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        for (auto& [name, spec] : subs) {
            if (!spec.cmd->parsed()) continue;
            if (name == "gen-data") return cmd_gen_data(spec.args);
            if (name == "train") return cmd_train(spec.args, false);
            if (name == "mi") return cmd_train(spec.args, true);
            if (name == "eval") return cmd_eval(spec.args);
            if (name == "cell-surface") return cmd_cell_surface(spec.args);
            if (name == "analyze") return cmd_analyze(spec.args);
            if (name == "resilience") return cmd_resilience(spec.args);
        }
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const mcc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
