#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "sclab/attribution.hpp"
#include "sclab/dataset.hpp"
#include "sclab/metrics.hpp"
#include "sclab/model.hpp"
#include "sclab/serialize.hpp"
#include "sclab/train.hpp"

namespace sclab {

struct DatasetSpec {
    std::variant<ParityConfig, MoonStarConfig> config = ParityConfig{};
    double test_rho = 0.5;
    std::size_t n_test = 10000;

    bool is_parity() const { return std::holds_alternative<ParityConfig>(config); }

    SCDataset generate_train(std::uint64_t master_seed) const {
        Rng rng = substream(master_seed, kSeedTagTrainData);
        if (is_parity()) return gen_parity(std::get<ParityConfig>(config), rng);
        return gen_moon_star(std::get<MoonStarConfig>(config), rng);
    }

    SCDataset generate_test(std::uint64_t master_seed) const {
        Rng rng = substream(master_seed, kSeedTagTestData);
        if (is_parity()) {
            ParityConfig c = std::get<ParityConfig>(config);
            c.rho = test_rho;
            c.n_samples = n_test;
            return gen_parity(c, rng);
        }
        MoonStarConfig c = std::get<MoonStarConfig>(config);
        c.rho = test_rho;
        c.n_samples = n_test;
        return gen_moon_star(c, rng);
    }

    std::size_t input_dim() const {
        return is_parity() ? std::get<ParityConfig>(config).dim() : std::get<MoonStarConfig>(config).dim();
    }
};

struct EvalParams {
    std::size_t eval_samples = 1000;       // penultimate-activation sample count
    std::size_t attribution_samples = 10;  // IG sample count
    std::size_t ig_steps = 64;
    PruneMethod prune_method = PruneMethod::structured_neuron;
};

/// Post-training measurement pipeline for one frozen model. The sampled test
/// subset is drawn from the eval sub-stream of `master_seed`, so re-running
/// with the same seed reproduces the report exactly.
inline MetricsReport compute_metrics_report(const FCN& f, const SCDataset& ds_test, const EvalParams& params,
                                            std::uint64_t master_seed) {
    MetricsReport rep;
    const auto acc = accuracy(f, ds_test);
    rep.test_accuracy_unbiased = acc.overall;
    rep.group_accuracies = acc.groups;

    const auto prunability = kappa_prunability(f, ds_test, params.prune_method);
    rep.prunability_mean = prunability.mean;
    rep.prunability_clipped = prunability.clipped;

    Rng eval_rng = substream(master_seed, kSeedTagEval);
    const std::size_t n_eval = std::min(params.eval_samples, ds_test.size());
    const auto sample_idx = eval_rng.sample_without_replacement(ds_test.size(), n_eval);
    Matrix sampled(n_eval, ds_test.dim());
    std::vector<int> sampled_y(n_eval), sampled_b(n_eval);
    for (std::size_t i = 0; i < n_eval; ++i) {
        const double* src = ds_test.inputs.row(sample_idx[i]);
        std::copy(src, src + ds_test.dim(), sampled.row(i));
        sampled_y[i] = ds_test.labels_y[sample_idx[i]];
        sampled_b[i] = ds_test.labels_b[sample_idx[i]];
    }
    const Matrix acts = penultimate(f, sampled);
    double comp = 0.0, sparse = 0.0;
    for (std::size_t i = 0; i < acts.rows(); ++i) {
        const std::span<const double> row{acts.row(i), acts.cols()};
        comp += qk_compressibility(row, 2.0, 0.1);
        sparse += sparsity(row);
    }
    rep.activation_compressibility = comp / static_cast<double>(acts.rows());
    rep.activation_sparsity = sparse / static_cast<double>(acts.rows());

    const auto csi_res = csi(acts, sampled_y, ds_test.num_classes);
    const auto bsi_res = bsi(acts, sampled_b, ds_test.num_classes);
    rep.avg_csi = csi_res.mean;
    rep.avg_bsi = bsi_res.mean;
    rep.dead_neurons = csi_res.dead_count;
    rep.class_separation_r2 = class_separation_r2(acts, sampled_y);

    // Attribution block: IG against the all-zeros baseline, targeting the
    // true class. Core/spurious/noise shares only make sense when the masks
    // actually separate features (parity); entropy is dataset-agnostic.
    const auto attr_idx = eval_rng.sample_without_replacement(ds_test.size(), params.attribution_samples);
    const std::vector<double> zero_baseline(ds_test.dim(), 0.0);
    const bool has_shares = !ds_test.core_mask.empty();
    double core = 0.0, spur = 0.0, noise = 0.0, entropy = 0.0;
    std::size_t share_count = 0, entropy_count = 0;
    for (std::size_t idx : attr_idx) {
        const std::span<const double> x{ds_test.inputs.row(idx), ds_test.dim()};
        const auto map =
            integrated_gradients(f, x, zero_baseline, ds_test.labels_y[idx], params.ig_steps);
        double total = 0.0;
        for (double v : map.values) total += std::abs(v);
        if (total <= 0.0) continue; // dead model on this sample; skip
        entropy += attribution_entropy(map);
        ++entropy_count;
        if (has_shares) {
            const auto shares =
                attribution_shares(map, ds_test.core_mask, ds_test.spurious_mask, ds_test.noise_mask);
            core += shares.core;
            spur += shares.spurious;
            noise += shares.noise;
            ++share_count;
        }
    }
    if (entropy_count > 0) rep.attribution_entropy = entropy / static_cast<double>(entropy_count);
    if (has_shares && share_count > 0) {
        rep.attribution_core_share = core / static_cast<double>(share_count);
        rep.attribution_spurious_share = spur / static_cast<double>(share_count);
        rep.attribution_noise_share = noise / static_cast<double>(share_count);
    }
    return rep;
}

struct SweepConfig {
    DatasetSpec dataset;
    std::vector<std::size_t> hidden_widths = {200, 200};
    std::vector<double> lr_grid;
    std::vector<std::uint64_t> seeds;
    TrainConfig base; // lr and seed are overwritten per run
    EvalParams eval;
    std::string output_dir;
    std::size_t workers = 1;
    bool write_checkpoints = true;

    void validate() const {
        if (lr_grid.empty()) throw std::invalid_argument("SweepConfig: empty lr grid");
        for (std::size_t i = 1; i < lr_grid.size(); ++i) {
            if (lr_grid[i] <= lr_grid[i - 1]) {
                throw std::invalid_argument("SweepConfig: lr grid must be strictly increasing");
            }
        }
        if (seeds.empty()) throw std::invalid_argument("SweepConfig: no seeds");
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            for (std::size_t j = i + 1; j < seeds.size(); ++j) {
                if (seeds[i] == seeds[j]) throw std::invalid_argument("SweepConfig: duplicate seeds");
            }
        }
        if (output_dir.empty()) throw std::invalid_argument("SweepConfig: output_dir not set");
    }

    std::vector<std::size_t> full_widths() const {
        std::vector<std::size_t> w;
        w.push_back(dataset.input_dim());
        for (std::size_t h : hidden_widths) w.push_back(h);
        w.push_back(2);
        return w;
    }
};

struct RunResult {
    double lr = 0.0;
    std::uint64_t seed = 0;
    bool converged = false;
    bool diverged = false;
    std::size_t steps_to_convergence = 0;
    double max_bc_loss_ratio = 0.0;
    MetricsReport report;
};

struct LrAggregate {
    double lr = 0.0;
    std::size_t n_seeds = 0;           // non-diverged runs aggregated
    MetricsReport mean;
    MetricsReport stddev;
    double mean_max_bc_loss_ratio = 0.0;
    bool any_diverged = false;
    bool excluded = false;             // dropped from headline trends
    std::string exclusion_reason;
};

struct SweepResult {
    std::vector<RunResult> runs;       // lr-major, seed-minor order
    std::vector<LrAggregate> aggregates;
};

namespace detail {

inline MetricsReport combine_reports(const std::vector<const MetricsReport*>& reports, bool want_std) {
    auto moment = [&](auto&& get) {
        double m = 0.0;
        for (const auto* r : reports) m += get(*r);
        m /= static_cast<double>(reports.size());
        if (!want_std) return m;
        double v = 0.0;
        for (const auto* r : reports) v += (get(*r) - m) * (get(*r) - m);
        return std::sqrt(v / static_cast<double>(reports.size()));
    };
    MetricsReport out;
    out.test_accuracy_unbiased = moment([](const MetricsReport& r) { return r.test_accuracy_unbiased; });
    for (const auto& [key, unused] : reports.front()->group_accuracies) {
        const auto k = key;
        out.group_accuracies[k] = moment([k](const MetricsReport& r) {
            const auto it = r.group_accuracies.find(k);
            return it == r.group_accuracies.end() ? 0.0 : it->second;
        });
    }
    out.prunability_mean = moment([](const MetricsReport& r) { return r.prunability_mean; });
    out.activation_compressibility =
        moment([](const MetricsReport& r) { return r.activation_compressibility; });
    out.activation_sparsity = moment([](const MetricsReport& r) { return r.activation_sparsity; });
    out.avg_csi = moment([](const MetricsReport& r) { return r.avg_csi; });
    out.avg_bsi = moment([](const MetricsReport& r) { return r.avg_bsi; });
    out.class_separation_r2 = moment([](const MetricsReport& r) { return r.class_separation_r2; });
    out.attribution_entropy = moment([](const MetricsReport& r) { return r.attribution_entropy; });
    const bool has_shares = !std::isnan(reports.front()->attribution_core_share);
    if (has_shares) {
        out.attribution_core_share = moment([](const MetricsReport& r) { return r.attribution_core_share; });
        out.attribution_spurious_share =
            moment([](const MetricsReport& r) { return r.attribution_spurious_share; });
        out.attribution_noise_share =
            moment([](const MetricsReport& r) { return r.attribution_noise_share; });
    }
    double dead = moment([](const MetricsReport& r) { return static_cast<double>(r.dead_neurons); });
    out.dead_neurons = static_cast<std::size_t>(dead + 0.5);
    for (const auto* r : reports) out.prunability_clipped = out.prunability_clipped || r->prunability_clipped;
    return out;
}

} // namespace detail

/// Seed-aggregation plus the learning-rate exclusion rule: walking the grid
/// upward, the first LR where any seed diverges or any seed's unbiased test
/// accuracy falls more than 25 points below the best mean seen at smaller
/// LRs marks the cutoff; it and everything above it are flagged (kept in the
/// output, dropped from headline trends).
inline std::vector<LrAggregate> aggregate_sweep(const std::vector<RunResult>& runs,
                                                const std::vector<double>& lr_grid) {
    std::vector<LrAggregate> aggs;
    double best_mean_so_far = -1.0;
    bool cutoff_hit = false;
    std::string cutoff_reason;
    for (double lr : lr_grid) {
        LrAggregate agg;
        agg.lr = lr;
        std::vector<const MetricsReport*> ok_reports;
        double worst_acc = 1.0;
        double mean_maxbc = 0.0;
        for (const auto& run : runs) {
            if (run.lr != lr) continue;
            if (run.diverged) {
                agg.any_diverged = true;
                continue;
            }
            ok_reports.push_back(&run.report);
            worst_acc = std::min(worst_acc, run.report.test_accuracy_unbiased);
            mean_maxbc += run.max_bc_loss_ratio;
        }
        agg.n_seeds = ok_reports.size();
        if (!ok_reports.empty()) {
            agg.mean = detail::combine_reports(ok_reports, false);
            agg.stddev = detail::combine_reports(ok_reports, true);
            agg.mean_max_bc_loss_ratio = mean_maxbc / static_cast<double>(ok_reports.size());
        }
        if (!cutoff_hit) {
            if (agg.any_diverged || ok_reports.empty()) {
                cutoff_hit = true;
                cutoff_reason = "divergence at lr=" + format_double(lr);
            } else if (best_mean_so_far >= 0.0 && worst_acc < best_mean_so_far - 0.25) {
                cutoff_hit = true;
                cutoff_reason = "accuracy drop >25pts at lr=" + format_double(lr);
            }
        }
        if (cutoff_hit) {
            agg.excluded = true;
            agg.exclusion_reason = cutoff_reason;
        } else {
            best_mean_so_far = std::max(best_mean_so_far, agg.mean.test_accuracy_unbiased);
        }
        aggs.push_back(std::move(agg));
    }
    return aggs;
}

inline std::string run_dir_name(double lr, std::uint64_t seed) {
    return "lr" + format_double(lr) + "_s" + std::to_string(seed);
}

/// Full experiment: per (lr, seed) train + measure, with per-seed shared
/// datasets and a dataset-independent init stream. Writes per-run traces and
/// summaries plus the sweep-level CSV/JSON files. Worker threads split the
/// run grid; outputs are written after all runs finish, in grid order, so
/// results are byte-stable regardless of scheduling.
inline SweepResult run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path out_root(cfg.output_dir);
    fs::create_directories(out_root / "runs");

    // Datasets are shared across the LR grid within one seed.
    std::map<std::uint64_t, std::pair<SCDataset, SCDataset>> data_by_seed;
    for (std::uint64_t seed : cfg.seeds) {
        data_by_seed.emplace(seed,
                             std::make_pair(cfg.dataset.generate_train(seed), cfg.dataset.generate_test(seed)));
    }

    struct Task {
        double lr;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double lr : cfg.lr_grid) {
        for (std::uint64_t seed : cfg.seeds) tasks.push_back({lr, seed});
    }

    std::vector<RunResult> results(tasks.size());
    std::vector<FCN> models(tasks.size());
    std::vector<TrainTrace> traces(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const auto [lr, seed] = tasks[i];
            const auto& [ds_train, ds_test] = data_by_seed.at(seed);
            Rng init_rng = substream(seed, kSeedTagInit);
            FCN f = init_fcn(cfg.full_widths(), init_rng);
            TrainConfig tc = cfg.base;
            tc.lr = lr;
            tc.seed = seed;
            TrainTrace trace = train(f, ds_train, ds_test, tc);

            RunResult res;
            res.lr = lr;
            res.seed = seed;
            res.converged = trace.converged;
            res.diverged = trace.diverged;
            res.steps_to_convergence = trace.steps_to_convergence;
            res.max_bc_loss_ratio = trace.max_bc_loss_ratio;
            if (!trace.diverged) res.report = compute_metrics_report(f, ds_test, cfg.eval, seed);
            results[i] = std::move(res);
            models[i] = std::move(f);
            traces[i] = std::move(trace);
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, tasks.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult sweep;
    sweep.runs = results;
    sweep.aggregates = aggregate_sweep(sweep.runs, cfg.lr_grid);

    // Per-run artifacts.
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const fs::path dir = out_root / "runs" / run_dir_name(tasks[i].lr, tasks[i].seed);
        fs::create_directories(dir);
        save_trace_file((dir / "trace.jsonl").string(), traces[i]);
        const auto& res = results[i];
        nlohmann::json summary{
            {"lr", res.lr},
            {"seed", res.seed},
            {"converged", res.converged},
            {"diverged", res.diverged},
            {"steps_to_convergence", res.steps_to_convergence},
            {"max_bc_loss_ratio", res.max_bc_loss_ratio},
            {"report", res.diverged ? nlohmann::json(nullptr) : metrics_report_to_json(res.report)},
        };
        std::ofstream os(dir / "summary.json");
        os << summary.dump(2) << "\n";
        if (cfg.write_checkpoints) {
            nlohmann::json meta{
                {"widths", cfg.full_widths()},
                {"lr", res.lr},
                {"seed", res.seed},
                {"eval_samples", cfg.eval.eval_samples},
                {"attribution_samples", cfg.eval.attribution_samples},
                {"ig_steps", cfg.eval.ig_steps},
            };
            save_model_file((dir / "model.bin").string(), models[i], meta);
        }
    }

    // Sweep-level table.
    {
        std::ofstream os(out_root / "sweep_summary.csv");
        if (!os) throw std::runtime_error("run_sweep: cannot write sweep_summary.csv");
        os << "# schema=" << kSweepCsvSchema << "\n";
        const auto& cols = sweep_csv_columns();
        for (std::size_t c = 0; c < cols.size(); ++c) os << cols[c] << (c + 1 < cols.size() ? "," : "\n");
        auto write_row = [&](const std::string& lr, const std::string& seed, const std::string& diverged,
                             const std::string& steps, const std::string& maxbc, const MetricsReport& rep) {
            os << lr << "," << seed << "," << diverged << "," << steps << "," << maxbc;
            for (double v : metrics_report_csv_values(rep)) os << "," << sweep_csv_cell(v);
            os << "\n";
        };
        for (const auto& run : sweep.runs) {
            write_row(format_double(run.lr), std::to_string(run.seed), run.diverged ? "1" : "0",
                      std::to_string(run.steps_to_convergence), format_double(run.max_bc_loss_ratio),
                      run.report);
        }
        for (const auto& agg : sweep.aggregates) {
            if (agg.n_seeds == 0) continue;
            write_row(format_double(agg.lr), "mean", agg.any_diverged ? "1" : "0", "",
                      format_double(agg.mean_max_bc_loss_ratio), agg.mean);
            write_row(format_double(agg.lr), "std", "", "", "", agg.stddev);
        }
    }

    // Aggregates with exclusion flags.
    {
        nlohmann::json aggs = nlohmann::json::array();
        for (const auto& agg : sweep.aggregates) {
            aggs.push_back({
                {"lr", agg.lr},
                {"n_seeds", agg.n_seeds},
                {"any_diverged", agg.any_diverged},
                {"excluded", agg.excluded},
                {"exclusion_reason", agg.exclusion_reason},
                {"mean_max_bc_loss_ratio", agg.mean_max_bc_loss_ratio},
                {"mean", agg.n_seeds > 0 ? metrics_report_to_json(agg.mean) : nlohmann::json(nullptr)},
                {"stddev", agg.n_seeds > 0 ? metrics_report_to_json(agg.stddev) : nlohmann::json(nullptr)},
            });
        }
        std::ofstream os(out_root / "aggregates.json");
        os << aggs.dump(2) << "\n";
    }
    return sweep;
}

} // namespace sclab
