// sclab command-line runner: dataset generation, single training runs,
// LR sweeps, checkpoint evaluation, and the closed-form oracles.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sclab/serialize.hpp"
#include "sclab/stats.hpp"
#include "sclab/sweep.hpp"
#include "sclab/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return j;
}

sclab::DatasetSpec parse_dataset_spec(const json& j) {
    sclab::DatasetSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "parity") {
        sclab::ParityConfig cfg;
        cfg.core_bits = j.value("core_bits", cfg.core_bits);
        cfg.spurious_bits = j.value("spurious_bits", cfg.spurious_bits);
        cfg.noise_bits = j.value("noise_bits", cfg.noise_bits);
        cfg.n_samples = j.value("n_train", cfg.n_samples);
        cfg.rho = j.value("rho_train", cfg.rho);
        cfg.validate();
        spec.config = cfg;
    } else if (kind == "moon_star") {
        sclab::MoonStarConfig cfg;
        cfg.image_side = j.value("image_side", cfg.image_side);
        cfg.n_samples = j.value("n_train", cfg.n_samples);
        cfg.rho = j.value("rho_train", cfg.rho);
        cfg.validate();
        spec.config = cfg;
    } else {
        throw std::runtime_error("unknown dataset kind: " + kind);
    }
    spec.test_rho = j.value("rho_test", 0.5);
    spec.n_test = j.value("n_test", std::size_t{10000});
    return spec;
}

sclab::TrainConfig parse_train_config(const json& j) {
    sclab::TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.l1 = j.value("l1", cfg.l1);
    cfg.l2 = j.value("l2", cfg.l2);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("anneal") && !j.at("anneal").is_null()) {
        sclab::AnnealSpec a;
        a.step = j.at("anneal").at("step").get<std::size_t>();
        a.factor = j.at("anneal").at("factor").get<double>();
        cfg.anneal = a;
    }
    return cfg;
}

sclab::EvalParams parse_eval_params(const json& j) {
    sclab::EvalParams p;
    p.eval_samples = j.value("eval_samples", p.eval_samples);
    p.attribution_samples = j.value("attribution_samples", p.attribution_samples);
    p.ig_steps = j.value("ig_steps", p.ig_steps);
    const std::string method = j.value("prune_method", std::string("structured_neuron"));
    if (method == "structured_neuron") {
        p.prune_method = sclab::PruneMethod::structured_neuron;
    } else if (method == "magnitude") {
        p.prune_method = sclab::PruneMethod::magnitude;
    } else {
        throw std::runtime_error("unknown prune_method: " + method);
    }
    return p;
}

sclab::SweepConfig parse_sweep_config(const json& j) {
    sclab::SweepConfig cfg;
    cfg.dataset = parse_dataset_spec(j.at("dataset"));
    if (j.contains("hidden_widths")) cfg.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    cfg.lr_grid = j.at("lr_grid").get<std::vector<double>>();
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("train")) cfg.base = parse_train_config(j.at("train"));
    if (j.contains("eval")) cfg.eval = parse_eval_params(j.at("eval"));
    cfg.output_dir = j.value("output_dir", std::string());
    cfg.workers = j.value("workers", std::size_t{1});
    return cfg;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    if (out.empty()) throw std::runtime_error("empty numeric list: " + csv);
    return out;
}

int cmd_generate(const std::string& kind, std::size_t n, double rho, std::uint64_t seed,
                 const std::string& stream, const std::string& out, std::size_t core_bits,
                 std::size_t spurious_bits, std::size_t noise_bits, std::size_t image_side) {
    // --stream train/test applies the documented sub-seed tag, reproducing
    // exactly the datasets a run or sweep derives from its master seed.
    std::uint64_t effective = seed;
    if (stream == "train") {
        effective ^= sclab::kSeedTagTrainData;
    } else if (stream == "test") {
        effective ^= sclab::kSeedTagTestData;
    } else if (stream != "raw") {
        throw std::runtime_error("unknown stream: " + stream);
    }
    sclab::Rng rng(effective);
    sclab::SCDataset ds;
    if (kind == "parity") {
        sclab::ParityConfig cfg;
        cfg.core_bits = core_bits;
        cfg.spurious_bits = spurious_bits;
        cfg.noise_bits = noise_bits;
        cfg.n_samples = n;
        cfg.rho = rho;
        ds = sclab::gen_parity(cfg, rng);
    } else {
        sclab::MoonStarConfig cfg;
        cfg.image_side = image_side;
        cfg.n_samples = n;
        cfg.rho = rho;
        ds = sclab::gen_moon_star(cfg, rng);
    }
    sclab::save_dataset_file(out + ".bin", ds);
    sclab::save_dataset_csv(out + ".csv", ds);
    std::cout << "wrote " << out << ".bin, " << out << ".csv (n=" << ds.size() << ", d=" << ds.dim()
              << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<double> lr_override,
              std::optional<std::uint64_t> seed_override, const std::string& out_dir) {
    const json j = load_json_file(config_path);
    const auto spec = parse_dataset_spec(j.at("dataset"));
    auto tc = j.contains("train") ? parse_train_config(j.at("train")) : sclab::TrainConfig{};
    const auto eval_params = j.contains("eval") ? parse_eval_params(j.at("eval")) : sclab::EvalParams{};
    std::vector<std::size_t> hidden = j.value("hidden_widths", std::vector<std::size_t>{200, 200});
    if (lr_override) tc.lr = *lr_override;
    if (seed_override) tc.seed = *seed_override;

    const auto ds_train = spec.generate_train(tc.seed);
    const auto ds_test = spec.generate_test(tc.seed);
    std::vector<std::size_t> widths{ds_train.dim()};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(static_cast<std::size_t>(ds_train.num_classes));

    sclab::Rng init_rng = sclab::substream(tc.seed, sclab::kSeedTagInit);
    sclab::FCN f = sclab::init_fcn(widths, init_rng);
    const auto trace = sclab::train(f, ds_train, ds_test, tc);

    fs::create_directories(out_dir);
    sclab::save_trace_file((fs::path(out_dir) / "trace.jsonl").string(), trace);
    json meta{{"widths", widths}, {"lr", tc.lr}, {"seed", tc.seed},
              {"eval_samples", eval_params.eval_samples},
              {"attribution_samples", eval_params.attribution_samples},
              {"ig_steps", eval_params.ig_steps}};
    sclab::save_model_file((fs::path(out_dir) / "model.bin").string(), f, meta);

    json summary{{"lr", tc.lr},
                 {"seed", tc.seed},
                 {"converged", trace.converged},
                 {"diverged", trace.diverged},
                 {"steps_to_convergence", trace.steps_to_convergence},
                 {"max_bc_loss_ratio", trace.max_bc_loss_ratio}};
    if (!trace.diverged) {
        const auto report = sclab::compute_metrics_report(f, ds_test, eval_params, tc.seed);
        summary["report"] = sclab::metrics_report_to_json(report);
    } else {
        summary["report"] = nullptr;
    }
    std::ofstream os(fs::path(out_dir) / "summary.json");
    os << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& dataset_path,
                 std::optional<std::uint64_t> seed, const std::string& stub,
                 const std::string& out_path) {
    const auto ds = sclab::load_dataset_file(dataset_path);
    json result;
    if (!stub.empty()) {
        // Label-oracle predictors; useful for validating dataset semantics.
        std::vector<int> preds;
        if (stub == "spurious") {
            preds = ds.labels_b;
        } else if (stub == "core") {
            preds = ds.labels_y;
        } else {
            throw std::runtime_error("unknown stub predictor: " + stub);
        }
        const auto acc = sclab::accuracy_from_predictions(preds, ds);
        json groups = json::object();
        for (const auto& [key, val] : acc.groups) groups[sclab::group_key_name(key)] = val;
        result = json{{"stub", stub}, {"overall_accuracy", acc.overall}, {"group_accuracies", groups}};
    } else {
        if (model_path.empty()) throw std::runtime_error("evaluate: need --model or --stub-predictor");
        const auto f = sclab::load_model_file(model_path);
        sclab::EvalParams params;
        std::uint64_t eval_seed = 0;
        const std::string meta_path = model_path + ".meta.json";
        if (fs::exists(meta_path)) {
            const json meta = load_json_file(meta_path);
            eval_seed = meta.value("seed", eval_seed);
            params.eval_samples = meta.value("eval_samples", params.eval_samples);
            params.attribution_samples = meta.value("attribution_samples", params.attribution_samples);
            params.ig_steps = meta.value("ig_steps", params.ig_steps);
        }
        if (seed) eval_seed = *seed;
        const auto report = sclab::compute_metrics_report(f, ds, params, eval_seed);
        result = sclab::metrics_report_to_json(report);
    }
    if (!out_path.empty()) {
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot open for writing: " + out_path);
        os << result.dump(2) << "\n";
    }
    std::cout << result.dump(2) << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_override, std::size_t workers_override,
              bool verify_aggregates) {
    auto cfg = parse_sweep_config(load_json_file(config_path));
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (workers_override > 0) cfg.workers = workers_override;
    const auto result = sclab::run_sweep(cfg);
    if (verify_aggregates) {
        const auto recomputed = sclab::aggregate_sweep(result.runs, cfg.lr_grid);
        for (std::size_t i = 0; i < recomputed.size(); ++i) {
            const bool same =
                recomputed[i].excluded == result.aggregates[i].excluded &&
                recomputed[i].mean.test_accuracy_unbiased ==
                    result.aggregates[i].mean.test_accuracy_unbiased &&
                recomputed[i].mean.prunability_mean == result.aggregates[i].mean.prunability_mean;
            if (!same) throw std::runtime_error("aggregate verification failed for lr index " +
                                                std::to_string(i));
        }
        std::cout << "aggregates verified against per-run rows\n";
    }
    std::size_t diverged = 0;
    for (const auto& run : result.runs) diverged += run.diverged ? 1 : 0;
    std::cout << "sweep complete: " << result.runs.size() << " runs (" << diverged << " diverged), results in "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_oracle_prop1(double alpha, double beta, std::size_t nbc, std::size_t nba, const std::string& ks,
                     const std::string& fmt) {
    const sclab::MarginBatch batch{nbc, nba, alpha, beta};
    const auto grid = parse_double_list(ks);
    if (fmt == "csv") std::cout << "k,exact,asymptote,ratio\n";
    for (double k : grid) {
        const auto res = sclab::prop1_ratio(batch, k);
        const double ratio = res.asymptote > 0.0 ? res.exact_ratio / res.asymptote
                                                 : std::numeric_limits<double>::quiet_NaN();
        if (fmt == "csv") {
            std::cout << sclab::format_double(k) << "," << sclab::format_double(res.exact_ratio) << ","
                      << sclab::format_double(res.asymptote) << "," << sclab::format_double(ratio) << "\n";
        } else {
            std::cout << json{{"k", k},
                              {"exact", res.exact_ratio},
                              {"asymptote", res.asymptote},
                              {"ratio", ratio}}
                             .dump()
                      << "\n";
        }
    }
    return 0;
}

int cmd_oracle_prop2(double alpha, double beta, std::size_t nbc, std::size_t nba, const std::string& ks,
                     const std::string& fmt) {
    const sclab::BiasDecomposableToy toy(alpha, beta);
    const auto grid = parse_double_list(ks);
    if (fmt == "csv") std::cout << "k,ratio\n";
    for (double k : grid) {
        const double r = sclab::prop2_gradient_ratio(toy, nbc, nba, k);
        if (fmt == "csv") {
            std::cout << sclab::format_double(k) << "," << sclab::format_double(r) << "\n";
        } else {
            std::cout << json{{"k", k}, {"ratio", r}}.dump() << "\n";
        }
    }
    if (grid.size() >= 2) {
        const double slope = sclab::prop2_fitted_exponent(toy, nbc, nba, grid);
        if (fmt == "csv") {
            std::cout << "# fitted_exponent=" << sclab::format_double(slope) << "\n";
        } else {
            std::cout << json{{"fitted_exponent", slope}}.dump() << "\n";
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spurious-correlation robustness and compressibility experiments"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset (binary + CSV)");
    std::string gen_kind;
    std::size_t gen_n = 10000, gen_core = 6, gen_spur = 2, gen_noise = 8, gen_side = 20;
    double gen_rho = 0.1;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "dataset";
    std::string gen_stream = "raw";
    gen->add_option("kind", gen_kind, "parity | moon_star")->required()
        ->check(CLI::IsMember({"parity", "moon_star"}));
    gen->add_option("--n", gen_n, "sample count");
    gen->add_option("--rho", gen_rho, "bias-conflicting fraction");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--stream", gen_stream, "raw | train | test (sub-seed tag to apply)")
        ->check(CLI::IsMember({"raw", "train", "test"}));
    gen->add_option("--out", gen_out, "output path prefix");
    gen->add_option("--core-bits", gen_core, "parity: core block width");
    gen->add_option("--spurious-bits", gen_spur, "parity: spurious block width");
    gen->add_option("--noise-bits", gen_noise, "parity: noise block width");
    gen->add_option("--image-side", gen_side, "moon_star: image side in pixels");

    // train
    auto* tr = app.add_subcommand("train", "run one training configuration");
    std::string tr_config, tr_out = "run";
    double tr_lr = -1.0;
    std::int64_t tr_seed = -1;
    tr->add_option("--config", tr_config, "JSON config file")->required();
    tr->add_option("--lr", tr_lr, "override learning rate");
    tr->add_option("--seed", tr_seed, "override master seed");
    tr->add_option("--out", tr_out, "output directory");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "recompute the metrics report for a checkpoint");
    std::string ev_model, ev_dataset, ev_stub, ev_out;
    std::int64_t ev_seed = -1;
    ev->add_option("--model", ev_model, "model checkpoint (.bin)");
    ev->add_option("--dataset", ev_dataset, "dataset container (.bin)")->required();
    ev->add_option("--seed", ev_seed, "override the eval sampling seed");
    ev->add_option("--stub-predictor", ev_stub, "label-oracle predictor: spurious | core");
    ev->add_option("--out", ev_out, "also write the report to this file");

    // sweep
    auto* sw = app.add_subcommand("sweep", "run an LR x seed sweep from a config file");
    std::string sw_config, sw_out;
    std::size_t sw_workers = 0;
    bool sw_verify = false;
    sw->add_option("--config", sw_config, "JSON config file")->required();
    sw->add_option("--out", sw_out, "override output directory");
    sw->add_option("--workers", sw_workers, "override worker count");
    sw->add_flag("--verify-aggregates", sw_verify, "recompute aggregates from run rows and compare");

    // oracle
    auto* orc = app.add_subcommand("oracle", "closed-form loss/gradient scaling oracles");
    orc->require_subcommand(1);
    std::string orc_fmt = "csv";
    orc->add_option("--format", orc_fmt, "csv | jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    auto* p1 = orc->add_subcommand("prop1", "BC/BA loss ratio vs logit scale");
    auto* p2 = orc->add_subcommand("prop2", "spurious/core gradient norm ratio vs logit scale");
    double o_alpha = 1.0, o_beta = 1.0;
    std::size_t o_nbc = 1, o_nba = 9;
    std::string o_k = "0,10,20,30,40";
    for (auto* sub : {p1, p2}) {
        sub->add_option("--alpha", o_alpha, "bias-aligned margin");
        sub->add_option("--beta", o_beta, "bias-conflicting margin");
        sub->add_option("--nbc", o_nbc, "bias-conflicting count");
        sub->add_option("--nba", o_nba, "bias-aligned count");
        sub->add_option("--k", o_k, "comma-separated logit scales");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            return cmd_generate(gen_kind, gen_n, gen_rho, gen_seed, gen_stream, gen_out, gen_core,
                                gen_spur, gen_noise, gen_side);
        }
        if (*tr) {
            return cmd_train(tr_config,
                             tr_lr >= 0.0 ? std::optional<double>(tr_lr) : std::nullopt,
                             tr_seed >= 0 ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(tr_seed))
                                          : std::nullopt,
                             tr_out);
        }
        if (*ev) {
            return cmd_evaluate(ev_model, ev_dataset,
                                ev_seed >= 0 ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(ev_seed))
                                             : std::nullopt,
                                ev_stub, ev_out);
        }
        if (*sw) return cmd_sweep(sw_config, sw_out, sw_workers, sw_verify);
        if (*orc) {
            if (*p1) return cmd_oracle_prop1(o_alpha, o_beta, o_nbc, o_nba, o_k, orc_fmt);
            if (*p2) return cmd_oracle_prop2(o_alpha, o_beta, o_nbc, o_nba, o_k, orc_fmt);
        }
        throw std::runtime_error("no subcommand selected");
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
}
