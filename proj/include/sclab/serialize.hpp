#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sclab/dataset.hpp"
#include "sclab/metrics.hpp"
#include "sclab/model.hpp"
#include "sclab/train.hpp"

namespace sclab {

static_assert(std::endian::native == std::endian::little,
              "binary containers are written little-endian");

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr const char* kSweepCsvSchema = "sclab.sweep.v1";

/// Shortest round-trip decimal representation; used for all CSV floats so
/// identical values always serialize to identical bytes.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("binary read failed (truncated file?)");
    return v;
}

inline void write_index_list(std::ostream& os, const std::vector<std::size_t>& v) {
    write_pod<std::uint64_t>(os, v.size());
    for (std::size_t i : v) write_pod<std::uint64_t>(os, i);
}

inline std::vector<std::size_t> read_index_list(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    std::vector<std::size_t> v(n);
    for (auto& i : v) i = read_pod<std::uint64_t>(is);
    return v;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dataset container: "SCDS" magic, version, shape, labels, masks, row-major
// float64 inputs. Little-endian throughout.

inline void save_dataset(std::ostream& os, const SCDataset& ds) {
    os.write("SCDS", 4);
    detail::write_pod<std::uint32_t>(os, kDatasetFormatVersion);
    detail::write_pod<std::uint64_t>(os, ds.size());
    detail::write_pod<std::uint64_t>(os, ds.dim());
    detail::write_pod<std::int32_t>(os, ds.num_classes);
    detail::write_pod<double>(os, ds.rho);
    detail::write_index_list(os, ds.core_mask);
    detail::write_index_list(os, ds.spurious_mask);
    detail::write_index_list(os, ds.noise_mask);
    for (int y : ds.labels_y) detail::write_pod<std::int32_t>(os, y);
    for (int b : ds.labels_b) detail::write_pod<std::int32_t>(os, b);
    const auto vals = ds.inputs.values();
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
    if (!os) throw std::runtime_error("save_dataset: write failed");
}

inline SCDataset load_dataset(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SCDS", 4) != 0) throw std::runtime_error("load_dataset: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kDatasetFormatVersion) {
        throw std::runtime_error("load_dataset: unsupported version " + std::to_string(version));
    }
    const auto n = detail::read_pod<std::uint64_t>(is);
    const auto d = detail::read_pod<std::uint64_t>(is);
    SCDataset ds;
    ds.num_classes = detail::read_pod<std::int32_t>(is);
    ds.rho = detail::read_pod<double>(is);
    ds.core_mask = detail::read_index_list(is);
    ds.spurious_mask = detail::read_index_list(is);
    ds.noise_mask = detail::read_index_list(is);
    ds.labels_y.resize(n);
    for (auto& y : ds.labels_y) y = detail::read_pod<std::int32_t>(is);
    ds.labels_b.resize(n);
    for (auto& b : ds.labels_b) b = detail::read_pod<std::int32_t>(is);
    std::vector<double> vals(n * d);
    is.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_dataset: truncated input block");
    ds.inputs = Matrix(n, d, std::move(vals));
    return ds;
}

inline void save_dataset_file(const std::string& path, const SCDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_dataset(os, ds);
}

inline SCDataset load_dataset_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return load_dataset(is);
}

/// One row per sample (feature columns, then y and b); mask metadata goes to
/// a JSON sidecar next to the CSV.
inline void save_dataset_csv(const std::string& path, const SCDataset& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t j = 0; j < ds.dim(); ++j) os << "f" << j << ",";
    os << "y,b\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double* row = ds.inputs.row(i);
        for (std::size_t j = 0; j < ds.dim(); ++j) os << format_double(row[j]) << ",";
        os << ds.labels_y[i] << "," << ds.labels_b[i] << "\n";
    }
    nlohmann::json sidecar{
        {"rho", ds.rho},
        {"num_classes", ds.num_classes},
        {"core_mask", ds.core_mask},
        {"spurious_mask", ds.spurious_mask},
        {"noise_mask", ds.noise_mask},
    };
    std::ofstream meta(path + ".meta.json");
    if (!meta) throw std::runtime_error("cannot open for writing: " + path + ".meta.json");
    meta << sidecar.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Model checkpoint: "SCNW" magic, version, widths header, then one row-major
// float64 block per layer. Metadata travels in a JSON sidecar.

inline void save_model(std::ostream& os, const FCN& f) {
    os.write("SCNW", 4);
    detail::write_pod<std::uint32_t>(os, kModelFormatVersion);
    detail::write_pod<std::uint64_t>(os, f.widths.size());
    for (std::size_t w : f.widths) detail::write_pod<std::uint64_t>(os, w);
    for (const auto& w : f.weights) {
        const auto vals = w.values();
        os.write(reinterpret_cast<const char*>(vals.data()),
                 static_cast<std::streamsize>(vals.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_model: write failed");
}

inline FCN load_model(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SCNW", 4) != 0) throw std::runtime_error("load_model: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kModelFormatVersion) {
        throw std::runtime_error("load_model: unsupported version " + std::to_string(version));
    }
    const auto nw = detail::read_pod<std::uint64_t>(is);
    if (nw < 2) throw std::runtime_error("load_model: invalid widths header");
    FCN f;
    f.widths.resize(nw);
    for (auto& w : f.widths) w = detail::read_pod<std::uint64_t>(is);
    for (std::size_t l = 0; l + 1 < nw; ++l) {
        std::vector<double> vals(f.widths[l + 1] * f.widths[l]);
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!is) throw std::runtime_error("load_model: truncated weight block");
        f.weights.emplace_back(f.widths[l + 1], f.widths[l], std::move(vals));
    }
    return f;
}

inline void save_model_file(const std::string& path, const FCN& f, const nlohmann::json& metadata) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_model(os, f);
    std::ofstream meta(path + ".meta.json");
    if (!meta) throw std::runtime_error("cannot open for writing: " + path + ".meta.json");
    meta << metadata.dump(2) << "\n";
}

inline FCN load_model_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return load_model(is);
}

// ---------------------------------------------------------------------------
// Training trace as JSON lines: one object per logged step, summary object
// on the final line.

inline nlohmann::json trace_row_to_json(const TraceRow& r) {
    return {
        {"step", r.step},
        {"train_accuracy", r.train_accuracy},
        {"mean_minibatch_loss", r.mean_minibatch_loss},
        {"bc_loss_ratio", r.bc_loss_ratio},
        {"param_frobenius_norm", r.param_frobenius_norm},
        {"mean_max_logit", r.mean_max_logit},
        {"unbiased_test_accuracy", r.unbiased_test_accuracy},
    };
}

inline std::string trace_to_jsonl(const TrainTrace& t) {
    std::ostringstream os;
    for (const auto& r : t.rows) os << trace_row_to_json(r).dump() << "\n";
    const nlohmann::json summary{
        {"summary", true},
        {"converged", t.converged},
        {"diverged", t.diverged},
        {"steps_to_convergence", t.steps_to_convergence},
        {"max_bc_loss_ratio", t.max_bc_loss_ratio},
    };
    os << summary.dump() << "\n";
    return os.str();
}

inline void save_trace_file(const std::string& path, const TrainTrace& t) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << trace_to_jsonl(t);
}

// ---------------------------------------------------------------------------
// MetricsReport <-> JSON. Group keys flatten to "y<class>_<ba|bc>"; unset
// attribution shares serialize as null.

inline std::string group_key_name(const std::pair<int, bool>& key) {
    return "y" + std::to_string(key.first) + (key.second ? "_bc" : "_ba");
}

inline nlohmann::json metrics_report_to_json(const MetricsReport& r) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [key, acc] : r.group_accuracies) groups[group_key_name(key)] = acc;
    auto share = [](double v) {
        return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
    };
    return {
        {"test_accuracy_unbiased", r.test_accuracy_unbiased},
        {"group_accuracies", groups},
        {"prunability_mean", r.prunability_mean},
        {"prunability_clipped", r.prunability_clipped},
        {"activation_compressibility", r.activation_compressibility},
        {"activation_sparsity", r.activation_sparsity},
        {"avg_csi", r.avg_csi},
        {"avg_bsi", r.avg_bsi},
        {"dead_neurons", r.dead_neurons},
        {"class_separation_r2", r.class_separation_r2},
        {"attribution_core_share", share(r.attribution_core_share)},
        {"attribution_spurious_share", share(r.attribution_spurious_share)},
        {"attribution_noise_share", share(r.attribution_noise_share)},
        {"attribution_entropy", r.attribution_entropy},
    };
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.test_accuracy_unbiased = j.at("test_accuracy_unbiased").get<double>();
    for (const auto& [name, val] : j.at("group_accuracies").items()) {
        // "y<k>_<ba|bc>"
        const auto us = name.rfind('_');
        const int cls = std::stoi(name.substr(1, us - 1));
        const bool bc = name.substr(us + 1) == "bc";
        r.group_accuracies[{cls, bc}] = val.get<double>();
    }
    r.prunability_mean = j.at("prunability_mean").get<double>();
    r.prunability_clipped = j.at("prunability_clipped").get<bool>();
    r.activation_compressibility = j.at("activation_compressibility").get<double>();
    r.activation_sparsity = j.at("activation_sparsity").get<double>();
    r.avg_csi = j.at("avg_csi").get<double>();
    r.avg_bsi = j.at("avg_bsi").get<double>();
    r.dead_neurons = j.at("dead_neurons").get<std::size_t>();
    r.class_separation_r2 = j.at("class_separation_r2").get<double>();
    auto share = [&](const char* name) {
        const auto& v = j.at(name);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    r.attribution_core_share = share("attribution_core_share");
    r.attribution_spurious_share = share("attribution_spurious_share");
    r.attribution_noise_share = share("attribution_noise_share");
    r.attribution_entropy = j.at("attribution_entropy").get<double>();
    return r;
}

// ---------------------------------------------------------------------------
// Sweep summary CSV. Fixed column contract (binary classification):
// lr,seed,diverged,steps_to_convergence,max_bc_loss_ratio followed by the
// MetricsReport fields. Aggregate rows reuse the layout with seed = "mean" /
// "std". The schema version is stamped as a leading comment line.

inline const std::vector<std::string>& sweep_csv_columns() {
    static const std::vector<std::string> cols = {
        "lr", "seed", "diverged", "steps_to_convergence", "max_bc_loss_ratio",
        "test_accuracy_unbiased", "acc_y0_ba", "acc_y0_bc", "acc_y1_ba", "acc_y1_bc",
        "prunability_mean", "prunability_clipped", "activation_compressibility",
        "activation_sparsity", "avg_csi", "avg_bsi", "dead_neurons", "class_separation_r2",
        "attribution_core_share", "attribution_spurious_share", "attribution_noise_share",
        "attribution_entropy"};
    return cols;
}

/// The report's numeric fields in CSV column order (entries after the first
/// five columns). NaN renders as an empty cell.
inline std::vector<double> metrics_report_csv_values(const MetricsReport& r) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto group = [&](int cls, bool bc) {
        const auto it = r.group_accuracies.find({cls, bc});
        return it == r.group_accuracies.end() ? nan : it->second;
    };
    return {
        r.test_accuracy_unbiased,
        group(0, false), group(0, true), group(1, false), group(1, true),
        r.prunability_mean,
        r.prunability_clipped ? 1.0 : 0.0,
        r.activation_compressibility,
        r.activation_sparsity,
        r.avg_csi,
        r.avg_bsi,
        static_cast<double>(r.dead_neurons),
        r.class_separation_r2,
        r.attribution_core_share,
        r.attribution_spurious_share,
        r.attribution_noise_share,
        r.attribution_entropy,
    };
}

inline std::string sweep_csv_cell(double v) {
    return std::isnan(v) ? std::string() : format_double(v);
}

} // namespace sclab
