#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "totr/estimation.hpp"
#include "totr/io.hpp"
#include "totr/modelselect.hpp"
#include "totr/random.hpp"

namespace totr::harness {

using nlohmann::json;

/// JSON experiment configuration. Relative paths resolve against the directory
/// of the config file.
struct Config {
    json raw = json::object();
    std::filesystem::path base_dir = ".";

    static Config load(const std::filesystem::path& path);
    static Config parse(const std::string& text, const std::filesystem::path& base_dir = ".");

    /// Model keys: format, ranks, scale_models, intercept, max_iter, tol_loglik,
    /// tol_norm, seed, allow_rank_deficient.
    ToTRSpec model_spec(std::size_t p) const;
    std::filesystem::path resolve(const std::string& path) const;
    const json& section(const std::string& name) const;  // empty object when absent
};

/// scale_models may be one name for every mode or a list with one per mode.
std::vector<ScaleModel> parse_scale_models(const json& value, std::size_t p);

struct SimulationConfig {
    std::string design = "gaussian";  // gaussian | tanova
    Dims covariate{4, 5};
    Dims response{6, 7};
    std::size_t n = 100;         // gaussian design
    std::size_t per_cell = 5;    // tanova design, cells = prod(covariate)
    double sigma2 = 1.0;
    std::string scales = "identity";  // wishart | ar1 | equicorr | identity
    std::vector<double> rho;          // per mode for ar1 / equicorr
    Format truth_format = Format::cp;
    std::vector<std::size_t> truth_ranks{2};
    double truth_scale = 1.0;
    bool intercept = false;

    static SimulationConfig from_json(const json& j, const ToTRSpec& model);
};

struct Dataset {
    DenseTensor x;  // (h..., n)
    DenseTensor y;  // (m..., n)
    LowRankCoeff truth;
    DenseTensor intercept;
    std::vector<Matrix> scales;
    double sigma2 = 1.0;
    std::optional<TanovaDesign> design;
};

/// Multiplies the coefficient tensor by s.
void scale_coeff(LowRankCoeff& c, double s);
/// Scale matrices with unit (1,1) entry: Wishart W_m(m, I) draws divided by their
/// (1,1) entry, AR(1), equicorrelation or identity.
std::vector<Matrix> draw_scales(const std::string& kind, const Dims& response, const std::vector<double>& rho, Rng& rng);
Dataset simulate(const SimulationConfig& cfg, std::uint64_t seed);
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// coeff/, intercept.dten, SigmaK.dten, loglik_trace.csv, block_timings.csv, summary.json.
void write_fit(const std::filesystem::path& dir, const ToTRFit& fit);
json fit_summary(const ToTRFit& fit);

/// Labels file: one row per observation, one-based level per factor. Reading
/// returns zero-based levels; writing expects them one-based.
std::vector<std::vector<std::size_t>> read_labels(const std::filesystem::path& path, std::size_t factors);
void write_labels(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& labels);

io::CsvTable rank_table(const RankSearchResult& r);

// ------------------------------------------------------------ consistency

struct ModelChoice {
    Format format;
    std::vector<std::size_t> ranks;
};

struct ConsistencyConfig {
    Dims covariate{4, 5};
    Dims response{6, 7};
    std::vector<std::size_t> ns{20, 80, 140, 200, 260};
    std::size_t replicates = 20;
    double sigma2 = 1.0;
    std::vector<ModelChoice> models{{Format::tucker, {2, 2, 2, 2}}, {Format::cp, {2}}, {Format::tr, {2, 2, 2, 2}}, {Format::op, {}}};
    std::uint64_t seed = 2024;
    int max_iter = 500;

    static ConsistencyConfig from_json(const json& j);
};

struct ConsistencyRow {
    Format format;
    std::size_t n = 0;
    std::size_t replicate = 0;
    double err_coeff = 0.0;
    double err_sigma2 = 0.0;
    std::vector<double> err_scales;
    bool converged = false;
};

std::vector<ConsistencyRow> run_consistency(const ConsistencyConfig& cfg, std::size_t jobs = 1);
io::CsvTable consistency_table(const std::vector<ConsistencyRow>& rows);
/// Median error columns per (format, n).
io::CsvTable consistency_medians(const std::vector<ConsistencyRow>& rows);
/// True when every median error is strictly smaller at the largest n than at the
/// smallest n, for every format. `report` lists the comparisons.
bool consistency_trend(const std::vector<ConsistencyRow>& rows, std::string* report = nullptr);

// ------------------------------------------------------------ wilks

struct WilksConfig {
    Dims levels{2, 2};
    Dims response{12, 14};
    std::size_t per_cell = 50;
    std::vector<double> sigmas{2, 4, 6, 8, 10};
    std::size_t replicates = 200;
    double level = 0.95;
    std::size_t truth_rank = 5;
    double amplitude = 3.0;
    std::vector<double> rho{0.1, -0.1};
    std::vector<ModelChoice> models{
        {Format::cp, {5}}, {Format::tucker, {2, 2, 5, 5}}, {Format::tr, {2, 2, 3, 3}}, {Format::op, {}}};
    bool include_true_null = true;
    std::uint64_t seed = 7;
    int max_iter = 200;

    static WilksConfig from_json(const json& j);
};

/// Smooth CP truth: bump-shaped response factors; under a true null the first
/// covariate factor is constant so all its levels share one mean.
CpCoeff smooth_cp_truth(const WilksConfig& cfg, bool null_true, std::uint64_t seed);

struct WilksRow {
    Format format;
    double sigma = 0.0;
    bool null_true = false;
    double quantile = 0.0;
    double median = 0.0;
    std::size_t replicates = 0;
};

std::vector<WilksRow> run_wilks_experiment(const WilksConfig& cfg, std::size_t jobs = 1);
io::CsvTable wilks_table(const std::vector<WilksRow>& rows);
/// Quantiles strictly increase in sigma under the false null for every format,
/// and the non-OP formats stay at or below OP at every sigma.
bool wilks_trend(const std::vector<WilksRow>& rows, std::string* report = nullptr);

// ------------------------------------------------------------ bench

struct BenchConfig {
    ModelChoice model{Format::cp, {2}};
    Dims covariate{4, 5};
    Dims response{30, 30};
    std::vector<std::size_t> ns{50, 100, 200, 400};
    std::vector<std::size_t> m1s{10, 20, 40, 80};
    std::size_t fixed_n = 100;
    int iterations = 5;
    std::size_t repeats = 3;
    std::uint64_t seed = 11;

    static BenchConfig from_json(const json& j);
};

struct BenchRow {
    std::string axis;  // n | m1
    std::size_t value = 0;
    double seconds = 0.0;  // best of repeats, whole fit
    std::map<std::string, double> blocks;
};

std::vector<BenchRow> run_bench(const BenchConfig& cfg, bool include_m1 = true);
/// Least-squares slope of log(seconds) on log(value) for one axis.
double loglog_slope(const std::vector<BenchRow>& rows, const std::string& axis);
io::CsvTable bench_table(const std::vector<BenchRow>& rows);

}  // namespace totr::harness
