// totr: fit, simulate, rank search, TANOVA tests, benchmarks and experiments.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "totr/errors.hpp"
#include "totr/harness.hpp"
#include "totr/io.hpp"
#include "totr/modelselect.hpp"
#include "totr/parallel.hpp"
#include "totr/random.hpp"
#include "totr/tvn.hpp"
#include "totr/runtime.hpp"

namespace fs = std::filesystem;
using namespace totr;
using namespace totr::harness;

namespace {

constexpr int kOk = 0;
constexpr int kDataError = 1;
constexpr int kNotConverged = 2;

struct Options {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

Config load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    Config c = Config::load(o.config);
    if (o.seed) c.raw["seed"] = *o.seed;
    return c;
}

std::uint64_t config_seed(const Config& c) { return c.raw.value("seed", std::uint64_t{0}); }

fs::path data_path(const Config& c, const std::string& key) {
    const json& d = c.section("data");
    if (!d.contains(key)) throw ConfigError("config needs data." + key);
    return c.resolve(d.at(key).get<std::string>());
}

void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << "\n"; }

void print_summary(const ToTRFit& f) {
    std::cout << format_name(f.format()) << " fit: loglik " << io::format_double(f.loglik()) << ", sigma2 "
              << io::format_double(f.sigma2) << ", " << f.iterations << " iterations"
              << (f.converged ? "" : " (not converged)") << "\n";
    for (const auto& w : f.warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_fit(const Options& o) {
    const Config cfg = load_config(o);
    const DenseTensor x = io::read_tensor(data_path(cfg, "x"));
    const DenseTensor y = io::read_tensor(data_path(cfg, "y"));
    const ModelShape shape = shape_from_data(x, y);
    const ToTRSpec spec = cfg.model_spec(shape.p());
    const ToTRFit f = fit(spec, x, y);
    write_fit(o.out, f);
    print_summary(f);
    return f.converged ? kOk : kNotConverged;
}

int cmd_simulate(const Options& o) {
    const Config cfg = load_config(o);
    const json& sj = cfg.section("simulate");
    const std::size_t p = sj.contains("response_dims") ? sj.at("response_dims").size() : 2;
    const SimulationConfig sc = SimulationConfig::from_json(sj, cfg.model_spec(p));
    const Dataset ds = simulate(sc, config_seed(cfg));
    write_dataset(o.out, ds);
    std::cout << "wrote " << ds.x.dims().back() << " observations to " << o.out << "\n";
    return kOk;
}

RankGrid parse_grid(const json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("rank_grid must be a nonempty list");
    RankGrid g;
    for (const auto& e : j) {
        if (e.is_number_unsigned()) g.push_back({e.get<std::size_t>()});
        else if (e.is_array()) g.push_back(e.get<std::vector<std::size_t>>());
        else throw ConfigError("rank_grid entries must be integers or lists of integers");
    }
    return g;
}

int cmd_rank_search(const Options& o) {
    const Config cfg = load_config(o);
    const DenseTensor x = io::read_tensor(data_path(cfg, "x"));
    const DenseTensor y = io::read_tensor(data_path(cfg, "y"));
    const ModelShape shape = shape_from_data(x, y);
    const ToTRSpec spec = cfg.model_spec(shape.p());
    if (!cfg.raw.contains("rank_grid")) throw ConfigError("config needs rank_grid");
    const RankGrid grid = parse_grid(cfg.raw.at("rank_grid"));
    const RankSearchResult r = rank_search(spec, grid, x, y, o.jobs);
    fs::create_directories(o.out);
    rank_table(r).write(fs::path(o.out) / "rank_search.csv");
    write_fit(fs::path(o.out) / "best", r.best_fit);
    std::cout << "selected ranks";
    for (auto v : r.table[r.best].ranks) std::cout << " " << v;
    std::cout << " (BIC " << io::format_double(r.table[r.best].bic.bic) << ")\n";
    return kOk;
}

int cmd_tanova(const Options& o) {
    const Config cfg = load_config(o);
    const json& tj = cfg.section("tanova");
    for (const auto& [k, v] : tj.items())
        if (k != "levels" && k != "factor" && k != "replicates" && k != "level")
            throw ConfigError("unknown key '" + k + "' in tanova");
    if (!tj.contains("levels")) throw ConfigError("config needs tanova.levels");
    const Dims levels = tj.at("levels").get<Dims>();
    const std::size_t factor = tj.value("factor", std::size_t{1});
    const std::size_t reps = tj.value("replicates", std::size_t{200});
    const double level = tj.value("level", 0.95);
    if (factor < 1 || factor > levels.size()) throw ConfigError("tanova.factor is out of range");

    const auto labels = read_labels(data_path(cfg, "labels"), levels.size());
    const TanovaDesign design = build_tanova_design(levels, labels);
    for (const auto& w : design.warnings) std::cerr << "warning: " << w << "\n";
    const DenseTensor y = io::read_tensor(data_path(cfg, "y"));
    if (y.order() < 2 || y.dims().back() != design.n())
        throw DimensionError("response sample axis has " + std::to_string(y.dims().back()) + " entries, labels have " +
                             std::to_string(design.n()));
    Dims response(y.dims().begin(), y.dims().end() - 1);
    ToTRSpec spec = cfg.model_spec(response.size());
    if (spec.intercept) std::cerr << "warning: TANOVA fits use cell means; intercept disabled\n";
    spec.intercept = false;

    const WilksTest obs = wilks_test(spec, design, y, factor);
    const TanovaDesign reduced_design = collapse_factor(design, factor);
    const DenseTensor null_mean = predict_stacked(obs.reduced.coeff, reduced_design.x);
    const TvnParams noise{DenseTensor(response), obs.reduced.scales, obs.reduced.sigma2};

    std::vector<double> values;
    auto replicate = [&](std::uint64_t s) {
        Rng rng(s);
        const DenseTensor yb = null_mean + sample_stacked(noise, design.n(), rng);
        ToTRSpec sb = spec;
        sb.seed = s;
        return wilks_test(sb, design, yb, factor).lambda;
    };
    const double q = wilks_mc_quantile(replicate, reps, level, derive_seed(spec.seed, 99), o.jobs, &values);
    const double critical = sample_quantile(values, 1.0 - level);
    std::size_t below = 0;
    for (double v : values)
        if (v <= obs.lambda) ++below;
    const double p_value = (1.0 + static_cast<double>(below)) / (1.0 + static_cast<double>(values.size()));

    fs::create_directories(o.out);
    io::CsvTable t({"factor", "lambda", "level", "mc_quantile", "critical_value", "p_value", "replicates"});
    t.row().add(factor).add(obs.lambda).add(level).add(q).add(critical).add(p_value).add(reps);
    t.write(fs::path(o.out) / "tanova.csv");
    io::CsvTable mc({"replicate", "lambda"});
    for (std::size_t b = 0; b < values.size(); ++b) mc.row().add(b).add(values[b]);
    mc.write(fs::path(o.out) / "tanova_mc.csv");
    write_fit(fs::path(o.out) / "full", obs.full);
    write_fit(fs::path(o.out) / "reduced", obs.reduced);
    std::cout << "Lambda " << io::format_double(obs.lambda) << ", critical value " << io::format_double(critical)
              << ", p-value " << io::format_double(p_value) << "\n";
    return (obs.full.converged && obs.reduced.converged) ? kOk : kNotConverged;
}

int cmd_bench(const Options& o) {
    const Config cfg = load_config(o);
    BenchConfig bc = BenchConfig::from_json(cfg.section("bench"));
    if (o.seed) bc.seed = *o.seed;
    const auto rows = run_bench(bc);
    fs::create_directories(o.out);
    bench_table(rows).write(fs::path(o.out) / "bench.csv");
    const double sn = loglog_slope(rows, "n");
    json slopes{{"slope_n", sn}};
    std::cout << "log-log slope vs n: " << io::format_double(sn) << "\n";
    if (!bc.m1s.empty()) {
        const double sm = loglog_slope(rows, "m1");
        slopes["slope_m1"] = sm;
        std::cout << "log-log slope vs m1: " << io::format_double(sm) << "\n";
    }
    write_json(fs::path(o.out) / "slopes.json", slopes);
    return kOk;
}

int cmd_experiment(const Options& o, const std::string& which) {
    json section = json::object();
    if (!o.config.empty()) section = load_config(o).section("experiment");
    fs::create_directories(o.out);
    if (which == "consistency") {
        ConsistencyConfig cc = ConsistencyConfig::from_json(section);
        if (o.seed) cc.seed = *o.seed;
        const auto rows = run_consistency(cc, o.jobs);
        consistency_table(rows).write(fs::path(o.out) / "consistency.csv");
        consistency_medians(rows).write(fs::path(o.out) / "consistency_medians.csv");
        std::string report;
        const bool ok = consistency_trend(rows, &report);
        std::cout << report << (ok ? "trend holds" : "trend violated") << "\n";
        std::size_t failed = 0;
        for (const auto& r : rows) failed += r.converged ? 0 : 1;
        return failed == 0 ? kOk : kNotConverged;
    }
    if (which == "wilks") {
        WilksConfig wc = WilksConfig::from_json(section);
        if (o.seed) wc.seed = *o.seed;
        const auto rows = run_wilks_experiment(wc, o.jobs);
        wilks_table(rows).write(fs::path(o.out) / "wilks.csv");
        std::string report;
        const bool ok = wilks_trend(rows, &report);
        std::cout << report << (ok ? "trend holds" : "trend violated") << "\n";
        return kOk;
    }
    throw ConfigError("unknown experiment '" + which + "' (consistency|wilks)");
}

}  // namespace

int main(int argc, char** argv) {
    totr::configure_allocator();
    CLI::App app{"Tensor-on-tensor regression and TANOVA"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", o.seed, "seed overriding the config");
        sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    };
    auto* fit_cmd = app.add_subcommand("fit", "fit a ToTR model");
    auto* sim_cmd = app.add_subcommand("simulate", "generate a dataset from a low-rank truth");
    auto* rank_cmd = app.add_subcommand("rank-search", "BIC search over a rank grid");
    auto* tanova_cmd = app.add_subcommand("tanova", "Wilks test for a TANOVA factor");
    auto* bench_cmd = app.add_subcommand("bench", "timing versus n and m1");
    auto* exp_cmd = app.add_subcommand("experiment", "simulation studies");
    std::string which;
    exp_cmd->add_option("name", which, "consistency | wilks")->required()->check(CLI::IsMember({"consistency", "wilks"}));
    for (auto* s : {fit_cmd, sim_cmd, rank_cmd, tanova_cmd, bench_cmd, exp_cmd}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kDataError;
    }

    try {
        if (*fit_cmd) return cmd_fit(o);
        if (*sim_cmd) return cmd_simulate(o);
        if (*rank_cmd) return cmd_rank_search(o);
        if (*tanova_cmd) return cmd_tanova(o);
        if (*bench_cmd) return cmd_bench(o);
        if (*exp_cmd) return cmd_experiment(o, which);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kDataError;
}
