#include "totr/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "totr/covariance.hpp"
#include "totr/errors.hpp"
#include "totr/parallel.hpp"
#include "totr/random.hpp"
#include "totr/tvn.hpp"

namespace totr::harness {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kTopLevelKeys{"format",    "ranks", "scale_models", "intercept", "max_iter",
                                          "tol_loglik", "tol_norm", "seed", "allow_rank_deficient", "data",
                                          "simulate",  "rank_grid", "tanova", "bench", "experiment"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + key + "' has the wrong type");
    }
}

std::vector<std::size_t> size_list(const json& j, const std::string& key, std::vector<std::size_t> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array()) throw ConfigError("key '" + key + "' must be a list of non-negative integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<long long>() < 0)
            throw ConfigError("key '" + key + "' must be a list of non-negative integers");
        out.push_back(e.get<std::size_t>());
    }
    return out;
}

std::vector<double> double_list(const json& j, const std::string& key, std::vector<double> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw ConfigError("key '" + key + "' must be a number or a list of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError("key '" + key + "' must be a list of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

std::vector<ModelChoice> model_list(const json& j, const std::string& key, std::vector<ModelChoice> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array()) throw ConfigError("key '" + key + "' must be a list of {format, ranks} objects");
    std::vector<ModelChoice> out;
    for (const auto& e : v) {
        check_keys(e, {"format", "ranks"}, key);
        if (!e.contains("format")) throw ConfigError("every entry of '" + key + "' needs a format");
        out.push_back({parse_format(e.at("format").get<std::string>()), size_list(e, "ranks", {})});
    }
    return out;
}

std::string join(const std::vector<std::size_t>& v, const std::string& sep = " ") {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? sep : "") << v[i];
    return os.str();
}

double median(std::vector<double> v) { return sample_quantile(std::move(v), 0.5); }

using Clock = std::chrono::steady_clock;

}  // namespace

Config Config::parse(const std::string& text, const fs::path& base_dir) {
    Config c;
    try {
        c.raw = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(c.raw, kTopLevelKeys, "config");
    c.base_dir = base_dir;
    return c;
}

Config Config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

fs::path Config::resolve(const std::string& path) const {
    const fs::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

const json& Config::section(const std::string& name) const {
    static const json empty = json::object();
    return raw.contains(name) ? raw.at(name) : empty;
}

std::vector<ScaleModel> parse_scale_models(const json& value, std::size_t p) {
    auto one = [](const json& e) {
        ScaleModel m;
        if (e.is_string()) {
            m.kind = parse_scale_kind(e.get<std::string>());
        } else if (e.is_object()) {
            check_keys(e, {"kind", "rho"}, "scale_models entry");
            m.kind = parse_scale_kind(get_or<std::string>(e, "kind", "unstructured"));
            m.rho = get_or<double>(e, "rho", 0.0);
        } else {
            throw ConfigError("scale_models entries must be names or {kind, rho} objects");
        }
        return m;
    };
    if (value.is_array()) {
        if (value.size() != p) throw ConfigError("scale_models needs one entry per response mode");
        std::vector<ScaleModel> out;
        for (const auto& e : value) out.push_back(one(e));
        return out;
    }
    return std::vector<ScaleModel>(p, one(value));
}

ToTRSpec Config::model_spec(std::size_t p) const {
    ToTRSpec s;
    try {
        s.format = parse_format(get_or<std::string>(raw, "format", "cp"));
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    s.ranks = size_list(raw, "ranks", {});
    s.scale_models = raw.contains("scale_models") ? parse_scale_models(raw.at("scale_models"), p)
                                                  : std::vector<ScaleModel>(p, ScaleModel{});
    s.intercept = get_or<bool>(raw, "intercept", true);
    s.max_iter = get_or<int>(raw, "max_iter", 500);
    if (raw.contains("tol_loglik")) s.tol_loglik = get_or<double>(raw, "tol_loglik", 0.0);
    s.tol_norm = get_or<double>(raw, "tol_norm", 1e-6);
    s.seed = get_or<std::uint64_t>(raw, "seed", 0);
    s.allow_rank_deficient = get_or<bool>(raw, "allow_rank_deficient", false);
    if (s.max_iter < 1) throw ConfigError("max_iter must be positive");
    if (s.tol_norm <= 0.0 || (s.tol_loglik && *s.tol_loglik <= 0.0)) throw ConfigError("tolerances must be positive");
    return s;
}

SimulationConfig SimulationConfig::from_json(const json& j, const ToTRSpec& model) {
    check_keys(j, {"design", "covariate_dims", "response_dims", "n", "per_cell", "sigma2", "scales", "rho", "truth",
                   "intercept"},
               "simulate");
    SimulationConfig c;
    c.design = get_or<std::string>(j, "design", c.design);
    if (c.design != "gaussian" && c.design != "tanova") throw ConfigError("simulate.design must be gaussian or tanova");
    c.covariate = size_list(j, "covariate_dims", c.covariate);
    c.response = size_list(j, "response_dims", c.response);
    c.n = get_or<std::size_t>(j, "n", c.n);
    c.per_cell = get_or<std::size_t>(j, "per_cell", c.per_cell);
    c.sigma2 = get_or<double>(j, "sigma2", c.sigma2);
    if (c.sigma2 < 0.0) throw ConfigError("simulate.sigma2 must be non-negative");
    c.scales = get_or<std::string>(j, "scales", c.scales);
    c.rho = double_list(j, "rho", {});
    c.intercept = get_or<bool>(j, "intercept", false);
    c.truth_format = model.format;
    c.truth_ranks = model.ranks;
    if (j.contains("truth")) {
        const json& t = j.at("truth");
        check_keys(t, {"format", "ranks", "scale"}, "simulate.truth");
        if (t.contains("format")) {
            c.truth_format = parse_format(t.at("format").get<std::string>());
            if (c.truth_format != model.format) c.truth_ranks.clear();
        }
        c.truth_ranks = size_list(t, "ranks", c.truth_ranks);
        c.truth_scale = get_or<double>(t, "scale", 1.0);
    }
    if (c.covariate.empty() || c.response.empty()) throw ConfigError("simulate needs covariate_dims and response_dims");
    for (auto d : c.covariate)
        if (d == 0) throw ConfigError("simulate.covariate_dims entries must be positive");
    for (auto d : c.response)
        if (d == 0) throw ConfigError("simulate.response_dims entries must be positive");
    validate_ranks(c.truth_format, ModelShape{c.covariate, c.response}, c.truth_ranks);
    return c;
}

void scale_coeff(LowRankCoeff& c, double s) {
    std::visit(
        [s](auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, TuckerCoeff>) v.core *= s;
            else if constexpr (std::is_same_v<T, CpCoeff>) v.weights *= s;
            else if constexpr (std::is_same_v<T, OpCoeff>) v.factors.back() *= s;
            else v.response_cores.back() *= s;
        },
        c);
}

std::vector<Matrix> draw_scales(const std::string& kind, const Dims& response, const std::vector<double>& rho, Rng& rng) {
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < response.size(); ++k) {
        const std::size_t m = response[k];
        const double r = rho.empty() ? 0.0 : rho[std::min(k, rho.size() - 1)];
        if (kind == "wishart") {
            Matrix w = rng.wishart_identity(m, m);
            out.push_back(w / w(0, 0));
        } else if (kind == "ar1") {
            out.push_back(structured_matrix(ScaleKind::ar1, m, r));
        } else if (kind == "equicorr") {
            out.push_back(structured_matrix(ScaleKind::equicorrelation, m, r));
        } else if (kind == "identity") {
            out.push_back(Matrix::Identity(m, m));
        } else {
            throw ConfigError("unknown scale generator '" + kind + "'");
        }
    }
    return out;
}

Dataset simulate(const SimulationConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const ModelShape shape{cfg.covariate, cfg.response};
    Dataset ds;
    ds.truth = random_coeff(cfg.truth_format, shape, cfg.truth_ranks, derive_seed(seed, 1));
    scale_coeff(ds.truth, cfg.truth_scale);
    ds.scales = draw_scales(cfg.scales, cfg.response, cfg.rho, rng);
    ds.sigma2 = cfg.sigma2;
    if (cfg.design == "tanova") {
        ds.design = balanced_tanova_design(cfg.covariate, cfg.per_cell);
        ds.x = ds.design->x;
    } else {
        Dims xd(cfg.covariate);
        xd.push_back(cfg.n);
        ds.x = rng.normal_tensor(xd);
    }
    const std::size_t n = ds.x.dims().back();
    ds.intercept = cfg.intercept ? rng.normal_tensor(cfg.response) : DenseTensor(cfg.response);
    const TvnParams noise{DenseTensor(cfg.response), ds.scales, cfg.sigma2};
    ds.y = predict_stacked(ds.truth, ds.x) + sample_stacked(noise, n, rng);
    auto ym = ds.y.as_matrix(shape.m());
    ym.colwise() += ds.intercept.vec_view();
    return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir);
    io::write_dten(dir / "x.dten", ds.x);
    io::write_dten(dir / "y.dten", ds.y);
    save_coeff(dir / "truth", ds.truth);
    io::write_dten(dir / "truth_intercept.dten", ds.intercept);
    json scales = json::array();
    for (std::size_t k = 0; k < ds.scales.size(); ++k) {
        const std::string name = "Sigma" + std::to_string(k + 1) + ".dten";
        io::write_dten(dir / name, DenseTensor::from_matrix(ds.scales[k]));
        scales.push_back(name);
    }
    json man{{"x", "x.dten"}, {"y", "y.dten"}, {"truth", "truth"}, {"intercept", "truth_intercept.dten"},
             {"scales", scales}, {"sigma2", ds.sigma2}, {"n", ds.x.dims().back()}};
    if (ds.design) {
        std::vector<std::vector<std::size_t>> one_based = ds.design->labels;
        for (auto& l : one_based)
            for (auto& v : l) ++v;
        write_labels(dir / "labels.csv", one_based);
        man["labels"] = "labels.csv";
        man["levels"] = ds.design->levels;
    }
    std::ofstream(dir / "manifest.json") << man.dump(2) << "\n";
}

json fit_summary(const ToTRFit& fit) {
    const BicResult b = bic(fit);
    json models = json::array();
    for (const auto& m : fit.scale_models) {
        json e{{"kind", scale_kind_name(m.kind)}};
        if (m.kind == ScaleKind::ar1 || m.kind == ScaleKind::equicorrelation) e["rho"] = m.rho;
        models.push_back(e);
    }
    return json{{"format", format_name(fit.format())},
                {"ranks", ranks_of(fit.coeff)},
                {"covariate_dims", fit.shape.covariate},
                {"response_dims", fit.shape.response},
                {"n", fit.n},
                {"intercept", fit.has_intercept},
                {"converged", fit.converged},
                {"iterations", fit.iterations},
                {"loglik", io::format_double(fit.loglik())},
                {"sigma2", io::format_double(fit.sigma2)},
                {"bic", io::format_double(b.bic)},
                {"k_coeff", b.k_coeff},
                {"k_scale", b.k_scale},
                {"scale_models", models},
                {"rank_deficient", fit.rank_deficient},
                {"warnings", fit.warnings}};
}

void write_fit(const fs::path& dir, const ToTRFit& fit) {
    fs::create_directories(dir);
    save_coeff(dir / "coeff", fit.coeff);
    io::write_dten(dir / "intercept.dten", fit.intercept);
    for (std::size_t k = 0; k < fit.scales.size(); ++k)
        io::write_dten(dir / ("Sigma" + std::to_string(k + 1) + ".dten"), DenseTensor::from_matrix(fit.scales[k]));
    io::CsvTable trace({"iteration", "loglik"});
    for (std::size_t i = 0; i < fit.loglik_trace.size(); ++i) trace.row().add(i + 1).add(fit.loglik_trace[i]);
    trace.write(dir / "loglik_trace.csv");
    io::CsvTable timing({"block", "calls", "seconds"});
    for (const auto& [name, t] : fit.timings) timing.row().add(name).add(t.calls).add(t.seconds);
    timing.write(dir / "block_timings.csv");
    std::ofstream(dir / "summary.json") << fit_summary(fit).dump(2) << "\n";
}

std::vector<std::vector<std::size_t>> read_labels(const fs::path& path, std::size_t factors) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read labels file " + path.string());
    std::vector<std::vector<std::size_t>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::size_t> row;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const long long v = std::stoll(cell, &used);
                if (v < 1) throw DimensionError("labels are one-based (line " + std::to_string(lineno) + ")");
                row.push_back(static_cast<std::size_t>(v - 1));
            } catch (const std::invalid_argument&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (lineno == 1) continue;
            throw DimensionError("non-numeric label on line " + std::to_string(lineno));
        }
        if (row.size() != factors)
            throw DimensionError("line " + std::to_string(lineno) + " of the labels file needs " + std::to_string(factors) +
                                 " labels");
        out.push_back(row);
    }
    return out;
}

void write_labels(const fs::path& path, const std::vector<std::vector<std::size_t>>& labels) {
    const std::size_t f = labels.empty() ? 0 : labels.front().size();
    std::vector<std::string> header;
    for (std::size_t i = 0; i < f; ++i) header.push_back("factor" + std::to_string(i + 1));
    io::CsvTable t(header);
    for (const auto& l : labels) {
        t.row();
        for (auto v : l) t.add(v);
    }
    t.write(path);
}

io::CsvTable rank_table(const RankSearchResult& r) {
    io::CsvTable t({"ranks", "k", "loglik", "bic", "converged", "iterations", "selected", "error"});
    for (std::size_t i = 0; i < r.table.size(); ++i) {
        const auto& row = r.table[i];
        t.row().add(join(row.ranks)).add(row.bic.k_total()).add(row.bic.loglik).add(row.bic.bic);
        t.add(row.error.empty() && row.bic.converged ? 1 : 0).add(row.iterations).add(i == r.best ? 1 : 0).add(row.error);
    }
    return t;
}

// ------------------------------------------------------------ consistency

ConsistencyConfig ConsistencyConfig::from_json(const json& j) {
    check_keys(j, {"covariate_dims", "response_dims", "ns", "replicates", "sigma2", "models", "seed", "max_iter"},
               "experiment");
    ConsistencyConfig c;
    c.covariate = size_list(j, "covariate_dims", c.covariate);
    c.response = size_list(j, "response_dims", c.response);
    c.ns = size_list(j, "ns", c.ns);
    c.replicates = get_or<std::size_t>(j, "replicates", c.replicates);
    c.sigma2 = get_or<double>(j, "sigma2", c.sigma2);
    c.models = model_list(j, "models", c.models);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.max_iter = get_or<int>(j, "max_iter", c.max_iter);
    const std::size_t cells = num_elements(c.covariate);
    for (auto n : c.ns)
        if (n == 0 || n % cells != 0) throw ConfigError("every n must be a positive multiple of the number of cells");
    if (c.replicates == 0) throw ConfigError("replicates must be positive");
    return c;
}

std::vector<ConsistencyRow> run_consistency(const ConsistencyConfig& cfg, std::size_t jobs) {
    const ModelShape shape{cfg.covariate, cfg.response};
    const std::size_t cells = shape.h();
    struct Task {
        std::size_t model, ni, rep;
    };
    std::vector<Task> tasks;
    for (std::size_t f = 0; f < cfg.models.size(); ++f)
        for (std::size_t ni = 0; ni < cfg.ns.size(); ++ni)
            for (std::size_t r = 0; r < cfg.replicates; ++r) tasks.push_back({f, ni, r});
    // One truth and one pair of Wishart scales per format, shared by all n.
    std::vector<LowRankCoeff> truths;
    std::vector<std::vector<Matrix>> scales;
    for (std::size_t f = 0; f < cfg.models.size(); ++f) {
        validate_ranks(cfg.models[f].format, shape, cfg.models[f].ranks);
        const std::uint64_t s = derive_seed(cfg.seed, 1000 + f);
        truths.push_back(random_coeff(cfg.models[f].format, shape, cfg.models[f].ranks, s));
        Rng rng(derive_seed(s, 1));
        scales.push_back(draw_scales("wishart", cfg.response, {}, rng));
    }
    std::vector<ConsistencyRow> rows(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t t) {
        const Task& task = tasks[t];
        const ModelChoice& mc = cfg.models[task.model];
        const std::size_t n = cfg.ns[task.ni];
        const std::uint64_t s = derive_seed(derive_seed(derive_seed(cfg.seed, task.model), n), task.rep);
        Rng rng(s);
        const TanovaDesign d = balanced_tanova_design(cfg.covariate, n / cells);
        const TvnParams noise{DenseTensor(cfg.response), scales[task.model], cfg.sigma2};
        const DenseTensor y = predict_stacked(truths[task.model], d.x) + sample_stacked(noise, n, rng);
        ToTRSpec spec;
        spec.format = mc.format;
        spec.ranks = mc.ranks;
        spec.intercept = false;
        spec.max_iter = cfg.max_iter;
        spec.seed = derive_seed(s, 7);
        const ToTRFit f = fit(spec, d.x, y);
        ConsistencyRow& row = rows[t];
        row.format = mc.format;
        row.n = n;
        row.replicate = task.rep;
        row.err_coeff = (to_full(f.coeff) - to_full(truths[task.model])).norm();
        row.err_sigma2 = std::abs(f.sigma2 - cfg.sigma2);
        for (std::size_t k = 0; k < shape.p(); ++k) row.err_scales.push_back((f.scales[k] - scales[task.model][k]).norm());
        row.converged = f.converged;
    });
    return rows;
}

io::CsvTable consistency_table(const std::vector<ConsistencyRow>& rows) {
    std::vector<std::string> header{"format", "n", "replicate", "err_B", "err_sigma2"};
    const std::size_t p = rows.empty() ? 0 : rows.front().err_scales.size();
    for (std::size_t k = 0; k < p; ++k) header.push_back("err_Sigma" + std::to_string(k + 1));
    header.push_back("converged");
    io::CsvTable t(header);
    for (const auto& r : rows) {
        t.row().add(format_name(r.format)).add(r.n).add(r.replicate).add(r.err_coeff).add(r.err_sigma2);
        for (double e : r.err_scales) t.add(e);
        t.add(r.converged ? 1 : 0);
    }
    return t;
}

namespace {

struct MedianKey {
    Format format;
    std::size_t n;
    bool operator<(const MedianKey& o) const { return std::tie(format, n) < std::tie(o.format, o.n); }
};

std::map<MedianKey, std::vector<double>> consistency_median_map(const std::vector<ConsistencyRow>& rows) {
    std::map<MedianKey, std::vector<std::vector<double>>> cols;
    for (const auto& r : rows) {
        auto& c = cols[{r.format, r.n}];
        std::vector<double> vals{r.err_coeff, r.err_sigma2};
        vals.insert(vals.end(), r.err_scales.begin(), r.err_scales.end());
        if (c.empty()) c.resize(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) c[i].push_back(vals[i]);
    }
    std::map<MedianKey, std::vector<double>> out;
    for (auto& [k, c] : cols) {
        std::vector<double> med;
        for (auto& v : c) med.push_back(median(v));
        out[k] = med;
    }
    return out;
}

std::vector<std::string> error_names(std::size_t count) {
    std::vector<std::string> names{"err_B", "err_sigma2"};
    for (std::size_t k = 0; k + 2 < count; ++k) names.push_back("err_Sigma" + std::to_string(k + 1));
    return names;
}

}  // namespace

io::CsvTable consistency_medians(const std::vector<ConsistencyRow>& rows) {
    const auto med = consistency_median_map(rows);
    const std::size_t cols = med.empty() ? 2 : med.begin()->second.size();
    std::vector<std::string> header{"format", "n"};
    for (auto& s : error_names(cols)) header.push_back("median_" + s);
    io::CsvTable t(header);
    for (const auto& [k, v] : med) {
        t.row().add(format_name(k.format)).add(k.n);
        for (double x : v) t.add(x);
    }
    return t;
}

bool consistency_trend(const std::vector<ConsistencyRow>& rows, std::string* report) {
    const auto med = consistency_median_map(rows);
    std::map<Format, std::pair<std::size_t, std::size_t>> range;
    for (const auto& [k, v] : med) {
        auto it = range.find(k.format);
        if (it == range.end()) range[k.format] = {k.n, k.n};
        else it->second = {std::min(it->second.first, k.n), std::max(it->second.second, k.n)};
    }
    bool ok = !range.empty();
    std::ostringstream os;
    for (const auto& [f, nn] : range) {
        const auto& lo = med.at({f, nn.first});
        const auto& hi = med.at({f, nn.second});
        const auto names = error_names(lo.size());
        for (std::size_t i = 0; i < lo.size(); ++i) {
            const bool pass = hi[i] < lo[i];
            ok = ok && pass;
            os << format_name(f) << " " << names[i] << ": n=" << nn.first << " " << lo[i] << " -> n=" << nn.second << " "
               << hi[i] << (pass ? "" : " (not smaller)") << "\n";
        }
    }
    if (report) *report = os.str();
    return ok;
}

// ------------------------------------------------------------ wilks

WilksConfig WilksConfig::from_json(const json& j) {
    check_keys(j, {"levels", "response_dims", "per_cell", "sigmas", "replicates", "level", "truth_rank", "amplitude", "rho",
                   "models", "include_true_null", "seed", "max_iter"},
               "experiment");
    WilksConfig c;
    c.levels = size_list(j, "levels", c.levels);
    c.response = size_list(j, "response_dims", c.response);
    c.per_cell = get_or<std::size_t>(j, "per_cell", c.per_cell);
    c.sigmas = double_list(j, "sigmas", c.sigmas);
    c.replicates = get_or<std::size_t>(j, "replicates", c.replicates);
    c.level = get_or<double>(j, "level", c.level);
    c.truth_rank = get_or<std::size_t>(j, "truth_rank", c.truth_rank);
    c.amplitude = get_or<double>(j, "amplitude", c.amplitude);
    c.rho = double_list(j, "rho", c.rho);
    c.models = model_list(j, "models", c.models);
    c.include_true_null = get_or<bool>(j, "include_true_null", c.include_true_null);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.max_iter = get_or<int>(j, "max_iter", c.max_iter);
    if (c.levels.size() != 2 || c.response.size() != 2) throw ConfigError("the Wilks experiment is a TANOVA(2,2) design");
    if (c.replicates == 0 || c.per_cell == 0) throw ConfigError("replicates and per_cell must be positive");
    return c;
}

CpCoeff smooth_cp_truth(const WilksConfig& cfg, bool null_true, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t r = cfg.truth_rank;
    CpCoeff c;
    c.weights = Vector::Constant(static_cast<Eigen::Index>(r), cfg.amplitude);
    Matrix l1 = null_true ? Matrix(Matrix::Ones(cfg.levels[0], r)) : rng.normal_matrix(cfg.levels[0], r);
    Matrix l2 = Matrix::Constant(cfg.levels[1], r, 0.5) + rng.uniform_matrix(cfg.levels[1], r);
    c.covariate_factors = {l1, l2};
    for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t m = cfg.response[k];
        Matrix f(m, r);
        for (std::size_t u = 0; u < r; ++u) {
            const double centre = rng.uniform(), width = 0.1 + 0.2 * rng.uniform();
            for (std::size_t i = 0; i < m; ++i) {
                const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
                f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) =
                    std::exp(-0.5 * std::pow((t - centre) / width, 2));
            }
        }
        c.response_factors.push_back(f);
    }
    return c;
}

std::vector<WilksRow> run_wilks_experiment(const WilksConfig& cfg, std::size_t jobs) {
    const TanovaDesign design = balanced_tanova_design(cfg.levels, cfg.per_cell);
    const std::size_t n = design.n();
    std::vector<bool> hyps{false};
    if (cfg.include_true_null) hyps.push_back(true);
    std::vector<WilksRow> rows;
    for (bool null_true : hyps) {
        const LowRankCoeff truth = smooth_cp_truth(cfg, null_true, derive_seed(cfg.seed, null_true ? 2 : 1));
        const DenseTensor mean = predict_stacked(truth, design.x);
        for (std::size_t si = 0; si < cfg.sigmas.size(); ++si) {
            const double sigma = cfg.sigmas[si];
            std::vector<std::vector<double>> lambdas(cfg.models.size(), std::vector<double>(cfg.replicates));
            parallel_for(cfg.replicates, jobs, [&](std::size_t b) {
                const std::uint64_t s = derive_seed(derive_seed(derive_seed(cfg.seed, null_true ? 20 : 10), si), b);
                Rng rng(s);
                Rng scale_rng(0);
                const TvnParams noise{DenseTensor(cfg.response), draw_scales("ar1", cfg.response, cfg.rho, scale_rng),
                                      sigma * sigma};
                const DenseTensor y = mean + sample_stacked(noise, n, rng);
                for (std::size_t f = 0; f < cfg.models.size(); ++f) {
                    ToTRSpec spec;
                    spec.format = cfg.models[f].format;
                    spec.ranks = cfg.models[f].ranks;
                    spec.intercept = false;
                    spec.max_iter = cfg.max_iter;
                    spec.seed = derive_seed(s, f);
                    lambdas[f][b] = wilks_test(spec, design, y, 1).lambda;
                }
            });
            for (std::size_t f = 0; f < cfg.models.size(); ++f) {
                WilksRow row;
                row.format = cfg.models[f].format;
                row.sigma = sigma;
                row.null_true = null_true;
                row.quantile = sample_quantile(lambdas[f], cfg.level);
                row.median = sample_quantile(lambdas[f], 0.5);
                row.replicates = cfg.replicates;
                rows.push_back(row);
            }
        }
    }
    return rows;
}

io::CsvTable wilks_table(const std::vector<WilksRow>& rows) {
    io::CsvTable t({"format", "sigma", "hypothesis", "replicates", "quantile", "median"});
    for (const auto& r : rows)
        t.row()
            .add(format_name(r.format))
            .add(r.sigma)
            .add(std::string(r.null_true ? "null_true" : "null_false"))
            .add(r.replicates)
            .add(r.quantile)
            .add(r.median);
    return t;
}

bool wilks_trend(const std::vector<WilksRow>& rows, std::string* report) {
    std::map<Format, std::vector<std::pair<double, double>>> q;
    for (const auto& r : rows)
        if (!r.null_true) q[r.format].push_back({r.sigma, r.quantile});
    bool ok = !q.empty();
    std::ostringstream os;
    for (auto& [f, v] : q) {
        std::sort(v.begin(), v.end());
        os << format_name(f) << ":";
        for (std::size_t i = 0; i < v.size(); ++i) {
            os << " " << v[i].second;
            if (i > 0 && !(v[i].second > v[i - 1].second)) {
                ok = false;
                os << " (not increasing)";
            }
        }
        os << "\n";
    }
    auto op = q.find(Format::op);
    if (op != q.end()) {
        for (auto& [f, v] : q) {
            if (f == Format::op) continue;
            for (std::size_t i = 0; i < v.size() && i < op->second.size(); ++i)
                if (v[i].second > op->second[i].second) {
                    ok = false;
                    os << format_name(f) << " above op at sigma " << v[i].first << "\n";
                }
        }
    }
    if (report) *report = os.str();
    return ok;
}

// ------------------------------------------------------------ bench

BenchConfig BenchConfig::from_json(const json& j) {
    check_keys(j, {"format", "ranks", "covariate_dims", "response_dims", "ns", "m1s", "fixed_n", "iterations", "repeats",
                   "seed"},
               "bench");
    BenchConfig c;
    if (j.contains("format")) c.model.format = parse_format(j.at("format").get<std::string>());
    c.model.ranks = size_list(j, "ranks", c.model.ranks);
    c.covariate = size_list(j, "covariate_dims", c.covariate);
    c.response = size_list(j, "response_dims", c.response);
    c.ns = size_list(j, "ns", c.ns);
    c.m1s = size_list(j, "m1s", c.m1s);
    c.fixed_n = get_or<std::size_t>(j, "fixed_n", c.fixed_n);
    c.iterations = get_or<int>(j, "iterations", c.iterations);
    c.repeats = get_or<std::size_t>(j, "repeats", c.repeats);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    if (c.iterations < 1 || c.repeats < 1) throw ConfigError("bench iterations and repeats must be positive");
    return c;
}

namespace {

struct BenchCase {
    DenseTensor x, y;
    ToTRSpec spec;
    BenchRow row;
};

BenchCase bench_case(const BenchConfig& cfg, const Dims& response, std::size_t n, const std::string& axis,
                     std::size_t value) {
    const ModelShape shape{cfg.covariate, response};
    const LowRankCoeff truth = random_coeff(cfg.model.format, shape, cfg.model.ranks, cfg.seed);
    Rng rng(derive_seed(cfg.seed, n * 1000 + value));
    Dims xd(cfg.covariate);
    xd.push_back(n);
    BenchCase c;
    c.x = rng.normal_tensor(xd);
    const TvnParams noise{DenseTensor(response), draw_scales("identity", response, {}, rng), 1.0};
    c.y = predict_stacked(truth, c.x) + sample_stacked(noise, n, rng);
    c.spec.format = cfg.model.format;
    c.spec.ranks = cfg.model.ranks;
    c.spec.max_iter = cfg.iterations;
    c.spec.tol_loglik = 1e-300;
    c.spec.tol_norm = 1e-300;
    c.spec.seed = cfg.seed;
    c.row.axis = axis;
    c.row.value = value;
    c.row.seconds = std::numeric_limits<double>::infinity();
    return c;
}

void time_case(BenchCase& c) {
    const auto t0 = Clock::now();
    const ToTRFit f = fit(c.spec, c.x, c.y);
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s < c.row.seconds) {
        c.row.seconds = s;
        c.row.blocks.clear();
        for (const auto& [name, t] : f.timings) c.row.blocks[name] = t.seconds;
    }
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchConfig& cfg, bool include_m1) {
    validate_ranks(cfg.model.format, ModelShape{cfg.covariate, cfg.response}, cfg.model.ranks);
    std::vector<BenchCase> cases;
    for (std::size_t n : cfg.ns) cases.push_back(bench_case(cfg, cfg.response, n, "n", n));
    if (include_m1) {
        for (std::size_t m1 : cfg.m1s) {
            Dims r = cfg.response;
            r[0] = m1;
            cases.push_back(bench_case(cfg, r, cfg.fixed_n, "m1", m1));
        }
    }
    // Repeats sweep all points in turn so slow spells spread across them.
    for (std::size_t r = 0; r < cfg.repeats; ++r)
        for (auto& c : cases) time_case(c);
    std::vector<BenchRow> rows;
    for (auto& c : cases) rows.push_back(std::move(c.row));
    return rows;
}

double loglog_slope(const std::vector<BenchRow>& rows, const std::string& axis) {
    std::vector<double> xs, ys;
    for (const auto& r : rows)
        if (r.axis == axis) {
            xs.push_back(std::log(static_cast<double>(r.value)));
            ys.push_back(std::log(r.seconds));
        }
    if (xs.size() < 2) throw DimensionError("need at least two bench points on axis " + axis);
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

io::CsvTable bench_table(const std::vector<BenchRow>& rows) {
    io::CsvTable t({"axis", "value", "block", "seconds"});
    for (const auto& r : rows) {
        t.row().add(r.axis).add(r.value).add(std::string("total")).add(r.seconds);
        for (const auto& [name, s] : r.blocks) t.row().add(r.axis).add(r.value).add(name).add(s);
    }
    return t;
}

}  // namespace totr::harness
