#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "totr/harness.hpp"

using namespace totr;
using namespace totr::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("totr_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config parsing") {
    const Config c = Config::parse(R"({"format": "tucker", "ranks": [2, 2, 1], "scale_models": ["ar1", "identity"]})");
    const ToTRSpec s = c.model_spec(2);
    CHECK(s.format == Format::tucker);
    CHECK(s.ranks == std::vector<std::size_t>{2, 2, 1});
    CHECK(s.scale_models[0].kind == ScaleKind::ar1);
    CHECK(s.scale_models[1].kind == ScaleKind::identity);
    CHECK(s.intercept);
    CHECK(s.max_iter == 500);
    CHECK(s.tol_norm == 1e-6);

    const ToTRSpec d = Config::parse("{}").model_spec(3);
    CHECK(d.format == Format::cp);
    CHECK(d.scale_models.size() == 3);
    CHECK(parse_scale_models("equicorr", 2)[1].kind == ScaleKind::equicorrelation);

    CHECK_THROWS_AS(Config::parse(R"({"formt": "cp"})"), ConfigError);
    CHECK_THROWS_AS(SimulationConfig::from_json(json{{"sigma", 1}}, d), ConfigError);
    CHECK_THROWS_AS(Config::parse("{not json"), ConfigError);
    CHECK_THROWS_AS(Config::parse(R"({"max_iter": 0})").model_spec(2), ConfigError);
    CHECK_THROWS_AS(Config::parse(R"({"format": "qr"})").model_spec(2), ConfigError);
    CHECK(Config::parse("{}", "/data/run").resolve("x.dten") == fs::path("/data/run/x.dten"));
    CHECK(Config::parse("{}", "/data/run").resolve("/abs/x.dten") == fs::path("/abs/x.dten"));
}

TEST_CASE("scale generators") {
    Rng rng(3);
    const std::vector<Matrix> w = draw_scales("wishart", {4, 6}, {}, rng);
    REQUIRE(w.size() == 2);
    for (const Matrix& s : w) {
        CHECK(s(0, 0) == 1.0);
        CHECK(oracle::rel_diff(s, Matrix(s.transpose())) == 0.0);
        CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(s).eigenvalues().minCoeff() > 0.0);
    }
    const std::vector<Matrix> a = draw_scales("ar1", {3, 3}, {0.5, -0.2}, rng);
    CHECK(a[0](0, 2) == doctest::Approx(0.25));
    CHECK(a[1](0, 1) == doctest::Approx(-0.2));
    const std::vector<Matrix> e = draw_scales("equicorr", {3}, {0.3}, rng);
    CHECK(e[0](0, 2) == doctest::Approx(0.3));
    CHECK(draw_scales("identity", {2}, {}, rng)[0] == Matrix::Identity(2, 2));
    CHECK_THROWS_AS(draw_scales("lkj", {2}, {}, rng), ConfigError);
}

TEST_CASE("noise-free simulation returns the mean exactly") {
    for (const std::string design : {"gaussian", "tanova"}) {
        CAPTURE(design);
        const Config c = Config::parse(R"({"format": "cp", "ranks": [2]})");
        SimulationConfig sc = SimulationConfig::from_json(
            json{{"design", design}, {"covariate_dims", {3, 2}}, {"response_dims", {2, 4}}, {"n", 30}, {"per_cell", 3},
                 {"sigma2", 0.0}, {"scales", "wishart"}, {"intercept", true}},
            c.model_spec(2));
        const Dataset ds = simulate(sc, 5);
        DenseTensor mean = predict_stacked(ds.truth, ds.x);
        auto mm = mean.as_matrix(8);
        mm.colwise() += ds.intercept.vec_view();
        CHECK(ds.y.values() == mean.values());
        CHECK(ds.intercept.norm() > 0.0);
        CHECK(ds.design.has_value() == (design == "tanova"));
        if (ds.design) CHECK(ds.x.dims().back() == 18);
        const Dataset again = simulate(sc, 5);
        CHECK(again.y.values() == ds.y.values());
    }
}

TEST_CASE("dataset and fit artifacts") {
    const fs::path dir = scratch_dir("artifacts");
    const Config c = Config::parse(R"({"format": "cp", "ranks": [1], "intercept": false})");
    const SimulationConfig sc = SimulationConfig::from_json(
        json{{"design", "tanova"}, {"covariate_dims", {3}}, {"response_dims", {2, 2}}, {"per_cell", 4}, {"sigma2", 0.2}},
        c.model_spec(2));
    const Dataset ds = simulate(sc, 9);
    write_dataset(dir / "data", ds);
    CHECK(io::read_tensor(dir / "data" / "y.dten").values() == ds.y.values());
    const auto labels = read_labels(dir / "data" / "labels.csv", 1);
    REQUIRE(labels.size() == 12);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(labels[i] == ds.design->labels[i]);
    CHECK_THROWS(read_labels(dir / "data" / "labels.csv", 2));

    const ToTRSpec spec = c.model_spec(2);
    const ToTRFit f1 = fit(spec, ds.x, ds.y);
    const ToTRFit f2 = fit(spec, ds.x, ds.y);
    write_fit(dir / "f1", f1);
    write_fit(dir / "f2", f2);
    CHECK(slurp(dir / "f1" / "summary.json") == slurp(dir / "f2" / "summary.json"));
    const json s = json::parse(slurp(dir / "f1" / "summary.json"));
    CHECK(s.at("format") == "cp");
    CHECK(s.at("n") == 12);
    CHECK(fs::exists(dir / "f1" / "Sigma2.dten"));
    CHECK(fs::file_size(dir / "f1" / "loglik_trace.csv") > 0);
    CHECK(fit_summary(f1) == fit_summary(f2));
    fs::remove_all(dir);
}

TEST_CASE("consistency experiment layout") {
    ConsistencyConfig cfg = ConsistencyConfig::from_json(
        json{{"covariate_dims", {2, 2}}, {"response_dims", {2, 3}}, {"ns", {8, 80}}, {"replicates", 3}, {"sigma2", 0.5},
             {"models", {{{"format", "cp"}, {"ranks", {1}}}, {{"format", "op"}}}}});
    const auto rows = run_consistency(cfg, 2);
    REQUIRE(rows.size() == 2 * 2 * 3);
    for (const auto& r : rows) CHECK(r.err_scales.size() == 2);
    const io::CsvTable t = consistency_table(rows);
    CHECK(t.rows() == rows.size());
    const io::CsvTable m = consistency_medians(rows);
    CHECK(m.rows() == 4);
    CHECK(run_consistency(cfg, 1).front().err_coeff == rows.front().err_coeff);
    std::string report;
    CHECK(consistency_trend(rows, &report));
    CHECK(!report.empty());
    CHECK_THROWS_AS(ConsistencyConfig::from_json(json{{"ns", {7}}}), ConfigError);
}

TEST_CASE("Wilks trend rule") {
    std::vector<WilksRow> rows;
    const std::vector<double> sig{2, 4, 6};
    for (Format f : {Format::cp, Format::op})
        for (std::size_t i = 0; i < sig.size(); ++i) rows.push_back({f, sig[i], false, 0.1 * (i + 1) + (f == Format::op ? 0.05 : 0.0), 0, 10});
    CHECK(wilks_trend(rows));
    rows[1].quantile = rows[0].quantile;
    CHECK(!wilks_trend(rows));
    rows[1].quantile = 0.2;
    rows[2].quantile = 0.5;
    CHECK(!wilks_trend(rows));

    const CpCoeff null = smooth_cp_truth(WilksConfig{}, true, 1);
    CHECK(null.covariate_factors[0].isApproxToConstant(1.0));
    const CpCoeff alt = smooth_cp_truth(WilksConfig{}, false, 1);
    CHECK(!alt.covariate_factors[0].isApproxToConstant(alt.covariate_factors[0](0, 0)));
}

TEST_CASE("log-log slopes") {
    std::vector<BenchRow> rows;
    for (std::size_t n : {50, 100, 200, 400}) rows.push_back({"n", n, 3e-4 * static_cast<double>(n), {}});
    for (std::size_t m : {10, 20, 40}) rows.push_back({"m1", m, 1e-5 * static_cast<double>(m * m), {}});
    CHECK(loglog_slope(rows, "n") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loglog_slope(rows, "m1") == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(bench_table(rows).rows() == rows.size());
}
