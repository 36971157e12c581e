#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "totr/errors.hpp"
#include "totr/estimation.hpp"
#include "totr/inference.hpp"
#include "totr/io.hpp"
#include "totr/lowrank.hpp"
#include "totr/modelselect.hpp"
#include "totr/runtime.hpp"

namespace py = pybind11;
using namespace totr;

namespace {

using FArray = py::array_t<double, py::array::f_style | py::array::forcecast>;

DenseTensor to_tensor(const FArray& a) {
    Dims dims(a.shape(), a.shape() + a.ndim());
    std::vector<double> data(a.data(), a.data() + a.size());
    return DenseTensor(std::move(dims), std::move(data));
}

py::array to_array(const DenseTensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    FArray out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

ToTRSpec make_spec(const std::string& format, std::vector<std::size_t> ranks,
                   const std::vector<std::string>& scale_models, bool intercept, int max_iter,
                   std::optional<double> tol_loglik, double tol_norm, std::uint64_t seed, bool allow_rank_deficient) {
    ToTRSpec s;
    s.format = parse_format(format);
    s.ranks = std::move(ranks);
    for (const auto& name : scale_models) s.scale_models.push_back({parse_scale_kind(name), 0.0});
    s.intercept = intercept;
    s.max_iter = max_iter;
    s.tol_loglik = tol_loglik;
    s.tol_norm = tol_norm;
    s.seed = seed;
    s.allow_rank_deficient = allow_rank_deficient;
    return s;
}

CovarianceMethod parse_method(const std::string& name) {
    if (name == "blockwise") return CovarianceMethod::blockwise;
    if (name == "joint") return CovarianceMethod::joint;
    throw ConfigError("unknown covariance method: " + name);
}

py::dict bic_dict(const BicResult& b) {
    py::dict d;
    d["bic"] = b.bic;
    d["loglik"] = b.loglik;
    d["k_coeff"] = b.k_coeff;
    d["k_scale"] = b.k_scale;
    d["k"] = b.k_total();
    d["converged"] = b.converged;
    return d;
}

}  // namespace

PYBIND11_MODULE(_totr, m) {
    m.doc() = "Tensor-on-tensor regression bindings";
    configure_allocator();

    auto base = py::register_exception<Error>(m, "TotrError", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<SingularError>(m, "SingularError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    py::class_<ToTRSpec>(m, "Spec")
        .def(py::init(&make_spec), py::arg("format") = "cp", py::arg("ranks") = std::vector<std::size_t>{},
             py::arg("scale_models") = std::vector<std::string>{}, py::arg("intercept") = true,
             py::arg("max_iter") = 500, py::arg("tol_loglik") = std::nullopt, py::arg("tol_norm") = 1e-6,
             py::arg("seed") = 0, py::arg("allow_rank_deficient") = false)
        .def_property_readonly("format", [](const ToTRSpec& s) { return format_name(s.format); })
        .def_readwrite("ranks", &ToTRSpec::ranks)
        .def_readwrite("intercept", &ToTRSpec::intercept)
        .def_readwrite("max_iter", &ToTRSpec::max_iter)
        .def_readwrite("seed", &ToTRSpec::seed);

    py::class_<ToTRFit>(m, "Fit")
        .def_property_readonly("format", [](const ToTRFit& f) { return format_name(f.format()); })
        .def_property_readonly("ranks", [](const ToTRFit& f) { return ranks_of(f.coeff); })
        .def_property_readonly("coefficient", [](const ToTRFit& f) { return to_array(to_full(f.coeff)); })
        .def_property_readonly("intercept", [](const ToTRFit& f) { return to_array(f.intercept); })
        .def_readonly("scales", &ToTRFit::scales)
        .def_readonly("sigma2", &ToTRFit::sigma2)
        .def_readonly("n", &ToTRFit::n)
        .def_readonly("converged", &ToTRFit::converged)
        .def_readonly("iterations", &ToTRFit::iterations)
        .def_readonly("loglik_trace", &ToTRFit::loglik_trace)
        .def_readonly("warnings", &ToTRFit::warnings)
        .def_property_readonly("loglik", &ToTRFit::loglik)
        .def_property_readonly("param_count", [](const ToTRFit& f) { return param_count(f.coeff); })
        .def("predict", [](const ToTRFit& f, const FArray& x) { return to_array(predict(f, to_tensor(x))); })
        .def("residuals",
             [](const ToTRFit& f, const FArray& x, const FArray& y) {
                 return to_array(residuals(f, to_tensor(x), to_tensor(y)));
             })
        .def("bic", [](const ToTRFit& f) { return bic_dict(bic(f)); })
        .def("save_coefficient", [](const ToTRFit& f, const std::filesystem::path& dir) { save_coeff(dir, f.coeff); });

    m.def(
        "fit",
        [](const ToTRSpec& spec, const FArray& x, const FArray& y) {
            const DenseTensor xt = to_tensor(x), yt = to_tensor(y);
            py::gil_scoped_release release;
            return fit(spec, xt, yt);
        },
        py::arg("spec"), py::arg("x"), py::arg("y"),
        "Fits the model; x has dims (h..., n) and y has dims (m..., n).");

    m.def(
        "param_count",
        [](const std::string& format, const Dims& covariate, const Dims& response,
           const std::vector<std::size_t>& ranks) {
            return param_count(parse_format(format), ModelShape{covariate, response}, ranks);
        },
        py::arg("format"), py::arg("covariate"), py::arg("response"), py::arg("ranks") = std::vector<std::size_t>{});

    m.def(
        "rank_search",
        [](const ToTRSpec& spec, const RankGrid& grid, const FArray& x, const FArray& y, std::size_t jobs) {
            const DenseTensor xt = to_tensor(x), yt = to_tensor(y);
            RankSearchResult r;
            {
                py::gil_scoped_release release;
                r = rank_search(spec, grid, xt, yt, jobs);
            }
            py::list table;
            for (const auto& row : r.table) {
                py::dict d = bic_dict(row.bic);
                d["ranks"] = row.ranks;
                d["iterations"] = row.iterations;
                d["error"] = row.error;
                table.append(d);
            }
            return py::make_tuple(r.best, table, std::move(r.best_fit));
        },
        py::arg("spec"), py::arg("grid"), py::arg("x"), py::arg("y"), py::arg("jobs") = 1,
        "Returns (best index, table of candidates, best fit).");

    m.def(
        "tanova_design",
        [](const Dims& levels, const std::vector<std::vector<std::size_t>>& labels) {
            return to_array(build_tanova_design(levels, labels).x);
        },
        py::arg("levels"), py::arg("labels"), "Single-entry covariates for zero-based labels, one row per observation.");

    m.def(
        "wilks_test",
        [](const ToTRSpec& spec, const Dims& levels, const std::vector<std::vector<std::size_t>>& labels,
           const FArray& y, std::size_t factor) {
            const TanovaDesign design = build_tanova_design(levels, labels);
            const DenseTensor yt = to_tensor(y);
            py::gil_scoped_release release;
            return wilks_test(spec, design, yt, factor).lambda;
        },
        py::arg("spec"), py::arg("levels"), py::arg("labels"), py::arg("y"), py::arg("factor") = 1,
        "Wilks' lambda for collapsing covariate factor `factor` (one-based).");

    m.def(
        "marginal_variances",
        [](const ToTRFit& f, const FArray& x, const std::string& method) {
            const AsymptoticLaw law = asymptotic_law(f, to_tensor(x), kDefaultCovarianceBudget, parse_method(method));
            Vector v = law.variances;
            if (v.size() == 0) v = law.expand().diagonal();
            return to_array(DenseTensor(law.mean.dims(), std::vector<double>(v.data(), v.data() + v.size())));
        },
        py::arg("fit"), py::arg("x"), py::arg("method") = "blockwise",
        "Asymptotic variances of the fitted coefficient, shaped like it.");

    m.def(
        "standardize",
        [](const ToTRFit& f, const FArray& x, const std::string& method) {
            const AsymptoticLaw law = asymptotic_law(f, to_tensor(x), kDefaultCovarianceBudget, parse_method(method));
            return to_array(standardize(to_full(f.coeff), law));
        },
        py::arg("fit"), py::arg("x"), py::arg("method") = "blockwise");

    m.def("sample_quantile", &sample_quantile, py::arg("values"), py::arg("level"));
    m.def(
        "read_tensor", [](const std::filesystem::path& p) { return to_array(io::read_tensor(p)); }, py::arg("path"));
    m.def(
        "write_tensor", [](const std::filesystem::path& p, const FArray& a) { io::write_tensor(p, to_tensor(a)); },
        py::arg("path"), py::arg("array"));
}
