#include "totr/modelselect.hpp"

#include <algorithm>
#include <cmath>

#include "totr/errors.hpp"
#include "totr/parallel.hpp"
#include "totr/random.hpp"

namespace totr {

std::size_t scale_param_count(const std::vector<ScaleModel>& models, const Dims& response) {
    std::size_t k = 1;
    for (std::size_t q = 0; q < response.size(); ++q) {
        const ScaleKind kind = q < models.size() ? models[q].kind : ScaleKind::unstructured;
        const std::size_t m = response[q];
        switch (kind) {
            case ScaleKind::unstructured: k += m * (m + 1) / 2 - 1; break;
            case ScaleKind::ar1:
            case ScaleKind::equicorrelation: k += m > 1 ? 1 : 0; break;
            case ScaleKind::identity: break;
        }
    }
    return k;
}

double bic_value(std::size_t k, double loglik, std::size_t n) {
    return static_cast<double>(k) * std::log(static_cast<double>(n)) - 2.0 * loglik;
}

BicResult bic(const ToTRFit& fit) {
    BicResult r;
    r.k_coeff = param_count(fit.coeff);
    r.k_scale = scale_param_count(fit.scale_models, fit.shape.response);
    r.loglik = fit.loglik();
    r.converged = fit.converged;
    r.bic = bic_value(r.k_total(), r.loglik, fit.n);
    return r;
}

std::uint64_t candidate_seed(std::uint64_t base, const std::vector<std::size_t>& ranks) {
    std::uint64_t h = derive_seed(base, ranks.size());
    for (std::size_t r : ranks) h = derive_seed(h, r + 1);
    return h;
}

RankSearchResult rank_search(const ToTRSpec& base, const RankGrid& grid, const DenseTensor& x, const DenseTensor& y,
                             std::size_t jobs) {
    if (grid.empty()) throw ConfigError("rank grid is empty");
    RankSearchResult out;
    out.table.resize(grid.size());
    std::vector<std::optional<ToTRFit>> fits(grid.size());
    parallel_for(grid.size(), jobs, [&](std::size_t i) {
        RankSearchRow& row = out.table[i];
        row.ranks = grid[i];
        row.seed = candidate_seed(base.seed, grid[i]);
        ToTRSpec spec = base;
        spec.ranks = grid[i];
        spec.seed = row.seed;
        spec.init.reset();
        try {
            ToTRFit f = fit(spec, x, y);
            row.bic = bic(f);
            row.iterations = f.iterations;
            fits[i] = std::move(f);
        } catch (const Error& e) {
            row.error = e.what();
        }
    });
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!fits[i]) continue;
        if (!best) {
            best = i;
            continue;
        }
        const RankSearchRow& a = out.table[i];
        const RankSearchRow& b = out.table[*best];
        if (a.bic.bic < b.bic.bic ||
            (a.bic.bic == b.bic.bic && (a.bic.k_total() < b.bic.k_total() ||
                                        (a.bic.k_total() == b.bic.k_total() && a.ranks < b.ranks))))
            best = i;
    }
    if (!best) throw Error("every rank candidate failed: " + out.table.front().error);
    out.best = *best;
    out.best_fit = std::move(*fits[*best]);
    return out;
}

std::optional<std::size_t> TanovaDesign::balanced() const {
    if (cell_counts.empty() || cell_counts.front() == 0) return std::nullopt;
    for (std::size_t c : cell_counts)
        if (c != cell_counts.front()) return std::nullopt;
    return cell_counts.front();
}

TanovaDesign build_tanova_design(const Dims& levels, const std::vector<std::vector<std::size_t>>& labels) {
    if (levels.empty()) throw ConfigError("TANOVA needs at least one factor");
    for (std::size_t lv : levels)
        if (lv == 0) throw ConfigError("every factor needs at least one level");
    TanovaDesign d;
    d.levels = levels;
    d.labels = labels;
    const std::size_t cells = num_elements(levels), n = labels.size();
    d.cell_counts.assign(cells, 0);
    Dims xd(levels);
    xd.push_back(n);
    d.x = DenseTensor(xd);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i].size() != levels.size())
            throw DimensionError("observation " + std::to_string(i) + " has the wrong number of factor labels");
        std::size_t cell = 0, stride = 1;
        for (std::size_t f = 0; f < levels.size(); ++f) {
            if (labels[i][f] >= levels[f])
                throw DimensionError("label of factor " + std::to_string(f + 1) + " out of range at observation " +
                                     std::to_string(i));
            cell += stride * labels[i][f];
            stride *= levels[f];
        }
        ++d.cell_counts[cell];
        d.x.data()[cell + cells * i] = 1.0;
    }
    for (std::size_t c = 0; c < cells; ++c)
        if (d.cell_counts[c] == 0) d.warnings.push_back("cell " + std::to_string(c) + " has no observations");
    return d;
}

TanovaDesign balanced_tanova_design(const Dims& levels, std::size_t per_cell) {
    const std::size_t cells = num_elements(levels);
    std::vector<std::vector<std::size_t>> labels;
    for (std::size_t c = 0; c < cells; ++c) {
        std::vector<std::size_t> lab(levels.size());
        std::size_t rem = c;
        for (std::size_t f = 0; f < levels.size(); ++f) {
            lab[f] = rem % levels[f];
            rem /= levels[f];
        }
        for (std::size_t u = 0; u < per_cell; ++u) labels.push_back(lab);
    }
    return build_tanova_design(levels, labels);
}

TanovaDesign collapse_factor(const TanovaDesign& design, std::size_t k) {
    if (k < 1 || k > design.levels.size()) throw DimensionError("no factor " + std::to_string(k) + " to collapse");
    Dims levels = design.levels;
    levels[k - 1] = 1;
    auto labels = design.labels;
    for (auto& lab : labels) lab[k - 1] = 0;
    return build_tanova_design(levels, labels);
}

std::vector<std::size_t> reduced_ranks(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks,
                                       std::size_t k) {
    if (k < 1 || k > shape.l()) throw DimensionError("no covariate mode " + std::to_string(k));
    std::vector<std::size_t> r = ranks;
    if (f != Format::tucker) return r;
    r.at(k - 1) = 1;
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t q = 0; q < r.size(); ++q) {
            std::size_t others = 1;
            for (std::size_t j = 0; j < r.size(); ++j)
                if (j != q) others *= r[j];
            if (r[q] > others) {
                r[q] = others;
                changed = true;
            }
        }
    }
    return r;
}

namespace {

Vector residual_spectrum(const Matrix& z) {
    const Matrix g = z.cols() < z.rows() ? Matrix(z.transpose() * z) : Matrix(z * z.transpose());
    return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (g + g.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
}

}  // namespace

std::size_t generalized_rank(const Matrix& z, double rel_tol) {
    const Vector ev = residual_spectrum(z);
    const double top = ev.size() ? ev.maxCoeff() : 0.0;
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) r += ev(i) > rel_tol * top && top > 0.0 ? 1 : 0;
    return r;
}

double log_generalized_det(const Matrix& z, double rel_tol) {
    const Vector ev = residual_spectrum(z);
    const double top = ev.size() ? ev.maxCoeff() : 0.0;
    if (!(top > 0.0)) throw SingularError("zero generalized determinant");
    double s = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > rel_tol * top) s += std::log(ev(i));
    return s;
}

double wilks_lambda(const DenseTensor& residual_full, const DenseTensor& residual_reduced, double rel_tol) {
    if (residual_full.dims() != residual_reduced.dims()) throw DimensionError("residual tensors differ in shape");
    const std::size_t n = residual_full.dims().back();
    const std::size_t m = residual_full.size() / std::max<std::size_t>(n, 1);
    const Matrix zf = residual_full.as_matrix(m), zr = residual_reduced.as_matrix(m);
    return std::exp(log_generalized_det(zf, rel_tol) - log_generalized_det(zr, rel_tol));
}

double wilks_lambda(const ToTRFit& full, const DenseTensor& x_full, const ToTRFit& reduced, const DenseTensor& x_reduced,
                    const DenseTensor& y, double rel_tol) {
    if (!(full.shape.response == reduced.shape.response)) throw DimensionError("nested models need equal response dims");
    return wilks_lambda(residuals(full, x_full, y), residuals(reduced, x_reduced, y), rel_tol);
}

WilksTest wilks_test(const ToTRSpec& spec, const TanovaDesign& design, const DenseTensor& y, std::size_t k) {
    WilksTest t;
    t.full = fit(spec, design.x, y);
    const TanovaDesign red = collapse_factor(design, k);
    ToTRSpec rs = spec;
    rs.init.reset();
    rs.ranks = reduced_ranks(spec.format, t.full.shape, spec.ranks, k);
    rs.allow_rank_deficient = true;
    t.reduced = fit(rs, red.x, y);
    t.lambda = wilks_lambda(t.full, design.x, t.reduced, red.x, y);
    return t;
}

double sample_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw DimensionError("quantile of an empty sample");
    if (level < 0.0 || level > 1.0) throw ConfigError("quantile level outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * level;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double wilks_mc_quantile(const std::function<double(std::uint64_t)>& replicate, std::size_t replicates, double level,
                         std::uint64_t seed, std::size_t jobs, std::vector<double>* values) {
    if (replicates < 1) throw ConfigError("need at least one replicate");
    std::vector<double> v(replicates);
    parallel_for(replicates, jobs, [&](std::size_t b) { v[b] = replicate(derive_seed(seed, b)); });
    if (values) *values = v;
    return sample_quantile(std::move(v), level);
}

}  // namespace totr
