#include "totr/lowrank.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "totr/io.hpp"
#include "totr/matrix_ops.hpp"
#include "totr/random.hpp"

namespace totr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t rows(const Matrix& m) { return static_cast<std::size_t>(m.rows()); }
std::size_t cols(const Matrix& m) { return static_cast<std::size_t>(m.cols()); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

std::vector<std::size_t> tr_right_ranks(const std::vector<DenseTensor>& cores) {
    std::vector<std::size_t> r;
    for (const auto& c : cores) r.push_back(c.dims()[2]);
    return r;
}

void validate_tr_chain(const std::vector<DenseTensor>& cores) {
    require(!cores.empty(), "TR coefficient needs at least one core");
    for (const auto& c : cores) require(c.order() == 3, "TR cores must be order-3 tensors");
    for (std::size_t t = 0; t < cores.size(); ++t) {
        const auto& next = cores[(t + 1) % cores.size()];
        if (cores[t].dims()[2] != next.dims()[0])
            throw DimensionError("TR ranks violate the cyclic closure between cores " + std::to_string(t + 1) +
                                 " and " + std::to_string((t + 1) % cores.size() + 1));
    }
}

}  // namespace

std::string format_name(Format f) {
    switch (f) {
        case Format::tucker: return "tucker";
        case Format::cp: return "cp";
        case Format::op: return "op";
        case Format::tr: return "tr";
    }
    return "?";
}

Format parse_format(const std::string& name) {
    if (name == "tucker" || name == "tk" || name == "TK") return Format::tucker;
    if (name == "cp" || name == "CP") return Format::cp;
    if (name == "op" || name == "OP") return Format::op;
    if (name == "tr" || name == "TR") return Format::tr;
    throw ConfigError("unknown coefficient format '" + name + "'");
}

Format format_of(const LowRankCoeff& c) {
    return std::visit(overloaded{[](const TuckerCoeff&) { return Format::tucker; },
                                 [](const CpCoeff&) { return Format::cp; },
                                 [](const OpCoeff&) { return Format::op; },
                                 [](const TrCoeff&) { return Format::tr; }},
                      c);
}

std::vector<Matrix> cp_all_factors(const CpCoeff& c) {
    std::vector<Matrix> all(c.covariate_factors);
    all.insert(all.end(), c.response_factors.begin(), c.response_factors.end());
    return all;
}

std::vector<DenseTensor> tr_all_cores(const TrCoeff& c) {
    std::vector<DenseTensor> all(c.covariate_cores);
    all.insert(all.end(), c.response_cores.begin(), c.response_cores.end());
    return all;
}

ModelShape shape_of(const LowRankCoeff& coeff) {
    validate(coeff);
    ModelShape s;
    std::visit(overloaded{[&](const TuckerCoeff& c) {
                              for (const auto& a : c.covariate_factors) s.covariate.push_back(rows(a));
                              for (const auto& a : c.response_factors) s.response.push_back(rows(a));
                          },
                          [&](const CpCoeff& c) {
                              for (const auto& a : c.covariate_factors) s.covariate.push_back(rows(a));
                              for (const auto& a : c.response_factors) s.response.push_back(rows(a));
                          },
                          [&](const OpCoeff& c) {
                              for (const auto& a : c.factors) {
                                  s.covariate.push_back(cols(a));
                                  s.response.push_back(rows(a));
                              }
                          },
                          [&](const TrCoeff& c) {
                              for (const auto& g : c.covariate_cores) s.covariate.push_back(g.dims()[1]);
                              for (const auto& g : c.response_cores) s.response.push_back(g.dims()[1]);
                          }},
               coeff);
    return s;
}

std::vector<std::size_t> ranks_of(const LowRankCoeff& coeff) {
    return std::visit(overloaded{[](const TuckerCoeff& c) { return c.core.dims(); },
                                 [](const CpCoeff& c) {
                                     return std::vector<std::size_t>{static_cast<std::size_t>(c.weights.size())};
                                 },
                                 [](const OpCoeff&) { return std::vector<std::size_t>{}; },
                                 [](const TrCoeff& c) { return tr_right_ranks(tr_all_cores(c)); }},
                      coeff);
}

void validate_ranks(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks) {
    require(shape.l() >= 1 && shape.p() >= 1, "model needs at least one covariate and one response mode");
    for (std::size_t d : shape.covariate) require(d >= 1, "covariate dims must be positive");
    for (std::size_t d : shape.response) require(d >= 1, "response dims must be positive");
    for (std::size_t r : ranks) require(r >= 1, "ranks must be positive");
    const std::size_t l = shape.l(), p = shape.p();
    switch (f) {
        case Format::tucker:
            require(ranks.size() == l + p, "Tucker ranks need one entry per covariate and response mode");
            for (std::size_t j = 0; j < l; ++j)
                require(ranks[j] <= shape.covariate[j], "Tucker covariate rank exceeds mode size");
            for (std::size_t k = 0; k < p; ++k)
                require(ranks[l + k] <= shape.response[k], "Tucker response rank exceeds mode size");
            for (std::size_t q = 0; q < l + p; ++q) {
                std::size_t others = 1;
                for (std::size_t j = 0; j < l + p; ++j)
                    if (j != q) others *= ranks[j];
                require(ranks[q] <= others, "Tucker rank of mode " + std::to_string(q + 1) +
                                                " exceeds the product of the other ranks");
            }
            break;
        case Format::cp: require(ranks.size() == 1, "CP ranks hold a single entry r"); break;
        case Format::op:
            require(ranks.empty(), "OP format takes no ranks");
            require(l == p, "OP format needs l = p");
            break;
        case Format::tr:
            if (ranks.size() == l + p + 1) {
                require(ranks.front() == ranks.back(), "TR ranks violate the cyclic closure s_0 = g_p");
            } else {
                require(ranks.size() == l + p, "TR ranks need l + p entries");
            }
            break;
    }
}

void validate(const LowRankCoeff& coeff) {
    std::visit(
        overloaded{
            [](const TuckerCoeff& c) {
                const std::size_t l = c.covariate_factors.size(), p = c.response_factors.size();
                require(l >= 1 && p >= 1, "Tucker coefficient needs covariate and response factors");
                require(c.core.order() == l + p, "Tucker core order must equal l + p");
                for (std::size_t j = 0; j < l; ++j)
                    require(cols(c.covariate_factors[j]) == c.core.dims()[j], "Tucker covariate factor/core mismatch");
                for (std::size_t k = 0; k < p; ++k)
                    require(cols(c.response_factors[k]) == c.core.dims()[l + k], "Tucker response factor/core mismatch");
            },
            [](const CpCoeff& c) {
                require(!c.covariate_factors.empty() && !c.response_factors.empty(),
                        "CP coefficient needs covariate and response factors");
                const auto r = c.weights.size();
                require(r >= 1, "CP rank must be positive");
                for (const auto& a : c.covariate_factors) require(a.cols() == r, "CP factors must have r columns");
                for (const auto& a : c.response_factors) require(a.cols() == r, "CP factors must have r columns");
            },
            [](const OpCoeff& c) { require(!c.factors.empty(), "OP coefficient needs factors"); },
            [](const TrCoeff& c) {
                require(!c.covariate_cores.empty() && !c.response_cores.empty(),
                        "TR coefficient needs covariate and response cores");
                validate_tr_chain(tr_all_cores(c));
            }},
        coeff);
}

DenseTensor tr_chain(std::span<const DenseTensor> cores, std::size_t element_budget) {
    DenseTensor acc = cores.front();
    for (std::size_t t = 1; t < cores.size(); ++t) {
        const std::size_t next_size = acc.size() / acc.dims().back() * cores[t].dims()[1] * cores[t].dims()[2];
        if (next_size > element_budget)
            throw DimensionError("TR chain intermediate of " + std::to_string(next_size) +
                                 " elements exceeds the element budget");
        acc = last_first_contract(acc, cores[t]);
    }
    return acc;
}

DenseTensor to_full(const LowRankCoeff& coeff, std::size_t element_budget) {
    validate(coeff);
    const ModelShape s = shape_of(coeff);
    Dims dims(s.covariate);
    dims.insert(dims.end(), s.response.begin(), s.response.end());
    return std::visit(overloaded{[&](const TuckerCoeff& c) {
                                     std::vector<Matrix> fs(c.covariate_factors);
                                     fs.insert(fs.end(), c.response_factors.begin(), c.response_factors.end());
                                     return tucker_product(c.core, fs);
                                 },
                                 [&](const CpCoeff& c) {
                                     const Vector v = khatri_rao_reversed(cp_all_factors(c)) * c.weights;
                                     return DenseTensor(dims, std::vector<double>(v.data(), v.data() + v.size()));
                                 },
                                 [&](const OpCoeff& c) { return outer_product(std::span<const Matrix>(c.factors)); },
                                 [&](const TrCoeff& c) {
                                     const auto cores = tr_all_cores(c);
                                     return tensor_trace(tr_chain(cores, element_budget)).reshaped(dims);
                                 }},
                      coeff);
}

double coeff_norm(const LowRankCoeff& coeff) {
    validate(coeff);
    return std::visit(
        overloaded{
            [](const TuckerCoeff& c) {
                // ||[[V; A_q]]|| = ||[[V; R_q]]|| for thin QR factors A_q = Q_q R_q.
                std::vector<Matrix> rs;
                auto reduce = [&](const Matrix& a) {
                    if (a.rows() < a.cols()) {
                        rs.push_back(a);
                        return;
                    }
                    Eigen::HouseholderQR<Matrix> qr(a);
                    rs.push_back(qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>());
                };
                for (const auto& a : c.covariate_factors) reduce(a);
                for (const auto& a : c.response_factors) reduce(a);
                return tucker_product(c.core, rs).norm();
            },
            [](const CpCoeff& c) {
                Matrix g = c.weights * c.weights.transpose();
                for (const auto& a : cp_all_factors(c)) g = g.cwiseProduct(a.transpose() * a);
                return std::sqrt(std::max(0.0, g.sum()));
            },
            [](const OpCoeff& c) {
                double n = 1.0;
                for (const auto& a : c.factors) n *= a.norm();
                return n;
            },
            [](const TrCoeff& c) {
                // ||B||^2 = tr(prod_t E_t), E_t = sum_n C_t[n] (x) C_t[n].
                Matrix acc;
                bool first = true;
                for (const auto& g : tr_all_cores(c)) {
                    const std::size_t a = g.dims()[0], nn = g.dims()[1], b = g.dims()[2];
                    Matrix e = Matrix::Zero(a * a, b * b);
                    for (std::size_t i = 0; i < nn; ++i) {
                        Matrix slice(a, b);
                        for (std::size_t u = 0; u < b; ++u)
                            for (std::size_t v = 0; v < a; ++v) slice(v, u) = g.data()[v + a * (i + nn * u)];
                        e += kronecker(slice, slice);
                    }
                    acc = first ? e : Matrix(acc * e);
                    first = false;
                }
                return std::sqrt(std::max(0.0, acc.trace()));
            }},
        coeff);
}

std::size_t param_count(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks) {
    validate_ranks(f, shape, ranks);
    const std::size_t l = shape.l(), p = shape.p();
    long long k = 0;
    switch (f) {
        case Format::tucker: {
            long long core = 1;
            for (std::size_t r : ranks) core *= static_cast<long long>(r);
            k = core;
            for (std::size_t j = 0; j < l; ++j) {
                const long long h = static_cast<long long>(shape.covariate[j]), c = static_cast<long long>(ranks[j]);
                k += h * c - c * (c + 1) / 2;
            }
            for (std::size_t q = 0; q < p; ++q) {
                const long long m = static_cast<long long>(shape.response[q]), d = static_cast<long long>(ranks[l + q]);
                k += m * d - d * (d + 1) / 2;
            }
            break;
        }
        case Format::cp: {
            long long dims = 0;
            for (std::size_t d : shape.covariate) dims += static_cast<long long>(d);
            for (std::size_t d : shape.response) dims += static_cast<long long>(d);
            k = static_cast<long long>(ranks[0]) * (dims - static_cast<long long>(l + p) + 1);
            break;
        }
        case Format::op: {
            for (std::size_t q = 0; q < p; ++q)
                k += static_cast<long long>(shape.covariate[q] * shape.response[q]);
            k += 1 - static_cast<long long>(p);
            break;
        }
        case Format::tr: {
            std::vector<std::size_t> r(ranks.end() - static_cast<std::ptrdiff_t>(l + p), ranks.end());
            Dims n(shape.covariate);
            n.insert(n.end(), shape.response.begin(), shape.response.end());
            const std::size_t L = l + p;
            for (std::size_t t = 0; t < L; ++t) k += static_cast<long long>(r[(t + L - 1) % L] * n[t] * r[t]);
            k += 1 - static_cast<long long>(L);
            break;
        }
    }
    return static_cast<std::size_t>(std::max(0LL, k));
}

std::size_t param_count(const LowRankCoeff& c) { return param_count(format_of(c), shape_of(c), ranks_of(c)); }

LowRankCoeff random_coeff(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks,
                          std::uint64_t seed) {
    validate_ranks(f, shape, ranks);
    Rng rng(seed);
    const std::size_t l = shape.l(), p = shape.p();
    switch (f) {
        case Format::tucker: {
            TuckerCoeff c;
            c.core = rng.uniform_tensor(ranks);
            for (std::size_t j = 0; j < l; ++j) c.covariate_factors.push_back(rng.uniform_matrix(shape.covariate[j], ranks[j]));
            for (std::size_t k = 0; k < p; ++k)
                c.response_factors.push_back(rng.uniform_matrix(shape.response[k], ranks[l + k]));
            return c;
        }
        case Format::cp: {
            CpCoeff c;
            c.weights = Vector::Ones(static_cast<Eigen::Index>(ranks[0]));
            for (std::size_t d : shape.covariate) c.covariate_factors.push_back(rng.uniform_matrix(d, ranks[0]));
            for (std::size_t d : shape.response) c.response_factors.push_back(rng.uniform_matrix(d, ranks[0]));
            return c;
        }
        case Format::op: {
            OpCoeff c;
            for (std::size_t q = 0; q < p; ++q) c.factors.push_back(rng.uniform_matrix(shape.response[q], shape.covariate[q]));
            return c;
        }
        case Format::tr: {
            const std::size_t L = l + p;
            std::vector<std::size_t> r(ranks.end() - static_cast<std::ptrdiff_t>(L), ranks.end());
            TrCoeff c;
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t left = r[(t + L - 1) % L];
                if (t < l)
                    c.covariate_cores.push_back(rng.uniform_tensor({left, shape.covariate[t], r[t]}));
                else
                    c.response_cores.push_back(rng.uniform_tensor({left, shape.response[t - l], r[t]}));
            }
            return c;
        }
    }
    throw ConfigError("unknown format");
}

void save_coeff(const std::filesystem::path& dir, const LowRankCoeff& coeff) {
    validate(coeff);
    std::filesystem::create_directories(dir);
    nlohmann::json man;
    man["format"] = format_name(format_of(coeff));
    man["ranks"] = ranks_of(coeff);
    const ModelShape s = shape_of(coeff);
    man["covariate_dims"] = s.covariate;
    man["response_dims"] = s.response;
    nlohmann::json files = nlohmann::json::object();
    auto put = [&](const std::string& key, const std::string& name, const DenseTensor& t) {
        io::write_dten(dir / name, t);
        files[key].push_back(name);
    };
    auto put_mats = [&](const std::string& key, const std::string& stem, const std::vector<Matrix>& ms) {
        files[key] = nlohmann::json::array();
        for (std::size_t i = 0; i < ms.size(); ++i)
            put(key, stem + std::to_string(i + 1) + ".dten", DenseTensor::from_matrix(ms[i]));
    };
    auto put_cores = [&](const std::string& key, const std::string& stem, const std::vector<DenseTensor>& ts) {
        files[key] = nlohmann::json::array();
        for (std::size_t i = 0; i < ts.size(); ++i) put(key, stem + std::to_string(i + 1) + ".dten", ts[i]);
    };
    std::visit(overloaded{[&](const TuckerCoeff& c) {
                              put("core", "core.dten", c.core);
                              put_mats("covariate_factors", "L", c.covariate_factors);
                              put_mats("response_factors", "M", c.response_factors);
                          },
                          [&](const CpCoeff& c) {
                              put("weights", "lambda.dten", DenseTensor::from_vector(c.weights));
                              put_mats("covariate_factors", "L", c.covariate_factors);
                              put_mats("response_factors", "M", c.response_factors);
                          },
                          [&](const OpCoeff& c) { put_mats("factors", "M", c.factors); },
                          [&](const TrCoeff& c) {
                              put_cores("covariate_cores", "L", c.covariate_cores);
                              put_cores("response_cores", "M", c.response_cores);
                          }},
               coeff);
    man["files"] = files;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw FormatError("cannot write manifest in " + dir.string());
    os << man.dump(2) << '\n';
}

LowRankCoeff load_coeff(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw FormatError("missing manifest.json in " + dir.string());
    nlohmann::json man;
    try {
        is >> man;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    const Format f = parse_format(man.at("format").get<std::string>());
    const auto& files = man.at("files");
    auto tensors = [&](const std::string& key) {
        std::vector<DenseTensor> out;
        for (const auto& name : files.at(key)) out.push_back(io::read_dten(dir / name.get<std::string>()));
        return out;
    };
    auto matrices = [&](const std::string& key) {
        std::vector<Matrix> out;
        for (const auto& t : tensors(key)) {
            if (t.order() != 2) throw FormatError("factor file is not a matrix");
            out.push_back(t.as_matrix(t.dims()[0]));
        }
        return out;
    };
    LowRankCoeff coeff;
    switch (f) {
        case Format::tucker:
            coeff = TuckerCoeff{tensors("core").at(0), matrices("covariate_factors"), matrices("response_factors")};
            break;
        case Format::cp: {
            const DenseTensor w = tensors("weights").at(0);
            coeff = CpCoeff{w.vec_view(), matrices("covariate_factors"), matrices("response_factors")};
            break;
        }
        case Format::op: coeff = OpCoeff{matrices("factors")}; break;
        case Format::tr: coeff = TrCoeff{tensors("covariate_cores"), tensors("response_cores")}; break;
    }
    validate(coeff);
    return coeff;
}

}  // namespace totr
