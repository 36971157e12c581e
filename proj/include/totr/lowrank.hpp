#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "totr/tensor.hpp"

namespace totr {

enum class Format { tucker, cp, op, tr };

std::string format_name(Format f);
Format parse_format(const std::string& name);

/// Covariate dims h_1..h_l and response dims m_1..m_p.
struct ModelShape {
    Dims covariate;
    Dims response;

    std::size_t l() const { return covariate.size(); }
    std::size_t p() const { return response.size(); }
    std::size_t h() const { return num_elements(covariate); }
    std::size_t m() const { return num_elements(response); }
    bool operator==(const ModelShape&) const = default;
};

/// B = [[V; L_1..L_l, M_1..M_p]].
struct TuckerCoeff {
    DenseTensor core;
    std::vector<Matrix> covariate_factors;  // h_j x c_j
    std::vector<Matrix> response_factors;   // m_k x d_k
};

/// B = sum_r lambda_r L_1(:,r) o ... o M_p(:,r).
struct CpCoeff {
    Vector weights;
    std::vector<Matrix> covariate_factors;  // h_j x r
    std::vector<Matrix> response_factors;   // m_k x r
};

/// B(j_1..j_p, i_1..i_p) = prod_q M_q(i_q, j_q); requires l = p.
struct OpCoeff {
    std::vector<Matrix> factors;  // m_q x h_q
};

/// B(j, i) = tr(L_1[j_1] ... L_l[j_l] M_1[i_1] ... M_p[i_p]).
struct TrCoeff {
    std::vector<DenseTensor> covariate_cores;  // s_{j-1} x h_j x s_j
    std::vector<DenseTensor> response_cores;   // g_{k-1} x m_k x g_k
};

using LowRankCoeff = std::variant<TuckerCoeff, CpCoeff, OpCoeff, TrCoeff>;

Format format_of(const LowRankCoeff& c);

/// Shape implied by the factors; throws DimensionError if the factors disagree.
ModelShape shape_of(const LowRankCoeff& c);

/// Rank vector: Tucker (c..., d...), CP (r), OP (), TR (s_1..s_l, g_1..g_p).
std::vector<std::size_t> ranks_of(const LowRankCoeff& c);

/// Validates a rank vector for a format and shape. For TR, a vector of length
/// l+p gives (s_1..s_l, g_1..g_p); length l+p+1 additionally gives s_0 first,
/// which must equal g_p.
void validate_ranks(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks);

void validate(const LowRankCoeff& c);

/// Dense B with dims (h..., m...). TR refuses intermediates above `element_budget`.
DenseTensor to_full(const LowRankCoeff& c, std::size_t element_budget = 100'000'000);

double coeff_norm(const LowRankCoeff& c);

/// Number of free parameters K_B.
std::size_t param_count(const LowRankCoeff& c);
std::size_t param_count(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks);

LowRankCoeff random_coeff(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks,
                          std::uint64_t seed);

/// All factors in chain order (covariate modes then response modes).
std::vector<Matrix> cp_all_factors(const CpCoeff& c);
std::vector<DenseTensor> tr_all_cores(const TrCoeff& c);

/// Order-(l+p) TR chain of cores contracted left to right, before the trace:
/// dims (r_0, n_1, ..., n_L, r_L).
DenseTensor tr_chain(std::span<const DenseTensor> cores, std::size_t element_budget = 100'000'000);

/// Writes manifest.json plus one DTEN1 file per factor into `dir`.
void save_coeff(const std::filesystem::path& dir, const LowRankCoeff& c);
LowRankCoeff load_coeff(const std::filesystem::path& dir);

}  // namespace totr
