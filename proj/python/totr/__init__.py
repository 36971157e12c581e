"""Tensor-on-tensor regression with Tucker, CP, OP and tensor-ring coefficients.

Arrays use the first-mode-fastest layout of the C++ core: covariates have
dims (h..., n), responses (m..., n) and coefficients (h..., m...).
"""

from ._totr import (
    ConfigError,
    DimensionError,
    Fit,
    FormatError,
    SingularError,
    Spec,
    TotrError,
    fit,
    marginal_variances,
    param_count,
    rank_search,
    read_tensor,
    sample_quantile,
    standardize,
    tanova_design,
    wilks_test,
    write_tensor,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Fit",
    "FormatError",
    "SingularError",
    "Spec",
    "TotrError",
    "fit",
    "marginal_variances",
    "param_count",
    "rank_search",
    "read_tensor",
    "sample_quantile",
    "standardize",
    "tanova_design",
    "wilks_test",
    "write_tensor",
]
