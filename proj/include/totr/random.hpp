#pragma once

#include <cstdint>
#include <random>

#include "totr/tensor.hpp"

namespace totr {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double normal() { return normal_(engine_); }
    std::uint64_t next_seed() { return engine_(); }

    Matrix uniform_matrix(std::size_t rows, std::size_t cols);
    Matrix normal_matrix(std::size_t rows, std::size_t cols);
    DenseTensor uniform_tensor(const Dims& dims);
    DenseTensor normal_tensor(const Dims& dims);

    /// W_n(df, I) with integer df, as a sum of df outer products.
    Matrix wishart_identity(std::size_t n, std::size_t df);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Deterministic per-task seed derived from a base seed and a task index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace totr
