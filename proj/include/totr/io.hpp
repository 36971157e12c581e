#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "totr/tensor.hpp"

namespace totr::io {

/// DTEN1 binary layout: "DTEN", u8 version (1), u8 type (0 = f64), u32 order,
/// order x u64 dims, then f64 data, all little-endian, first mode fastest.
void write_dten(const std::filesystem::path& path, const DenseTensor& x);
DenseTensor read_dten(const std::filesystem::path& path);

/// Order <= 2 tensors as comma-separated rows. A non-numeric first line is skipped on read.
void write_csv_tensor(const std::filesystem::path& path, const DenseTensor& x);
DenseTensor read_csv_tensor(const std::filesystem::path& path);

/// Reads .dten or .csv by extension.
DenseTensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const DenseTensor& x);

std::string format_double(double v);

/// Table writer: header row, then rows of cells; numbers use 17 significant digits.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);
    CsvTable& row();
    CsvTable& add(const std::string& s);
    CsvTable& add(double v);
    CsvTable& add(long long v);
    CsvTable& add(std::size_t v) { return add(static_cast<long long>(v)); }
    CsvTable& add(int v) { return add(static_cast<long long>(v)); }
    void write(std::ostream& os) const;
    void write(const std::filesystem::path& path) const;
    std::size_t rows() const { return cells_.size(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> cells_;
};

}  // namespace totr::io
