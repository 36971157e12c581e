#include "totr/io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace totr::io {

static_assert(std::endian::native == std::endian::little, "DTEN1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'T', 'E', 'N'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("truncated DTEN1 header in " + path.string());
    return v;
}

std::vector<double> parse_row(const std::string& line, bool& ok) {
    std::vector<double> row;
    ok = true;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t end = line.find(',', pos);
        if (end == std::string::npos) end = line.size();
        std::string cell = line.substr(pos, end - pos);
        const auto first = cell.find_first_not_of(" \t\r");
        const auto last = cell.find_last_not_of(" \t\r");
        cell = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
            ok = false;
            return row;
        }
        row.push_back(v);
        pos = end + 1;
    }
    return row;
}

}  // namespace

void write_dten(const std::filesystem::path& path, const DenseTensor& x) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put<std::uint8_t>(os, 1);
    put<std::uint8_t>(os, 0);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(x.order()));
    for (std::size_t d : x.dims()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(double)));
    if (!os) throw FormatError("write failed for " + path.string());
}

DenseTensor read_dten(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad DTEN1 magic in " + path.string());
    const auto version = get<std::uint8_t>(is, path);
    if (version != 1) throw FormatError("unsupported DTEN version " + std::to_string(version));
    const auto type = get<std::uint8_t>(is, path);
    if (type != 0) throw FormatError("unsupported DTEN element type " + std::to_string(type));
    const auto order = get<std::uint32_t>(is, path);
    Dims dims(order);
    for (auto& d : dims) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    const std::size_t n = num_elements(dims);
    std::vector<double> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(double))
        throw FormatError("truncated DTEN1 data in " + path.string());
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
    return DenseTensor(dims, std::move(data));
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

void write_csv_tensor(const std::filesystem::path& path, const DenseTensor& x) {
    if (x.order() > 2) throw FormatError("CSV holds tensors of order <= 2");
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    const std::size_t rows = x.order() == 0 ? 1 : x.dims()[0];
    const std::size_t cols = x.order() == 2 ? x.dims()[1] : 1;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (j) os << ',';
            os << format_double(x.data()[i + rows * j]);
        }
        os << '\n';
    }
}

DenseTensor read_csv_tensor(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        bool ok = false;
        auto row = parse_row(line, ok);
        if (!ok) {
            if (first) {
                first = false;
                continue;
            }
            throw FormatError("non-numeric CSV cell in " + path.string());
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw FormatError("ragged CSV rows in " + path.string());
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError("empty CSV file " + path.string());
    const std::size_t r = rows.size(), c = rows.front().size();
    DenseTensor x({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) x.data()[i + r * j] = rows[i][j];
    return x;
}

DenseTensor read_tensor(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return read_csv_tensor(path);
    return read_dten(path);
}

void write_tensor(const std::filesystem::path& path, const DenseTensor& x) {
    if (path.extension() == ".csv") return write_csv_tensor(path, x);
    write_dten(path, x);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::row() {
    cells_.emplace_back();
    return *this;
}

CsvTable& CsvTable::add(const std::string& s) {
    if (cells_.empty()) row();
    cells_.back().push_back(s);
    return *this;
}

CsvTable& CsvTable::add(double v) { return add(format_double(v)); }
CsvTable& CsvTable::add(long long v) { return add(std::to_string(v)); }

void CsvTable::write(std::ostream& os) const {
    for (std::size_t j = 0; j < header_.size(); ++j) os << (j ? "," : "") << header_[j];
    os << '\n';
    for (const auto& r : cells_) {
        for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << r[j];
        os << '\n';
    }
}

void CsvTable::write(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write(os);
}

}  // namespace totr::io
