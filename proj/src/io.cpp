#include "kfuse/io.hpp"

#include "kfuse/common.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kfuse::io {

int CsvTable::col(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    throw ValidationError("csv: missing column '" + name + "'");
}

bool CsvTable::has_col(const std::string& name) const {
    for (const auto& c : columns)
        if (c == name) return true;
    return false;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open csv file: " + path);
    std::string line;
    if (!std::getline(in, line) || trim(line).empty())
        throw ValidationError("empty or headerless csv file: " + path);
    CsvTable t;
    t.columns = split_commas(line);
    const size_t ncol = t.columns.size();

    std::vector<double> buf;
    size_t nrow = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto fields = split_commas(line);
        if (fields.size() != ncol)
            throw ValidationError("csv row " + std::to_string(nrow + 1) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(ncol) + ": " + path);
        for (const auto& f : fields) {
            char* end = nullptr;
            double v = std::strtod(f.c_str(), &end);
            if (end == f.c_str())
                throw ValidationError("csv: unparsable value '" + f + "' in " + path);
            buf.push_back(v);
        }
        ++nrow;
    }
    if (nrow == 0) throw ValidationError("csv file has no data rows: " + path);
    t.data.resize(nrow, ncol);
    for (size_t r = 0; r < nrow; ++r)
        for (size_t c = 0; c < ncol; ++c) t.data(r, c) = buf[r * ncol + c];
    return t;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& data) {
    if (data.cols() != static_cast<Eigen::Index>(columns.size()))
        throw ValidationError("csv write: column count mismatch for " + path);
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open csv file for write: " + path);
    for (size_t i = 0; i < columns.size(); ++i) {
        if (i) out << ',';
        out << columns[i];
    }
    out << '\n';
    char buf[40];
    std::string line;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        line.clear();
        for (Eigen::Index c = 0; c < data.cols(); ++c) {
            if (c) line += ',';
            std::snprintf(buf, sizeof(buf), "%.17g", data(r, c));
            line += buf;
        }
        line += '\n';
        out << line;
    }
    if (!out) throw ValidationError("write failed: " + path);
}

namespace {
constexpr char kMagicReal[8] = {'K', 'F', 'M', 'A', 'T', 'R', '0', '1'};
constexpr char kMagicCplx[8] = {'K', 'F', 'M', 'A', 'T', 'C', '0', '1'};

void write_bin(const std::string& path, const char* magic, std::int64_t rows, std::int64_t cols,
               const void* payload, size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for write: " + path);
    out.write(magic, 8);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!out) throw ValidationError("write failed: " + path);
}

void read_bin_header(std::ifstream& in, const std::string& path, const char* magic,
                     std::int64_t& rows, std::int64_t& cols) {
    char got[8];
    in.read(got, 8);
    if (!in || std::memcmp(got, magic, 8) != 0)
        throw ValidationError("bad matrix file header: " + path);
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    if (!in || rows < 0 || cols < 0) throw ValidationError("bad matrix file dims: " + path);
}
}  // namespace

void write_matrix_bin(const std::string& path, const Eigen::MatrixXd& m) {
    write_bin(path, kMagicReal, m.rows(), m.cols(), m.data(),
              sizeof(double) * static_cast<size_t>(m.size()));
}

Eigen::MatrixXd read_matrix_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open matrix file: " + path);
    std::int64_t rows, cols;
    read_bin_header(in, path, kMagicReal, rows, cols);
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    if (!in) throw ValidationError("truncated matrix file: " + path);
    return m;
}

void write_cmatrix_bin(const std::string& path, const Eigen::MatrixXcd& m) {
    write_bin(path, kMagicCplx, m.rows(), m.cols(), m.data(),
              2 * sizeof(double) * static_cast<size_t>(m.size()));
}

Eigen::MatrixXcd read_cmatrix_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open matrix file: " + path);
    std::int64_t rows, cols;
    read_bin_header(in, path, kMagicCplx, rows, cols);
    Eigen::MatrixXcd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(2 * sizeof(double) * static_cast<size_t>(m.size())));
    if (!in) throw ValidationError("truncated matrix file: " + path);
    return m;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open json file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("invalid json in " + path + ": " + e.what());
    }
    return j;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open json file for write: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw ValidationError("write failed: " + path);
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_std(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

}  // namespace kfuse::io
