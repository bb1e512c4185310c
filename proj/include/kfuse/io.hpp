#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace kfuse::io {

struct CsvTable {
    std::vector<std::string> columns;
    Eigen::MatrixXd data;  // rows x columns

    /// Index of a named column; throws ValidationError if absent.
    int col(const std::string& name) const;
    bool has_col(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

/// Writes values with "%.17g" so files round-trip bit-exactly.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& data);

void write_matrix_bin(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_bin(const std::string& path);
void write_cmatrix_bin(const std::string& path, const Eigen::MatrixXcd& m);
Eigen::MatrixXcd read_cmatrix_bin(const std::string& path);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

std::string format_double(double v);

std::vector<double> to_std(const Eigen::VectorXd& v);
Eigen::VectorXd from_std(const std::vector<double>& v);

}  // namespace kfuse::io
