#pragma once

#include "kfuse/dictionary.hpp"
#include "kfuse/measurements.hpp"

#include <Eigen/Dense>

#include <complex>
#include <memory>

namespace kfuse::edmd {

struct GramPair {
    Eigen::MatrixXd G;  // sum psi(x) psi(x)^T, symmetric PSD
    Eigen::MatrixXd A;  // sum psi(x) psi(y)^T
    long m_count = 0;
};

/// Accumulates G and A over the dataset in snapshot order. A coverage
/// failure reports the offending snapshot index.
GramPair accumulate(const measurements::MeasurementDataset& dataset, const dict::Dictionary& dic);

/// K = pinv(G) * A with the pseudoinverse truncated at singular values below
/// svd_tol * sigma_max. Records the retained rank when rank_used is given.
Eigen::MatrixXd koopman_matrix(const GramPair& gp, double svd_tol, int* rank_used = nullptr);

struct KoopmanDecomposition {
    Eigen::VectorXcd mu;      // discrete eigenvalues, |mu| descending
    Eigen::VectorXcd lambda;  // log(mu)/dt on the principal branch
    Eigen::MatrixXcd xi;      // K x n eigenvector columns, unit norm, phase fixed
    std::shared_ptr<const dict::Dictionary> dictionary;
    double dt = 0.0;
    int svd_rank_used = 0;

    int count() const { return static_cast<int>(mu.size()); }
};

/// Full nonsymmetric eigendecomposition of an explicit Koopman matrix.
/// Eigenvectors are normalized, the largest-magnitude entry is rotated to
/// the positive real axis, and tuples are sorted by |mu| descending with
/// Im(mu) >= 0 first on ties.
KoopmanDecomposition eigendecompose(const Eigen::MatrixXd& koopman, double dt,
                                    std::shared_ptr<const dict::Dictionary> dictionary = nullptr);

/// Same eigentuples as eigendecompose(koopman_matrix(gp, svd_tol)) restricted
/// to the retained range of G, computed on the rank-reduced problem. This is
/// the path the pipeline uses for large dictionaries.
KoopmanDecomposition decompose(const GramPair& gp, double svd_tol, double dt,
                               std::shared_ptr<const dict::Dictionary> dictionary);

/// Principal-branch continuous-time eigenvalue, Im in (-pi/dt, pi/dt].
std::complex<double> continuous_eigenvalue(std::complex<double> mu, double dt);

std::complex<double> eval_eigenfunction(const Eigen::VectorXd& x, int k,
                                        const KoopmanDecomposition& dec);

}  // namespace kfuse::edmd
