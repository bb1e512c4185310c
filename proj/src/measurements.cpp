#include "kfuse/measurements.hpp"

#include "kfuse/common.hpp"

#include <cmath>

namespace kfuse::measurements {

PcaBasis compute_pca(const Eigen::MatrixXd& snapshots, int retained) {
    const Eigen::Index D = snapshots.rows();
    const Eigen::Index M = snapshots.cols();
    if (retained < 1) throw ValidationError("compute_pca: retained must be >= 1");
    if (M < retained)
        throw ValidationError("compute_pca: need at least `retained` snapshots, got " +
                              std::to_string(M));
    if (!snapshots.allFinite()) throw ValidationError("compute_pca: non-finite snapshot data");

    PcaBasis basis;
    basis.mean = snapshots.rowwise().mean();
    Eigen::MatrixXd centered = snapshots.colwise() - basis.mean.col(0);

    // Covariance route: D x D eigendecomposition gives the same modes as the
    // SVD of the centered snapshot matrix with sigma_i = sqrt(lambda_i).
    Eigen::MatrixXd cov = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("compute_pca: eigensolver failed");

    const Eigen::Index n = es.eigenvalues().size();
    Eigen::VectorXd evals(n);
    Eigen::MatrixXd evecs(D, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        evals[i] = std::max(0.0, es.eigenvalues()[n - 1 - i]);
        evecs.col(i) = es.eigenvectors().col(n - 1 - i);
    }

    const double total = evals.sum();
    if (!(total > 0.0)) throw ValidationError("compute_pca: snapshot matrix has zero variance");
    // covariance eigenvalues below eps * lambda_max are solver noise
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (evals[i] > evals[0] * 1e-13) ++rank;
    if (rank < retained)
        throw ValidationError("compute_pca: requested " + std::to_string(retained) +
                              " modes but achievable rank is " + std::to_string(rank));

    basis.retained = retained;
    basis.singular_values = evals.array().sqrt();
    basis.modes = evecs.leftCols(retained);
    for (Eigen::Index k = 0; k < retained; ++k) {
        Eigen::Index imax;
        basis.modes.col(k).cwiseAbs().maxCoeff(&imax);
        if (basis.modes(imax, k) < 0.0) basis.modes.col(k) = -basis.modes.col(k);
    }
    basis.energy_fraction = evals.head(retained).sum() / total;
    return basis;
}

Eigen::VectorXd stack_fields(const fhn::FieldState& state) {
    Eigen::VectorXd out(state.v.size() + state.w.size());
    out.head(state.v.size()) = state.v.matrix();
    out.tail(state.w.size()) = state.w.matrix();
    return out;
}

Eigen::VectorXd project(const Eigen::VectorXd& snapshot, const PcaBasis& basis) {
    if (snapshot.size() != basis.mean.size())
        throw ValidationError("project: snapshot length " + std::to_string(snapshot.size()) +
                              " does not match basis dimension " +
                              std::to_string(basis.mean.size()));
    return basis.modes.transpose() * (snapshot - basis.mean);
}

Eigen::VectorXd project(const fhn::FieldState& state, const PcaBasis& basis) {
    return project(stack_fields(state), basis);
}

Eigen::Vector2d point_measure(const fhn::FieldState& state, const fhn::FhnParams& params,
                              double location) {
    if (location < 0.0 || location > params.domain_length)
        throw ValidationError("point_measure: location outside [0, domain_length]");
    const double u = location / params.dx();
    // nearest node; exact midpoint resolves to the lower index
    int idx = static_cast<int>(std::ceil(u - 0.5));
    idx = std::min(std::max(idx, 0), params.grid_points - 1);
    return {state.v[idx], state.w[idx]};
}

Eigen::VectorXd WhitenTransform::apply(const Eigen::VectorXd& x) const {
    return (x - shift).cwiseQuotient(scale);
}

Eigen::VectorXd WhitenTransform::invert(const Eigen::VectorXd& x) const {
    return x.cwiseProduct(scale) + shift;
}

Eigen::MatrixXd WhitenTransform::apply_rows(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - shift.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd WhitenTransform::invert_rows(const Eigen::MatrixXd& x) const {
    return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
           shift.transpose();
}

void MeasurementDataset::validate() const {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError("MeasurementDataset: x/y shape mismatch");
    if (t.size() != x.rows()) throw ValidationError("MeasurementDataset: timestamp count mismatch");
    if (!(dt > 0.0)) throw ValidationError("MeasurementDataset: dt must be > 0");
    if (!x.allFinite() || !y.allFinite())
        throw ValidationError("MeasurementDataset: non-finite entries");
}

std::pair<MeasurementDataset, WhitenTransform> whiten(const MeasurementDataset& dataset) {
    dataset.validate();
    const Eigen::Index M = dataset.x.rows();
    const Eigen::Index d = dataset.x.cols();
    if (M < 2) throw ValidationError("whiten: need at least 2 samples");

    WhitenTransform tf;
    tf.shift = dataset.x.colwise().mean();
    tf.scale.resize(d);
    for (Eigen::Index c = 0; c < d; ++c) {
        const double var =
            (dataset.x.col(c).array() - tf.shift[c]).square().sum() / static_cast<double>(M - 1);
        const double sd = std::sqrt(var);
        if (!(sd > 1e-14 * (1.0 + std::abs(tf.shift[c]))))
            throw ValidationError("whiten: component " + std::to_string(c) +
                                  " has zero variance");
        tf.scale[c] = sd;
    }

    MeasurementDataset out = dataset;
    out.x = tf.apply_rows(dataset.x);
    out.y = tf.apply_rows(dataset.y);
    return {std::move(out), std::move(tf)};
}

}  // namespace kfuse::measurements
