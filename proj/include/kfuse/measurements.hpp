#pragma once

#include "kfuse/fhn.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>

namespace kfuse::measurements {

struct PcaBasis {
    Eigen::MatrixXd modes;            // D x retained, orthonormal columns
    Eigen::VectorXd singular_values;  // full non-increasing spectrum
    Eigen::VectorXd mean;             // D
    int retained = 0;
    double energy_fraction = 0.0;     // sum of retained sigma^2 over total
};

/// Mean-centered SVD of a D x M snapshot matrix keeping the leading modes.
/// Mode signs are fixed (largest-magnitude entry positive) so results are
/// reproducible. Throws ValidationError when the data rank is below
/// `retained`, naming the achievable rank.
PcaBasis compute_pca(const Eigen::MatrixXd& snapshots, int retained);

/// Stacks (v, w) into a single snapshot vector.
Eigen::VectorXd stack_fields(const fhn::FieldState& state);

Eigen::VectorXd project(const Eigen::VectorXd& snapshot, const PcaBasis& basis);
Eigen::VectorXd project(const fhn::FieldState& state, const PcaBasis& basis);

/// Field values at the grid node nearest to `location`; an exact midpoint
/// resolves to the lower-index node.
Eigen::Vector2d point_measure(const fhn::FieldState& state, const fhn::FhnParams& params,
                              double location = 10.0);

struct WhitenTransform {
    Eigen::VectorXd shift;  // per-component mean
    Eigen::VectorXd scale;  // per-component standard deviation, all > 0

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    Eigen::VectorXd invert(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd invert_rows(const Eigen::MatrixXd& x) const;
};

struct MeasurementDataset {
    Eigen::MatrixXd x;  // M x d measurement snapshots
    Eigen::MatrixXd y;  // M x d, one sampling interval later
    Eigen::VectorXd t;  // M timestamps of x rows
    double dt = 0.0;
    std::string label;

    void validate() const;
};

/// Per-component whitening with statistics taken from the x snapshots; the
/// same transform is applied to the y snapshots (and later to joint or
/// query data). Errors name any zero-variance component.
std::pair<MeasurementDataset, WhitenTransform> whiten(const MeasurementDataset& dataset);

}  // namespace kfuse::measurements
