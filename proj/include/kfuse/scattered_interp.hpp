#pragma once

#include "kfuse/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <utility>
#include <vector>

namespace kfuse::interp {

struct Triangulation {
    Eigen::MatrixXd vertices;                    // V x 2
    std::vector<std::array<int, 3>> triangles;   // CCW vertex index triples
    std::vector<std::array<int, 3>> adjacency;   // neighbor across edge opposite vertex i, -1 hull
};

/// Delaunay triangulation by incremental insertion (Bowyer-Watson) followed
/// by an edge-flip legalization sweep. Points must be pairwise distinct at
/// tolerance 1e-12 (relative to the bounding box) and not all collinear.
Triangulation triangulate(const Eigen::MatrixXd& points);

/// Reassembles a triangulation from stored vertices and triangles,
/// recomputing adjacency. Used when deserializing interpolants.
Triangulation assemble_triangulation(Eigen::MatrixXd vertices,
                                     std::vector<std::array<int, 3>> triangles);

enum class FallbackPolicy { nearest_with_flag, hard_error };

struct InterpResult {
    Eigen::VectorXd values;
    bool extrapolated = false;
};

/// Piecewise linear interpolation of vector-valued scattered data via
/// barycentric weights on the Delaunay triangulation.
class LinearInterpolant {
public:
    LinearInterpolant() = default;
    LinearInterpolant(Triangulation tri, Eigen::MatrixXd values,
                      FallbackPolicy policy = FallbackPolicy::nearest_with_flag);

    /// Merges duplicate points at `dedupe_tol` (last write wins), then
    /// triangulates.
    static LinearInterpolant build(const Eigen::MatrixXd& points, const Eigen::MatrixXd& values,
                                   FallbackPolicy policy = FallbackPolicy::nearest_with_flag,
                                   double dedupe_tol = 1e-12);

    InterpResult operator()(double u, double v) const;
    InterpResult operator()(const Eigen::Vector2d& q) const { return (*this)(q[0], q[1]); }

    const Triangulation& triangulation() const { return tri_; }
    const Eigen::MatrixXd& values() const { return values_; }
    FallbackPolicy policy() const { return policy_; }

private:
    int locate(double u, double v) const;  // -1 when outside the hull

    Triangulation tri_;
    Eigen::MatrixXd values_;  // V x c
    FallbackPolicy policy_ = FallbackPolicy::nearest_with_flag;
};

/// Duplicates every (coordinate, angle) sample at angle +/- 2*pi so queries
/// over a cyclic angle always land in the interior band. Angles must lie in
/// (-pi, pi]. Returns 3n points and values: originals first, then the +2*pi
/// block, then the -2*pi block.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> pad_angle_periodic(const Eigen::MatrixXd& points,
                                                               const Eigen::MatrixXd& values);

}  // namespace kfuse::interp
