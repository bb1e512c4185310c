#pragma once

#include "kfuse/common.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <complex>
#include <memory>
#include <vector>

namespace kfuse::dict {

/// One dictionary evaluation psi(x); only nonzero entries are stored.
struct SparsePsi {
    int size = 0;  // K
    std::vector<int> index;
    std::vector<double> value;

    void clear() {
        index.clear();
        value.clear();
    }
    std::complex<double> dot(const Eigen::VectorXcd& xi) const {
        std::complex<double> acc{0.0, 0.0};
        for (size_t i = 0; i < index.size(); ++i) acc += value[i] * xi[index[i]];
        return acc;
    }
    Eigen::VectorXd to_dense() const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(size);
        for (size_t i = 0; i < index.size(); ++i) out[index[i]] = value[i];
        return out;
    }
};

/// Vector-valued observable psi: R^d -> R^K spanning the trial space.
class Dictionary {
public:
    virtual ~Dictionary() = default;
    virtual int size() const = 0;
    virtual int dim() const = 0;
    virtual void evaluate(const Eigen::VectorXd& x, SparsePsi& out) const = 0;
    virtual nlohmann::json to_json() const = 0;

    SparsePsi evaluate(const Eigen::VectorXd& x) const {
        SparsePsi p;
        evaluate(x, p);
        return p;
    }
};

struct NodeSet {
    Eigen::MatrixXd centers;  // K x d, pairwise distinct
    Eigen::VectorXd radii;    // per-node support radius
};

/// Recursively bisects the bounding box until each leaf holds at most
/// max_per_cell points. Centers are leaf centroids; the support radius is
/// cover_factor times the leaf cell diagonal.
NodeSet build_nodes_quadtree(const Eigen::MatrixXd& points, int max_per_cell,
                             double cover_factor = 2.5);

/// Standard meshfree cubic spline on normalized distance, support [0, 1]:
///   2/3 - 4r^2 + 4r^3          for r <= 1/2
///   4/3 - 4r + 4r^2 - 4r^3/3   for 1/2 < r <= 1
double cubic_spline_weight(double r);

/// Moving least squares shape functions with a linear polynomial basis and
/// cubic spline weights. Reproduces constants and linear functions exactly
/// wherever the moment matrix is solvable; a documented ridge stabilizes
/// near-singular moment matrices, and fewer than dim+1 active nodes fall
/// back to normalized (Shepard) weights.
class MlsDictionary : public Dictionary {
public:
    using Dictionary::evaluate;
    MlsDictionary(NodeSet nodes, double ridge = 1e-12);

    int size() const override { return static_cast<int>(nodes_.centers.rows()); }
    int dim() const override { return static_cast<int>(nodes_.centers.cols()); }
    void evaluate(const Eigen::VectorXd& x, SparsePsi& out) const override;
    nlohmann::json to_json() const override;

    const NodeSet& nodes() const { return nodes_; }
    double ridge() const { return ridge_; }

private:
    NodeSet nodes_;
    double ridge_;
};

/// Gaussian radial functions plus one constant observable at index 0.
class RbfDictionary : public Dictionary {
public:
    using Dictionary::evaluate;
    RbfDictionary(Eigen::MatrixXd centers, double shape_parameter);

    int size() const override { return static_cast<int>(centers_.rows()) + 1; }
    int dim() const override { return static_cast<int>(centers_.cols()); }
    void evaluate(const Eigen::VectorXd& x, SparsePsi& out) const override;
    nlohmann::json to_json() const override;

    double shape_parameter() const { return shape_; }

private:
    Eigen::MatrixXd centers_;
    double shape_;
};

/// Monomials up to `degree` in graded lexicographic order, starting with the
/// constant. Degree 1 is the plain linear dictionary [1, x_1, ..., x_d].
class PolynomialDictionary : public Dictionary {
public:
    using Dictionary::evaluate;
    PolynomialDictionary(int dim, int degree);

    int size() const override { return static_cast<int>(exponents_.size()); }
    int dim() const override { return dim_; }
    void evaluate(const Eigen::VectorXd& x, SparsePsi& out) const override;
    nlohmann::json to_json() const override;

private:
    int dim_;
    int degree_;
    std::vector<std::vector<int>> exponents_;
};

std::shared_ptr<Dictionary> dictionary_from_json(const nlohmann::json& j);

}  // namespace kfuse::dict
