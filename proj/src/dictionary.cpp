#include "kfuse/dictionary.hpp"

#include "kfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace kfuse::dict {

double cubic_spline_weight(double r) {
    if (r < 0.0) throw ValidationError("cubic_spline_weight: r must be >= 0");
    if (r <= 0.5) return 2.0 / 3.0 - 4.0 * r * r + 4.0 * r * r * r;
    // factored form of 4/3 - 4r + 4r^2 - (4/3)r^3; exact zero at r = 1
    if (r <= 1.0) return (4.0 / 3.0) * (1.0 - r) * (1.0 - r) * (1.0 - r);
    return 0.0;
}

NodeSet build_nodes_quadtree(const Eigen::MatrixXd& points, int max_per_cell,
                             double cover_factor) {
    const Eigen::Index M = points.rows();
    const int d = static_cast<int>(points.cols());
    if (M < 1) throw ValidationError("build_nodes_quadtree: need at least one point");
    if (max_per_cell < 1) throw ValidationError("build_nodes_quadtree: max_per_cell must be >= 1");
    if (d < 1 || d > 3)
        throw ValidationError("build_nodes_quadtree: dimension must be 1, 2 or 3");
    if (!(cover_factor > 0.0))
        throw ValidationError("build_nodes_quadtree: cover_factor must be > 0");

    const Eigen::RowVectorXd lo0 = points.colwise().minCoeff();
    const Eigen::RowVectorXd hi0 = points.colwise().maxCoeff();
    const double bbox_diag = (hi0 - lo0).norm();
    const double radius_floor = 1e-12 * (1.0 + bbox_diag);
    constexpr int kMaxDepth = 48;

    std::vector<Eigen::RowVectorXd> centers;
    std::vector<double> radii;

    std::function<void(std::vector<int>&, Eigen::RowVectorXd, Eigen::RowVectorXd, int)> refine =
        [&](std::vector<int>& idx, Eigen::RowVectorXd lo, Eigen::RowVectorXd hi, int depth) {
            if (static_cast<int>(idx.size()) <= max_per_cell || depth >= kMaxDepth) {
                Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(d);
                for (int i : idx) c += points.row(i);
                c /= static_cast<double>(idx.size());
                centers.push_back(c);
                radii.push_back(std::max(cover_factor * (hi - lo).norm(), radius_floor));
                return;
            }
            const Eigen::RowVectorXd mid = 0.5 * (lo + hi);
            const int n_children = 1 << d;
            std::vector<std::vector<int>> buckets(n_children);
            for (int i : idx) {
                int code = 0;
                for (int a = 0; a < d; ++a)
                    if (points(i, a) >= mid[a]) code |= (1 << a);
                buckets[code].push_back(i);
            }
            idx.clear();
            idx.shrink_to_fit();
            for (int code = 0; code < n_children; ++code) {
                if (buckets[code].empty()) continue;
                Eigen::RowVectorXd clo = lo, chi = hi;
                for (int a = 0; a < d; ++a) {
                    if (code & (1 << a))
                        clo[a] = mid[a];
                    else
                        chi[a] = mid[a];
                }
                refine(buckets[code], clo, chi, depth + 1);
            }
        };

    std::vector<int> all(M);
    for (Eigen::Index i = 0; i < M; ++i) all[i] = static_cast<int>(i);
    refine(all, lo0, hi0, 0);

    // merge coincident centroids so centers stay pairwise distinct
    const double merge_tol = 1e-12 * (1.0 + bbox_diag);
    std::vector<int> keep;
    for (size_t i = 0; i < centers.size(); ++i) {
        bool dup = false;
        for (int j : keep) {
            if ((centers[i] - centers[j]).norm() < merge_tol) {
                radii[j] = std::max(radii[j], radii[i]);
                dup = true;
                break;
            }
        }
        if (!dup) keep.push_back(static_cast<int>(i));
    }

    NodeSet out;
    out.centers.resize(static_cast<Eigen::Index>(keep.size()), d);
    out.radii.resize(static_cast<Eigen::Index>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
        out.centers.row(static_cast<Eigen::Index>(i)) = centers[keep[i]];
        out.radii[static_cast<Eigen::Index>(i)] = radii[keep[i]];
    }
    return out;
}

// ---------------------------------------------------------------------------
// MlsDictionary
// ---------------------------------------------------------------------------

MlsDictionary::MlsDictionary(NodeSet nodes, double ridge)
    : nodes_(std::move(nodes)), ridge_(ridge) {
    if (nodes_.centers.rows() < 1) throw ValidationError("MlsDictionary: empty node set");
    if (nodes_.centers.rows() != nodes_.radii.size())
        throw ValidationError("MlsDictionary: center/radius count mismatch");
    if ((nodes_.radii.array() <= 0.0).any())
        throw ValidationError("MlsDictionary: support radii must be > 0");
}

void MlsDictionary::evaluate(const Eigen::VectorXd& x, SparsePsi& out) const {
    const int d = dim();
    const int K = size();
    if (x.size() != d) throw ValidationError("MlsDictionary: point dimension mismatch");
    out.clear();
    out.size = K;

    static thread_local std::vector<int> active;
    static thread_local std::vector<double> weights;
    active.clear();
    weights.clear();
    for (int k = 0; k < K; ++k) {
        const double r = (x.transpose() - nodes_.centers.row(k)).norm() / nodes_.radii[k];
        if (r < 1.0) {
            const double w = cubic_spline_weight(r);
            if (w > 0.0) {
                active.push_back(k);
                weights.push_back(w);
            }
        }
    }
    if (active.empty())
        throw OutOfCoverageError("MlsDictionary: no active node at evaluation point");

    const int na = static_cast<int>(active.size());
    if (na < d + 1) {
        // not enough support for the linear moment system
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        for (int i = 0; i < na; ++i) {
            out.index.push_back(active[i]);
            out.value.push_back(weights[i] / wsum);
        }
        return;
    }

    // moment matrix over p(c) = [1, c]
    Eigen::MatrixXd Mm = Eigen::MatrixXd::Zero(d + 1, d + 1);
    Eigen::VectorXd p(d + 1), px(d + 1);
    px[0] = 1.0;
    px.tail(d) = x;
    for (int i = 0; i < na; ++i) {
        p[0] = 1.0;
        p.tail(d) = nodes_.centers.row(active[i]).transpose();
        Mm.noalias() += weights[i] * (p * p.transpose());
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(Mm);
    Eigen::VectorXd b = ldlt.solve(px);
    if (!b.allFinite() || (Mm * b - px).norm() > 1e-10 * px.norm()) {
        const double tau = ridge_ * Mm.trace() / (d + 1);
        Eigen::MatrixXd Mr = Mm + tau * Eigen::MatrixXd::Identity(d + 1, d + 1);
        b = Mr.ldlt().solve(px);
        if (!b.allFinite() || (Mr * b - px).norm() > 1e-6 * px.norm()) {
            // degenerate node geometry: constant reproduction only
            double wsum = 0.0;
            for (double w : weights) wsum += w;
            for (int i = 0; i < na; ++i) {
                out.index.push_back(active[i]);
                out.value.push_back(weights[i] / wsum);
            }
            return;
        }
    }

    for (int i = 0; i < na; ++i) {
        p[0] = 1.0;
        p.tail(d) = nodes_.centers.row(active[i]).transpose();
        out.index.push_back(active[i]);
        out.value.push_back(weights[i] * p.dot(b));
    }
}

nlohmann::json MlsDictionary::to_json() const {
    nlohmann::json j;
    j["type"] = "mls";
    j["ridge"] = ridge_;
    std::vector<std::vector<double>> centers;
    for (Eigen::Index k = 0; k < nodes_.centers.rows(); ++k)
        centers.push_back(io::to_std(nodes_.centers.row(k).transpose()));
    j["centers"] = centers;
    j["radii"] = io::to_std(nodes_.radii);
    return j;
}

// ---------------------------------------------------------------------------
// RbfDictionary
// ---------------------------------------------------------------------------

RbfDictionary::RbfDictionary(Eigen::MatrixXd centers, double shape_parameter)
    : centers_(std::move(centers)), shape_(shape_parameter) {
    if (centers_.rows() < 1) throw ValidationError("RbfDictionary: empty center set");
    if (!(shape_ > 0.0)) throw ValidationError("RbfDictionary: shape_parameter must be > 0");
}

void RbfDictionary::evaluate(const Eigen::VectorXd& x, SparsePsi& out) const {
    if (x.size() != centers_.cols()) throw ValidationError("RbfDictionary: dimension mismatch");
    out.clear();
    out.size = size();
    out.index.push_back(0);
    out.value.push_back(1.0);
    for (Eigen::Index k = 0; k < centers_.rows(); ++k) {
        const double r = (x.transpose() - centers_.row(k)).norm();
        out.index.push_back(static_cast<int>(k) + 1);
        out.value.push_back(std::exp(-(shape_ * r) * (shape_ * r)));
    }
}

nlohmann::json RbfDictionary::to_json() const {
    nlohmann::json j;
    j["type"] = "rbf";
    j["shape_parameter"] = shape_;
    std::vector<std::vector<double>> centers;
    for (Eigen::Index k = 0; k < centers_.rows(); ++k)
        centers.push_back(io::to_std(centers_.row(k).transpose()));
    j["centers"] = centers;
    return j;
}

// ---------------------------------------------------------------------------
// PolynomialDictionary
// ---------------------------------------------------------------------------

PolynomialDictionary::PolynomialDictionary(int dim, int degree) : dim_(dim), degree_(degree) {
    if (dim < 1 || dim > 4) throw ValidationError("PolynomialDictionary: dim must be in [1,4]");
    if (degree < 1 || degree > 6)
        throw ValidationError("PolynomialDictionary: degree must be in [1,6]");
    // graded lexicographic enumeration; the last slot absorbs the remainder
    // so each exponent vector of the given total degree appears exactly once
    std::vector<int> e(dim, 0);
    std::function<void(int, int)> gen = [&](int pos, int remaining) {
        if (pos == dim - 1) {
            e[pos] = remaining;
            exponents_.push_back(e);
            e[pos] = 0;
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            e[pos] = k;
            gen(pos + 1, remaining - k);
        }
        e[pos] = 0;
    };
    for (int total = 0; total <= degree; ++total) gen(0, total);
}

void PolynomialDictionary::evaluate(const Eigen::VectorXd& x, SparsePsi& out) const {
    if (x.size() != dim_) throw ValidationError("PolynomialDictionary: dimension mismatch");
    out.clear();
    out.size = size();
    for (size_t k = 0; k < exponents_.size(); ++k) {
        double v = 1.0;
        for (int a = 0; a < dim_; ++a)
            for (int rep = 0; rep < exponents_[k][a]; ++rep) v *= x[a];
        out.index.push_back(static_cast<int>(k));
        out.value.push_back(v);
    }
}

nlohmann::json PolynomialDictionary::to_json() const {
    nlohmann::json j;
    j["type"] = "poly";
    j["dim"] = dim_;
    j["degree"] = degree_;
    return j;
}

std::shared_ptr<Dictionary> dictionary_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "mls") {
        const auto& jc = j.at("centers");
        const auto radii = j.at("radii").get<std::vector<double>>();
        if (jc.empty()) throw ValidationError("dictionary json: empty centers");
        NodeSet nodes;
        nodes.centers.resize(static_cast<Eigen::Index>(jc.size()),
                             static_cast<Eigen::Index>(jc[0].size()));
        for (size_t k = 0; k < jc.size(); ++k) {
            auto row = jc[k].get<std::vector<double>>();
            nodes.centers.row(static_cast<Eigen::Index>(k)) = io::from_std(row).transpose();
        }
        nodes.radii = io::from_std(radii);
        return std::make_shared<MlsDictionary>(std::move(nodes), j.value("ridge", 1e-12));
    }
    if (type == "rbf") {
        const auto& jc = j.at("centers");
        if (jc.empty()) throw ValidationError("dictionary json: empty centers");
        Eigen::MatrixXd centers(static_cast<Eigen::Index>(jc.size()),
                                static_cast<Eigen::Index>(jc[0].size()));
        for (size_t k = 0; k < jc.size(); ++k) {
            auto row = jc[k].get<std::vector<double>>();
            centers.row(static_cast<Eigen::Index>(k)) = io::from_std(row).transpose();
        }
        return std::make_shared<RbfDictionary>(std::move(centers),
                                               j.at("shape_parameter").get<double>());
    }
    if (type == "poly")
        return std::make_shared<PolynomialDictionary>(j.at("dim").get<int>(),
                                                      j.at("degree").get<int>());
    throw ValidationError("dictionary json: unknown type '" + type + "'");
}

}  // namespace kfuse::dict
