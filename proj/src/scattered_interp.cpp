#include "kfuse/scattered_interp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <unordered_map>

namespace kfuse::interp {

namespace {

constexpr double kPredicateRel = 1e-12;

// signed double area of (a, b, c); positive when CCW
inline double orient(double ax, double ay, double bx, double by, double cx, double cy,
                     double* mag = nullptr) {
    const double d1 = (bx - ax) * (cy - ay);
    const double d2 = (by - ay) * (cx - ax);
    if (mag) *mag = std::abs(d1) + std::abs(d2);
    return d1 - d2;
}

// positive when d lies strictly inside the circumcircle of CCW (a, b, c)
inline double incircle(double ax, double ay, double bx, double by, double cx, double cy,
                       double dx, double dy, double* mag = nullptr) {
    const double adx = ax - dx, ady = ay - dy;
    const double bdx = bx - dx, bdy = by - dy;
    const double cdx = cx - dx, cdy = cy - dy;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    const double det = adx * (bdy * cd - cdy * bd) - ady * (bdx * cd - cdx * bd) +
                       ad * (bdx * cdy - cdx * bdy);
    if (mag)
        *mag = std::abs(adx) * (std::abs(bdy) * cd + std::abs(cdy) * bd) +
               std::abs(ady) * (std::abs(bdx) * cd + std::abs(cdx) * bd) +
               ad * (std::abs(bdx * cdy) + std::abs(cdx * bdy));
    return det;
}

struct BTri {
    std::array<int, 3> v;  // CCW
    std::array<int, 3> n;  // neighbor across edge opposite v[i], -1 none
    bool alive = true;
};

void rebuild_adjacency(Triangulation& tri) {
    tri.adjacency.assign(tri.triangles.size(), {-1, -1, -1});
    std::unordered_map<std::uint64_t, std::pair<int, int>> edge_owner;
    edge_owner.reserve(tri.triangles.size() * 2);
    auto key = [](int a, int b) {
        const std::uint64_t lo = static_cast<std::uint32_t>(std::min(a, b));
        const std::uint64_t hi = static_cast<std::uint32_t>(std::max(a, b));
        return (hi << 32) | lo;
    };
    for (size_t t = 0; t < tri.triangles.size(); ++t) {
        for (int i = 0; i < 3; ++i) {
            const int a = tri.triangles[t][(i + 1) % 3];
            const int b = tri.triangles[t][(i + 2) % 3];
            auto [it, inserted] = edge_owner.try_emplace(key(a, b), static_cast<int>(t), i);
            if (!inserted) {
                tri.adjacency[t][i] = it->second.first;
                tri.adjacency[it->second.first][it->second.second] = static_cast<int>(t);
            }
        }
    }
}

class DelaunayBuilder {
public:
    explicit DelaunayBuilder(const Eigen::MatrixXd& points) {
        const Eigen::Index n = points.rows();
        const double lox = points.col(0).minCoeff(), hix = points.col(0).maxCoeff();
        const double loy = points.col(1).minCoeff(), hiy = points.col(1).maxCoeff();
        const double extent = std::max({hix - lox, hiy - loy, 1e-300});
        const double scale = 1.0 / extent;  // uniform scaling preserves the Delaunay property
        px_.resize(n + 3);
        py_.resize(n + 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            px_[i] = (points(i, 0) - lox) * scale;
            py_[i] = (points(i, 1) - loy) * scale;
        }
        n_real_ = static_cast<int>(n);
        // enclosing triangle far outside the unit box
        px_[n] = -100.0;
        py_[n] = -100.0;
        px_[n + 1] = 201.0;
        py_[n + 1] = -100.0;
        px_[n + 2] = 0.5;
        py_[n + 2] = 201.0;
        tris_.push_back(BTri{{n_real_, n_real_ + 1, n_real_ + 2}, {-1, -1, -1}, true});
        mark_.assign(1, 0);
        last_tri_ = 0;
    }

    void insert_all() {
        for (int i = 0; i < n_real_; ++i) insert(i);
    }

    Triangulation finalize(const Eigen::MatrixXd& original_points) {
        Triangulation out;
        out.vertices = original_points;
        std::vector<int> remap(tris_.size(), -1);
        for (size_t t = 0; t < tris_.size(); ++t) {
            if (!tris_[t].alive) continue;
            const auto& v = tris_[t].v;
            if (v[0] >= n_real_ || v[1] >= n_real_ || v[2] >= n_real_) continue;
            remap[t] = static_cast<int>(out.triangles.size());
            out.triangles.push_back(v);
        }
        if (out.triangles.empty())
            throw ValidationError("triangulate: all points are collinear");
        rebuild_adjacency(out);
        legalize(out);
        return out;
    }

private:
    double qx(int i) const { return px_[i]; }
    double qy(int i) const { return py_[i]; }

    int locate(double x, double y) const {
        int t = last_tri_;
        const long limit = static_cast<long>(tris_.size()) * 4 + 64;
        for (long step = 0; step < limit; ++step) {
            const BTri& T = tris_[t];
            bool moved = false;
            for (int i = 0; i < 3; ++i) {
                const int a = T.v[(i + 1) % 3], b = T.v[(i + 2) % 3];
                double mag;
                const double o = orient(qx(a), qy(a), qx(b), qy(b), x, y, &mag);
                if (o < -kPredicateRel * mag) {
                    const int nb = T.n[i];
                    if (nb < 0) return t;  // cannot happen inside the enclosing triangle
                    t = nb;
                    moved = true;
                    break;
                }
            }
            if (!moved) return t;
        }
        // fallback scan
        for (size_t t2 = 0; t2 < tris_.size(); ++t2) {
            if (!tris_[t2].alive) continue;
            const BTri& T = tris_[t2];
            bool inside = true;
            for (int i = 0; i < 3 && inside; ++i) {
                const int a = T.v[(i + 1) % 3], b = T.v[(i + 2) % 3];
                double mag;
                if (orient(qx(a), qy(a), qx(b), qy(b), x, y, &mag) < -kPredicateRel * mag)
                    inside = false;
            }
            if (inside) return static_cast<int>(t2);
        }
        throw NumericalError("triangulate: point location failed");
    }

    bool in_circum(int t, double x, double y) const {
        const BTri& T = tris_[t];
        double mag;
        const double det = incircle(qx(T.v[0]), qy(T.v[0]), qx(T.v[1]), qy(T.v[1]), qx(T.v[2]),
                                    qy(T.v[2]), x, y, &mag);
        return det > kPredicateRel * mag;
    }

    void insert(int pi) {
        const double x = px_[pi], y = py_[pi];
        const int t0 = locate(x, y);

        // duplicate guard; build() dedupes, so treat this as a contract breach
        for (int i = 0; i < 3; ++i) {
            const int v = tris_[t0].v[i];
            if (v < n_real_) {
                const double dxv = qx(v) - x, dyv = qy(v) - y;
                if (dxv * dxv + dyv * dyv < 1e-24)
                    throw ValidationError("triangulate: duplicate points at tolerance 1e-12");
            }
        }

        ++epoch_;
        mark_.resize(tris_.size(), 0);
        std::vector<int> cavity;
        std::vector<int> stack{t0};
        mark_[t0] = epoch_;
        while (!stack.empty()) {
            const int t = stack.back();
            stack.pop_back();
            cavity.push_back(t);
            for (int i = 0; i < 3; ++i) {
                const int nb = tris_[t].n[i];
                if (nb < 0 || mark_[nb] == epoch_) continue;
                if (in_circum(nb, x, y)) {
                    mark_[nb] = epoch_;
                    stack.push_back(nb);
                }
            }
        }

        struct BEdge {
            int a, b, outside, from;
        };
        std::vector<BEdge> boundary;
        auto collect_boundary = [&]() {
            boundary.clear();
            for (int t : cavity) {
                for (int i = 0; i < 3; ++i) {
                    const int nb = tris_[t].n[i];
                    if (nb >= 0 && mark_[nb] == epoch_) continue;
                    boundary.push_back({tris_[t].v[(i + 1) % 3], tris_[t].v[(i + 2) % 3], nb, t});
                }
            }
        };
        collect_boundary();

        // the star around pi must be strictly positive; flat fan triangles are
        // cured by absorbing the neighbor across the offending edge
        for (int guard = 0; guard < 256; ++guard) {
            int bad_outside = -2;
            for (const auto& e : boundary) {
                double mag;
                const double o = orient(qx(e.a), qy(e.a), qx(e.b), qy(e.b), x, y, &mag);
                if (o <= kPredicateRel * mag) {
                    bad_outside = e.outside;
                    break;
                }
            }
            if (bad_outside == -2) break;
            if (bad_outside < 0) throw NumericalError("triangulate: degenerate star at hull");
            mark_[bad_outside] = epoch_;
            cavity.push_back(bad_outside);
            collect_boundary();
        }

        for (int t : cavity) tris_[t].alive = false;

        // fan; chain fan triangles around pi via the boundary loop
        std::unordered_map<int, int> fan_by_start;
        fan_by_start.reserve(boundary.size() * 2);
        std::vector<int> fan_ids(boundary.size());
        for (size_t e = 0; e < boundary.size(); ++e) {
            BTri nt;
            nt.v = {boundary[e].a, boundary[e].b, pi};
            nt.n = {-1, -1, boundary[e].outside};
            const int id = static_cast<int>(tris_.size());
            tris_.push_back(nt);
            mark_.push_back(0);
            fan_ids[e] = id;
            fan_by_start[boundary[e].a] = id;
            if (boundary[e].outside >= 0) {
                BTri& ot = tris_[boundary[e].outside];
                for (int i = 0; i < 3; ++i)
                    if (ot.n[i] == boundary[e].from) ot.n[i] = id;
            }
        }
        for (size_t e = 0; e < boundary.size(); ++e) {
            const int succ = fan_by_start.at(boundary[e].b);
            tris_[fan_ids[e]].n[0] = succ;  // across (b, pi)
            tris_[succ].n[1] = fan_ids[e];  // across (pi, b) seen from successor
        }
        last_tri_ = fan_ids.empty() ? last_tri_ : fan_ids[0];
    }

    // Lawson sweep over real vertices; repairs any damage the enclosing
    // triangle's coarse predicates may have caused near the hull.
    void legalize(Triangulation& tri) const {
        const auto& V = tri.vertices;
        auto flip_test = [&](int t, int i, int& nb, int& opp) {
            nb = tri.adjacency[t][i];
            if (nb < 0) return false;
            int j = -1;
            for (int s = 0; s < 3; ++s)
                if (tri.adjacency[nb][s] == t) j = s;
            if (j < 0) return false;
            opp = j;
            const auto& tv = tri.triangles[t];
            const int d = tri.triangles[nb][j];
            double mag;
            const double det =
                incircle(V(tv[0], 0), V(tv[0], 1), V(tv[1], 0), V(tv[1], 1), V(tv[2], 0),
                         V(tv[2], 1), V(d, 0), V(d, 1), &mag);
            return det > kPredicateRel * mag;
        };

        std::vector<std::pair<int, int>> stack;
        for (size_t t = 0; t < tri.triangles.size(); ++t)
            for (int i = 0; i < 3; ++i) stack.push_back({static_cast<int>(t), i});

        long budget = static_cast<long>(tri.triangles.size()) * 40 + 10000;
        while (!stack.empty() && budget-- > 0) {
            auto [t, i] = stack.back();
            stack.pop_back();
            int nb, j;
            if (!flip_test(t, i, nb, j)) continue;

            const auto tv = tri.triangles[t];
            const auto nv = tri.triangles[nb];
            const int a = tv[i], b = tv[(i + 1) % 3], c = tv[(i + 2) % 3];
            const int d = nv[j];
            // convexity guard; skip flips that would fold the quad
            double m1, m2;
            const double o1 = orient(V(a, 0), V(a, 1), V(b, 0), V(b, 1), V(d, 0), V(d, 1), &m1);
            const double o2 = orient(V(a, 0), V(a, 1), V(d, 0), V(d, 1), V(c, 0), V(c, 1), &m2);
            if (o1 <= kPredicateRel * m1 || o2 <= kPredicateRel * m2) continue;

            const int t_ca = tri.adjacency[t][(i + 1) % 3];
            const int t_ab = tri.adjacency[t][(i + 2) % 3];
            const int t_bd = tri.adjacency[nb][(j + 1) % 3];
            const int t_dc = tri.adjacency[nb][(j + 2) % 3];

            tri.triangles[t] = {a, b, d};
            tri.adjacency[t] = {t_bd, nb, t_ab};
            tri.triangles[nb] = {a, d, c};
            tri.adjacency[nb] = {t_dc, t_ca, t};
            if (t_bd >= 0)
                for (int s = 0; s < 3; ++s)
                    if (tri.adjacency[t_bd][s] == nb) tri.adjacency[t_bd][s] = t;
            if (t_ca >= 0)
                for (int s = 0; s < 3; ++s)
                    if (tri.adjacency[t_ca][s] == t) tri.adjacency[t_ca][s] = nb;

            stack.push_back({t, 0});
            stack.push_back({t, 2});
            stack.push_back({nb, 0});
            stack.push_back({nb, 1});
        }
    }

    std::vector<double> px_, py_;
    int n_real_ = 0;
    std::vector<BTri> tris_;
    std::vector<int> mark_;
    int epoch_ = 0;
    int last_tri_ = 0;
};

}  // namespace

Triangulation triangulate(const Eigen::MatrixXd& points) {
    if (points.cols() != 2) throw ValidationError("triangulate: points must be 2D");
    if (points.rows() < 3) throw ValidationError("triangulate: need at least 3 points");
    if (!points.allFinite()) throw ValidationError("triangulate: non-finite coordinates");

    // collinearity precheck
    {
        const Eigen::Index n = points.rows();
        Eigen::Index j = 1;
        while (j < n && (points.row(j) - points.row(0)).norm() == 0.0) ++j;
        bool found = false;
        for (Eigen::Index k = j + 1; k < n && !found; ++k) {
            double mag;
            const double o = orient(points(0, 0), points(0, 1), points(j, 0), points(j, 1),
                                    points(k, 0), points(k, 1), &mag);
            if (std::abs(o) > kPredicateRel * std::max(mag, 1e-300)) found = true;
        }
        if (!found) throw ValidationError("triangulate: all points are collinear");
    }

    DelaunayBuilder builder(points);
    builder.insert_all();
    return builder.finalize(points);
}

Triangulation assemble_triangulation(Eigen::MatrixXd vertices,
                                     std::vector<std::array<int, 3>> triangles) {
    Triangulation tri;
    tri.vertices = std::move(vertices);
    tri.triangles = std::move(triangles);
    const int nv = static_cast<int>(tri.vertices.rows());
    for (const auto& t : tri.triangles)
        for (int i : t)
            if (i < 0 || i >= nv)
                throw ValidationError("assemble_triangulation: vertex index out of range");
    rebuild_adjacency(tri);
    return tri;
}

LinearInterpolant::LinearInterpolant(Triangulation tri, Eigen::MatrixXd values,
                                     FallbackPolicy policy)
    : tri_(std::move(tri)), values_(std::move(values)), policy_(policy) {
    if (values_.rows() != tri_.vertices.rows())
        throw ValidationError("LinearInterpolant: one value row per vertex required");
    if (!values_.allFinite()) throw ValidationError("LinearInterpolant: non-finite values");
}

LinearInterpolant LinearInterpolant::build(const Eigen::MatrixXd& points,
                                           const Eigen::MatrixXd& values, FallbackPolicy policy,
                                           double dedupe_tol) {
    if (points.rows() != values.rows())
        throw ValidationError("LinearInterpolant: point/value count mismatch");
    if (points.rows() < 3) throw ValidationError("LinearInterpolant: need at least 3 points");

    const double ex = points.col(0).maxCoeff() - points.col(0).minCoeff();
    const double ey = points.col(1).maxCoeff() - points.col(1).minCoeff();
    const double tol = dedupe_tol * std::max(1.0, std::max(ex, ey));

    // tolerance dedupe via quantized cells, last write wins
    std::unordered_map<std::uint64_t, std::vector<int>> cells;
    auto cell_key = [&](long cx, long cy) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
               static_cast<std::uint32_t>(cy);
    };
    std::vector<int> unique_ids;
    std::vector<int> value_src;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const long cx = std::lround(points(i, 0) / tol);
        const long cy = std::lround(points(i, 1) / tol);
        int found = -1;
        for (long dx = -1; dx <= 1 && found < 0; ++dx)
            for (long dy = -1; dy <= 1 && found < 0; ++dy) {
                auto it = cells.find(cell_key(cx + dx, cy + dy));
                if (it == cells.end()) continue;
                for (int u : it->second) {
                    if ((points.row(unique_ids[u]) - points.row(i)).norm() <= tol) {
                        found = u;
                        break;
                    }
                }
            }
        if (found >= 0) {
            value_src[found] = static_cast<int>(i);
        } else {
            const int u = static_cast<int>(unique_ids.size());
            unique_ids.push_back(static_cast<int>(i));
            value_src.push_back(static_cast<int>(i));
            cells[cell_key(cx, cy)].push_back(u);
        }
    }

    Eigen::MatrixXd up(static_cast<Eigen::Index>(unique_ids.size()), 2);
    Eigen::MatrixXd uv(static_cast<Eigen::Index>(unique_ids.size()), values.cols());
    for (size_t u = 0; u < unique_ids.size(); ++u) {
        up.row(static_cast<Eigen::Index>(u)) = points.row(unique_ids[u]);
        uv.row(static_cast<Eigen::Index>(u)) = values.row(value_src[u]);
    }
    return LinearInterpolant(triangulate(up), std::move(uv), policy);
}

int LinearInterpolant::locate(double u, double v) const {
    const auto& V = tri_.vertices;
    int t = 0;
    const long limit = static_cast<long>(tri_.triangles.size()) + 64;
    for (long step = 0; step < limit; ++step) {
        const auto& tv = tri_.triangles[t];
        bool moved = false;
        for (int i = 0; i < 3; ++i) {
            const int a = tv[(i + 1) % 3], b = tv[(i + 2) % 3];
            double mag;
            const double o = orient(V(a, 0), V(a, 1), V(b, 0), V(b, 1), u, v, &mag);
            if (o < -kPredicateRel * mag) {
                const int nb = tri_.adjacency[t][i];
                if (nb < 0) return -1;  // walked off the hull
                t = nb;
                moved = true;
                break;
            }
        }
        if (!moved) return t;
    }
    // cycle fallback: exhaustive scan
    for (size_t t2 = 0; t2 < tri_.triangles.size(); ++t2) {
        const auto& tv = tri_.triangles[t2];
        bool inside = true;
        for (int i = 0; i < 3 && inside; ++i) {
            const int a = tv[(i + 1) % 3], b = tv[(i + 2) % 3];
            double mag;
            if (orient(V(a, 0), V(a, 1), V(b, 0), V(b, 1), u, v, &mag) < -kPredicateRel * mag)
                inside = false;
        }
        if (inside) return static_cast<int>(t2);
    }
    return -1;
}

InterpResult LinearInterpolant::operator()(double u, double v) const {
    if (tri_.triangles.empty()) throw ValidationError("LinearInterpolant: empty interpolant");
    const int t = locate(u, v);
    if (t < 0) {
        if (policy_ == FallbackPolicy::hard_error)
            throw NumericalError("interpolation query outside the data hull");
        Eigen::Index best = 0;
        (tri_.vertices.rowwise() - Eigen::RowVector2d(u, v))
            .rowwise()
            .squaredNorm()
            .minCoeff(&best);
        return {values_.row(best).transpose(), true};
    }
    const auto& tv = tri_.triangles[t];
    const auto& V = tri_.vertices;
    double wts[3];
    for (int i = 0; i < 3; ++i) {
        const int a = tv[(i + 1) % 3], b = tv[(i + 2) % 3];
        wts[i] = orient(V(a, 0), V(a, 1), V(b, 0), V(b, 1), u, v);
    }
    const double denom = wts[0] + wts[1] + wts[2];
    if (!(denom > 0.0)) throw NumericalError("interpolation hit a degenerate triangle");
    // clamp tiny negatives so results stay a convex combination
    double sum = 0.0;
    for (double& w : wts) {
        w = std::max(w / denom, 0.0);
        sum += w;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(values_.cols());
    for (int i = 0; i < 3; ++i) out += (wts[i] / sum) * values_.row(tv[i]).transpose();
    return {std::move(out), false};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> pad_angle_periodic(const Eigen::MatrixXd& points,
                                                               const Eigen::MatrixXd& values) {
    if (points.cols() != 2) throw ValidationError("pad_angle_periodic: points must be 2D");
    if (points.rows() != values.rows())
        throw ValidationError("pad_angle_periodic: point/value count mismatch");
    constexpr double pi = std::numbers::pi;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double a = points(i, 1);
        if (!(a > -pi - 1e-12 && a <= pi + 1e-12))
            throw ValidationError("pad_angle_periodic: angle outside (-pi, pi]");
    }
    const Eigen::Index n = points.rows();
    Eigen::MatrixXd p3(3 * n, 2), v3(3 * n, values.cols());
    p3.topRows(n) = points;
    v3.topRows(n) = values;
    p3.middleRows(n, n) = points;
    p3.middleRows(n, n).col(1).array() += 2.0 * pi;
    v3.middleRows(n, n) = values;
    p3.bottomRows(n) = points;
    p3.bottomRows(n).col(1).array() -= 2.0 * pi;
    v3.bottomRows(n) = values;
    return {std::move(p3), std::move(v3)};
}

}  // namespace kfuse::interp
