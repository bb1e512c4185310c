// End-to-end acceptance suite. Criteria 1-5 share one full-protocol run;
// the remaining criteria exercise the numerical kernels directly. Each
// criterion prints a single PASS/FAIL line.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kfuse/dictionary.hpp"
#include "kfuse/edmd.hpp"
#include "kfuse/fusion.hpp"
#include "kfuse/io.hpp"
#include "kfuse/pipeline.hpp"
#include "kfuse/scattered_interp.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

using namespace kfuse;

namespace {

void criterion_line(int n, const std::string& desc, bool ok) {
    std::printf("[ACCEPT] %02d %-62s %s\n", n, desc.c_str(), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
}

void note(const std::string& text) {
    std::printf("         %s\n", text.c_str());
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// shared full-protocol fixture
// ---------------------------------------------------------------------------

struct FullRun {
    bool ok = false;
    std::string error;
    double wall_seconds = 0.0;
    pipeline::RunConfig cfg;
    std::string dir = "acceptance_run";
    nlohmann::json summary;
    std::vector<double> e_short, e_long;
    std::complex<double> lambda_osc_tilde, lambda_osc_hat;
    std::complex<double> lambda_dec_tilde, lambda_dec_hat;
};

const FullRun& full_run() {
    static FullRun run = [] {
        FullRun r;
        r.cfg.seed = 1;
        std::printf("[ACCEPT] -- running the full measurement-fusion protocol (seed %llu)...\n",
                    static_cast<unsigned long long>(r.cfg.seed));
        std::fflush(stdout);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            std::filesystem::remove_all(r.dir);
            const auto summary = pipeline::cmd_reproduce(r.cfg, r.dir);
            r.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            r.summary = summary.json;
            r.e_short = summary.short_window.e;
            r.e_long = summary.long_window.e;

            const auto param = r.summary["model"]["info"]["parameterization"];
            auto dec_tilde = pipeline::load_decomposition(r.dir + "/dec_tilde");
            auto dec_hat = pipeline::load_decomposition(r.dir + "/dec_hat");
            r.lambda_dec_tilde = dec_tilde.lambda[param["decaying_tilde"].get<int>()];
            r.lambda_osc_tilde = dec_tilde.lambda[param["oscillatory_tilde"].get<int>()];
            r.lambda_dec_hat = dec_hat.lambda[param["decaying_hat"].get<int>()];
            r.lambda_osc_hat = dec_hat.lambda[param["oscillatory_hat"].get<int>()];
            r.ok = true;
            std::printf("[ACCEPT] -- protocol finished in %.1f s\n", r.wall_seconds);
            std::fflush(stdout);
        } catch (const std::exception& e) {
            r.error = e.what();
            r.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("[ACCEPT] -- protocol FAILED: %s\n", r.error.c_str());
            std::fflush(stdout);
        }
        return r;
    }();
    return run;
}

measurements::MeasurementDataset linear_dataset(const Eigen::MatrixXd& M, int n_pairs, Rng& rng) {
    const int d = static_cast<int>(M.rows());
    measurements::MeasurementDataset ds;
    ds.x.resize(n_pairs, d);
    ds.y.resize(n_pairs, d);
    Eigen::VectorXd x(d);
    int written = 0;
    while (written < n_pairs) {
        for (int j = 0; j < d; ++j) x[j] = rng.uniform(-1.0, 1.0);
        for (int step = 0; step < 10 && written < n_pairs; ++step) {
            const Eigen::VectorXd y = M * x;
            ds.x.row(written) = x.transpose();
            ds.y.row(written) = y.transpose();
            x = y;
            ++written;
        }
    }
    ds.t = Eigen::VectorXd::LinSpaced(n_pairs, 0.0, n_pairs - 1.0);
    ds.dt = 1.0;
    ds.label = "linear";
    return ds;
}

Eigen::MatrixXd random_stable_matrix(Rng& rng, int d, double radius = 0.9) {
    Eigen::MatrixXd M(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
    return M * (radius / M.eigenvalues().cwiseAbs().maxCoeff());
}

double spectrum_match_error(const Eigen::VectorXcd& computed, const Eigen::VectorXcd& truth) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        double best = 1e300;
        for (Eigen::Index j = 0; j < computed.size(); ++j)
            best = std::min(best, std::abs(computed[j] - truth[i]));
        worst = std::max(worst, best);
    }
    return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// criteria 1-5: full protocol
// ---------------------------------------------------------------------------

TEST_CASE("criterion 1: oscillatory eigenvalue on both datasets") {
    const auto& r = full_run();
    bool ok = r.ok;
    if (r.ok) {
        for (const auto& l : {r.lambda_osc_tilde, r.lambda_osc_hat}) {
            ok = ok && std::abs(l.real()) < 5e-3;
            ok = ok && std::abs(l.imag() - 0.0473) <= 3e-3;
        }
        ok = ok && r.wall_seconds < 900.0;
        note("lambda_osc tilde = " + fmt(r.lambda_osc_tilde.real()) + " + " +
             fmt(r.lambda_osc_tilde.imag()) + "i, hat = " + fmt(r.lambda_osc_hat.real()) + " + " +
             fmt(r.lambda_osc_hat.imag()) + "i, wall = " + fmt(r.wall_seconds) + " s");
    }
    criterion_line(1, "oscillatory eigenvalue 0.0473 (+/- 0.003), < 15 min", ok);
    CHECK(ok);
}

TEST_CASE("criterion 2: decaying eigenvalue on both datasets") {
    const auto& r = full_run();
    bool ok = r.ok;
    if (r.ok) {
        for (const auto& l : {r.lambda_dec_tilde, r.lambda_dec_hat}) {
            ok = ok && l.real() >= -2e-3 && l.real() <= -2e-4;
            ok = ok && std::abs(l.imag()) < 1e-9;
        }
        note("lambda_dec tilde = " + fmt(r.lambda_dec_tilde.real()) +
             ", hat = " + fmt(r.lambda_dec_hat.real()));
    }
    criterion_line(2, "decaying eigenvalue in [-2e-3, -2e-4] on both datasets", ok);
    CHECK(ok);
}

TEST_CASE("criterion 3: short-window reconstruction error") {
    const auto& r = full_run();
    bool ok = r.ok && r.e_short.size() == 3;
    if (ok)
        for (double e : r.e_short) ok = ok && std::isfinite(e) && e <= 0.12;
    if (r.ok && r.e_short.size() == 3)
        note("e_short = " + fmt(r.e_short[0]) + ", " + fmt(r.e_short[1]) + ", " +
             fmt(r.e_short[2]) + " (reported: 0.0405, 0.0655, 0.0496)");
    criterion_line(3, "t in [0,400]: each component error <= 0.12", ok);
    CHECK(ok);
}

TEST_CASE("criterion 4: long-window reconstruction error improves") {
    const auto& r = full_run();
    bool ok = r.ok && r.e_long.size() == 3;
    if (ok)
        for (size_t i = 0; i < 3; ++i) {
            ok = ok && std::isfinite(r.e_long[i]) && r.e_long[i] <= 0.06;
            ok = ok && r.e_long[i] < r.e_short[i];
        }
    if (r.ok && r.e_long.size() == 3)
        note("e_long = " + fmt(r.e_long[0]) + ", " + fmt(r.e_long[1]) + ", " + fmt(r.e_long[2]) +
             " (reported: 0.0140, 0.0295, 0.0234)");
    criterion_line(4, "t in [0,4000]: each error <= 0.06 and below the short window", ok);
    CHECK(ok);
}

TEST_CASE("criterion 5: three principal components hold 95% of the energy") {
    const auto& r = full_run();
    bool ok = r.ok;
    if (r.ok) {
        const double energy = r.summary["pca_energy_fraction"].get<double>();
        ok = energy >= 0.95;
        note("energy fraction = " + fmt(energy));
    }
    criterion_line(5, "PCA energy fraction >= 0.95 with 3 modes", ok);
    CHECK(ok);
}

TEST_CASE("protocol spot checks") {
    const auto& r = full_run();
    REQUIRE(r.ok);

    // dictionary sizes should land near the reference counts 1622/1802
    // (order of magnitude; exact counts are refinement-dependent)
    const int k_tilde = r.summary["edmd_tilde"]["dictionary_size"].get<int>();
    const int k_hat = r.summary["edmd_hat"]["dictionary_size"].get<int>();
    note("dictionary sizes: tilde " + std::to_string(k_tilde) + ", hat " + std::to_string(k_hat));
    CHECK(k_tilde >= 800);
    CHECK(k_tilde <= 3600);
    CHECK(k_hat >= 800);
    CHECK(k_hat <= 3600);

    // one-step eigenfunction residuals of the parameterizing tuples
    const auto& info = r.summary["model"]["info"];
    for (const char* key : {"residual_tilde_decay", "residual_tilde_osc", "residual_hat_decay",
                            "residual_hat_osc"}) {
        const double res = info[key].get<double>();
        note(std::string(key) + " = " + fmt(res));
        CHECK(res < 0.05);
    }

    // the eigenvalue match that anchors the fusion
    const double gap_decay = std::abs(r.lambda_dec_tilde - r.lambda_dec_hat);
    const double gap_osc = std::abs(r.lambda_osc_tilde - r.lambda_osc_hat);
    note("match gaps: decay " + fmt(gap_decay) + ", osc " + fmt(gap_osc));
    CHECK(gap_decay < 1e-3);
    CHECK(gap_osc < 1e-3);

    // intrinsic-coordinate chart: the data approach the cycle from one side
    // (the manifold has a hole at the cycle itself), so the phi1 coordinate
    // must reach from near zero out to a nontrivial transversal extent that
    // makes the default trust threshold 0.03 meaningful
    const auto verts = io::read_csv(r.dir + "/model/interp_vertices.csv");
    const double c1_min = verts.data.col(0).minCoeff();
    const double c1_max = verts.data.col(0).maxCoeff();
    const double span = c1_max - c1_min;
    note("phi1 coordinate range: [" + fmt(c1_min) + ", " + fmt(c1_max) + "]");
    CHECK(span > 1e-3);
    CHECK(std::min(std::abs(c1_min), std::abs(c1_max)) < 0.05 * span);
    CHECK(std::max(std::abs(c1_min), std::abs(c1_max)) > 0.03);

    const long flagged = r.summary["apply"]["flagged"].get<long>();
    const long rows = r.summary["apply"]["rows"].get<long>();
    const long failed = r.summary["apply"]["failed"].get<long>();
    note("apply rows " + std::to_string(rows) + ", flagged " + std::to_string(flagged) +
         ", coverage failures " + std::to_string(failed));
    CHECK(failed == 0);

    // acquisition protocol totals: 20 trajectories x 1000 pairs per sensor
    // set plus a single joint measurement pair
    CHECK(io::read_csv(r.dir + "/pca_pairs.csv").data.rows() == 20000);
    CHECK(io::read_csv(r.dir + "/pointwise_pairs.csv").data.rows() == 20000);
    CHECK(io::read_csv(r.dir + "/joint.csv").data.rows() == 1);
}

TEST_CASE("direction duality near the limit cycle") {
    const auto& r = full_run();
    REQUIRE(r.ok);

    // forward model (pointwise -> pca) from the pipeline artifacts, reverse
    // model built here with the sensor roles swapped
    measurements::WhitenTransform wt, wh;
    const auto dec_tilde = pipeline::load_decomposition(r.dir + "/dec_tilde", &wt);
    const auto dec_hat = pipeline::load_decomposition(r.dir + "/dec_hat", &wh);
    const auto hat_pairs = pipeline::load_pairs_csv(r.dir + "/pointwise_pairs.csv", 2.0, "hat");
    const auto joint = io::read_csv(r.dir + "/joint.csv");
    const Eigen::MatrixXd joint_tilde = joint.data.leftCols(3);
    const Eigen::MatrixXd joint_hat = joint.data.rightCols(2);

    const auto fwd = fusion::load_fusion_model(r.dir + "/model");
    const auto rev = fusion::build_fusion_model(dec_hat, dec_tilde, joint_hat, joint_tilde,
                                                hat_pairs.x, wh, wt, {});

    // late window of the held-out trajectory sits near the limit cycle;
    // the composition inherits the one-way error of each leg
    const auto eval_pw = io::read_csv(r.dir + "/eval_pointwise.csv");
    const auto eval_truth = io::read_csv(r.dir + "/eval_pca_truth.csv");
    double err_fwd = 0.0, err_rev = 0.0, round_trip = 0.0, count = 0.0;
    for (Eigen::Index m = eval_pw.data.rows() / 2; m < eval_pw.data.rows(); m += 5) {
        const Eigen::VectorXd x_hat = eval_pw.data.row(m).rightCols(2).transpose();
        const Eigen::VectorXd x_tilde_true = eval_truth.data.row(m).rightCols(3).transpose();
        const auto f = fusion::fuse(fwd, x_hat);
        const auto g = fusion::fuse(rev, x_tilde_true);
        const auto b = fusion::fuse(rev, f.x_tilde);
        err_fwd += (f.x_tilde - x_tilde_true).squaredNorm() / x_tilde_true.squaredNorm();
        err_rev += (g.x_tilde - x_hat).squaredNorm() / x_hat.squaredNorm();
        round_trip += (b.x_tilde - x_hat).squaredNorm() / x_hat.squaredNorm();
        count += 1.0;
    }
    err_fwd = std::sqrt(err_fwd / count);
    err_rev = std::sqrt(err_rev / count);
    round_trip = std::sqrt(round_trip / count);
    note("one-way errors fwd " + fmt(err_fwd) + ", rev " + fmt(err_rev) +
         ", composed round trip " + fmt(round_trip));
    CHECK(round_trip < 2.0 * (err_fwd + err_rev));
}

// ---------------------------------------------------------------------------
// criterion 6: linear-system oracle, 100 seeds
// ---------------------------------------------------------------------------

TEST_CASE("criterion 6: EDMD recovers linear spectra on 100 random systems") {
    int passed = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const auto M = random_stable_matrix(rng, 3);
        const auto ds = linear_dataset(M, 60, rng);
        dict::PolynomialDictionary dict(3, 1);
        const auto dec =
            edmd::eigendecompose(edmd::koopman_matrix(edmd::accumulate(ds, dict), 1e-12), 1.0);
        const double err = spectrum_match_error(dec.mu, M.eigenvalues());
        worst = std::max(worst, err);
        if (err < 1e-8) ++passed;
    }
    note("passed " + std::to_string(passed) + "/100, worst spectral error " + fmt(worst));
    criterion_line(6, "linear-system oracle to 1e-8 on 100/100 seeds", passed == 100);
    CHECK(passed == 100);
}

// ---------------------------------------------------------------------------
// criterion 7: invariance under invertible transformations
// ---------------------------------------------------------------------------

TEST_CASE("criterion 7: spectra invariant under invertible observation maps") {
    bool all_ok = true;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(2000 + seed);
        const auto M = random_stable_matrix(rng, 3);
        const auto ds = linear_dataset(M, 70, rng);

        Eigen::MatrixXd T(3, 3);
        do {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) T(i, j) = rng.uniform(-1.0, 1.0);
        } while (std::abs(T.determinant()) < 0.2);
        auto tds = ds;
        tds.x = ds.x * T.transpose();
        tds.y = ds.y * T.transpose();

        dict::PolynomialDictionary dict(3, 1);
        const auto dec_a =
            edmd::eigendecompose(edmd::koopman_matrix(edmd::accumulate(ds, dict), 1e-12), 1.0);
        const auto dec_b =
            edmd::eigendecompose(edmd::koopman_matrix(edmd::accumulate(tds, dict), 1e-12), 1.0);
        const double err = std::max(spectrum_match_error(dec_a.mu, dec_b.mu),
                                    spectrum_match_error(dec_b.mu, dec_a.mu));
        worst = std::max(worst, err);
        all_ok = all_ok && err < 1e-8;
    }
    note("worst multiset deviation over 20 transforms: " + fmt(worst));
    criterion_line(7, "eigenvalue multiset invariant to 1e-8 under coordinate maps", all_ok);
    CHECK(all_ok);
}

// ---------------------------------------------------------------------------
// criterion 8: MLS reproduction
// ---------------------------------------------------------------------------

TEST_CASE("criterion 8: MLS partition of unity and linear reproduction") {
    double worst_pou = 0.0, worst_lin = 0.0;
    for (int d : {2, 3}) {
        Rng rng(3000 + d);
        Eigen::MatrixXd pts(800, d);
        for (int i = 0; i < 800; ++i)
            for (int j = 0; j < d; ++j) pts(i, j) = rng.uniform(-1.0, 1.0);
        dict::MlsDictionary dict(dict::build_nodes_quadtree(pts, 10));

        for (int trial = 0; trial < 1000; ++trial) {
            const int i = static_cast<int>(rng.uniform(0.0, 800.0));
            Eigen::VectorXd x = pts.row(i).transpose();
            for (int j = 0; j < d; ++j) x[j] += rng.uniform(-0.02, 0.02);
            const auto psi = dict.evaluate(x);
            double sum = 0.0;
            Eigen::VectorXd rec = Eigen::VectorXd::Zero(d);
            for (size_t k = 0; k < psi.index.size(); ++k) {
                sum += psi.value[k];
                rec += psi.value[k] * dict.nodes().centers.row(psi.index[k]).transpose();
            }
            worst_pou = std::max(worst_pou, std::abs(sum - 1.0));
            worst_lin = std::max(worst_lin, (rec - x).cwiseAbs().maxCoeff());
        }
    }
    const bool ok = worst_pou < 1e-8 && worst_lin < 1e-8;
    note("worst partition-of-unity residual " + fmt(worst_pou) + ", linear residual " +
         fmt(worst_lin));
    criterion_line(8, "MLS reproduction residuals < 1e-8 at 1000 random points", ok);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
// criterion 9: interpolation suite
// ---------------------------------------------------------------------------

TEST_CASE("criterion 9: triangulation and interpolation exactness") {
    bool ok = true;

    // brute-force empty-circumcircle verification on random 200-point sets
    double worst_violation = 0.0;
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        Rng rng(seed);
        Eigen::MatrixXd pts(200, 2);
        for (int i = 0; i < 200; ++i) pts.row(i) << rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0);
        const auto tri = interp::triangulate(pts);
        for (const auto& t : tri.triangles) {
            const auto& V = tri.vertices;
            const double ax = V(t[0], 0), ay = V(t[0], 1), bx = V(t[1], 0), by = V(t[1], 1),
                         cx = V(t[2], 0), cy = V(t[2], 1);
            const double den = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
            const double ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) +
                               (cx * cx + cy * cy) * (ay - by)) /
                              den;
            const double uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) +
                               (cx * cx + cy * cy) * (bx - ax)) /
                              den;
            const double r2 = (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy);
            for (Eigen::Index p = 0; p < V.rows(); ++p) {
                if (p == t[0] || p == t[1] || p == t[2]) continue;
                const double d2 =
                    (V(p, 0) - ux) * (V(p, 0) - ux) + (V(p, 1) - uy) * (V(p, 1) - uy);
                worst_violation = std::max(worst_violation, (r2 - d2) / r2);
            }
        }
    }
    ok = ok && worst_violation < 1e-10;

    // vertex exactness and linear exactness
    Rng rng(14);
    Eigen::MatrixXd pts(300, 2);
    for (int i = 0; i < 300; ++i) pts.row(i) << rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0);
    Eigen::MatrixXd vals(300, 1);
    for (int i = 0; i < 300; ++i) vals(i, 0) = 2.0 * pts(i, 0) - 3.0 * pts(i, 1) + 1.0;
    const auto itp = interp::LinearInterpolant::build(pts, vals);
    double worst_vertex = 0.0, worst_linear = 0.0;
    for (int i = 0; i < 300; ++i)
        worst_vertex =
            std::max(worst_vertex, std::abs(itp(pts(i, 0), pts(i, 1)).values[0] - vals(i, 0)));
    int inside = 0;
    while (inside < 500) {
        const double u = rng.uniform(0.1, 1.9), v = rng.uniform(-0.9, 0.9);
        const auto q = itp(u, v);
        if (q.extrapolated) continue;
        worst_linear = std::max(worst_linear, std::abs(q.values[0] - (2.0 * u - 3.0 * v + 1.0)));
        ++inside;
    }
    ok = ok && worst_vertex < 1e-12 && worst_linear < 1e-12;
    note("max circumcircle violation " + fmt(worst_violation) + ", vertex err " +
         fmt(worst_vertex) + ", linear err " + fmt(worst_linear));
    criterion_line(9, "Delaunay verification + vertex/linear exactness", ok);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
// criterion 10: registration
// ---------------------------------------------------------------------------

TEST_CASE("criterion 10: registration formula, oracle, and joint-point fusion") {
    bool ok = true;

    auto dict = std::make_shared<dict::PolynomialDictionary>(1, 1);
    auto make_dec = [&](std::complex<double> c, std::complex<double> d) {
        edmd::KoopmanDecomposition dec;
        dec.mu.resize(1);
        dec.lambda.resize(1);
        dec.mu[0] = 0.9;
        dec.lambda[0] = std::log(0.9);
        dec.xi.resize(2, 1);
        dec.xi(0, 0) = c;
        dec.xi(1, 0) = d;
        dec.dt = 1.0;
        dec.dictionary = dict;
        return dec;
    };
    const auto dec_t = make_dec({0.25, -0.7}, {1.1, 0.3});
    const auto dec_h = make_dec({-0.45, 0.2}, {0.5, -0.8});

    {
        Eigen::MatrixXd jt(1, 1), jh(1, 1);
        jt << 0.8;
        jh << -0.6;
        const auto reg = fusion::register_alpha(jt, jh, {0, 0, 0.0, {}}, dec_t, dec_h);
        const auto ratio = edmd::eval_eigenfunction(jt.row(0).transpose(), 0, dec_t) /
                           edmd::eval_eigenfunction(jh.row(0).transpose(), 0, dec_h);
        ok = ok && std::abs(reg.alpha - ratio) < 1e-10;
        note("single-pair ratio deviation " + fmt(std::abs(reg.alpha - ratio)));
    }
    {
        Eigen::MatrixXd jt(3, 1), jh(3, 1);
        jt << 0.7, -0.3, 1.1;
        jh << -0.4, 0.8, 0.25;
        const auto reg = fusion::register_alpha(jt, jh, {0, 0, 0.0, {}}, dec_t, dec_h);
        std::vector<std::complex<double>> pt(3), ph(3);
        for (int m = 0; m < 3; ++m) {
            pt[m] = edmd::eval_eigenfunction(jt.row(m).transpose(), 0, dec_t);
            ph[m] = edmd::eval_eigenfunction(jh.row(m).transpose(), 0, dec_h);
        }
        // shrinking grid scan on the residual-orthogonality condition, which
        // stays linear in alpha and so resolves the optimum to full precision
        auto ortho = [&](std::complex<double> al) {
            std::complex<double> g{0.0, 0.0};
            for (int m = 0; m < 3; ++m) g += std::conj(ph[m]) * (pt[m] - al * ph[m]);
            return std::abs(g);
        };
        std::complex<double> center{0.0, 0.0};
        double half = 8.0;
        for (int it = 0; it < 80; ++it) {
            std::complex<double> best = center;
            double best_g = ortho(center);
            for (int i = -10; i <= 10; ++i)
                for (int j = -10; j <= 10; ++j) {
                    const std::complex<double> cand =
                        center + std::complex<double>(i * half / 10.0, j * half / 10.0);
                    const double g = ortho(cand);
                    if (g < best_g) {
                        best_g = g;
                        best = cand;
                    }
                }
            center = best;
            half *= 0.35;
        }
        ok = ok && std::abs(center - reg.alpha) < 1e-10;
        note("grid-oracle deviation " + fmt(std::abs(center - reg.alpha)));
    }

    // fusing the joint measurement must hit the registered target through
    // identical interpolation coordinates on the full-protocol model
    const auto& r = full_run();
    ok = ok && r.ok;
    if (r.ok) {
        const auto model = fusion::load_fusion_model(r.dir + "/model");
        measurements::WhitenTransform wt;
        auto dec_tilde = pipeline::load_decomposition(r.dir + "/dec_tilde", &wt);
        const auto joint = io::read_csv(r.dir + "/joint.csv");
        const Eigen::VectorXd joint_tilde = joint.data.row(0).head(3).transpose();
        const Eigen::VectorXd joint_hat = joint.data.row(0).tail(2).transpose();

        const auto param = r.summary["model"]["info"]["parameterization"];
        const Eigen::VectorXd jw = wt.apply(joint_tilde);
        const auto phi_d =
            edmd::eval_eigenfunction(jw, param["decaying_tilde"].get<int>(), dec_tilde);
        const auto phi_o =
            edmd::eval_eigenfunction(jw, param["oscillatory_tilde"].get<int>(), dec_tilde);

        const auto fused = fusion::fuse(model, joint_hat);
        const double coord_dev = std::max(std::abs(fused.coord_decay - phi_d.real()),
                                          std::abs(fused.coord_angle - std::arg(phi_o)));
        const auto direct = model.inverse_map(phi_d.real(), std::arg(phi_o));
        const double value_dev = (fused.x_tilde - direct.values).cwiseAbs().maxCoeff();
        const double recon_err = (fused.x_tilde - joint_tilde).norm() / joint_tilde.norm();
        ok = ok && coord_dev < 1e-10 && value_dev < 1e-10;
        note("joint-point coordinate deviation " + fmt(coord_dev) + ", value deviation " +
             fmt(value_dev) + ", reconstruction error " + fmt(recon_err));
        CHECK(recon_err < 0.25);  // interpolation-level accuracy at one point
    }
    criterion_line(10, "registration to 1e-10 and joint-point fusion consistency", ok);
    CHECK(ok);
}
