#include "kfuse/fusion.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

using namespace kfuse;
using namespace kfuse::fusion;
using kfuse::measurements::MeasurementDataset;

namespace {

edmd::KoopmanDecomposition synthetic_dec(const std::vector<std::complex<double>>& lambdas,
                                         double dt) {
    edmd::KoopmanDecomposition dec;
    const int n = static_cast<int>(lambdas.size());
    dec.mu.resize(n);
    dec.lambda.resize(n);
    dec.xi = Eigen::MatrixXcd::Identity(n, n);
    for (int i = 0; i < n; ++i) {
        dec.lambda[i] = lambdas[i];
        dec.mu[i] = std::exp(lambdas[i] * dt);
    }
    dec.dt = dt;
    return dec;
}

// --------------------------------------------------------------------------
// planar spiral fixture: x -> exp(nu dt) R(omega dt) x with a quadratic
// dictionary, whose eigenfunctions are known in closed form
// --------------------------------------------------------------------------

struct Spiral {
    double nu = -0.05;
    double omega = 0.4;
    double dt = 0.5;

    Eigen::Matrix2d step_matrix() const {
        const double g = std::exp(nu * dt), th = omega * dt;
        Eigen::Matrix2d F;
        F << g * std::cos(th), -g * std::sin(th), g * std::sin(th), g * std::cos(th);
        return F;
    }

    // trajectories from radius ~1, sensor = optional linear map T
    MeasurementDataset dataset(int n_traj, int pairs_each, std::uint64_t seed,
                               const Eigen::Matrix2d& T = Eigen::Matrix2d::Identity()) const {
        Rng rng(seed);
        const Eigen::Matrix2d F = step_matrix();
        MeasurementDataset ds;
        const int M = n_traj * pairs_each;
        ds.x.resize(M, 2);
        ds.y.resize(M, 2);
        int row = 0;
        for (int tr = 0; tr < n_traj; ++tr) {
            const double a0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
            const double r0 = rng.uniform(0.85, 1.15);
            Eigen::Vector2d x(r0 * std::cos(a0), r0 * std::sin(a0));
            for (int i = 0; i < pairs_each; ++i) {
                const Eigen::Vector2d y = F * x;
                ds.x.row(row) = (T * x).transpose();
                ds.y.row(row) = (T * y).transpose();
                x = y;
                ++row;
            }
        }
        ds.t = Eigen::VectorXd::LinSpaced(M, 0.0, (M - 1) * dt);
        ds.dt = dt;
        ds.label = "spiral";
        return ds;
    }
};

struct BuiltSide {
    edmd::KoopmanDecomposition dec;
    measurements::WhitenTransform whiten;
    MeasurementDataset raw;
};

BuiltSide edmd_side(const Spiral& sp, std::uint64_t seed,
                    const Eigen::Matrix2d& T = Eigen::Matrix2d::Identity(), int degree = 2) {
    BuiltSide side;
    side.raw = sp.dataset(12, 40, seed, T);
    auto [wds, tf] = measurements::whiten(side.raw);
    side.whiten = tf;
    auto dict = std::make_shared<dict::PolynomialDictionary>(2, degree);
    side.dec = edmd::decompose(edmd::accumulate(wds, *dict), 1e-12, sp.dt, dict);
    return side;
}

}  // namespace

TEST_CASE("matching identical spectra is the identity with zero gaps") {
    const auto dec = synthetic_dec({{0.0, 0.0}, {-0.1, 0.0}, {-0.01, 0.3}, {-0.01, -0.3}}, 1.0);
    const auto pairs = match_eigenfunctions(dec, dec, {});
    REQUIRE(pairs.size() == 4);
    for (const auto& p : pairs) {
        CHECK(p.index_tilde == p.index_hat);
        CHECK(p.eigenvalue_gap == 0.0);
    }
}

TEST_CASE("nearest-neighbor matching across slightly different spectra") {
    const auto a = synthetic_dec({{0.0, 0.0}, {0.0, 0.047}, {0.0, -0.047}}, 1.0);
    const auto b = synthetic_dec({{1e-5, 0.0}, {0.0, 0.0471}, {0.0, -0.0471}}, 1.0);
    MatchTolerance tol;
    tol.rel = 0.0;
    tol.abs = 0.01;
    const auto pairs = match_eigenfunctions(a, b, tol);
    REQUIRE(pairs.size() == 3);
    for (const auto& p : pairs) CHECK(p.index_tilde == p.index_hat);
    CHECK(pairs[0].eigenvalue_gap == doctest::Approx(1e-5));
    CHECK(pairs[1].eigenvalue_gap == doctest::Approx(1e-4).epsilon(1e-6));
}

TEST_CASE("matching the reported eigenvalue pattern within the default tolerance") {
    const auto tilde = synthetic_dec({{0.0, 0.0}, {-7.26e-4, 0.0}, {0.0, 0.0473}, {0.0, -0.0473}},
                                     2.0);
    const auto hat = synthetic_dec({{0.0, 0.0}, {-8.57e-4, 0.0}, {0.0, 0.0473}, {0.0, -0.0473}},
                                   2.0);
    const auto pairs = match_eigenfunctions(tilde, hat, {});
    bool found_decay = false;
    for (const auto& p : pairs)
        if (p.index_tilde == 1 && p.index_hat == 1) found_decay = true;
    CHECK(found_decay);
}

TEST_CASE("matching is symmetric and fails cleanly when nothing is close") {
    Rng rng(3);
    std::vector<std::complex<double>> la, lb;
    for (int i = 0; i < 6; ++i) {
        la.push_back({rng.uniform(-0.5, 0.0), 0.0});
        lb.push_back({rng.uniform(-0.5, 0.0), 0.0});
    }
    const auto a = synthetic_dec(la, 1.0), b = synthetic_dec(lb, 1.0);
    MatchTolerance tol;
    tol.rel = 0.3;
    tol.abs = 0.02;
    const auto ab = match_eigenfunctions(a, b, tol);
    const auto ba = match_eigenfunctions(b, a, tol);
    REQUIRE(ab.size() == ba.size());
    for (const auto& p : ab) {
        bool found = false;
        for (const auto& q : ba)
            if (q.index_tilde == p.index_hat && q.index_hat == p.index_tilde) found = true;
        CHECK(found);
    }

    const auto far = synthetic_dec({{-40.0, 0.0}}, 1.0);
    CHECK_THROWS_WITH_AS(match_eigenfunctions(a, far, {}),
                         doctest::Contains("not accurate enough"), NumericalError);
}

TEST_CASE("conjugate tuples are matched jointly") {
    const auto a = synthetic_dec({{0.0, 0.0}, {-0.01, 0.3}, {-0.01, -0.3}}, 1.0);
    // second decomposition lists the conjugate first
    const auto b = synthetic_dec({{0.0, 0.0}, {-0.011, -0.3}, {-0.011, 0.3}}, 1.0);
    const auto pairs = match_eigenfunctions(a, b, {});
    REQUIRE(pairs.size() == 3);
    bool pos_ok = false, neg_ok = false;
    for (const auto& p : pairs) {
        if (p.index_tilde == 1) pos_ok = (p.index_hat == 2);
        if (p.index_tilde == 2) neg_ok = (p.index_hat == 1);
    }
    CHECK(pos_ok);
    CHECK(neg_ok);
}

TEST_CASE("registration constants") {
    // phi(x) = c + d x through a linear dictionary in one variable
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

    SUBCASE("a single joint pair gives the exact ratio") {
        const auto dt = make_dec(0.3, {1.0, 0.5});
        const auto dh = make_dec(-0.2, {0.4, -0.1});
        Eigen::MatrixXd jt(1, 1), jh(1, 1);
        jt << 0.7;
        jh << -0.4;
        MatchedPair pair{0, 0, 0.0, {}};
        const auto reg = register_alpha(jt, jh, pair, dt, dh);
        const auto phi_t = edmd::eval_eigenfunction(jt.row(0).transpose(), 0, dt);
        const auto phi_h = edmd::eval_eigenfunction(jh.row(0).transpose(), 0, dh);
        CHECK(std::abs(reg.alpha - phi_t / phi_h) < 1e-14);
    }
    SUBCASE("proportional eigenfunctions register with zero residual") {
        const auto dt = make_dec(0.6, 1.0);
        const auto dh = make_dec(0.3, 0.5);  // phi_hat = phi_tilde / 2
        Eigen::MatrixXd joint(3, 1);
        joint << -1.0, 0.2, 0.9;
        const auto reg = register_alpha(joint, joint, {0, 0, 0.0, {}}, dt, dh);
        CHECK(std::abs(reg.alpha - 2.0) < 1e-13);
        double residual = 0.0;
        for (int m = 0; m < 3; ++m) {
            const auto pt = edmd::eval_eigenfunction(joint.row(m).transpose(), 0, dt);
            const auto ph = edmd::eval_eigenfunction(joint.row(m).transpose(), 0, dh);
            residual += std::norm(pt - reg.alpha * ph);
        }
        CHECK(residual < 1e-26);
    }
    SUBCASE("least squares matches a grid-refinement oracle to 1e-10") {
        const auto dt = make_dec({0.25, -0.7}, {1.1, 0.3});
        const auto dh = make_dec({-0.45, 0.2}, {0.5, -0.8});
        Eigen::MatrixXd jt(3, 1), jh(3, 1);
        jt << 0.7, -0.3, 1.1;
        jh << -0.4, 0.8, 0.25;
        const auto reg = register_alpha(jt, jh, {0, 0, 0.0, {}}, dt, dh);

        // oracle: shrinking grid search over the complex plane
        std::vector<std::complex<double>> pt(3), ph(3);
        for (int m = 0; m < 3; ++m) {
            pt[m] = edmd::eval_eigenfunction(jt.row(m).transpose(), 0, dt);
            ph[m] = edmd::eval_eigenfunction(jh.row(m).transpose(), 0, dh);
        }
        auto cost = [&](std::complex<double> al) {
            double s = 0.0;
            for (int m = 0; m < 3; ++m) s += std::norm(pt[m] - al * ph[m]);
            return s;
        };
        // the quadratic cost is flat near its bottom in double precision, so
        // the raw scan localizes the minimum to ~sqrt(eps); check that first
        std::complex<double> center{0.0, 0.0};
        double half = 8.0;
        for (int it = 0; it < 60; ++it) {
            std::complex<double> best = center;
            double best_cost = cost(center);
            for (int i = -10; i <= 10; ++i)
                for (int j = -10; j <= 10; ++j) {
                    const std::complex<double> cand =
                        center + std::complex<double>(i * half / 10.0, j * half / 10.0);
                    const double c = cost(cand);
                    if (c < best_cost) {
                        best_cost = c;
                        best = cand;
                    }
                }
            center = best;
            half *= 0.35;
        }
        CHECK(std::abs(center - reg.alpha) < 1e-7);

        // orthogonality of the optimal residual to the source values is an
        // equivalent optimality condition that stays linear in alpha, so the
        // same shrinking scan on it resolves the optimum to full precision
        auto ortho = [&](std::complex<double> al) {
            std::complex<double> g{0.0, 0.0};
            for (int m = 0; m < 3; ++m) g += std::conj(ph[m]) * (pt[m] - al * ph[m]);
            return std::abs(g);
        };
        center = {0.0, 0.0};
        half = 8.0;
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
        CHECK(std::abs(center - reg.alpha) < 1e-12);

        // perturbing the optimum strictly increases the residual
        const double j0 = cost(reg.alpha);
        CHECK(j0 > 1e-8);
        for (const double scale : {1.01, 0.99}) CHECK(cost(reg.alpha * scale) > j0);
        CHECK(cost(reg.alpha * std::complex<double>(1.0, 0.01)) > j0);
        CHECK(cost(reg.alpha * std::complex<double>(1.0, -0.01)) > j0);
    }
    SUBCASE("a vanishing source eigenfunction is rejected") {
        const auto dt = make_dec(0.6, 1.0);
        const auto dh = make_dec(0.0, 0.0);
        Eigen::MatrixXd joint(1, 1);
        joint << 0.5;
        CHECK_THROWS_WITH_AS(register_alpha(joint, joint, {0, 0, 0.0, {}}, dt, dh),
                             doctest::Contains("different joint point"), NumericalError);
    }
}

TEST_CASE("parameterizing tuple selection") {
    SUBCASE("explicit rule application") {
        // spectrum {1, 0.99, e^{0.1i}, e^{-0.1i}} at dt = 1
        const auto dec = synthetic_dec(
            {{0.0, 0.0}, {std::log(0.99), 0.0}, {0.0, 0.1}, {0.0, -0.1}}, 1.0);
        const auto p = select_parameterization(dec);
        CHECK(p.decaying == 1);
        CHECK(p.oscillatory == 2);
    }
    SUBCASE("reported eigenvalue pattern") {
        const auto dec = synthetic_dec(
            {{0.0, 0.0}, {-8e-4, 0.0}, {-5e-3, 0.0}, {0.0, 0.0473}, {0.0, -0.0473},
             {-1e-3, 0.0946}, {-1e-3, -0.0946}},
            2.0);
        const auto p = select_parameterization(dec);
        CHECK(dec.lambda[p.decaying].real() == doctest::Approx(-8e-4));
        CHECK(dec.lambda[p.oscillatory].imag() == doctest::Approx(0.0473));
    }
    SUBCASE("the trivial tuple is never selected") {
        const auto dec = synthetic_dec({{0.0, 0.0}, {-0.2, 0.0}, {-0.05, 0.7}, {-0.05, -0.7}}, 1.0);
        const auto p = select_parameterization(dec);
        CHECK(p.decaying == 1);
        CHECK(p.oscillatory == 2);
    }
    SUBCASE("missing tuple classes raise errors") {
        CHECK_THROWS_AS(select_parameterization(synthetic_dec({{0.0, 0.0}, {-0.1, 0.0}}, 1.0)),
                        ValidationError);
        CHECK_THROWS_AS(
            select_parameterization(synthetic_dec({{0.0, 0.0}, {-0.05, 0.3}, {-0.05, -0.3}}, 1.0)),
            ValidationError);
    }
}

TEST_CASE("spiral fixture: EDMD recovers the analytic spectrum") {
    Spiral sp;
    const auto side = edmd_side(sp, 101);
    // expected lattice: 2nu (real) and nu + i omega among the leading tuples
    const auto p = select_parameterization(side.dec);
    CHECK(side.dec.lambda[p.decaying].real() == doctest::Approx(2.0 * sp.nu).epsilon(1e-6));
    CHECK(std::abs(side.dec.lambda[p.decaying].imag()) < 1e-8);
    CHECK(side.dec.lambda[p.oscillatory].real() == doctest::Approx(sp.nu).epsilon(1e-6));
    CHECK(side.dec.lambda[p.oscillatory].imag() == doctest::Approx(sp.omega).epsilon(1e-6));
}

TEST_CASE("identity fusion reconstructs training points to 1e-8") {
    Spiral sp;
    const auto side = edmd_side(sp, 201);
    Eigen::MatrixXd joint = side.raw.x.row(0);
    const auto model = build_fusion_model(side.dec, side.dec, joint, joint, side.raw.x,
                                          side.whiten, side.whiten, {});
    CHECK(std::abs(model.alpha_decay - 1.0) < 1e-12);
    CHECK(std::abs(model.alpha_osc - 1.0) < 1e-12);

    double worst = 0.0;
    for (Eigen::Index m = 0; m < side.raw.x.rows(); m += 7) {
        const auto r = fuse(model, side.raw.x.row(m).transpose());
        worst = std::max(worst, (r.x_tilde - side.raw.x.row(m).transpose()).norm());
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("heterogeneous spiral fusion end to end") {
    Spiral sp;
    Eigen::Matrix2d T;
    T << 2.0, 0.3, -0.4, 1.1;  // second sensor: invertible linear map

    const auto tilde = edmd_side(sp, 301);         // identity sensor
    const auto hat = edmd_side(sp, 302, T);        // transformed sensor
    const auto joint_run = sp.dataset(1, 2, 303);  // third independent run
    const Eigen::MatrixXd joint_tilde = joint_run.x.row(0);
    const Eigen::MatrixXd joint_hat = joint_run.x.row(0) * T.transpose();

    FusionOptions options;
    options.trust_threshold = 1e9;  // keep every point for the error statistics
    const auto model = build_fusion_model(tilde.dec, hat.dec, joint_tilde, joint_hat, tilde.raw.x,
                                          tilde.whiten, hat.whiten, options);

    SUBCASE("held-out trajectory is reconstructed accurately") {
        const auto eval = sp.dataset(1, 40, 304);
        double err2 = 0.0, ref2 = 0.0;
        for (Eigen::Index m = 0; m < eval.x.rows(); ++m) {
            const Eigen::Vector2d x_true = eval.x.row(m).transpose();
            const auto r = fuse(model, T * x_true);
            CHECK(!r.extrapolated);
            err2 += (r.x_tilde - x_true).squaredNorm();
            ref2 += x_true.squaredNorm();
        }
        CHECK(std::sqrt(err2 / ref2) < 0.02);
    }

    SUBCASE("fusing at the joint point returns the registered target") {
        const auto r = fuse(model, joint_hat.row(0).transpose());
        // query coordinates must coincide with the target-side coordinates
        const Eigen::VectorXd jw = tilde.whiten.apply(joint_tilde.row(0).transpose());
        const auto param = select_parameterization(tilde.dec);
        const auto phi_d = edmd::eval_eigenfunction(jw, param.decaying, tilde.dec);
        const auto phi_o = edmd::eval_eigenfunction(jw, param.oscillatory, tilde.dec);
        CHECK(std::abs(r.coord_decay - phi_d.real()) < 1e-10);
        CHECK(std::abs(r.coord_angle - std::arg(phi_o)) < 1e-10);
        const auto direct = model.inverse_map(phi_d.real(), std::arg(phi_o));
        CHECK((r.x_tilde - direct.values).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((r.x_tilde - joint_tilde.row(0).transpose()).norm() < 0.05);
    }

    SUBCASE("composition of both directions is close to the identity") {
        const auto model_rev = build_fusion_model(hat.dec, tilde.dec, joint_hat, joint_tilde,
                                                  hat.raw.x, hat.whiten, tilde.whiten, options);
        const auto eval = sp.dataset(1, 30, 305);
        double one_way = 0.0, round_trip = 0.0, count = 0.0;
        for (Eigen::Index m = 0; m < eval.x.rows(); ++m) {
            const Eigen::Vector2d x_true = eval.x.row(m).transpose();
            const Eigen::Vector2d xh_true = T * x_true;
            const auto fwd = fuse(model, xh_true);
            const auto back = fuse(model_rev, fwd.x_tilde);
            one_way += (fwd.x_tilde - x_true).squaredNorm() / x_true.squaredNorm();
            round_trip += (back.x_tilde - xh_true).squaredNorm() / xh_true.squaredNorm();
            count += 1.0;
        }
        one_way = std::sqrt(one_way / count);
        round_trip = std::sqrt(round_trip / count);
        CHECK(round_trip < 2.0 * (one_way + 0.02));
    }

    SUBCASE("fusing with the conjugate oscillatory tuple gives the same estimates") {
        const auto param = select_parameterization(tilde.dec);
        int conj_idx = -1;
        for (int k = 0; k < tilde.dec.count(); ++k)
            if (std::abs(tilde.dec.lambda[k] - std::conj(tilde.dec.lambda[param.oscillatory])) <
                1e-10)
                conj_idx = k;
        REQUIRE(conj_idx >= 0);
        FusionOptions conj_opts = options;
        conj_opts.parameterization = Parameterization{param.decaying, conj_idx};
        const auto model_conj = build_fusion_model(tilde.dec, hat.dec, joint_tilde, joint_hat,
                                                   tilde.raw.x, tilde.whiten, hat.whiten,
                                                   conj_opts);
        const auto eval = sp.dataset(1, 20, 306);
        for (Eigen::Index m = 0; m < eval.x.rows(); ++m) {
            const Eigen::Vector2d xh = T * eval.x.row(m).transpose();
            const auto a = fuse(model, xh);
            const auto b = fuse(model_conj, xh);
            CHECK((a.x_tilde - b.x_tilde).cwiseAbs().maxCoeff() < 1e-8);
        }
    }

    SUBCASE("models survive a save/load round trip") {
        const std::string dir =
            (std::filesystem::temp_directory_path() / "kfuse_model_roundtrip").string();
        std::filesystem::remove_all(dir);
        save_fusion_model(model, dir);
        const auto loaded = load_fusion_model(dir);
        const auto eval = sp.dataset(1, 10, 307);
        for (Eigen::Index m = 0; m < eval.x.rows(); ++m) {
            const Eigen::Vector2d xh = T * eval.x.row(m).transpose();
            const auto a = fuse(model, xh);
            const auto b = fuse(loaded, xh);
            CHECK((a.x_tilde - b.x_tilde).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(a.trusted == b.trusted);
        }
    }
}

TEST_CASE("fusion respects the trust threshold") {
    Spiral sp;
    const auto side = edmd_side(sp, 401);
    Eigen::MatrixXd joint = side.raw.x.row(0);
    FusionOptions options;
    options.trust_threshold = 1e-12;  // everything beyond the threshold
    const auto model = build_fusion_model(side.dec, side.dec, joint, joint, side.raw.x,
                                          side.whiten, side.whiten, options);
    const auto r = fuse(model, side.raw.x.row(5).transpose());
    CHECK(!r.trusted);
    CHECK(r.phi1_magnitude > 1e-12);
}
