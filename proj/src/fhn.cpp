#include "kfuse/fhn.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <exception>
#include <numbers>
#include <thread>

namespace kfuse::fhn {

namespace {
constexpr double kDivergenceBound = 1e6;
}

void FhnParams::validate() const {
    if (grid_points < 3) throw ValidationError("FhnParams: grid_points must be >= 3");
    if (!(dt_integration > 0.0)) throw ValidationError("FhnParams: dt_integration must be > 0");
    if (!(domain_length > 0.0)) throw ValidationError("FhnParams: domain_length must be > 0");
    if (!(epsilon > 0.0)) throw ValidationError("FhnParams: epsilon must be > 0");
    if (!(delta > 0.0)) throw ValidationError("FhnParams: delta must be > 0");
    if (c1 == 0.0) throw ValidationError("FhnParams: c1 must be nonzero");
}

void TrajectoryConfig::validate(const FhnParams& p) const {
    p.validate();
    if (n_trajectories < 1) throw ValidationError("TrajectoryConfig: n_trajectories must be >= 1");
    if (pairs_per_trajectory < 0)
        throw ValidationError("TrajectoryConfig: pairs_per_trajectory must be >= 0");
    if (!(sampling_interval > 0.0))
        throw ValidationError("TrajectoryConfig: sampling_interval must be > 0");
    if (burn_in < 0.0) throw ValidationError("TrajectoryConfig: burn_in must be >= 0");
    double k = sampling_interval / p.dt_integration;
    if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k))
        throw ValidationError(
            "TrajectoryConfig: sampling_interval must be an integer multiple of dt_integration");
}

std::vector<FixedPoint> reaction_fixed_points(const FhnParams& params) {
    params.validate();
    // w = (v - c0) / c1 reduces the steady state to v^3 + p*v + q = 0 with
    // p = (1 - c1) / c1, q = -c0 / c1.
    const double p = (1.0 - params.c1) / params.c1;
    const double q = -params.c0 / params.c1;

    std::vector<double> roots;
    const double disc = -(4.0 * p * p * p + 27.0 * q * q);
    if (disc > 0.0) {
        // three distinct real roots, trigonometric form
        const double m = 2.0 * std::sqrt(-p / 3.0);
        const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
        const double theta = std::acos(arg) / 3.0;
        for (int k = 0; k < 3; ++k)
            roots.push_back(m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0));
    } else {
        // one real root (Cardano); p == 0 handled by cbrt
        const double half_q = q / 2.0;
        const double rad = half_q * half_q + p * p * p / 27.0;
        if (rad >= 0.0) {
            const double s = std::sqrt(rad);
            roots.push_back(std::cbrt(-half_q + s) + std::cbrt(-half_q - s));
        } else {
            const double m = 2.0 * std::sqrt(-p / 3.0);
            const double theta = std::acos(std::clamp(3.0 * q / (p * m), -1.0, 1.0)) / 3.0;
            roots.push_back(m * std::cos(theta));
        }
    }

    std::vector<FixedPoint> out;
    for (double v : roots) {
        // Newton polish on f(v) = v^3 + p v + q
        for (int it = 0; it < 8; ++it) {
            double f = v * v * v + p * v + q;
            double fp = 3.0 * v * v + p;
            if (fp == 0.0) break;
            v -= f / fp;
        }
        FixedPoint fx;
        fx.v = v;
        fx.w = (v - params.c0) / params.c1;
        // reaction Jacobian [[1 - 3v^2, -1], [eps, -eps*c1]]
        const double j11 = 1.0 - 3.0 * v * v;
        const double tr = j11 - params.epsilon * params.c1;
        const double det = -params.epsilon * params.c1 * j11 + params.epsilon;
        fx.stability = (det < 0.0 || tr > 0.0) ? Stability::unstable : Stability::stable;
        out.push_back(fx);
    }
    std::sort(out.begin(), out.end(), [](const FixedPoint& a, const FixedPoint& b) {
        return a.v < b.v;
    });
    // dedupe multiple roots (discriminant boundary)
    out.erase(std::unique(out.begin(), out.end(),
                          [](const FixedPoint& a, const FixedPoint& b) {
                              return std::abs(a.v - b.v) < 1e-11;
                          }),
              out.end());
    return out;
}

Integrator::Integrator(const FhnParams& params, StepOptions opts)
    : params_(params), opts_(opts), n_(params.grid_points) {
    params_.validate();
    const double dx2 = params_.dx() * params_.dx();
    acoef_v_ = 1.0 * params_.dt_integration / (4.0 * dx2);
    acoef_w_ = params_.delta * params_.dt_integration / (4.0 * dx2);

    // Thomas prefactor for (I - a*L) with the ghost-node Neumann Laplacian.
    auto prefactor = [&](double a, Eigen::ArrayXd& cprime, Eigen::ArrayXd& inv_denom) {
        cprime.resize(n_);
        inv_denom.resize(n_);
        const double b = 1.0 + 2.0 * a;
        double denom = b;
        inv_denom[0] = 1.0 / denom;
        cprime[0] = -2.0 * a / denom;
        for (int i = 1; i < n_; ++i) {
            const double sub = (i == n_ - 1) ? -2.0 * a : -a;
            denom = b - sub * cprime[i - 1];
            inv_denom[i] = 1.0 / denom;
            cprime[i] = (i == n_ - 1) ? 0.0 : -a / denom;
        }
    };
    prefactor(acoef_v_, cprime_v_, inv_denom_v_);
    prefactor(acoef_w_, cprime_w_, inv_denom_w_);
}

Eigen::ArrayXd Integrator::grid() const {
    return Eigen::ArrayXd::LinSpaced(n_, 0.0, params_.domain_length);
}

void Integrator::diffuse_half(Eigen::ArrayXd& u, const Eigen::ArrayXd& cprime,
                              const Eigen::ArrayXd& inv_denom, double a) const {
    // rhs = (I + a*L) u, then solve (I - a*L) u_new = rhs
    static thread_local Eigen::ArrayXd rhs;
    rhs.resize(n_);
    rhs[0] = u[0] + a * 2.0 * (u[1] - u[0]);
    for (int i = 1; i < n_ - 1; ++i) rhs[i] = u[i] + a * (u[i - 1] - 2.0 * u[i] + u[i + 1]);
    rhs[n_ - 1] = u[n_ - 1] + a * 2.0 * (u[n_ - 2] - u[n_ - 1]);

    // forward sweep
    rhs[0] *= inv_denom[0];
    for (int i = 1; i < n_; ++i) {
        const double sub = (i == n_ - 1) ? -2.0 * a : -a;
        rhs[i] = (rhs[i] - sub * rhs[i - 1]) * inv_denom[i];
    }
    // back substitution
    u[n_ - 1] = rhs[n_ - 1];
    for (int i = n_ - 2; i >= 0; --i) u[i] = rhs[i] - cprime[i] * u[i + 1];
}

void Integrator::react_rk4(Eigen::ArrayXd& v, Eigen::ArrayXd& w) const {
    const double dt = params_.dt_integration;
    const double eps = params_.epsilon, c0 = params_.c0, c1 = params_.c1;
    auto fv = [&](const Eigen::ArrayXd& vv, const Eigen::ArrayXd& ww) {
        return (vv - ww - vv.cube()).eval();
    };
    auto fw = [&](const Eigen::ArrayXd& vv, const Eigen::ArrayXd& ww) {
        return (eps * (vv - c1 * ww - c0)).eval();
    };
    const Eigen::ArrayXd k1v = fv(v, w), k1w = fw(v, w);
    const Eigen::ArrayXd v2 = v + 0.5 * dt * k1v, w2 = w + 0.5 * dt * k1w;
    const Eigen::ArrayXd k2v = fv(v2, w2), k2w = fw(v2, w2);
    const Eigen::ArrayXd v3 = v + 0.5 * dt * k2v, w3 = w + 0.5 * dt * k2w;
    const Eigen::ArrayXd k3v = fv(v3, w3), k3w = fw(v3, w3);
    const Eigen::ArrayXd v4 = v + dt * k3v, w4 = w + dt * k3w;
    const Eigen::ArrayXd k4v = fv(v4, w4), k4w = fw(v4, w4);
    v += (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    w += (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
}

void Integrator::step(FieldState& state) const {
    if (state.v.size() != n_ || state.w.size() != n_)
        throw ValidationError("FieldState: field length does not match grid_points");
    if (opts_.diffusion) {
        diffuse_half(state.v, cprime_v_, inv_denom_v_, acoef_v_);
        diffuse_half(state.w, cprime_w_, inv_denom_w_, acoef_w_);
    }
    if (opts_.reaction) react_rk4(state.v, state.w);
    if (opts_.diffusion) {
        diffuse_half(state.v, cprime_v_, inv_denom_v_, acoef_v_);
        diffuse_half(state.w, cprime_w_, inv_denom_w_, acoef_w_);
    }
    state.t += params_.dt_integration;
    const double vmax = state.v.abs().maxCoeff();
    const double wmax = state.w.abs().maxCoeff();
    if (!(vmax < kDivergenceBound) || !(wmax < kDivergenceBound))
        throw NumericalError("integration diverged (|field| > 1e6) at t = " +
                             std::to_string(state.t));
}

FieldState step(const FieldState& state, const FhnParams& params) {
    Integrator integ(params);
    FieldState s = state;
    integ.step(s);
    return s;
}

FieldState perturbed_initial_state(const FhnParams& params, double perturbation_scale, Rng& rng) {
    const auto fps = reaction_fixed_points(params);
    const FixedPoint* chosen = nullptr;
    for (const auto& fp : fps)
        if (fp.stability == Stability::unstable && (!chosen || std::abs(fp.v) < std::abs(chosen->v)))
            chosen = &fp;
    if (!chosen) throw ValidationError("no unstable uniform fixed point for these parameters");

    const int n = params.grid_points;
    const Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(n, 0.0, params.domain_length);
    FieldState s;
    s.v = Eigen::ArrayXd::Constant(n, chosen->v);
    s.w = Eigen::ArrayXd::Constant(n, chosen->w);
    s.t = 0.0;
    // The uniform (zero-wavenumber) instability of the saddle outpaces the
    // patterned ones, so a purely random zero-mean perturbation often slides
    // the whole field into one of the homogeneous stable states, and mirror
    // patterns split the remaining runs between two attractor copies. A
    // fixed first-mode bias plants a front of definite orientation; the
    // random modes only diversify the approach. Cosine modes keep the
    // zero-flux boundary condition exact.
    constexpr double kBaseAmplitude = 1.2;
    constexpr double pi = std::numbers::pi;
    const Eigen::ArrayXd base = kBaseAmplitude * (pi * x / params.domain_length).cos();
    s.v += base;
    s.w += base;
    for (Eigen::ArrayXd* field : {&s.v, &s.w}) {
        for (int k = 1; k <= 5; ++k) {
            const double amp = rng.uniform(-1.0, 1.0) * perturbation_scale;
            *field += amp * (k * pi * x / params.domain_length).cos();
        }
    }
    return s;
}

std::vector<std::vector<FieldState>> generate_trajectories(const TrajectoryConfig& config,
                                                           const FhnParams& params) {
    config.validate(params);
    const long steps_per_sample = std::lround(config.sampling_interval / params.dt_integration);
    const long burn_steps = std::lround(config.burn_in / params.dt_integration);

    std::vector<std::vector<FieldState>> out(config.n_trajectories);
    std::vector<std::exception_ptr> errors(config.n_trajectories);

    auto run_one = [&](int idx) {
        try {
            Rng rng(splitmix64(config.rng_seed + 0x9E3779B97F4A7C15ULL * (idx + 1)));
            Integrator integ(params);
            FieldState s = perturbed_initial_state(params, config.perturbation_scale, rng);
            for (long i = 0; i < burn_steps; ++i) integ.step(s);
            auto& series = out[idx];
            series.reserve(config.pairs_per_trajectory + 1);
            series.push_back(s);
            for (int m = 0; m < config.pairs_per_trajectory; ++m) {
                for (long i = 0; i < steps_per_sample; ++i) integ.step(s);
                series.push_back(s);
            }
        } catch (const std::exception& e) {
            errors[idx] = std::make_exception_ptr(
                NumericalError("trajectory " + std::to_string(idx) + ": " + e.what()));
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads = std::min<unsigned>(hw, config.n_trajectories);
    if (n_threads <= 1) {
        for (int i = 0; i < config.n_trajectories; ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t)
            pool.emplace_back([&, t] {
                for (int i = static_cast<int>(t); i < config.n_trajectories;
                     i += static_cast<int>(n_threads))
                    run_one(i);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace kfuse::fhn
