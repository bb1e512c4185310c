#pragma once

#include "kfuse/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace kfuse::fhn {

/// Activator-inhibitor reaction-diffusion model on [0, domain_length] with
/// zero-flux boundaries:
///   dv/dt = v_xx + v - w - v^3
///   dw/dt = delta * w_xx + epsilon * (v - c1 * w - c0)
struct FhnParams {
    double c0 = -0.03;
    double c1 = 2.0;
    double delta = 4.0;
    double epsilon = 0.017;
    double domain_length = 20.0;
    int grid_points = 200;
    double dt_integration = 0.01;

    double dx() const { return domain_length / (grid_points - 1); }
    void validate() const;
};

struct FieldState {
    Eigen::ArrayXd v;
    Eigen::ArrayXd w;
    double t = 0.0;
};

struct TrajectoryConfig {
    int n_trajectories = 20;
    double burn_in = 1000.0;
    double sampling_interval = 2.0;
    int pairs_per_trajectory = 1000;
    double perturbation_scale = 0.3;
    std::uint64_t rng_seed = 0;

    void validate(const FhnParams& p) const;
};

enum class Stability { stable, unstable };

struct FixedPoint {
    double v = 0.0;
    double w = 0.0;
    Stability stability = Stability::stable;
};

/// All spatially uniform steady states of the reaction system, sorted by v,
/// each labelled by the linear stability of the 2x2 reaction Jacobian.
std::vector<FixedPoint> reaction_fixed_points(const FhnParams& params);

/// Toggles exist as test hooks (pure diffusion conserves mass, uniform
/// states reduce to the reaction ODE).
struct StepOptions {
    bool reaction = true;
    bool diffusion = true;
};

/// Strang-split integrator: Crank-Nicolson diffusion half-steps around an
/// RK4 reaction step. Second order in time; diffusion is unconditionally
/// stable, which the explicit alternative is not at this grid/step pairing.
class Integrator {
public:
    explicit Integrator(const FhnParams& params, StepOptions opts = {});

    /// Advances one dt_integration in place. Throws NumericalError when a
    /// field magnitude exceeds the divergence bound 1e6.
    void step(FieldState& state) const;

    const FhnParams& params() const { return params_; }
    Eigen::ArrayXd grid() const;

private:
    void diffuse_half(Eigen::ArrayXd& u, const Eigen::ArrayXd& cprime,
                      const Eigen::ArrayXd& inv_denom, double a) const;
    void react_rk4(Eigen::ArrayXd& v, Eigen::ArrayXd& w) const;

    FhnParams params_;
    StepOptions opts_;
    int n_;
    double acoef_v_, acoef_w_;  // D * dt / (4 dx^2) per field
    Eigen::ArrayXd cprime_v_, inv_denom_v_;
    Eigen::ArrayXd cprime_w_, inv_denom_w_;
};

/// One dt_integration step as a pure function.
FieldState step(const FieldState& state, const FhnParams& params);

/// Uniform state at the unstable fixed point plus a smooth random
/// perturbation (first 5 cosine modes, amplitude perturbation_scale, drawn
/// uniformly in [-1,1] per mode, v first then w).
FieldState perturbed_initial_state(const FhnParams& params, double perturbation_scale, Rng& rng);

/// Generates n_trajectories independent time series. Each entry holds
/// pairs_per_trajectory + 1 states spaced sampling_interval apart, recorded
/// after the burn-in. Trajectories run concurrently; output order is by
/// trajectory index.
std::vector<std::vector<FieldState>> generate_trajectories(const TrajectoryConfig& config,
                                                           const FhnParams& params);

}  // namespace kfuse::fhn
