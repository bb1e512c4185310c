#pragma once

#include "kfuse/edmd.hpp"
#include "kfuse/measurements.hpp"
#include "kfuse/scattered_interp.hpp"

#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace kfuse::fusion {

struct MatchTolerance {
    double rel = 0.1;   // fraction of |lambda_tilde|
    double abs = 1e-3;  // absolute floor
    double bound(std::complex<double> lambda_tilde) const {
        return rel * std::abs(lambda_tilde) + abs;
    }
};

struct MatchedPair {
    int index_tilde = -1;
    int index_hat = -1;
    double eigenvalue_gap = 0.0;
    std::complex<double> alpha{0.0, 0.0};  // unset until registration
};

/// Greedy minimal-gap assignment between the continuous eigenvalues of two
/// decompositions. Complex-conjugate tuples are matched jointly and the
/// result is symmetric in its arguments. Throws NumericalError when no pair
/// falls within tolerance.
std::vector<MatchedPair> match_eigenfunctions(const edmd::KoopmanDecomposition& dec_tilde,
                                              const edmd::KoopmanDecomposition& dec_hat,
                                              const MatchTolerance& tol = {});

/// Least-squares registration constant over the joint set (whitened
/// coordinates on both sides):
///   alpha = sum conj(phi_hat) * phi_tilde / sum |phi_hat|^2
MatchedPair register_alpha(const Eigen::MatrixXd& joint_tilde, const Eigen::MatrixXd& joint_hat,
                           MatchedPair pair, const edmd::KoopmanDecomposition& dec_tilde,
                           const edmd::KoopmanDecomposition& dec_hat);

struct Parameterization {
    int decaying = -1;     // real lambda < 0, smallest magnitude
    int oscillatory = -1;  // Im lambda > 0, |mu| closest to 1, trivial tuple excluded
};

Parameterization select_parameterization(const edmd::KoopmanDecomposition& dec);

struct FusionOptions {
    MatchTolerance match_tol;
    double trust_threshold = 0.03;
    std::optional<Parameterization> parameterization;  // override the selection rule
};

/// Everything fuse() needs at apply time. The inverse interpolant maps
/// intrinsic coordinates (Re of the decaying eigenfunction, phase of the
/// oscillatory one) to raw target measurement components.
struct FusionModel {
    edmd::KoopmanDecomposition dec_tilde;  // target side; not persisted on save
    edmd::KoopmanDecomposition dec_hat;    // may be reduced to the two used tuples
    int hat_decay = -1;                    // tuple indices into dec_hat
    int hat_osc = -1;
    std::complex<double> alpha_decay{0.0, 0.0};
    std::complex<double> alpha_osc{0.0, 0.0};
    interp::LinearInterpolant inverse_map;
    measurements::WhitenTransform whiten_tilde;
    measurements::WhitenTransform whiten_hat;
    double trust_threshold = 0.03;
    std::vector<MatchedPair> matches;      // full matched table (built models)
    nlohmann::json info;                   // eigenvalue table, diagnostics
};

/// Assembles the model: match tuples, register alpha on the joint pair(s),
/// evaluate the intrinsic coordinates on all training points and build the
/// periodically padded inverse interpolant. Joint and training data arrive
/// in raw measurement units together with each side's whitening transform.
FusionModel build_fusion_model(const edmd::KoopmanDecomposition& dec_tilde,
                               const edmd::KoopmanDecomposition& dec_hat,
                               const Eigen::MatrixXd& joint_tilde_raw,
                               const Eigen::MatrixXd& joint_hat_raw,
                               const Eigen::MatrixXd& training_tilde_raw,
                               const measurements::WhitenTransform& whiten_tilde,
                               const measurements::WhitenTransform& whiten_hat,
                               const FusionOptions& options = {});

struct FuseResult {
    Eigen::VectorXd x_tilde;    // raw target measurement units
    bool trusted = false;
    bool extrapolated = false;
    double phi1_magnitude = 0.0;  // |alpha_decay * phi_hat_decay|
    double coord_decay = 0.0;     // interpolation query coordinates
    double coord_angle = 0.0;
};

/// Translates a single raw source measurement. Each call is independent.
FuseResult fuse(const FusionModel& model, const Eigen::VectorXd& x_hat_raw);

void save_fusion_model(const FusionModel& model, const std::string& dir);
FusionModel load_fusion_model(const std::string& dir);

}  // namespace kfuse::fusion
