#include "kfuse/fusion.hpp"

#include "kfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

namespace kfuse::fusion {

namespace {

constexpr double kImagFloor = 1e-9;        // real/complex class boundary
constexpr double kTrivialMuTol = 1e-6;     // |mu - 1| exclusion for the trivial tuple
constexpr double kTrivialLambdaTol = 1e-6; // |lambda| exclusion for decaying selection
constexpr double kUnitCircleBand = 1e-3;   // tuples this close to |mu| = 1 count as rotations

int conjugate_index(const edmd::KoopmanDecomposition& dec, int k) {
    const std::complex<double> target = std::conj(dec.lambda[k]);
    int best = -1;
    double best_gap = std::numeric_limits<double>::max();
    for (int j = 0; j < dec.count(); ++j) {
        if (j == k) continue;
        const double gap = std::abs(dec.lambda[j] - target);
        if (gap < best_gap) {
            best_gap = gap;
            best = j;
        }
    }
    if (best >= 0 && best_gap <= 1e-9 * (1.0 + std::abs(target))) return best;
    return -1;
}

double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    if (a <= -pi) a += 2.0 * pi;
    return a;
}

}  // namespace

std::vector<MatchedPair> match_eigenfunctions(const edmd::KoopmanDecomposition& dec_tilde,
                                              const edmd::KoopmanDecomposition& dec_hat,
                                              const MatchTolerance& tol) {
    if (std::abs(dec_tilde.dt - dec_hat.dt) > 1e-12 * std::max(1.0, dec_tilde.dt))
        throw ValidationError("match_eigenfunctions: decompositions must share dt");

    auto sign_class = [](std::complex<double> l) {
        if (l.imag() > kImagFloor) return +1;
        if (l.imag() < -kImagFloor) return -1;
        return 0;
    };

    struct Cand {
        double gap;
        int i, j;
    };
    std::vector<Cand> cands;
    for (int i = 0; i < dec_tilde.count(); ++i) {
        const int ci = sign_class(dec_tilde.lambda[i]);
        if (ci < 0) continue;  // negative-imaginary tuples follow their conjugates
        if (!std::isfinite(dec_tilde.lambda[i].real())) continue;
        for (int j = 0; j < dec_hat.count(); ++j) {
            if (sign_class(dec_hat.lambda[j]) != ci) continue;
            if (!std::isfinite(dec_hat.lambda[j].real())) continue;
            const double gap = std::abs(dec_tilde.lambda[i] - dec_hat.lambda[j]);
            // symmetric bound keeps match(a,b) == match(b,a)
            const double bound = tol.rel * std::max(std::abs(dec_tilde.lambda[i]),
                                                    std::abs(dec_hat.lambda[j])) +
                                 tol.abs;
            if (gap <= bound) cands.push_back({gap, i, j});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.gap != b.gap) return a.gap < b.gap;
        if (std::min(a.i, a.j) != std::min(b.i, b.j)) return std::min(a.i, a.j) < std::min(b.i, b.j);
        return std::max(a.i, a.j) < std::max(b.i, b.j);
    });

    std::vector<char> used_tilde(dec_tilde.count(), 0), used_hat(dec_hat.count(), 0);
    std::vector<MatchedPair> out;
    for (const auto& c : cands) {
        if (used_tilde[c.i] || used_hat[c.j]) continue;
        if (sign_class(dec_tilde.lambda[c.i]) == 0) {
            used_tilde[c.i] = used_hat[c.j] = 1;
            out.push_back({c.i, c.j, c.gap, {}});
        } else {
            const int ic = conjugate_index(dec_tilde, c.i);
            const int jc = conjugate_index(dec_hat, c.j);
            if (ic < 0 || jc < 0 || used_tilde[ic] || used_hat[jc]) continue;
            used_tilde[c.i] = used_hat[c.j] = 1;
            used_tilde[ic] = used_hat[jc] = 1;
            out.push_back({c.i, c.j, c.gap, {}});
            out.push_back({ic, jc, c.gap, {}});
        }
    }
    if (out.empty())
        throw NumericalError(
            "no eigenvalue pair within tolerance: the approximation is not accurate enough "
            "to be useful");
    std::sort(out.begin(), out.end(), [](const MatchedPair& a, const MatchedPair& b) {
        if (a.eigenvalue_gap != b.eigenvalue_gap) return a.eigenvalue_gap < b.eigenvalue_gap;
        return a.index_tilde < b.index_tilde;
    });
    return out;
}

MatchedPair register_alpha(const Eigen::MatrixXd& joint_tilde, const Eigen::MatrixXd& joint_hat,
                           MatchedPair pair, const edmd::KoopmanDecomposition& dec_tilde,
                           const edmd::KoopmanDecomposition& dec_hat) {
    if (joint_tilde.rows() != joint_hat.rows() || joint_tilde.rows() < 1)
        throw ValidationError("register_alpha: joint set must pair rows of both measurements");
    std::complex<double> num{0.0, 0.0};
    double den = 0.0;
    for (Eigen::Index m = 0; m < joint_tilde.rows(); ++m) {
        const auto phi_tilde =
            edmd::eval_eigenfunction(joint_tilde.row(m).transpose(), pair.index_tilde, dec_tilde);
        const auto phi_hat =
            edmd::eval_eigenfunction(joint_hat.row(m).transpose(), pair.index_hat, dec_hat);
        num += std::conj(phi_hat) * phi_tilde;
        den += std::norm(phi_hat);
    }
    if (!(den > 1e-18))
        throw NumericalError(
            "register_alpha: source eigenfunction vanishes on the joint set; registration needs "
            "a different joint point");
    pair.alpha = num / den;
    if (pair.alpha == std::complex<double>(0.0, 0.0))
        throw NumericalError("register_alpha: registration constant is zero");
    return pair;
}

Parameterization select_parameterization(const edmd::KoopmanDecomposition& dec) {
    Parameterization out;
    // A converged rotation spectrum carries the whole harmonic lattice k*omega
    // numerically on the unit circle, so "closest to |mu| = 1" degenerates to
    // a lottery between harmonics; within the unit-circle band the fundamental
    // (smallest frequency) is the tuple whose phase winds once per cycle.
    bool in_band = false;
    double best_osc = std::numeric_limits<double>::max();
    double best_dec = std::numeric_limits<double>::max();
    for (int k = 0; k < dec.count(); ++k) {
        const auto lam = dec.lambda[k];
        const auto mu = dec.mu[k];
        if (!std::isfinite(lam.real())) continue;
        if (lam.imag() > kImagFloor && std::abs(mu - 1.0) > kTrivialMuTol) {
            const double circle_dist = std::abs(std::abs(mu) - 1.0);
            if (circle_dist <= kUnitCircleBand) {
                if (!in_band || lam.imag() < best_osc) {
                    best_osc = lam.imag();
                    out.oscillatory = k;
                }
                in_band = true;
            } else if (!in_band && circle_dist < best_osc) {
                best_osc = circle_dist;
                out.oscillatory = k;
            }
        }
        if (std::abs(lam.imag()) <= kImagFloor && lam.real() < 0.0 &&
            std::abs(lam) > kTrivialLambdaTol) {
            const double score = std::abs(lam);
            if (score < best_dec) {
                best_dec = score;
                out.decaying = k;
            }
        }
    }
    if (out.oscillatory < 0)
        throw ValidationError("select_parameterization: no qualifying oscillatory tuple");
    if (out.decaying < 0)
        throw ValidationError("select_parameterization: no qualifying decaying tuple");
    return out;
}

FusionModel build_fusion_model(const edmd::KoopmanDecomposition& dec_tilde,
                               const edmd::KoopmanDecomposition& dec_hat,
                               const Eigen::MatrixXd& joint_tilde_raw,
                               const Eigen::MatrixXd& joint_hat_raw,
                               const Eigen::MatrixXd& training_tilde_raw,
                               const measurements::WhitenTransform& whiten_tilde,
                               const measurements::WhitenTransform& whiten_hat,
                               const FusionOptions& options) {
    const auto matches = match_eigenfunctions(dec_tilde, dec_hat, options.match_tol);
    const Parameterization param =
        options.parameterization ? *options.parameterization : select_parameterization(dec_tilde);

    auto find_match = [&](int idx_tilde) -> MatchedPair {
        for (const auto& m : matches)
            if (m.index_tilde == idx_tilde) return m;
        throw NumericalError("build_fusion_model: parameterizing tuple " +
                             std::to_string(idx_tilde) +
                             " has no matched counterpart within tolerance");
    };

    const Eigen::MatrixXd joint_tilde = whiten_tilde.apply_rows(joint_tilde_raw);
    const Eigen::MatrixXd joint_hat = whiten_hat.apply_rows(joint_hat_raw);
    const MatchedPair pair_decay =
        register_alpha(joint_tilde, joint_hat, find_match(param.decaying), dec_tilde, dec_hat);
    const MatchedPair pair_osc =
        register_alpha(joint_tilde, joint_hat, find_match(param.oscillatory), dec_tilde, dec_hat);

    // intrinsic coordinates of every training point on the target side
    const Eigen::MatrixXd training = whiten_tilde.apply_rows(training_tilde_raw);
    Eigen::MatrixXd coords(training.rows(), 2);
    for (Eigen::Index m = 0; m < training.rows(); ++m) {
        const auto phi_d =
            edmd::eval_eigenfunction(training.row(m).transpose(), param.decaying, dec_tilde);
        const auto phi_o =
            edmd::eval_eigenfunction(training.row(m).transpose(), param.oscillatory, dec_tilde);
        coords(m, 0) = phi_d.real();
        coords(m, 1) = wrap_angle(std::arg(phi_o));
    }
    auto [padded_pts, padded_vals] = interp::pad_angle_periodic(coords, training_tilde_raw);

    FusionModel model;
    model.dec_tilde = dec_tilde;
    model.dec_hat = dec_hat;
    model.hat_decay = pair_decay.index_hat;
    model.hat_osc = pair_osc.index_hat;
    model.alpha_decay = pair_decay.alpha;
    model.alpha_osc = pair_osc.alpha;
    model.inverse_map = interp::LinearInterpolant::build(padded_pts, padded_vals,
                                                         interp::FallbackPolicy::nearest_with_flag);
    model.whiten_tilde = whiten_tilde;
    model.whiten_hat = whiten_hat;
    model.trust_threshold = options.trust_threshold;
    model.matches = matches;
    for (auto& m : model.matches) {
        if (m.index_tilde == param.decaying) m.alpha = pair_decay.alpha;
        if (m.index_tilde == param.oscillatory) m.alpha = pair_osc.alpha;
    }

    nlohmann::json table = nlohmann::json::array();
    for (const auto& m : matches) {
        table.push_back({{"index_tilde", m.index_tilde},
                         {"index_hat", m.index_hat},
                         {"lambda_tilde", {dec_tilde.lambda[m.index_tilde].real(),
                                           dec_tilde.lambda[m.index_tilde].imag()}},
                         {"lambda_hat", {dec_hat.lambda[m.index_hat].real(),
                                         dec_hat.lambda[m.index_hat].imag()}},
                         {"gap", m.eigenvalue_gap}});
    }
    model.info["matched_table"] = table;
    model.info["parameterization"] = {{"decaying_tilde", param.decaying},
                                      {"oscillatory_tilde", param.oscillatory},
                                      {"decaying_hat", pair_decay.index_hat},
                                      {"oscillatory_hat", pair_osc.index_hat}};
    return model;
}

FuseResult fuse(const FusionModel& model, const Eigen::VectorXd& x_hat_raw) {
    const Eigen::VectorXd xw = model.whiten_hat.apply(x_hat_raw);
    const auto phi_d = edmd::eval_eigenfunction(xw, model.hat_decay, model.dec_hat);
    const auto phi_o = edmd::eval_eigenfunction(xw, model.hat_osc, model.dec_hat);
    const std::complex<double> est_d = model.alpha_decay * phi_d;
    const std::complex<double> est_o = model.alpha_osc * phi_o;

    FuseResult r;
    r.coord_decay = est_d.real();
    r.coord_angle = wrap_angle(std::arg(est_o));
    r.phi1_magnitude = std::abs(est_d);
    auto q = model.inverse_map(r.coord_decay, r.coord_angle);
    r.x_tilde = std::move(q.values);
    r.extrapolated = q.extrapolated;
    r.trusted = !q.extrapolated && r.phi1_magnitude <= model.trust_threshold;
    return r;
}

namespace {
nlohmann::json complex_json(std::complex<double> z) {
    return {{"re", z.real()}, {"im", z.imag()}};
}
std::complex<double> complex_from_json(const nlohmann::json& j) {
    return {j.at("re").get<double>(), j.at("im").get<double>()};
}
nlohmann::json whiten_json(const measurements::WhitenTransform& w) {
    return {{"shift", io::to_std(w.shift)}, {"scale", io::to_std(w.scale)}};
}
measurements::WhitenTransform whiten_from_json(const nlohmann::json& j) {
    measurements::WhitenTransform w;
    w.shift = io::from_std(j.at("shift").get<std::vector<double>>());
    w.scale = io::from_std(j.at("scale").get<std::vector<double>>());
    return w;
}
}  // namespace

void save_fusion_model(const FusionModel& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json j;
    j["format_version"] = 1;
    j["trust_threshold"] = model.trust_threshold;
    j["dt"] = model.dec_hat.dt;
    j["alpha_decay"] = complex_json(model.alpha_decay);
    j["alpha_osc"] = complex_json(model.alpha_osc);
    j["mu_decay"] = complex_json(model.dec_hat.mu[model.hat_decay]);
    j["mu_osc"] = complex_json(model.dec_hat.mu[model.hat_osc]);
    j["lambda_decay"] = complex_json(model.dec_hat.lambda[model.hat_decay]);
    j["lambda_osc"] = complex_json(model.dec_hat.lambda[model.hat_osc]);
    j["value_components"] = model.inverse_map.values().cols();
    j["fallback_policy"] =
        model.inverse_map.policy() == interp::FallbackPolicy::nearest_with_flag ? "nearest" : "error";
    nlohmann::json jm = nlohmann::json::array();
    for (const auto& m : model.matches) {
        nlohmann::json row = {{"index_tilde", m.index_tilde},
                              {"index_hat", m.index_hat},
                              {"gap", m.eigenvalue_gap},
                              {"alpha", complex_json(m.alpha)}};
        if (m.index_tilde < model.dec_tilde.count())
            row["lambda_tilde"] = complex_json(model.dec_tilde.lambda[m.index_tilde]);
        if (m.index_hat < model.dec_hat.count())
            row["lambda_hat"] = complex_json(model.dec_hat.lambda[m.index_hat]);
        jm.push_back(row);
    }
    j["matched_pairs"] = jm;
    j["info"] = model.info;
    io::write_json(dir + "/model.json", j);

    io::write_json(dir + "/transforms.json",
                   {{"tilde", whiten_json(model.whiten_tilde)}, {"hat", whiten_json(model.whiten_hat)}});
    io::write_json(dir + "/hat_dictionary.json", model.dec_hat.dictionary->to_json());

    Eigen::MatrixXcd vecs(model.dec_hat.xi.rows(), 2);
    vecs.col(0) = model.dec_hat.xi.col(model.hat_decay);
    vecs.col(1) = model.dec_hat.xi.col(model.hat_osc);
    io::write_cmatrix_bin(dir + "/hat_vectors.bin", vecs);

    const auto& tri = model.inverse_map.triangulation();
    Eigen::MatrixXd vert_out(tri.vertices.rows(), 2 + model.inverse_map.values().cols());
    vert_out.leftCols(2) = tri.vertices;
    vert_out.rightCols(model.inverse_map.values().cols()) = model.inverse_map.values();
    std::vector<std::string> cols = {"u", "angle"};
    for (Eigen::Index c = 0; c < model.inverse_map.values().cols(); ++c)
        cols.push_back("value" + std::to_string(c));
    io::write_csv(dir + "/interp_vertices.csv", cols, vert_out);

    Eigen::MatrixXd tris(static_cast<Eigen::Index>(tri.triangles.size()), 3);
    for (size_t t = 0; t < tri.triangles.size(); ++t)
        for (int i = 0; i < 3; ++i)
            tris(static_cast<Eigen::Index>(t), i) = tri.triangles[t][i];
    io::write_csv(dir + "/interp_triangles.csv", {"v0", "v1", "v2"}, tris);
}

FusionModel load_fusion_model(const std::string& dir) {
    namespace fs = std::filesystem;
    for (const char* f : {"model.json", "transforms.json", "hat_dictionary.json",
                          "hat_vectors.bin", "interp_vertices.csv", "interp_triangles.csv"})
        if (!fs::exists(dir + "/" + std::string(f)))
            throw ValidationError("fusion model directory is missing " + std::string(f) + ": " +
                                  dir);

    const auto j = io::read_json(dir + "/model.json");
    const auto jt = io::read_json(dir + "/transforms.json");

    FusionModel model;
    model.trust_threshold = j.at("trust_threshold").get<double>();
    model.alpha_decay = complex_from_json(j.at("alpha_decay"));
    model.alpha_osc = complex_from_json(j.at("alpha_osc"));
    model.whiten_tilde = whiten_from_json(jt.at("tilde"));
    model.whiten_hat = whiten_from_json(jt.at("hat"));
    model.info = j.value("info", nlohmann::json::object());
    for (const auto& m : j.at("matched_pairs")) {
        MatchedPair mp;
        mp.index_tilde = m.at("index_tilde").get<int>();
        mp.index_hat = m.at("index_hat").get<int>();
        mp.eigenvalue_gap = m.at("gap").get<double>();
        mp.alpha = complex_from_json(m.at("alpha"));
        model.matches.push_back(mp);
    }

    // reduced source-side decomposition: just the two tuples fuse() needs
    edmd::KoopmanDecomposition dec;
    dec.dt = j.at("dt").get<double>();
    dec.mu.resize(2);
    dec.lambda.resize(2);
    dec.mu[0] = complex_from_json(j.at("mu_decay"));
    dec.mu[1] = complex_from_json(j.at("mu_osc"));
    dec.lambda[0] = complex_from_json(j.at("lambda_decay"));
    dec.lambda[1] = complex_from_json(j.at("lambda_osc"));
    dec.xi = io::read_cmatrix_bin(dir + "/hat_vectors.bin");
    dec.dictionary = dict::dictionary_from_json(io::read_json(dir + "/hat_dictionary.json"));
    dec.svd_rank_used = 0;
    model.dec_hat = std::move(dec);
    model.hat_decay = 0;
    model.hat_osc = 1;

    const auto vt = io::read_csv(dir + "/interp_vertices.csv");
    const int ncomp = j.at("value_components").get<int>();
    Eigen::MatrixXd vertices = vt.data.leftCols(2);
    Eigen::MatrixXd values = vt.data.rightCols(ncomp);
    const auto tt = io::read_csv(dir + "/interp_triangles.csv");
    std::vector<std::array<int, 3>> triangles(static_cast<size_t>(tt.data.rows()));
    for (Eigen::Index r = 0; r < tt.data.rows(); ++r)
        for (int i = 0; i < 3; ++i)
            triangles[static_cast<size_t>(r)][i] = static_cast<int>(std::lround(tt.data(r, i)));
    const auto policy = j.at("fallback_policy").get<std::string>() == "nearest"
                            ? interp::FallbackPolicy::nearest_with_flag
                            : interp::FallbackPolicy::hard_error;
    model.inverse_map = interp::LinearInterpolant(
        interp::assemble_triangulation(std::move(vertices), std::move(triangles)),
        std::move(values), policy);
    return model;
}

}  // namespace kfuse::fusion
