#include "kfuse/pipeline.hpp"

#include "kfuse/dictionary.hpp"
#include "kfuse/io.hpp"
#include "kfuse/scattered_interp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>

namespace kfuse::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t batch_seed(std::uint64_t seed, std::uint64_t k) { return splitmix64(seed + k); }

constexpr std::uint64_t kTagTilde = 1, kTagHat = 2, kTagJoint = 3, kTagEval = 4;

Eigen::MatrixXd fields_matrix(const std::vector<std::vector<fhn::FieldState>>& trajs) {
    long total = 0;
    for (const auto& tr : trajs) total += static_cast<long>(tr.size());
    const Eigen::Index D = 2 * trajs[0][0].v.size();
    Eigen::MatrixXd out(D, total);
    long col = 0;
    for (const auto& tr : trajs)
        for (const auto& s : tr) out.col(col++) = measurements::stack_fields(s);
    return out;
}

std::vector<std::string> pair_columns(const std::vector<std::string>& comps) {
    std::vector<std::string> cols = {"traj", "t"};
    for (const auto& c : comps) cols.push_back(c);
    for (const auto& c : comps) cols.push_back(c + "_next");
    return cols;
}

void write_pairs_csv(const std::string& path, const std::vector<std::string>& comps,
                     const std::vector<std::vector<Eigen::VectorXd>>& measured, double dt) {
    const int d = static_cast<int>(comps.size());
    long rows = 0;
    for (const auto& tr : measured) rows += static_cast<long>(tr.size()) - 1;
    Eigen::MatrixXd data(rows, 2 + 2 * d);
    long r = 0;
    for (size_t traj = 0; traj < measured.size(); ++traj) {
        for (size_t i = 0; i + 1 < measured[traj].size(); ++i) {
            data(r, 0) = static_cast<double>(traj);
            data(r, 1) = static_cast<double>(i) * dt;
            data.row(r).segment(2, d) = measured[traj][i].transpose();
            data.row(r).segment(2 + d, d) = measured[traj][i + 1].transpose();
            ++r;
        }
    }
    io::write_csv(path, pair_columns(comps), data);
}

std::shared_ptr<dict::Dictionary> make_dictionary(const DictConfig& cfg,
                                                  const Eigen::MatrixXd& whitened_x) {
    if (cfg.type == "mls") {
        auto nodes = dict::build_nodes_quadtree(whitened_x, cfg.max_per_cell, cfg.cover_factor);
        return std::make_shared<dict::MlsDictionary>(std::move(nodes), cfg.ridge);
    }
    if (cfg.type == "rbf") {
        auto nodes = dict::build_nodes_quadtree(whitened_x, cfg.max_per_cell, cfg.cover_factor);
        return std::make_shared<dict::RbfDictionary>(nodes.centers, cfg.rbf_shape);
    }
    if (cfg.type == "poly")
        return std::make_shared<dict::PolynomialDictionary>(static_cast<int>(whitened_x.cols()),
                                                            cfg.poly_degree);
    throw ValidationError("unknown dictionary type '" + cfg.type + "'");
}

double tuple_residual(const edmd::KoopmanDecomposition& dec, int k,
                      const measurements::MeasurementDataset& whitened) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index m = 0; m < whitened.x.rows(); ++m) {
        const auto px = edmd::eval_eigenfunction(whitened.x.row(m).transpose(), k, dec);
        const auto py = edmd::eval_eigenfunction(whitened.y.row(m).transpose(), k, dec);
        num += std::norm(py - dec.mu[k] * px);
        den += std::norm(px);
    }
    return den > 0.0 ? std::sqrt(num / den) : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json dict_cfg_to_json(const DictConfig& d) {
    return {{"type", d.type},
            {"max_per_cell", d.max_per_cell},
            {"cover_factor", d.cover_factor},
            {"ridge", d.ridge},
            {"rbf_shape", d.rbf_shape},
            {"poly_degree", d.poly_degree}};
}

DictConfig dict_cfg_from_json(DictConfig base, const nlohmann::json& j) {
    base.type = j.value("type", base.type);
    base.max_per_cell = j.value("max_per_cell", base.max_per_cell);
    base.cover_factor = j.value("cover_factor", base.cover_factor);
    base.ridge = j.value("ridge", base.ridge);
    base.rbf_shape = j.value("rbf_shape", base.rbf_shape);
    base.poly_degree = j.value("poly_degree", base.poly_degree);
    return base;
}

}  // namespace

void RunConfig::validate() const {
    fhn.validate();
    traj.validate(fhn);
    if (pca_retained < 1) throw ValidationError("config: pca_retained must be >= 1");
    if (point_location < 0.0 || point_location > fhn.domain_length)
        throw ValidationError("config: point_location outside the domain");
    if (!(svd_tol > 0.0)) throw ValidationError("config: svd_tol must be > 0");
    if (!(trust_threshold > 0.0)) throw ValidationError("config: trust_threshold must be > 0");
    if (eval_pairs < 2) throw ValidationError("config: eval_pairs must be >= 2");
    if (!(window_short > 0.0) || !(window_long > window_short))
        throw ValidationError("config: evaluation windows must satisfy 0 < short < long");
}

nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["fhn"] = {{"c0", cfg.fhn.c0},
                {"c1", cfg.fhn.c1},
                {"delta", cfg.fhn.delta},
                {"epsilon", cfg.fhn.epsilon},
                {"domain_length", cfg.fhn.domain_length},
                {"grid_points", cfg.fhn.grid_points},
                {"dt_integration", cfg.fhn.dt_integration}};
    j["trajectories"] = {{"n_trajectories", cfg.traj.n_trajectories},
                         {"burn_in", cfg.traj.burn_in},
                         {"sampling_interval", cfg.traj.sampling_interval},
                         {"pairs_per_trajectory", cfg.traj.pairs_per_trajectory},
                         {"perturbation_scale", cfg.traj.perturbation_scale}};
    j["pca_retained"] = cfg.pca_retained;
    j["point_location"] = cfg.point_location;
    j["dict_tilde"] = dict_cfg_to_json(cfg.dict_tilde);
    j["dict_hat"] = dict_cfg_to_json(cfg.dict_hat);
    j["svd_tol"] = cfg.svd_tol;
    j["match_tol"] = {{"rel", cfg.match_tol.rel}, {"abs", cfg.match_tol.abs}};
    j["trust_threshold"] = cfg.trust_threshold;
    j["eval_pairs"] = cfg.eval_pairs;
    j["window_short"] = cfg.window_short;
    j["window_long"] = cfg.window_long;
    return j;
}

RunConfig config_merge(RunConfig base, const nlohmann::json& j) {
    base.seed = j.value("seed", base.seed);
    if (j.contains("fhn")) {
        const auto& f = j["fhn"];
        base.fhn.c0 = f.value("c0", base.fhn.c0);
        base.fhn.c1 = f.value("c1", base.fhn.c1);
        base.fhn.delta = f.value("delta", base.fhn.delta);
        base.fhn.epsilon = f.value("epsilon", base.fhn.epsilon);
        base.fhn.domain_length = f.value("domain_length", base.fhn.domain_length);
        base.fhn.grid_points = f.value("grid_points", base.fhn.grid_points);
        base.fhn.dt_integration = f.value("dt_integration", base.fhn.dt_integration);
    }
    if (j.contains("trajectories")) {
        const auto& t = j["trajectories"];
        base.traj.n_trajectories = t.value("n_trajectories", base.traj.n_trajectories);
        base.traj.burn_in = t.value("burn_in", base.traj.burn_in);
        base.traj.sampling_interval = t.value("sampling_interval", base.traj.sampling_interval);
        base.traj.pairs_per_trajectory =
            t.value("pairs_per_trajectory", base.traj.pairs_per_trajectory);
        base.traj.perturbation_scale =
            t.value("perturbation_scale", base.traj.perturbation_scale);
    }
    base.pca_retained = j.value("pca_retained", base.pca_retained);
    base.point_location = j.value("point_location", base.point_location);
    if (j.contains("dict_tilde")) base.dict_tilde = dict_cfg_from_json(base.dict_tilde, j["dict_tilde"]);
    if (j.contains("dict_hat")) base.dict_hat = dict_cfg_from_json(base.dict_hat, j["dict_hat"]);
    base.svd_tol = j.value("svd_tol", base.svd_tol);
    if (j.contains("match_tol")) {
        base.match_tol.rel = j["match_tol"].value("rel", base.match_tol.rel);
        base.match_tol.abs = j["match_tol"].value("abs", base.match_tol.abs);
    }
    base.trust_threshold = j.value("trust_threshold", base.trust_threshold);
    base.eval_pairs = j.value("eval_pairs", base.eval_pairs);
    base.window_short = j.value("window_short", base.window_short);
    base.window_long = j.value("window_long", base.window_long);
    return base;
}

RunConfig config_from_json(const nlohmann::json& j) { return config_merge(RunConfig{}, j); }

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

void cmd_simulate(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    Paths paths{out_dir};
    const double dt = cfg.traj.sampling_interval;

    // first sensor batch: PCA coefficients
    fhn::TrajectoryConfig tc = cfg.traj;
    tc.rng_seed = batch_seed(cfg.seed, kTagTilde);
    const auto trajs_tilde = fhn::generate_trajectories(tc, cfg.fhn);
    const Eigen::MatrixXd fields = fields_matrix(trajs_tilde);
    io::write_matrix_bin(paths.fields_tilde(), fields);

    const auto basis = measurements::compute_pca(fields, cfg.pca_retained);
    io::write_matrix_bin(paths.pca_modes() + ".bin", basis.modes);
    {
        std::vector<std::string> cols;
        for (int k = 0; k < basis.retained; ++k) cols.push_back("mode" + std::to_string(k + 1));
        io::write_csv(paths.pca_modes(), cols, basis.modes);
        io::write_json(paths.pca_json(),
                       {{"singular_values", io::to_std(basis.singular_values)},
                        {"mean", io::to_std(basis.mean)},
                        {"retained", basis.retained},
                        {"energy_fraction", basis.energy_fraction}});
    }

    std::vector<std::string> pca_names;
    for (int k = 0; k < cfg.pca_retained; ++k) pca_names.push_back("a" + std::to_string(k + 1));
    {
        std::vector<std::vector<Eigen::VectorXd>> projected(trajs_tilde.size());
        for (size_t i = 0; i < trajs_tilde.size(); ++i)
            for (const auto& s : trajs_tilde[i])
                projected[i].push_back(measurements::project(s, basis));
        write_pairs_csv(paths.pca_pairs(), pca_names, projected, dt);
    }

    // second sensor batch: pointwise values, independent trajectories
    fhn::TrajectoryConfig hc = cfg.traj;
    hc.rng_seed = batch_seed(cfg.seed, kTagHat);
    const auto trajs_hat = fhn::generate_trajectories(hc, cfg.fhn);
    {
        std::vector<std::vector<Eigen::VectorXd>> measured(trajs_hat.size());
        for (size_t i = 0; i < trajs_hat.size(); ++i)
            for (const auto& s : trajs_hat[i])
                measured[i].push_back(
                    measurements::point_measure(s, cfg.fhn, cfg.point_location));
        write_pairs_csv(paths.pointwise_pairs(), {"v", "w"}, measured, dt);
    }

    // joint pair: one simultaneous measurement from a third short run
    fhn::TrajectoryConfig jc = cfg.traj;
    jc.rng_seed = batch_seed(cfg.seed, kTagJoint);
    jc.n_trajectories = 1;
    jc.pairs_per_trajectory = 0;
    const auto joint_run = fhn::generate_trajectories(jc, cfg.fhn);
    const auto& joint_state = joint_run[0][0];
    io::write_matrix_bin(paths.fields_joint(), measurements::stack_fields(joint_state));
    {
        const Eigen::VectorXd a = measurements::project(joint_state, basis);
        const Eigen::Vector2d p =
            measurements::point_measure(joint_state, cfg.fhn, cfg.point_location);
        Eigen::MatrixXd row(1, a.size() + 2);
        row.leftCols(a.size()) = a.transpose();
        row(0, a.size()) = p[0];
        row(0, a.size() + 1) = p[1];
        std::vector<std::string> cols = pca_names;
        cols.push_back("v");
        cols.push_back("w");
        io::write_csv(paths.joint(), cols, row);
    }

    // held-out trajectory for evaluation
    fhn::TrajectoryConfig ec = cfg.traj;
    ec.rng_seed = batch_seed(cfg.seed, kTagEval);
    ec.n_trajectories = 1;
    ec.pairs_per_trajectory = cfg.eval_pairs;
    const auto eval_run = fhn::generate_trajectories(ec, cfg.fhn);
    const auto& eval_states = eval_run[0];
    io::write_matrix_bin(paths.fields_eval(), fields_matrix(eval_run));
    {
        Eigen::MatrixXd pw(static_cast<Eigen::Index>(eval_states.size()), 3);
        Eigen::MatrixXd truth(static_cast<Eigen::Index>(eval_states.size()),
                              1 + cfg.pca_retained);
        for (size_t i = 0; i < eval_states.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double t = static_cast<double>(i) * dt;
            const Eigen::Vector2d p =
                measurements::point_measure(eval_states[i], cfg.fhn, cfg.point_location);
            pw(r, 0) = t;
            pw(r, 1) = p[0];
            pw(r, 2) = p[1];
            truth(r, 0) = t;
            truth.row(r).tail(cfg.pca_retained) =
                measurements::project(eval_states[i], basis).transpose();
        }
        io::write_csv(paths.eval_pointwise(), {"t", "v", "w"}, pw);
        std::vector<std::string> cols = {"t"};
        for (const auto& n : pca_names) cols.push_back(n);
        io::write_csv(paths.eval_pca_truth(), cols, truth);
    }

    nlohmann::json meta;
    meta["sampling_interval"] = dt;
    meta["config"] = config_to_json(cfg);
    meta["batch_seeds"] = {{"tilde", batch_seed(cfg.seed, kTagTilde)},
                           {"hat", batch_seed(cfg.seed, kTagHat)},
                           {"joint", batch_seed(cfg.seed, kTagJoint)},
                           {"eval", batch_seed(cfg.seed, kTagEval)}};
    meta["grid_points"] = cfg.fhn.grid_points;
    meta["dx"] = cfg.fhn.dx();
    meta["pca_energy_fraction"] = basis.energy_fraction;
    io::write_json(paths.meta(), meta);
}

// ---------------------------------------------------------------------------
// pca utility
// ---------------------------------------------------------------------------

void cmd_pca(const std::string& fields_bin, int retained, const std::string& out_modes_csv,
             const std::string& out_json, const std::string& project_bin,
             const std::string& project_out_csv) {
    const Eigen::MatrixXd fields = io::read_matrix_bin(fields_bin);
    const auto basis = measurements::compute_pca(fields, retained);
    std::vector<std::string> cols;
    for (int k = 0; k < retained; ++k) cols.push_back("mode" + std::to_string(k + 1));
    io::write_csv(out_modes_csv, cols, basis.modes);
    io::write_json(out_json, {{"singular_values", io::to_std(basis.singular_values)},
                              {"mean", io::to_std(basis.mean)},
                              {"retained", basis.retained},
                              {"energy_fraction", basis.energy_fraction}});
    if (!project_bin.empty()) {
        const Eigen::MatrixXd snapshots = io::read_matrix_bin(project_bin);
        Eigen::MatrixXd coeffs(snapshots.cols(), retained + 1);
        for (Eigen::Index m = 0; m < snapshots.cols(); ++m) {
            coeffs(m, 0) = static_cast<double>(m);
            coeffs.row(m).tail(retained) =
                measurements::project(snapshots.col(m), basis).transpose();
        }
        std::vector<std::string> ccols = {"index"};
        for (int k = 0; k < retained; ++k) ccols.push_back("a" + std::to_string(k + 1));
        io::write_csv(project_out_csv, ccols, coeffs);
    }
}

// ---------------------------------------------------------------------------
// edmd
// ---------------------------------------------------------------------------

measurements::MeasurementDataset load_pairs_csv(const std::string& path, double dt,
                                                const std::string& label,
                                                std::vector<std::string>* component_names) {
    const auto table = io::read_csv(path);
    std::vector<std::string> comps;
    for (const auto& c : table.columns) {
        if (c == "traj" || c == "t") continue;
        if (c.size() > 5 && c.substr(c.size() - 5) == "_next") continue;
        comps.push_back(c);
    }
    if (comps.empty()) throw ValidationError("pairs csv has no component columns: " + path);

    measurements::MeasurementDataset ds;
    const Eigen::Index M = table.data.rows();
    const int d = static_cast<int>(comps.size());
    ds.x.resize(M, d);
    ds.y.resize(M, d);
    ds.t.resize(M);
    const bool has_t = table.has_col("t");
    for (int c = 0; c < d; ++c) {
        ds.x.col(c) = table.data.col(table.col(comps[c]));
        ds.y.col(c) = table.data.col(table.col(comps[c] + "_next"));
    }
    if (has_t)
        ds.t = table.data.col(table.col("t"));
    else
        ds.t = Eigen::VectorXd::LinSpaced(M, 0.0, static_cast<double>(M - 1) * dt);
    ds.dt = dt;
    ds.label = label;
    ds.validate();
    if (component_names) *component_names = comps;
    return ds;
}

void cmd_edmd(const RunConfig& cfg, const std::string& pairs_csv, const std::string& meta_json,
              const DictConfig& dict_cfg, const std::string& out_dir, const std::string& label) {
    const auto meta = io::read_json(meta_json);
    const double dt = meta.at("sampling_interval").get<double>();

    std::vector<std::string> comps;
    const auto dataset = load_pairs_csv(pairs_csv, dt, label, &comps);
    auto [whitened, tf] = measurements::whiten(dataset);

    auto dictionary = make_dictionary(dict_cfg, whitened.x);
    const auto gp = edmd::accumulate(whitened, *dictionary);
    const auto dec = edmd::decompose(gp, cfg.svd_tol, dt, dictionary);

    fs::create_directories(out_dir);
    Eigen::MatrixXd ev(dec.count(), 4);
    for (int k = 0; k < dec.count(); ++k) {
        ev(k, 0) = dec.mu[k].real();
        ev(k, 1) = dec.mu[k].imag();
        ev(k, 2) = dec.lambda[k].real();
        ev(k, 3) = dec.lambda[k].imag();
    }
    io::write_csv(out_dir + "/eigenvalues.csv", {"re_mu", "im_mu", "re_lambda", "im_lambda"}, ev);
    io::write_cmatrix_bin(out_dir + "/eigenvectors.bin", dec.xi);
    io::write_json(out_dir + "/dictionary.json", dictionary->to_json());
    io::write_json(out_dir + "/whiten.json",
                   {{"shift", io::to_std(tf.shift)}, {"scale", io::to_std(tf.scale)}});
    nlohmann::json je;
    je["format_version"] = 1;
    je["dt"] = dt;
    je["label"] = label;
    je["dictionary_size"] = dictionary->size();
    je["svd_rank_used"] = dec.svd_rank_used;
    je["svd_tol"] = cfg.svd_tol;
    je["snapshot_pairs"] = gp.m_count;
    je["components"] = comps;
    je["dict_config"] = dict_cfg_to_json(dict_cfg);
    io::write_json(out_dir + "/edmd.json", je);
}

edmd::KoopmanDecomposition load_decomposition(const std::string& dir,
                                              measurements::WhitenTransform* whiten_out) {
    const auto je = io::read_json(dir + "/edmd.json");
    edmd::KoopmanDecomposition dec;
    dec.dt = je.at("dt").get<double>();
    dec.svd_rank_used = je.at("svd_rank_used").get<int>();
    const auto ev = io::read_csv(dir + "/eigenvalues.csv");
    const Eigen::Index n = ev.data.rows();
    dec.mu.resize(n);
    dec.lambda.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        dec.mu[k] = {ev.data(k, ev.col("re_mu")), ev.data(k, ev.col("im_mu"))};
        dec.lambda[k] = {ev.data(k, ev.col("re_lambda")), ev.data(k, ev.col("im_lambda"))};
    }
    dec.xi = io::read_cmatrix_bin(dir + "/eigenvectors.bin");
    if (dec.xi.cols() != n) throw ValidationError("decomposition dir: eigenvector count mismatch");
    dec.dictionary = dict::dictionary_from_json(io::read_json(dir + "/dictionary.json"));
    if (whiten_out) {
        const auto jw = io::read_json(dir + "/whiten.json");
        whiten_out->shift = io::from_std(jw.at("shift").get<std::vector<double>>());
        whiten_out->scale = io::from_std(jw.at("scale").get<std::vector<double>>());
    }
    return dec;
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

void cmd_fuse_build(const RunConfig& cfg, const std::string& dec_tilde_dir,
                    const std::string& dec_hat_dir, const std::string& tilde_pairs_csv,
                    const std::string& joint_csv, const std::string& model_dir,
                    const std::string& hat_pairs_csv) {
    measurements::WhitenTransform wt, wh;
    const auto dec_tilde = load_decomposition(dec_tilde_dir, &wt);
    const auto dec_hat = load_decomposition(dec_hat_dir, &wh);

    std::vector<std::string> tilde_comps;
    const auto tilde_ds = load_pairs_csv(tilde_pairs_csv, dec_tilde.dt, "tilde", &tilde_comps);

    const auto joint = io::read_csv(joint_csv);
    const int d_tilde = static_cast<int>(wt.shift.size());
    const int d_hat = static_cast<int>(wh.shift.size());
    if (joint.data.cols() != d_tilde + d_hat)
        throw ValidationError("joint csv must hold both measurement vectors per row");
    const Eigen::MatrixXd joint_tilde = joint.data.leftCols(d_tilde);
    const Eigen::MatrixXd joint_hat = joint.data.rightCols(d_hat);

    fusion::FusionOptions options;
    options.match_tol = cfg.match_tol;
    options.trust_threshold = cfg.trust_threshold;
    auto model = fusion::build_fusion_model(dec_tilde, dec_hat, joint_tilde, joint_hat,
                                            tilde_ds.x, wt, wh, options);
    model.info["component_names"] = tilde_comps;

    // eigenfunction quality on the training pairs (relative one-step residual)
    const auto& param = model.info["parameterization"];
    {
        measurements::MeasurementDataset wds = tilde_ds;
        wds.x = wt.apply_rows(tilde_ds.x);
        wds.y = wt.apply_rows(tilde_ds.y);
        model.info["residual_tilde_decay"] =
            tuple_residual(dec_tilde, param.at("decaying_tilde").get<int>(), wds);
        model.info["residual_tilde_osc"] =
            tuple_residual(dec_tilde, param.at("oscillatory_tilde").get<int>(), wds);
    }
    if (!hat_pairs_csv.empty()) {
        const auto hat_ds = load_pairs_csv(hat_pairs_csv, dec_hat.dt, "hat");
        measurements::MeasurementDataset wds = hat_ds;
        wds.x = wh.apply_rows(hat_ds.x);
        wds.y = wh.apply_rows(hat_ds.y);
        model.info["residual_hat_decay"] =
            tuple_residual(dec_hat, param.at("decaying_hat").get<int>(), wds);
        model.info["residual_hat_osc"] =
            tuple_residual(dec_hat, param.at("oscillatory_hat").get<int>(), wds);
    }

    fusion::save_fusion_model(model, model_dir);
}

ApplyStats cmd_fuse_apply(const std::string& model_dir, const std::string& input_csv,
                          const std::string& out_csv) {
    const auto model = fusion::load_fusion_model(model_dir);
    const auto input = io::read_csv(input_csv);
    const int d_hat = static_cast<int>(model.whiten_hat.shift.size());

    std::vector<int> xcols;
    for (size_t c = 0; c < input.columns.size(); ++c) {
        const auto& name = input.columns[c];
        if (name == "t" || name == "traj") continue;
        if (name.size() > 5 && name.substr(name.size() - 5) == "_next") continue;
        xcols.push_back(static_cast<int>(c));
    }
    if (static_cast<int>(xcols.size()) != d_hat)
        throw ValidationError("fuse-apply: input has " + std::to_string(xcols.size()) +
                              " measurement columns, model expects " + std::to_string(d_hat));
    const bool has_t = input.has_col("t");
    const int tcol = has_t ? input.col("t") : -1;

    std::vector<std::string> comp_names;
    if (model.info.contains("component_names"))
        comp_names = model.info["component_names"].get<std::vector<std::string>>();
    const int d_out = static_cast<int>(model.inverse_map.values().cols());
    while (static_cast<int>(comp_names.size()) < d_out)
        comp_names.push_back("value" + std::to_string(comp_names.size()));

    ApplyStats stats;
    Eigen::MatrixXd out(input.data.rows(), 1 + d_out + 1);
    Eigen::VectorXd x(d_hat);
    for (Eigen::Index r = 0; r < input.data.rows(); ++r) {
        for (int c = 0; c < d_hat; ++c) x[c] = input.data(r, xcols[c]);
        out(r, 0) = has_t ? input.data(r, tcol) : static_cast<double>(r);
        try {
            const auto res = fusion::fuse(model, x);
            out.row(r).segment(1, d_out) = res.x_tilde.transpose();
            out(r, 1 + d_out) = res.trusted ? 1.0 : 0.0;
            if (!res.trusted) ++stats.flagged;
        } catch (const OutOfCoverageError&) {
            out.row(r).segment(1, d_out).setConstant(std::numeric_limits<double>::quiet_NaN());
            out(r, 1 + d_out) = 0.0;
            ++stats.flagged;
            ++stats.failed;
        }
        ++stats.rows;
    }
    std::vector<std::string> cols = {"t"};
    for (int c = 0; c < d_out; ++c) cols.push_back(comp_names[c]);
    cols.push_back("trusted");
    io::write_csv(out_csv, cols, out);
    if (stats.failed > 0)
        std::cerr << "fuse-apply: " << stats.failed << " of " << stats.rows
                  << " rows were outside dictionary coverage\n";
    return stats;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {
double trapezoid_sq(const std::vector<double>& t, const std::vector<double>& f) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < t.size(); ++i)
        acc += 0.5 * (f[i] * f[i] + f[i + 1] * f[i + 1]) * (t[i + 1] - t[i]);
    return acc;
}
}  // namespace

ErrorReport cmd_evaluate(const std::string& pred_csv, const std::string& truth_csv,
                         double window_lo, double window_hi, const std::string& out_json,
                         const std::string& model_dir) {
    const auto pred = io::read_csv(pred_csv);
    const auto truth = io::read_csv(truth_csv);
    std::vector<std::string> comps;
    for (const auto& c : truth.columns)
        if (c != "t" && c != "traj") comps.push_back(c);
    if (comps.empty()) throw ValidationError("evaluate: truth csv has no component columns");
    const int pt = pred.col("t"), tt = truth.col("t");
    const bool has_flag = pred.has_col("trusted");

    struct Row {
        double t;
        Eigen::Index ip, it;
    };
    std::vector<Row> rows;
    Eigen::Index ip = 0;
    for (Eigen::Index it = 0; it < truth.data.rows(); ++it) {
        const double t = truth.data(it, tt);
        if (t < window_lo - 1e-9 || t > window_hi + 1e-9) continue;
        while (ip < pred.data.rows() && pred.data(ip, pt) < t - 1e-9) ++ip;
        if (ip >= pred.data.rows() || std::abs(pred.data(ip, pt) - t) > 1e-9)
            throw ValidationError("evaluate: prediction timestamps do not align with truth at t=" +
                                  std::to_string(t));
        rows.push_back({t, ip, it});
    }
    if (rows.size() < 2) throw ValidationError("evaluate: fewer than 2 samples in the window");

    ErrorReport report;
    report.window_lo = window_lo;
    report.window_hi = window_hi;
    report.rows = static_cast<long>(rows.size());

    std::vector<double> tall, terr;
    for (const auto& c : comps) {
        const int pc = pred.col(c), tc = truth.col(c);
        std::vector<double> t_all, diff_all, ref_all, t_tr, diff_tr, ref_tr;
        for (const auto& r : rows) {
            const double pv = pred.data(r.ip, pc), tv = truth.data(r.it, tc);
            t_all.push_back(r.t);
            diff_all.push_back(pv - tv);
            ref_all.push_back(tv);
            if (!has_flag || pred.data(r.ip, pred.col("trusted")) > 0.5) {
                t_tr.push_back(r.t);
                diff_tr.push_back(pv - tv);
                ref_tr.push_back(tv);
            }
        }
        const double ref_norm = std::sqrt(trapezoid_sq(t_all, ref_all));
        report.e.push_back(ref_norm > 0.0 ? std::sqrt(trapezoid_sq(t_all, diff_all)) / ref_norm
                                          : std::numeric_limits<double>::quiet_NaN());
        if (t_tr.size() >= 2) {
            const double rn = std::sqrt(trapezoid_sq(t_tr, ref_tr));
            report.e_trusted.push_back(rn > 0.0 ? std::sqrt(trapezoid_sq(t_tr, diff_tr)) / rn
                                                : std::numeric_limits<double>::quiet_NaN());
        } else {
            report.e_trusted.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    if (has_flag) {
        const int fc = pred.col("trusted");
        for (const auto& r : rows)
            if (pred.data(r.ip, fc) < 0.5) ++report.flagged;
    }

    nlohmann::json j;
    j["components"] = comps;
    j["e"] = report.e;
    j["e_trusted_only"] = report.e_trusted;
    j["window"] = {window_lo, window_hi};
    j["norm"] = "sqrt of trapezoidal integral of squared deviation over the window";
    j["rows"] = report.rows;
    j["flagged_points"] = report.flagged;
    if (!model_dir.empty()) {
        const auto jm = io::read_json(model_dir + "/model.json");
        j["alpha"] = {{"decay", jm.at("alpha_decay")}, {"osc", jm.at("alpha_osc")}};
        if (jm.contains("info") && jm["info"].contains("matched_table"))
            j["eigenvalue_table"] = jm["info"]["matched_table"];
    }
    report.json = j;
    if (!out_json.empty()) io::write_json(out_json, j);
    return report;
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

ReproduceSummary cmd_reproduce(const RunConfig& cfg, const std::string& out_dir) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    };
    Paths paths{out_dir};
    nlohmann::json timings;

    auto ts = clock::now();
    cmd_simulate(cfg, out_dir);
    timings["simulate"] = elapsed(ts, clock::now());

    ts = clock::now();
    cmd_edmd(cfg, paths.pca_pairs(), paths.meta(), cfg.dict_tilde, paths.dec_tilde_dir(), "pca");
    timings["edmd_tilde"] = elapsed(ts, clock::now());

    ts = clock::now();
    cmd_edmd(cfg, paths.pointwise_pairs(), paths.meta(), cfg.dict_hat, paths.dec_hat_dir(),
             "pointwise");
    timings["edmd_hat"] = elapsed(ts, clock::now());

    ts = clock::now();
    cmd_fuse_build(cfg, paths.dec_tilde_dir(), paths.dec_hat_dir(), paths.pca_pairs(),
                   paths.joint(), paths.model_dir(), paths.pointwise_pairs());
    timings["fuse_build"] = elapsed(ts, clock::now());

    ts = clock::now();
    const auto stats = cmd_fuse_apply(paths.model_dir(), paths.eval_pointwise(), paths.pred());
    timings["fuse_apply"] = elapsed(ts, clock::now());

    ts = clock::now();
    ReproduceSummary summary;
    summary.short_window = cmd_evaluate(paths.pred(), paths.eval_pca_truth(), 0.0,
                                        cfg.window_short, paths.report_short(), paths.model_dir());
    summary.long_window = cmd_evaluate(paths.pred(), paths.eval_pca_truth(), 0.0, cfg.window_long,
                                       paths.report_long(), paths.model_dir());
    timings["evaluate"] = elapsed(ts, clock::now());
    timings["total"] = elapsed(t0, clock::now());

    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["timings_seconds"] = timings;
    j["pca_energy_fraction"] =
        io::read_json(paths.pca_json()).at("energy_fraction").get<double>();
    j["edmd_tilde"] = io::read_json(paths.dec_tilde_dir() + "/edmd.json");
    j["edmd_hat"] = io::read_json(paths.dec_hat_dir() + "/edmd.json");
    j["model"] = io::read_json(paths.model_dir() + "/model.json");
    j["apply"] = {{"rows", stats.rows}, {"flagged", stats.flagged}, {"failed", stats.failed}};
    j["errors_short"] = summary.short_window.json;
    j["errors_long"] = summary.long_window.json;
    io::write_json(paths.summary(), j);
    summary.json = j;
    return summary;
}

}  // namespace kfuse::pipeline
