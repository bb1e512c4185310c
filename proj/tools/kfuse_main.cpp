// Command line front end: each subcommand wraps one pipeline stage with
// file-based inputs and outputs. Exit codes: 0 success, 2 validation
// failure, 3 numerical failure.

#include "kfuse/io.hpp"
#include "kfuse/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

using kfuse::pipeline::DictConfig;
using kfuse::pipeline::RunConfig;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty())
        cfg = kfuse::pipeline::config_merge(cfg, kfuse::io::read_json(opts.config_path));
    if (opts.seed_set) cfg.seed = opts.seed;
    return cfg;
}

void add_config_flags(CLI::App* cmd, CommonOpts& opts, bool seed_required) {
    cmd->add_option("--config", opts.config_path, "JSON file overriding default configuration");
    auto* s = cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&opts](std::uint64_t v) {
            opts.seed = v;
            opts.seed_set = true;
        },
        "Master seed for data generation");
    if (seed_required) s->required();
}

struct DictFlags {
    DictConfig values;
    CLI::Option* type = nullptr;
    CLI::Option* max_per_cell = nullptr;
    CLI::Option* cover_factor = nullptr;
    CLI::Option* ridge = nullptr;
    CLI::Option* rbf_shape = nullptr;

    /// Flags the user set override `base` (the config-file dictionary for
    /// this dataset); everything else stays as configured.
    DictConfig resolve(DictConfig base) const {
        if (type->count()) base.type = values.type;
        if (max_per_cell->count()) base.max_per_cell = values.max_per_cell;
        if (cover_factor->count()) base.cover_factor = values.cover_factor;
        if (ridge->count()) base.ridge = values.ridge;
        if (rbf_shape->count()) base.rbf_shape = values.rbf_shape;
        return base;
    }
};

void add_dict_flags(CLI::App* cmd, DictFlags& d) {
    d.type = cmd->add_option("--dict", d.values.type, "Dictionary type: mls | rbf | poly");
    d.max_per_cell = cmd->add_option("--max-per-cell", d.values.max_per_cell,
                                     "Quadtree leaf capacity controlling dictionary size");
    d.cover_factor = cmd->add_option("--cover-factor", d.values.cover_factor,
                                     "Support radius as a multiple of the leaf diagonal");
    d.ridge = cmd->add_option("--ridge", d.values.ridge, "MLS moment-matrix ridge");
    d.rbf_shape = cmd->add_option("--rbf-shape", d.values.rbf_shape, "Gaussian shape parameter");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman intrinsic-variable data fusion pipeline"};
    app.require_subcommand(1);

    // simulate
    CommonOpts sim_opts;
    std::string sim_out;
    auto* sim = app.add_subcommand("simulate", "Generate measurement datasets and metadata");
    add_config_flags(sim, sim_opts, /*seed_required=*/true);
    sim->add_option("--out", sim_out, "Output directory")->required();

    // pca
    std::string pca_fields, pca_modes = "pca_modes.csv", pca_json = "pca_basis.json";
    std::string pca_project, pca_project_out = "pca_coeffs.csv";
    int pca_retained = 3;
    auto* pca = app.add_subcommand("pca", "Compute a PCA basis from a snapshot matrix file");
    pca->add_option("--fields", pca_fields, "Snapshot matrix (.bin)")->required();
    pca->add_option("--retained", pca_retained, "Number of modes to keep");
    pca->add_option("--out-modes", pca_modes, "Output modes CSV");
    pca->add_option("--out-json", pca_json, "Output basis JSON");
    pca->add_option("--project", pca_project, "Optional snapshot matrix to project");
    pca->add_option("--project-out", pca_project_out, "Projected coefficients CSV");

    // edmd
    CommonOpts edmd_opts;
    std::string edmd_data, edmd_meta, edmd_out, edmd_label = "dataset";
    DictFlags edmd_dict;
    double edmd_svd_tol = -1.0;
    auto* edc = app.add_subcommand("edmd", "Spectral decomposition of one measurement dataset");
    add_config_flags(edc, edmd_opts, false);
    edc->add_option("--data", edmd_data, "Snapshot-pair CSV")->required();
    edc->add_option("--meta", edmd_meta, "Metadata JSON with the sampling interval")->required();
    edc->add_option("--out", edmd_out, "Output decomposition directory")->required();
    edc->add_option("--label", edmd_label,
                    "Dataset label; 'pca'/'tilde' and 'pointwise'/'hat' pick the matching "
                    "dictionary section of the configuration");
    edc->add_option("--svd-tol", edmd_svd_tol, "Relative pseudoinverse truncation");
    add_dict_flags(edc, edmd_dict);

    // fuse-build
    CommonOpts fb_opts;
    std::string fb_tilde, fb_hat, fb_tilde_data, fb_hat_data, fb_joint, fb_out;
    double fb_trust = -1.0, fb_match_rel = -1.0, fb_match_abs = -1.0;
    auto* fb = app.add_subcommand("fuse-build", "Match, register and build the fusion model");
    add_config_flags(fb, fb_opts, false);
    fb->add_option("--tilde-dec", fb_tilde, "Target-side decomposition directory")->required();
    fb->add_option("--hat-dec", fb_hat, "Source-side decomposition directory")->required();
    fb->add_option("--tilde-data", fb_tilde_data, "Target-side pairs CSV")->required();
    fb->add_option("--hat-data", fb_hat_data, "Source-side pairs CSV (diagnostics only)");
    fb->add_option("--joint", fb_joint, "Joint measurement CSV")->required();
    fb->add_option("--out", fb_out, "Output model directory")->required();
    fb->add_option("--trust-threshold", fb_trust, "Trust bound on |phi_1|");
    fb->add_option("--match-rel", fb_match_rel, "Relative eigenvalue match tolerance");
    fb->add_option("--match-abs", fb_match_abs, "Absolute eigenvalue match tolerance");

    // fuse-apply
    std::string fa_model, fa_input, fa_out;
    auto* fa = app.add_subcommand("fuse-apply", "Translate measurements through a fusion model");
    fa->add_option("--model", fa_model, "Fusion model directory")->required();
    fa->add_option("--input", fa_input, "Input measurement CSV")->required();
    fa->add_option("--out", fa_out, "Prediction CSV")->required();

    // evaluate
    std::string ev_pred, ev_truth, ev_out = "report.json", ev_model;
    std::vector<double> ev_window{0.0, 400.0};
    auto* ev = app.add_subcommand("evaluate", "Relative errors over a time window");
    ev->add_option("--pred", ev_pred, "Prediction CSV")->required();
    ev->add_option("--truth", ev_truth, "Ground-truth CSV")->required();
    ev->add_option("--window", ev_window, "Window [t0 t1]")->expected(2);
    ev->add_option("--out", ev_out, "Report JSON");
    ev->add_option("--model", ev_model, "Model directory for the eigenvalue table");

    // reproduce
    CommonOpts rep_opts;
    std::string rep_out;
    auto* rep = app.add_subcommand("reproduce", "Run the full experiment end to end");
    add_config_flags(rep, rep_opts, false);
    rep->add_option("--out", rep_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) {
            kfuse::pipeline::cmd_simulate(resolve_config(sim_opts), sim_out);
        } else if (pca->parsed()) {
            kfuse::pipeline::cmd_pca(pca_fields, pca_retained, pca_modes, pca_json, pca_project,
                                     pca_project_out);
        } else if (edc->parsed()) {
            RunConfig cfg = resolve_config(edmd_opts);
            if (edmd_svd_tol > 0.0) cfg.svd_tol = edmd_svd_tol;
            DictConfig base;
            if (edmd_label == "pca" || edmd_label == "tilde")
                base = cfg.dict_tilde;
            else if (edmd_label == "pointwise" || edmd_label == "hat")
                base = cfg.dict_hat;
            kfuse::pipeline::cmd_edmd(cfg, edmd_data, edmd_meta, edmd_dict.resolve(base), edmd_out,
                                      edmd_label);
        } else if (fb->parsed()) {
            RunConfig cfg = resolve_config(fb_opts);
            if (fb_trust > 0.0) cfg.trust_threshold = fb_trust;
            if (fb_match_rel >= 0.0) cfg.match_tol.rel = fb_match_rel;
            if (fb_match_abs >= 0.0) cfg.match_tol.abs = fb_match_abs;
            kfuse::pipeline::cmd_fuse_build(cfg, fb_tilde, fb_hat, fb_tilde_data, fb_joint, fb_out,
                                            fb_hat_data);
        } else if (fa->parsed()) {
            kfuse::pipeline::cmd_fuse_apply(fa_model, fa_input, fa_out);
        } else if (ev->parsed()) {
            const auto report = kfuse::pipeline::cmd_evaluate(ev_pred, ev_truth, ev_window[0],
                                                              ev_window[1], ev_out, ev_model);
            std::cout << report.json.dump(2) << '\n';
        } else if (rep->parsed()) {
            const auto summary = kfuse::pipeline::cmd_reproduce(resolve_config(rep_opts), rep_out);
            std::cout << "reproduce complete; summary written to " << rep_out << "/summary.json\n";
            std::cout << "errors short window:";
            for (double e : summary.short_window.e) std::cout << ' ' << e;
            std::cout << "\nerrors long window:";
            for (double e : summary.long_window.e) std::cout << ' ' << e;
            std::cout << '\n';
        }
    } catch (const kfuse::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const kfuse::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
