#pragma once

#include "kfuse/edmd.hpp"
#include "kfuse/fhn.hpp"
#include "kfuse/fusion.hpp"
#include "kfuse/measurements.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace kfuse::pipeline {

struct DictConfig {
    std::string type = "mls";  // mls | rbf | poly
    int max_per_cell = 16;
    double cover_factor = 2.5;
    double ridge = 1e-12;
    double rbf_shape = 1.0;
    int poly_degree = 3;
};

struct RunConfig {
    std::uint64_t seed = 1;
    fhn::FhnParams fhn;
    fhn::TrajectoryConfig traj;  // rng_seed is derived per batch from `seed`
    int pca_retained = 3;
    double point_location = 10.0;
    DictConfig dict_tilde{.max_per_cell = 40};
    DictConfig dict_hat{.max_per_cell = 27};
    double svd_tol = 2e-7;
    fusion::MatchTolerance match_tol;
    double trust_threshold = 0.03;
    int eval_pairs = 2000;
    double window_short = 400.0;
    double window_long = 4000.0;

    void validate() const;
};

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
/// Applies fields present in `j` on top of `base`.
RunConfig config_merge(RunConfig base, const nlohmann::json& j);

/// Canonical file layout below one output directory.
struct Paths {
    std::string root;
    std::string meta() const { return root + "/meta.json"; }
    std::string fields_tilde() const { return root + "/fields_tilde.bin"; }
    std::string fields_joint() const { return root + "/fields_joint.bin"; }
    std::string fields_eval() const { return root + "/fields_eval.bin"; }
    std::string pca_modes() const { return root + "/pca_modes.csv"; }
    std::string pca_json() const { return root + "/pca_basis.json"; }
    std::string pca_pairs() const { return root + "/pca_pairs.csv"; }
    std::string pointwise_pairs() const { return root + "/pointwise_pairs.csv"; }
    std::string joint() const { return root + "/joint.csv"; }
    std::string eval_pointwise() const { return root + "/eval_pointwise.csv"; }
    std::string eval_pca_truth() const { return root + "/eval_pca_truth.csv"; }
    std::string dec_tilde_dir() const { return root + "/dec_tilde"; }
    std::string dec_hat_dir() const { return root + "/dec_hat"; }
    std::string model_dir() const { return root + "/model"; }
    std::string pred() const { return root + "/pred_eval.csv"; }
    std::string report_short() const { return root + "/report_short.json"; }
    std::string report_long() const { return root + "/report_long.json"; }
    std::string summary() const { return root + "/summary.json"; }
};

/// Generates both measurement batches (independent seeds), the joint pair
/// and the held-out evaluation trajectory; computes the PCA basis from the
/// first batch and writes every dataset file plus metadata.
void cmd_simulate(const RunConfig& cfg, const std::string& out_dir);

/// Standalone basis computation from a snapshot matrix file; optionally
/// projects a second snapshot file onto the basis.
void cmd_pca(const std::string& fields_bin, int retained, const std::string& out_modes_csv,
             const std::string& out_json, const std::string& project_bin = "",
             const std::string& project_out_csv = "");

/// Whiten -> dictionary -> Gram accumulation -> spectral decomposition;
/// writes eigenvalues.csv, eigenvectors.bin, dictionary.json, whiten.json
/// and edmd.json into out_dir.
void cmd_edmd(const RunConfig& cfg, const std::string& pairs_csv, const std::string& meta_json,
              const DictConfig& dict_cfg, const std::string& out_dir, const std::string& label);

measurements::MeasurementDataset load_pairs_csv(const std::string& path, double dt,
                                                const std::string& label,
                                                std::vector<std::string>* component_names = nullptr);
edmd::KoopmanDecomposition load_decomposition(const std::string& dir,
                                              measurements::WhitenTransform* whiten_out = nullptr);

void cmd_fuse_build(const RunConfig& cfg, const std::string& dec_tilde_dir,
                    const std::string& dec_hat_dir, const std::string& tilde_pairs_csv,
                    const std::string& joint_csv, const std::string& model_dir,
                    const std::string& hat_pairs_csv = "");

struct ApplyStats {
    long rows = 0;
    long flagged = 0;
    long failed = 0;  // out-of-coverage rows, emitted as NaN
};
ApplyStats cmd_fuse_apply(const std::string& model_dir, const std::string& input_csv,
                          const std::string& out_csv);

struct ErrorReport {
    std::vector<double> e;          // all rows
    std::vector<double> e_trusted;  // trusted rows only
    double window_lo = 0.0, window_hi = 0.0;
    long rows = 0;
    long flagged = 0;
    nlohmann::json json;
};
ErrorReport cmd_evaluate(const std::string& pred_csv, const std::string& truth_csv,
                         double window_lo, double window_hi, const std::string& out_json,
                         const std::string& model_dir = "");

struct ReproduceSummary {
    ErrorReport short_window;
    ErrorReport long_window;
    nlohmann::json json;
};
/// Runs every stage in order with the canonical layout. Byte-identical to
/// invoking the subcommands individually with the same configuration.
ReproduceSummary cmd_reproduce(const RunConfig& cfg, const std::string& out_dir);

}  // namespace kfuse::pipeline
