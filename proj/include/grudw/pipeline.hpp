#pragma once

// Glue from patient records to fitted models: per-fold normalisation,
// baseline designs, MTLR-based targets and GRU-D training.

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include <fmt/format.h>

#include "aft.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "encode.hpp"
#include "features.hpp"
#include "grid.hpp"
#include "mtlr.hpp"
#include "record.hpp"
#include "split.hpp"
#include "training.hpp"

namespace grudw {

inline std::vector<PatientRecord> select(const std::vector<PatientRecord>& records,
                                         const std::vector<std::size_t>& idx) {
    std::vector<PatientRecord> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(records[i]);
    return out;
}

inline Eigen::VectorXd observed_years(const std::vector<PatientRecord>& records) {
    Eigen::VectorXd t(Eigen::Index(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) t(Eigen::Index(i)) = records[i].observed_years();
    return t;
}

inline std::vector<bool> event_flags(const std::vector<PatientRecord>& records) {
    std::vector<bool> e(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) e[i] = records[i].event;
    return e;
}

inline std::vector<EncodedSequence> encode_all(const std::vector<PatientRecord>& records, const TimeGrid& grid,
                                               const FeatureRoster& roster, const Norms& norms,
                                               EncodeDiagnostics* diag = nullptr) {
    std::vector<EncodedSequence> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(encode(r, grid, roster, norms, diag));
    return out;
}

/// Baseline covariates at the index date, mean-imputed with `means` (taken
/// from the training rows).
struct BaselineDesign {
    Eigen::MatrixXd X;
    Eigen::VectorXd means;
};

inline BaselineDesign training_design(const std::vector<PatientRecord>& training, const FeatureRoster& roster,
                                      const Norms& norms) {
    BaselineDesign d;
    d.X = baseline_design(training, roster, norms);
    d.means = column_means_ignoring_nan(d.X);
    impute_means(d.X, d.means);
    return d;
}

inline Eigen::MatrixXd apply_design(const std::vector<PatientRecord>& records, const FeatureRoster& roster,
                                    const Norms& norms, const Eigen::VectorXd& means) {
    Eigen::MatrixXd X = baseline_design(records, roster, norms);
    impute_means(X, means);
    return X;
}

/// Drops design columns that are constant zero in the training rows; the
/// AFT fit rejects them.
inline std::vector<Eigen::Index> nonzero_columns(const Eigen::MatrixXd& X) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (X.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
    }
    return keep;
}

inline Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(X.rows(), Eigen::Index(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(Eigen::Index(j)) = X.col(cols[j]);
    return out;
}

/// Capped Best-Guess totals (years) for censored patients; NaN for events.
inline std::vector<double> best_guess_totals(const std::vector<PatientRecord>& records, const MtlrModel& mtlr,
                                             const Eigen::MatrixXd& design) {
    std::vector<double> out(records.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].event) continue;
        const double mean = mtlr_point_estimates(mtlr, design.row(Eigen::Index(i)).transpose()).mean;
        out[i] = std::min(best_guess(WeibullParams(1.0, mean), std::max(records[i].observed_years(), 0.0)),
                          kBestGuessCapYears);
    }
    return out;
}

struct FoldRun {
    int fold = 0;
    Checkpoint checkpoint;
    TrainOutcome outcome;
    MtlrModel mtlr;
    Eigen::VectorXd baseline_means;
    std::vector<std::size_t> test;  // record indices
};

/// Fits norms, baseline means and MTLR on `train`, builds targets and trains
/// one GRU-D model, validating on `val`.
inline FoldRun train_on(const std::vector<PatientRecord>& train, const std::vector<PatientRecord>& val,
                        const TimeGrid& grid, const FeatureRoster& roster, const TrainConfig& config,
                        const MtlrFitOptions& mtlr_options = {}) {
    FoldRun run;
    const Norms norms = compute_norms(train, roster);
    const auto design = training_design(train, roster, norms);
    run.baseline_means = design.means;
    run.mtlr = mtlr_fit(design.X, observed_years(train), event_flags(train), mtlr_options).model;
    const auto train_targets = build_targets(train, grid, run.mtlr, design.X, config.tau_floor);
    std::vector<TrainingTarget> val_targets;
    if (!val.empty()) {
        val_targets = build_targets(val, grid, run.mtlr, apply_design(val, roster, norms, design.means), config.tau_floor);
    }
    run.outcome = train_model(encode_all(train, grid, roster, norms), train_targets, encode_all(val, grid, roster, norms),
                              val_targets, config);
    run.checkpoint.params = run.outcome.params;
    run.checkpoint.meta = {roster, norms, grid, config, config.seed};
    return run;
}

/// k-fold rotation: fold f tests on chunk f, validates on the next chunk and
/// trains on the rest. Each fold trains with a seed derived from the run seed.
/// `only` restricts the run to one fold.
inline std::vector<FoldRun> train_folds(const std::vector<PatientRecord>& records, const FoldAssignment& folds,
                                        const TimeGrid& grid, const FeatureRoster& roster, const TrainConfig& config,
                                        const MtlrFitOptions& mtlr_options = {}, std::optional<int> only = {}) {
    if (folds.k < 3) throw DataError("train: need at least 3 folds (train, validation and test chunks)");
    if (only && (*only < 1 || *only > folds.k)) throw DataError(fmt::format("train: fold {} is outside 1..{}", *only, folds.k));
    std::vector<FoldRun> runs;
    for (int f = 1; f <= folds.k; ++f) {
        if (only && f != *only) continue;
        const auto roles = fold_roles(f, folds.k);
        std::vector<std::size_t> train_idx;
        for (int chunk : roles.training) {
            const auto m = folds.members(records, chunk);
            train_idx.insert(train_idx.end(), m.begin(), m.end());
        }
        std::sort(train_idx.begin(), train_idx.end());
        TrainConfig cfg = config;
        cfg.seed = derive_seed(config.seed, std::uint64_t(f));
        auto run = train_on(select(records, train_idx), select(records, folds.members(records, roles.validation)), grid,
                            roster, cfg, mtlr_options);
        run.fold = f;
        run.test = folds.members(records, roles.test);
        runs.push_back(std::move(run));
    }
    return runs;
}

struct AftFitResult {
    AftModel model;
    std::vector<Eigen::Index> columns;  // roster columns used
    Eigen::VectorXd baseline_means;
    Norms norms;
};

inline AftFitResult fit_aft_baseline(const std::vector<PatientRecord>& train, const FeatureRoster& roster,
                                     const AftFitOptions& options = {}) {
    AftFitResult out;
    out.norms = compute_norms(train, roster);
    const auto design = training_design(train, roster, out.norms);
    out.baseline_means = design.means;
    out.columns = nonzero_columns(design.X);
    out.model = aft_fit(take_columns(design.X, out.columns), observed_years(train), event_flags(train), options);
    return out;
}

inline Eigen::MatrixXd aft_design(const AftFitResult& fit, const std::vector<PatientRecord>& records,
                                  const FeatureRoster& roster) {
    return take_columns(apply_design(records, roster, fit.norms, fit.baseline_means), fit.columns);
}

}  // namespace grudw
