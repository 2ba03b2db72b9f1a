#pragma once

// Targets, the weighted composite loss over a batch with its gradient, the
// epoch loop with early stopping, and streaming prediction from a checkpoint.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "checkpoint.hpp"
#include "config.hpp"
#include "encode.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "grud.hpp"
#include "mtlr.hpp"
#include "optim.hpp"
#include "random.hpp"
#include "record.hpp"
#include "weibull.hpp"

namespace grudw {

inline constexpr double kBestGuessCapYears = 5.0;
inline constexpr double kWeightHorizonYears = 5.0;
inline constexpr double kClippedLoss = 1e6;

struct TrainingTarget {
    std::vector<double> tau;  // remaining years, one per valid step
    double weight = 1.0;
    bool censored = false;
    std::optional<double> bg_total;

    std::size_t steps() const noexcept { return tau.size(); }
};

inline double censoring_weight(double censored_years) { return std::min(censored_years / kWeightHorizonYears, 1.0); }

inline double patient_weight(const PatientRecord& r) { return r.event ? 1.0 : censoring_weight(r.observed_years()); }

/// Uncensored: years from each grid day to the event. Censored: the capped
/// Best-Guess total (exponential with the MTLR mean as scale) minus the years
/// elapsed since the index date, floored.
inline TrainingTarget build_target(const PatientRecord& r, const TimeGrid& grid, std::optional<double> mtlr_mean,
                                   double tau_floor = 1.0 / kDaysPerYear) {
    TrainingTarget t;
    t.censored = !r.event;
    t.weight = patient_weight(r);
    const std::size_t steps = grid.steps_before(r.followup_end);
    t.tau.reserve(steps);
    if (r.event) {
        for (std::size_t k = 0; k < steps; ++k) {
            t.tau.push_back(std::max((r.followup_end - grid.day(k)) / kDaysPerYear, tau_floor));
        }
        return t;
    }
    if (!mtlr_mean || !(*mtlr_mean > 0.0)) {
        throw DataError("build_target: patient " + r.id + " needs a positive MTLR mean survival");
    }
    const double c = std::max(r.observed_years(), 0.0);
    const double bg = std::min(best_guess(WeibullParams(1.0, *mtlr_mean), c), kBestGuessCapYears);
    t.bg_total = bg;
    for (std::size_t k = 0; k < steps; ++k) t.tau.push_back(std::max(bg - grid.day(k) / kDaysPerYear, tau_floor));
    return t;
}

/// `design` holds the mean-imputed baseline rows the MTLR model was fitted on.
inline std::vector<TrainingTarget> build_targets(const std::vector<PatientRecord>& records, const TimeGrid& grid,
                                                 const MtlrModel& mtlr, const Eigen::MatrixXd& design,
                                                 double tau_floor = 1.0 / kDaysPerYear) {
    if (design.rows() != Eigen::Index(records.size())) throw DataError("build_targets: design row count differs");
    std::vector<TrainingTarget> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::optional<double> mean;
        if (!records[i].event) mean = mtlr_point_estimates(mtlr, design.row(Eigen::Index(i)).transpose()).mean;
        out.push_back(build_target(records[i], grid, mean, tau_floor));
    }
    return out;
}

struct BatchLoss {
    double mean = 0.0;          // weighted loss / total steps
    double weighted_sum = 0.0;
    std::size_t steps = 0;
    std::size_t clipped = 0;    // non-finite terms replaced by the clip value
};

/// Sum over patients of w_i * sum_t composite loss, divided by the summed step
/// counts. When `grad` is given the gradient of that mean is added to it.
/// Patients are reduced in the order given.
inline BatchLoss batch_loss(const GrudParameters& params, const std::vector<EncodedSequence>& seqs,
                            const std::vector<TrainingTarget>& targets, const std::vector<std::size_t>& batch,
                            GrudParameters* grad = nullptr) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    BatchLoss out;
    GrudParameters local;
    if (grad) local = params.zeros_like();
    Eigen::VectorXd dk, dl;
    for (std::size_t i : batch) {
        const auto& seq = seqs[i];
        const auto& tgt = targets[i];
        const std::size_t T = std::min(tgt.steps(), seq.valid_steps);
        if (T == 0) continue;
        const auto trace = forward(params, seq, grad != nullptr, T);
        if (grad) {
            dk.setZero(Eigen::Index(T));
            dl.setZero(Eigen::Index(T));
        }
        for (std::size_t t = 0; t < T; ++t) {
            const auto terms = composite_loss(trace.outputs[t], tgt.tau[t]);
            if (!terms.finite || !std::isfinite(terms.total)) {
                out.weighted_sum += tgt.weight * kClippedLoss;
                ++out.clipped;
                continue;
            }
            out.weighted_sum += tgt.weight * terms.total;
            if (grad) {
                const auto g = composite_loss_grad(trace.outputs[t], tgt.tau[t]);
                if (g.finite) {
                    dk(Eigen::Index(t)) = tgt.weight * g.d_kappa;
                    dl(Eigen::Index(t)) = tgt.weight * g.d_lambda;
                }
            }
        }
        out.steps += T;
        if (grad) backward(params, seq, *trace.cache, dk, dl, local);
    }
    if (out.steps == 0) throw DataError("batch_loss: batch has no valid timesteps");
    out.mean = out.weighted_sum / double(out.steps);
    if (grad) grad->flat() += local.flat() / double(out.steps);
    return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    bool gap_exceeded = false;
    bool stopped = false;
};

struct TrainOutcome {
    GrudParameters params;  // best-validation parameters (last epoch without validation)
    std::vector<EpochRecord> curve;
    int best_epoch = 0;
    bool early_stopped = false;
    std::size_t clipped_losses = 0;
};

inline double mean_target(const std::vector<TrainingTarget>& targets) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : targets) {
        for (double v : t.tau) {
            sum += v;
            ++n;
        }
    }
    return n > 0 ? sum / double(n) : 1.0;
}

/// Mini-batch training. Each epoch reshuffles with a stream derived from the
/// seed, clips the global gradient norm and takes one AMSGrad step per batch;
/// losses are then re-evaluated over the whole training and validation sets.
inline TrainOutcome train_model(const std::vector<EncodedSequence>& train_seqs,
                                const std::vector<TrainingTarget>& train_targets,
                                const std::vector<EncodedSequence>& val_seqs,
                                const std::vector<TrainingTarget>& val_targets, const TrainConfig& config) {
    config.validate();
    if (train_seqs.empty()) throw DataError("train: empty training set");
    if (train_seqs.size() != train_targets.size() || val_seqs.size() != val_targets.size()) {
        throw DataError("train: sequences and targets differ in length");
    }
    const auto F = Eigen::Index(train_seqs.front().n_features());
    TrainOutcome out;
    GrudParameters params =
        init_parameters(F, config.hidden, config.seed, mean_target(train_targets), config.fixed_kappa);
    out.params = params;
    AmsGrad opt(params.size(), {.learning_rate = config.learning_rate});
    const auto train_all = all_indices(train_seqs.size());
    const auto val_all = all_indices(val_seqs.size());
    const bool has_val = !val_seqs.empty();
    double best_val = std::numeric_limits<double>::infinity();
    int over_gap_run = 0;
    Rng rng(derive_seed(config.seed, 0x7a1e));

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto order = train_all;
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
            std::vector<std::size_t> batch(order.begin() + long(start), order.begin() + long(stop));
            std::sort(batch.begin(), batch.end());
            GrudParameters grad = params.zeros_like();
            const auto bl = batch_loss(params, train_seqs, train_targets, batch, &grad);
            out.clipped_losses += bl.clipped;
            if (!grad.flat().allFinite()) {
                throw NumericalError(fmt::format("train: non-finite gradient in epoch {}", epoch));
            }
            clip_global_norm(grad.flat(), config.grad_clip_norm);
            opt.step(params.flat(), grad.flat());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batch_loss(params, train_seqs, train_targets, train_all).mean;
        if (!std::isfinite(rec.train_loss) || rec.train_loss > config.divergence_threshold) {
            throw NumericalError(fmt::format("train: diverged in epoch {} (mean training loss {:.6g} > {:.6g})", epoch,
                                             rec.train_loss, config.divergence_threshold));
        }
        if (has_val) {
            rec.val_loss = batch_loss(params, val_seqs, val_targets, val_all).mean;
            rec.gap_exceeded = (rec.val_loss - rec.train_loss) / std::abs(rec.train_loss) > config.early_stop_gap;
            over_gap_run = rec.gap_exceeded ? over_gap_run + 1 : 0;
            if (rec.val_loss < best_val) {
                best_val = rec.val_loss;
                out.params = params;
                out.best_epoch = epoch;
            }
        } else {
            out.params = params;
            out.best_epoch = epoch;
        }
        const bool stop = config.early_stop_mode == EarlyStopMode::stop && over_gap_run >= 2;
        rec.stopped = stop;
        out.curve.push_back(rec);
        if (stop) {
            out.early_stopped = true;
            break;
        }
    }
    return out;
}

inline std::string loss_curve_csv(const std::vector<std::pair<int, TrainOutcome>>& folds) {
    std::string out = "fold,epoch,train_loss,val_loss,stopped\n";
    for (const auto& [fold, outcome] : folds) {
        for (const auto& r : outcome.curve) {
            out += fmt::format("{},{},{:.17g},{},{}\n", fold, r.epoch, r.train_loss,
                               std::isnan(r.val_loss) ? std::string() : fmt::format("{:.17g}", r.val_loss),
                               r.stopped ? 1 : 0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Streaming prediction.

struct StreamPrediction {
    WeibullParams params{1.0, 1.0};
    std::size_t step = 0;
    int day = 0;
    double pmst = 0.0;
    std::vector<double> survival;  // one per horizon
};

/// Runs the checkpoint over the grid steps up to the one containing `day`.
inline StreamPrediction predict_at_day(const Checkpoint& ck, const PatientRecord& partial, int day,
                                       const std::vector<double>& horizons) {
    const auto& grid = ck.meta.grid;
    if (day > grid.days().back()) {
        throw DataError(fmt::format("predict: day {} is beyond the grid end ({})", day, grid.days().back()));
    }
    const auto step = grid.step_of_day(day);
    if (!step) throw DataError(fmt::format("predict: day {} precedes the grid start", day));
    for (const auto& o : partial.observations) {
        if (o.day > grid.days().back()) throw DataError(fmt::format("predict: observation at day {} beyond grid end", o.day));
    }
    PatientRecord open = partial;
    open.followup_end = grid.days().back() + 1;
    const auto seq = encode(open, grid, ck.meta.roster, ck.meta.norms);
    const auto trace = forward(ck.params, seq, false, *step + 1);
    StreamPrediction out;
    out.params = trace.outputs.back();
    out.step = *step;
    out.day = day;
    out.pmst = median(out.params);
    for (double h : horizons) out.survival.push_back(survival(out.params, h));
    return out;
}

/// Latest information day of the record decides how far the forward pass runs.
inline StreamPrediction predict_stream(const Checkpoint& ck, const PatientRecord& partial,
                                       const std::vector<double>& horizons) {
    std::optional<int> latest;
    for (const auto& o : partial.observations) latest = std::max(latest.value_or(o.day), o.day);
    for (const auto& d : partial.diagnoses) latest = std::max(latest.value_or(d.day), d.day);
    if (!latest) throw DataError("predict: partial record " + partial.id + " has no observations");
    return predict_at_day(ck, partial, *latest, horizons);
}

}  // namespace grudw
