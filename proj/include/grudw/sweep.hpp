#pragma once

// Metrics re-evaluated along follow-up time. At grid day d the risk set is
// every patient still under observation (follow-up end > d), the outcome is
// the remaining time, and each model predicts from data up to d.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "aft.hpp"
#include "checkpoint.hpp"
#include "encode.hpp"
#include "grud.hpp"
#include "metrics.hpp"
#include "mtlr.hpp"
#include "record.hpp"

namespace grudw {

struct PointPrediction {
    double pmst = 0.0;              // remaining years
    std::vector<double> survival;   // remaining-time survival per horizon
};

class SweepModel {
public:
    virtual ~SweepModel() = default;
    /// Predictions for `patients` (cohort indices) at grid step `step`.
    virtual void predict(std::size_t step, const std::vector<std::size_t>& patients,
                         const std::vector<double>& horizons, std::vector<PointPrediction>& out) const = 0;
};

/// Per-step GRU-D output; one full forward pass per patient up front.
class GrudSweepModel : public SweepModel {
public:
    GrudSweepModel(const Checkpoint& ck, const std::vector<PatientRecord>& cohort) {
        outputs_.reserve(cohort.size());
        for (const auto& r : cohort) {
            const auto seq = encode(r, ck.meta.grid, ck.meta.roster, ck.meta.norms);
            outputs_.push_back(forward(ck.params, seq).outputs);
        }
    }

    /// Uses pre-encoded sequences (e.g. after a permutation).
    GrudSweepModel(const GrudParameters& params, const std::vector<EncodedSequence>& seqs) {
        outputs_.reserve(seqs.size());
        for (const auto& s : seqs) outputs_.push_back(forward(params, s).outputs);
    }

    void predict(std::size_t step, const std::vector<std::size_t>& patients, const std::vector<double>& horizons,
                 std::vector<PointPrediction>& out) const override {
        out.clear();
        for (std::size_t i : patients) {
            if (step >= outputs_[i].size()) throw DataError("sweep: patient has no output at the requested step");
            const auto& p = outputs_[i][step];
            PointPrediction pp;
            pp.pmst = median(p);
            for (double h : horizons) pp.survival.push_back(survival(p, h));
            out.push_back(std::move(pp));
        }
    }

    const std::vector<std::vector<WeibullParams>>& outputs() const noexcept { return outputs_; }

private:
    std::vector<std::vector<WeibullParams>> outputs_;
};

/// Index-date Weibull conditioned on survival to the evaluation day.
class AftSweepModel : public SweepModel {
public:
    AftSweepModel(const AftModel& model, const Eigen::MatrixXd& design, const TimeGrid& grid)
        : grid_(grid) {
        for (Eigen::Index i = 0; i < design.rows(); ++i) params_.push_back(aft_predict(model, design.row(i).transpose()));
    }

    void predict(std::size_t step, const std::vector<std::size_t>& patients, const std::vector<double>& horizons,
                 std::vector<PointPrediction>& out) const override {
        out.clear();
        const double t = std::max(grid_.day(step), 0) / kDaysPerYear;
        for (std::size_t i : patients) {
            const auto& p = params_[i];
            const double k = p.kappa();
            const double l = p.lambda();
            const double base = std::pow(t / l, k);
            PointPrediction pp;
            // Remaining median: (t^k + l^k ln 2)^(1/k) - t.
            pp.pmst = l * std::pow(base + detail::kLn2, 1.0 / k) - t;
            for (double h : horizons) pp.survival.push_back(std::exp(base - std::pow((t + h) / l, k)));
            out.push_back(std::move(pp));
        }
    }

    const std::vector<WeibullParams>& params() const noexcept { return params_; }

private:
    TimeGrid grid_;
    std::vector<WeibullParams> params_;
};

/// MTLR curve (piecewise linear, flat after the last time point) conditioned
/// on survival to the evaluation day.
class MtlrSweepModel : public SweepModel {
public:
    MtlrSweepModel(const MtlrModel& model, const Eigen::MatrixXd& design, const TimeGrid& grid)
        : model_(model), grid_(grid) {
        for (Eigen::Index i = 0; i < design.rows(); ++i) curves_.push_back(mtlr_survival(model, design.row(i).transpose()));
    }

    void predict(std::size_t step, const std::vector<std::size_t>& patients, const std::vector<double>& horizons,
                 std::vector<PointPrediction>& out) const override {
        out.clear();
        const double t = std::max(grid_.day(step), 0) / kDaysPerYear;
        const double t_end = model_.time_points.back();
        for (std::size_t i : patients) {
            const auto& c = curves_[i];
            const double st = mtlr_survival_at(model_, c, t);
            PointPrediction pp;
            for (double h : horizons) pp.survival.push_back(st > 0.0 ? mtlr_survival_at(model_, c, t + h) / st : 0.0);
            // Remaining median by bisection on the conditional curve.
            const double target = 0.5 * st;
            if (!(st > 0.0) || mtlr_survival_at(model_, c, t_end) > target) {
                pp.pmst = std::max(t_end - t, 0.0);
            } else {
                double lo = t, hi = t_end;
                for (int it = 0; it < 100; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (mtlr_survival_at(model_, c, mid) > target ? lo : hi) = mid;
                }
                pp.pmst = hi - t;
            }
            out.push_back(std::move(pp));
        }
    }

private:
    MtlrModel model_;
    TimeGrid grid_;
    std::vector<Eigen::VectorXd> curves_;
};

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& all_sweep_metrics() {
    static const std::vector<std::string> m{"c_index", "c_tau",   "auroc",  "brier",   "hl",     "hl_p",
                                            "l1",      "l1_over", "l1_under", "l1_margin", "parkes"};
    return m;
}

struct SweepOptions {
    std::vector<double> horizons{1.0, 3.0, 5.0};
    std::vector<std::string> metrics = all_sweep_metrics();
    std::optional<std::vector<std::size_t>> steps;  // default: every step with day >= 0
};

struct SweepCohort {
    std::vector<int> followup_end;  // days
    std::vector<bool> events;
    std::vector<double> bg_totals;  // years from index, censored only; may be empty

    static SweepCohort from(const std::vector<PatientRecord>& records, std::vector<double> bg = {}) {
        SweepCohort c;
        for (const auto& r : records) {
            c.followup_end.push_back(r.followup_end);
            c.events.push_back(r.event);
        }
        c.bg_totals = std::move(bg);
        return c;
    }
};

struct ModelGroup {
    std::string id;
    std::vector<const SweepModel*> replicates;
};

struct ReportRow {
    int timestep_day = 0;
    double horizon_years = 0.0;
    std::string metric;
    std::string model_id;
    double value = kNaN;
    double ci_low = kNaN;
    double ci_high = kNaN;
    std::size_t n_effective = 0;
};

struct EvalReport {
    std::vector<ReportRow> rows;

    const ReportRow* find(int day, double horizon, const std::string& metric, const std::string& model) const {
        for (const auto& r : rows) {
            if (r.timestep_day == day && r.horizon_years == horizon && r.metric == metric && r.model_id == model) {
                return &r;
            }
        }
        return nullptr;
    }
};

inline std::string format_value(double v) { return std::isnan(v) ? std::string("NA") : fmt::format("{:.10g}", v); }

inline std::string report_csv(const EvalReport& report) {
    std::string out = "timestep_day,horizon_years,metric,model_id,value,ci_low,ci_high,n_effective\n";
    for (const auto& r : report.rows) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", r.timestep_day, r.horizon_years, r.metric, r.model_id,
                           format_value(r.value), format_value(r.ci_low), format_value(r.ci_high), r.n_effective);
    }
    return out;
}

struct Interval {
    double mean = kNaN;
    double low = kNaN;
    double high = kNaN;
    std::size_t n = 0;
};

/// Mean with a normal-approximation 95% interval over the finite values.
inline Interval mean_interval(const std::vector<double>& values) {
    std::vector<double> v;
    for (double x : values) {
        if (std::isfinite(x)) v.push_back(x);
    }
    Interval out;
    out.n = v.size();
    if (v.empty()) return out;
    double sum = 0.0;
    for (double x : v) sum += x;
    out.mean = sum / double(v.size());
    double half = 0.0;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        half = 1.96 * std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
    }
    out.low = out.mean - half;
    out.high = out.mean + half;
    return out;
}

namespace detail {

// One metric for one replicate; NaN when the metric is undefined here.
inline double sweep_metric(const std::string& metric, std::size_t h_idx, double horizon,
                           const std::vector<PointPrediction>& preds, const std::vector<double>& times,
                           const std::vector<bool>& events, const std::vector<double>& bg_remaining) {
    try {
        const std::size_t n = preds.size();
        std::vector<double> pmst(n), surv(n), event_prob(n);
        for (std::size_t i = 0; i < n; ++i) {
            pmst[i] = preds[i].pmst;
            surv[i] = preds[i].survival[h_idx];
            event_prob[i] = 1.0 - surv[i];
        }
        if (metric == "c_index") return harrell_c(pmst, times, events).c;
        if (metric == "c_tau") return c_tau(surv, times, events, horizon).c;
        if (metric == "auroc") return horizon_auroc(event_prob, times, events, horizon).auc;
        if (metric == "brier") return brier(surv, times, events, horizon).score;
        if (metric == "hl") return hosmer_lemeshow(surv, times, events, horizon).statistic;
        if (metric == "hl_p") return hosmer_lemeshow(surv, times, events, horizon).p_value;
        if (metric == "parkes") return parkes_serious_error(pmst, times, events);
        if (metric == "l1" || metric == "l1_over" || metric == "l1_under" || metric == "l1_margin") {
            std::vector<double> bg = bg_remaining;
            if (bg.empty()) bg.assign(n, kNaN);
            const auto s = l1_losses(pmst, times, events, bg);
            std::optional<double> v;
            if (metric == "l1") v = s.mean_abs;
            if (metric == "l1_over") v = s.positive_mean;
            if (metric == "l1_under") v = s.negative_mean;
            if (metric == "l1_margin") v = s.margin_mean;
            return v.value_or(kNaN);
        }
        throw DataError("sweep: unknown metric '" + metric + "'");
    } catch (const DataError& e) {
        if (std::string(e.what()).rfind("sweep:", 0) == 0) throw;
        return kNaN;
    }
}

}  // namespace detail

/// Rows ordered by timestep, horizon, metric, then model group.
inline EvalReport time_sweep(const std::vector<ModelGroup>& groups, const SweepCohort& cohort, const TimeGrid& grid,
                             const SweepOptions& options = {}) {
    for (const auto& g : groups) {
        if (g.replicates.empty()) throw DataError("time_sweep: model group '" + g.id + "' has no replicates");
    }
    for (const auto& m : options.metrics) {
        if (std::find(all_sweep_metrics().begin(), all_sweep_metrics().end(), m) == all_sweep_metrics().end()) {
            throw DataError("time_sweep: unknown metric '" + m + "'");
        }
    }
    std::vector<std::size_t> steps;
    if (options.steps) {
        steps = *options.steps;
    } else {
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (grid.day(k) >= 0) steps.push_back(k);
        }
    }
    EvalReport report;
    std::vector<PointPrediction> preds;
    for (std::size_t step : steps) {
        const int day = grid.day(step);
        std::vector<std::size_t> at_risk;
        std::vector<double> times;
        std::vector<bool> events;
        std::vector<double> bg;
        for (std::size_t i = 0; i < cohort.followup_end.size(); ++i) {
            if (cohort.followup_end[i] <= day) continue;
            at_risk.push_back(i);
            times.push_back((cohort.followup_end[i] - day) / kDaysPerYear);
            events.push_back(cohort.events[i]);
            if (!cohort.bg_totals.empty()) {
                bg.push_back(std::max(cohort.bg_totals[i] - day / kDaysPerYear, 1.0 / kDaysPerYear));
            }
        }
        // values[group][horizon][metric][replicate]
        std::vector<std::vector<std::vector<std::vector<double>>>> values(groups.size());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            values[g].assign(options.horizons.size(), std::vector<std::vector<double>>(options.metrics.size()));
            if (at_risk.empty()) continue;
            for (const auto* model : groups[g].replicates) {
                model->predict(step, at_risk, options.horizons, preds);
                for (std::size_t h = 0; h < options.horizons.size(); ++h) {
                    for (std::size_t m = 0; m < options.metrics.size(); ++m) {
                        values[g][h][m].push_back(
                            detail::sweep_metric(options.metrics[m], h, options.horizons[h], preds, times, events, bg));
                    }
                }
            }
        }
        for (std::size_t h = 0; h < options.horizons.size(); ++h) {
            for (std::size_t m = 0; m < options.metrics.size(); ++m) {
                for (std::size_t g = 0; g < groups.size(); ++g) {
                    ReportRow row;
                    row.timestep_day = day;
                    row.horizon_years = options.horizons[h];
                    row.metric = options.metrics[m];
                    row.model_id = groups[g].id;
                    row.n_effective = at_risk.size();
                    if (!at_risk.empty()) {
                        const auto iv = mean_interval(values[g][h][m]);
                        row.value = iv.mean;
                        row.ci_low = iv.low;
                        row.ci_high = iv.high;
                    }
                    report.rows.push_back(std::move(row));
                }
            }
        }
    }
    return report;
}

}  // namespace grudw
