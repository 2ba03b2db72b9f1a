#pragma once

// Permutation importance across follow-up time and partial dependence of the
// predicted median on shifted features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "checkpoint.hpp"
#include "encode.hpp"
#include "grud.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "sweep.hpp"

namespace grudw {

struct ImportanceRow {
    std::string feature;
    int timestep_day = 0;
    double horizon_years = 0.0;
    double delta_c_mean = kNaN;
    double ci_low = kNaN;
    double ci_high = kNaN;
    std::size_t replicates = 0;
};

struct ImportanceOptions {
    int n_perm = 5;
    std::vector<double> horizons{1.0, 3.0, 5.0};
    std::vector<std::size_t> steps;  // grid steps to evaluate; empty = every step with day >= 0
    std::uint64_t seed = 0;
};

/// Moves whole rows (x, m, delta) of feature `row` between patients:
/// patient i receives the trajectory of patient perm[i].
inline std::vector<EncodedSequence> permute_feature(const std::vector<EncodedSequence>& seqs, Eigen::Index row,
                                                    const std::vector<std::size_t>& perm) {
    std::vector<EncodedSequence> out = seqs;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto& src = seqs[perm[i]];
        out[i].x.row(row) = src.x.row(row);
        out[i].m.row(row) = src.m.row(row);
        out[i].delta.row(row) = src.delta.row(row);
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> default_steps(const TimeGrid& grid) {
    std::vector<std::size_t> steps;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (grid.day(k) >= 0) steps.push_back(k);
    }
    return steps;
}

// C-tau of S(h) scores on the remaining-time risk set at each (step, horizon);
// NaN where undefined.
inline std::vector<double> c_tau_grid(const GrudSweepModel& model, const std::vector<int>& followup_end,
                                      const std::vector<bool>& events, const TimeGrid& grid,
                                      const std::vector<std::size_t>& steps, const std::vector<double>& horizons) {
    std::vector<double> out;
    std::vector<PointPrediction> preds;
    for (std::size_t step : steps) {
        const int day = grid.day(step);
        std::vector<std::size_t> risk;
        std::vector<double> times;
        std::vector<bool> ev;
        for (std::size_t i = 0; i < followup_end.size(); ++i) {
            if (followup_end[i] <= day) continue;
            risk.push_back(i);
            times.push_back((followup_end[i] - day) / kDaysPerYear);
            ev.push_back(events[i]);
        }
        if (risk.empty()) {
            out.insert(out.end(), horizons.size(), kNaN);
            continue;
        }
        model.predict(step, risk, horizons, preds);
        for (std::size_t h = 0; h < horizons.size(); ++h) {
            std::vector<double> s(preds.size());
            for (std::size_t i = 0; i < preds.size(); ++i) s[i] = preds[i].survival[h];
            try {
                out.push_back(c_tau(s, times, ev, horizons[h]).c);
            } catch (const DataError&) {
                out.push_back(kNaN);
            }
        }
    }
    return out;
}

}  // namespace detail

/// Delta C = C before permutation - C after, per (step, horizon), over
/// n_perm permutations for each checkpoint.
inline std::vector<ImportanceRow> permutation_importance(const std::vector<Checkpoint>& checkpoints,
                                                         const std::vector<PatientRecord>& heldout,
                                                         const std::string& feature,
                                                         const ImportanceOptions& options = {}) {
    if (heldout.empty()) throw DataError("permutation_importance: empty held-out set");
    if (checkpoints.empty()) throw DataError("permutation_importance: no checkpoints");
    const auto& grid = checkpoints.front().meta.grid;
    const auto steps = options.steps.empty() ? detail::default_steps(grid) : options.steps;
    std::vector<int> followup_end;
    std::vector<bool> events;
    for (const auto& r : heldout) {
        followup_end.push_back(r.followup_end);
        events.push_back(r.event);
    }
    const std::size_t cells = steps.size() * options.horizons.size();
    std::vector<std::vector<double>> deltas(cells);

    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        const auto& ck = checkpoints[c];
        const auto row = ck.meta.roster.index_of(feature);
        if (!row) throw DataError("permutation_importance: feature '" + feature + "' is not in the roster");
        const auto seqs = encode_all_for(ck, heldout);
        const auto before = detail::c_tau_grid(GrudSweepModel(ck.params, seqs), followup_end, events, ck.meta.grid,
                                               steps, options.horizons);
        for (int p = 0; p < options.n_perm; ++p) {
            std::vector<std::size_t> perm(heldout.size());
            for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
            Rng rng(derive_seed(options.seed, std::uint64_t(c) * 1000003ULL + std::uint64_t(p)));
            rng.shuffle(perm);
            const auto after = detail::c_tau_grid(GrudSweepModel(ck.params, permute_feature(seqs, Eigen::Index(*row), perm)),
                                                  followup_end, events, ck.meta.grid, steps, options.horizons);
            for (std::size_t i = 0; i < cells; ++i) deltas[i].push_back(before[i] - after[i]);
        }
    }
    std::vector<ImportanceRow> rows;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        for (std::size_t h = 0; h < options.horizons.size(); ++h) {
            const auto iv = mean_interval(deltas[s * options.horizons.size() + h]);
            rows.push_back({feature, grid.day(steps[s]), options.horizons[h], iv.mean, iv.low, iv.high, iv.n});
        }
    }
    return rows;
}

inline std::string importance_csv(const std::vector<ImportanceRow>& rows) {
    std::string out = "feature,timestep_day,horizon_years,delta_c_mean,ci_low,ci_high\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{}\n", r.feature, r.timestep_day, r.horizon_years,
                           format_value(r.delta_c_mean), format_value(r.ci_low), format_value(r.ci_high));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct PdpRow {
    std::string feature;
    std::string shift;
    double raw_mean_after_shift = kNaN;
    int followup_day = 0;
    double pmst_median = kNaN;
    double pmst_mean = kNaN;
};

inline constexpr int kYearlyDiagnosisDays = 365;

/// Shift labels for a feature: z units for z-scored features, years for age,
/// variants for binary and comorbidity features.
inline std::vector<std::string> pdp_shifts(const FeatureSpec& spec) {
    std::vector<std::string> out;
    if (spec.name == kAgeFeature) {
        for (int s = -20; s <= 20; s += 5) out.push_back(fmt::format("{}", s));
    } else if (spec.preprocessing == Preprocessing::zscore) {
        for (int s = -4; s <= 4; ++s) out.push_back(fmt::format("{}", 0.5 * s));
    } else if (spec.is_static) {
        out = {"original", "all_zero", "all_one"};
    } else {
        out = {"original", "all_zero", "yearly"};
    }
    return out;
}

/// Applies one shift to an encoded sequence in place. `raw_sum`/`raw_n`
/// accumulate the raw-unit mean of the observed entries after shifting.
inline void apply_shift(EncodedSequence& seq, Eigen::Index d, const FeatureSpec& spec, const FeatureNorm& norm,
                        const TimeGrid& grid, const std::string& shift, double& raw_sum, std::size_t& raw_n) {
    const Eigen::Index T = seq.x.cols();
    auto to_raw = [&](double x) {
        if (spec.preprocessing == Preprocessing::zscore) return x * norm.sd + norm.mean;
        if (spec.preprocessing == Preprocessing::divide_by_100) return x * 100.0;
        return x;
    };
    if (spec.name == kAgeFeature || spec.preprocessing == Preprocessing::zscore) {
        const double amount = std::stod(shift);
        const double dx = spec.name == kAgeFeature ? amount / 100.0 : amount;
        for (Eigen::Index t = 0; t < T; ++t) {
            if (seq.m(d, t) > 0.5) seq.x(d, t) += dx;
        }
    } else if (shift == "all_zero") {
        if (spec.kind == FeatureKind::comorbidity) {
            seq.x.row(d).setZero();
            seq.m.row(d).setZero();
        } else {
            seq.x.row(d).setZero();
            seq.m.row(d).setOnes();
        }
    } else if (shift == "all_one") {
        seq.x.row(d).setOnes();
        seq.m.row(d).setOnes();
    } else if (shift == "yearly") {
        std::vector<int> days;
        for (int day = grid.days().front(); day <= grid.days().back(); day += kYearlyDiagnosisDays) days.push_back(day);
        if (spec.kind == FeatureKind::comorbidity) {
            encode_diagnosis_row(grid, days, d, seq.x, seq.m);
        } else {
            seq.x.row(d).setZero();
            seq.m.row(d).setZero();
            for (int day : days) {
                if (auto k = grid.step_of_day(day)) {
                    seq.x(d, Eigen::Index(*k)) = 1.0;
                    seq.m(d, Eigen::Index(*k)) = 1.0;
                }
            }
        }
    } else if (shift != "original") {
        throw DataError("partial_dependence: unknown shift '" + shift + "'");
    }
    Eigen::MatrixXd delta;
    recompute_delta(seq.m, seq.gap_days, delta);
    seq.delta.row(d) = delta.row(d);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (seq.m(d, t) > 0.5) {
            raw_sum += to_raw(seq.x(d, t));
            ++raw_n;
        }
    }
}

/// Median and mean PMST over patients still at risk at each follow-up day,
/// averaged over checkpoints, for every shift of `feature`.
inline std::vector<PdpRow> partial_dependence(const std::vector<Checkpoint>& checkpoints,
                                              const std::vector<PatientRecord>& heldout, const std::string& feature,
                                              const std::vector<int>& followup_days) {
    if (heldout.empty()) throw DataError("partial_dependence: empty held-out set");
    if (checkpoints.empty()) throw DataError("partial_dependence: no checkpoints");
    const auto& roster = checkpoints.front().meta.roster;
    const auto d0 = roster.index_of(feature);
    if (!d0) throw DataError("partial_dependence: feature '" + feature + "' is not in the roster");
    const auto& spec = roster[*d0];
    const auto shifts = pdp_shifts(spec);
    const auto& grid = checkpoints.front().meta.grid;
    std::vector<std::size_t> steps;
    for (int day : followup_days) {
        const auto k = grid.step_of_day(day);
        if (!k || grid.day(*k) != day) throw DataError(fmt::format("partial_dependence: day {} is not a grid day", day));
        steps.push_back(*k);
    }

    std::vector<PdpRow> rows;
    for (const auto& shift : shifts) {
        std::vector<double> med_sum(steps.size(), 0.0), mean_sum(steps.size(), 0.0);
        double raw_mean_sum = 0.0;
        for (const auto& ck : checkpoints) {
            const auto d = Eigen::Index(*ck.meta.roster.index_of(feature));
            auto seqs = encode_all_for(ck, heldout);
            double raw_sum = 0.0;
            std::size_t raw_n = 0;
            for (auto& s : seqs) {
                apply_shift(s, d, spec, ck.meta.norms.raw[std::size_t(d)], ck.meta.grid, shift, raw_sum, raw_n);
            }
            raw_mean_sum += raw_n > 0 ? raw_sum / double(raw_n) : kNaN;
            std::vector<std::vector<double>> pm(steps.size());
            for (const auto& s : seqs) {
                const auto outputs = forward(ck.params, s).outputs;
                for (std::size_t si = 0; si < steps.size(); ++si) {
                    if (steps[si] < outputs.size()) pm[si].push_back(median(outputs[steps[si]]));
                }
            }
            for (std::size_t si = 0; si < steps.size(); ++si) {
                auto& v = pm[si];
                if (v.empty()) {
                    med_sum[si] = kNaN;
                    mean_sum[si] = kNaN;
                    continue;
                }
                double total = 0.0;
                for (double x : v) total += x;
                mean_sum[si] += total / double(v.size());
                std::sort(v.begin(), v.end());
                const std::size_t h = v.size() / 2;
                med_sum[si] += v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
            }
        }
        const double k = double(checkpoints.size());
        for (std::size_t si = 0; si < steps.size(); ++si) {
            rows.push_back({feature, shift, raw_mean_sum / k, followup_days[si], med_sum[si] / k, mean_sum[si] / k});
        }
    }
    return rows;
}

inline std::string pdp_csv(const std::vector<PdpRow>& rows) {
    std::string out = "feature,shift,raw_mean_after_shift,followup_day,pmst_median,pmst_mean\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{}\n", r.feature, r.shift, format_value(r.raw_mean_after_shift),
                           r.followup_day, format_value(r.pmst_median), format_value(r.pmst_mean));
    }
    return out;
}

}  // namespace grudw
