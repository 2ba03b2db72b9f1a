#pragma once

// Grid encoding of patient records into (value, mask, delta) matrices, the
// training-set normalisation they depend on, and the index-date baseline
// design used by the static baselines.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "features.hpp"
#include "grid.hpp"
#include "record.hpp"

namespace grudw {

inline constexpr int kComorbidityWindowDays = 100;

struct FeatureNorm {
    double mean = 0.0;
    double sd = 1.0;

    friend bool operator==(const FeatureNorm&, const FeatureNorm&) = default;
};

struct Norms {
    std::vector<FeatureNorm> raw;         // per feature, original units
    std::vector<double> empirical_means;  // per feature, after preprocessing
    std::vector<std::string> warnings;

    friend bool operator==(const Norms& a, const Norms& b) {
        return a.raw == b.raw && a.empirical_means == b.empirical_means;
    }
};

namespace detail {

inline double preprocess(const FeatureSpec& spec, const FeatureNorm& norm, double raw) {
    switch (spec.preprocessing) {
        case Preprocessing::zscore:
            return norm.sd > 0.0 ? (raw - norm.mean) / norm.sd : 0.0;
        case Preprocessing::divide_by_100:
            return raw / 100.0;
        case Preprocessing::identity:
            return raw;
    }
    return raw;
}

// Raw values of feature `d` carried by one record, in the order they appear.
template <typename Fn>
void for_each_raw_value(const PatientRecord& r, const FeatureSpec& spec, Fn&& fn) {
    if (spec.name == kAgeFeature) {
        if (!std::isnan(r.age_at_index)) fn(r.age_at_index);
        return;
    }
    if (spec.is_static) {
        if (auto it = r.static_features.find(spec.name); it != r.static_features.end()) fn(double(it->second));
        return;
    }
    if (spec.kind == FeatureKind::comorbidity) {
        for (const auto& dx : r.diagnoses) {
            if (dx.comorbidity == spec.name) fn(1.0);
        }
        return;
    }
    for (const auto& obs : r.observations) {
        if (obs.feature == spec.name) fn(obs.value);
    }
}

}  // namespace detail

/// Per-feature sample mean and SD (n - 1) over every raw value in the
/// training records, plus the post-preprocessing means used by decay-to-mean.
inline Norms compute_norms(const std::vector<PatientRecord>& training, const FeatureRoster& roster) {
    if (training.empty()) throw DataError("compute_norms: empty training set");
    Norms out;
    out.raw.resize(roster.size());
    out.empirical_means.resize(roster.size());
    for (std::size_t d = 0; d < roster.size(); ++d) {
        const auto& spec = roster[d];
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : training) {
            detail::for_each_raw_value(r, spec, [&](double v) {
                sum += v;
                ++n;
            });
        }
        if (n == 0) {
            out.raw[d] = {0.0, 1.0};
            out.warnings.push_back("feature '" + spec.name + "' never observed in training; using mean 0, SD 1");
            out.empirical_means[d] = 0.0;
            continue;
        }
        const double mean = sum / double(n);
        double ss = 0.0;
        for (const auto& r : training) {
            detail::for_each_raw_value(r, spec, [&](double v) { ss += (v - mean) * (v - mean); });
        }
        const double sd = n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0;
        out.raw[d] = {mean, sd};

        double pre_sum = 0.0;
        for (const auto& r : training) {
            detail::for_each_raw_value(r, spec, [&](double v) { pre_sum += detail::preprocess(spec, out.raw[d], v); });
        }
        out.empirical_means[d] = pre_sum / double(n);
    }
    return out;
}

/// One patient on the grid. Matrices are features x timesteps and always span
/// the full grid; `valid_steps` says how many leading steps precede the end of
/// follow-up.
struct EncodedSequence {
    std::string id;
    Eigen::MatrixXd x;
    Eigen::MatrixXd m;
    Eigen::MatrixXd delta;  // days since the last observation of the feature
    Eigen::VectorXd empirical_means;
    Eigen::VectorXd gap_days;  // grid gap before each step
    std::size_t valid_steps = 0;

    std::size_t n_features() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t n_steps() const { return static_cast<std::size_t>(x.cols()); }
};

struct EncodeDiagnostics {
    std::size_t zero_sd_values = 0;    // z-scored against SD 0, mapped to 0
    std::size_t clipped_observations = 0;  // outside the grid window
};

/// delta[t] = gap[t] + delta[t-1] when the feature was missing at t-1,
/// otherwise gap[t]; delta[0] = 0.
inline void recompute_delta(const Eigen::MatrixXd& m, const Eigen::VectorXd& gap_days, Eigen::MatrixXd& delta) {
    delta.setZero(m.rows(), m.cols());
    for (Eigen::Index t = 1; t < m.cols(); ++t) {
        for (Eigen::Index d = 0; d < m.rows(); ++d) {
            delta(d, t) = m(d, t - 1) > 0.5 ? gap_days(t) : gap_days(t) + delta(d, t - 1);
        }
    }
}

/// Comorbidity row: observed with value 1 at every step whose grid day lies
/// within [diagnosis, diagnosis + 100] of some diagnosis day; missing otherwise.
inline void encode_diagnosis_row(const TimeGrid& grid, const std::vector<int>& diagnosis_days, Eigen::Index row,
                                 Eigen::MatrixXd& x, Eigen::MatrixXd& m) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const int t = grid.day(k);
        bool active = false;
        for (int d : diagnosis_days) {
            if (d <= t && t <= d + kComorbidityWindowDays) {
                active = true;
                break;
            }
        }
        x(row, Eigen::Index(k)) = active ? 1.0 : 0.0;
        m(row, Eigen::Index(k)) = active ? 1.0 : 0.0;
    }
}

inline EncodedSequence encode(const PatientRecord& record, const TimeGrid& grid, const FeatureRoster& roster,
                              const Norms& norms, EncodeDiagnostics* diag = nullptr) {
    const auto F = Eigen::Index(roster.size());
    const auto T = Eigen::Index(grid.size());
    EncodedSequence seq;
    seq.id = record.id;
    seq.x = Eigen::MatrixXd::Zero(F, T);
    seq.m = Eigen::MatrixXd::Zero(F, T);
    seq.empirical_means = Eigen::Map<const Eigen::VectorXd>(norms.empirical_means.data(), F);
    seq.gap_days.resize(T);
    for (Eigen::Index k = 0; k < T; ++k) seq.gap_days(k) = grid.gap(std::size_t(k));

    for (const auto& obs : record.observations) {
        const auto idx = roster.index_of(obs.feature);
        if (!idx || roster[*idx].kind == FeatureKind::comorbidity || roster[*idx].is_static ||
            roster[*idx].name == kAgeFeature) {
            throw DataError("encode: patient " + record.id + ": unknown observation feature '" + obs.feature + "'");
        }
    }
    for (const auto& dx : record.diagnoses) {
        const auto idx = roster.index_of(dx.comorbidity);
        if (!idx || roster[*idx].kind != FeatureKind::comorbidity) {
            throw DataError("encode: patient " + record.id + ": unknown comorbidity '" + dx.comorbidity + "'");
        }
    }
    for (const auto& [name, value] : record.static_features) {
        const auto idx = roster.index_of(name);
        if (!idx || !roster[*idx].is_static) {
            throw DataError("encode: patient " + record.id + ": unknown static feature '" + name + "'");
        }
    }

    for (Eigen::Index d = 0; d < F; ++d) {
        const auto& spec = roster[std::size_t(d)];
        const auto& norm = norms.raw[std::size_t(d)];
        if (spec.name == kAgeFeature) {
            if (std::isnan(record.age_at_index)) continue;
            for (Eigen::Index k = 0; k < T; ++k) {
                const double age = record.age_at_index + grid.day(std::size_t(k)) / kDaysPerYear;
                seq.x(d, k) = detail::preprocess(spec, norm, age);
                seq.m(d, k) = 1.0;
            }
            continue;
        }
        if (spec.is_static) {
            auto it = record.static_features.find(spec.name);
            if (it == record.static_features.end()) continue;
            const double v = detail::preprocess(spec, norm, double(it->second));
            seq.x.row(d).setConstant(v);
            seq.m.row(d).setOnes();
            continue;
        }
        if (spec.kind == FeatureKind::comorbidity) {
            std::vector<int> days;
            for (const auto& dx : record.diagnoses) {
                if (dx.comorbidity == spec.name) days.push_back(dx.day);
            }
            encode_diagnosis_row(grid, days, d, seq.x, seq.m);
            continue;
        }
        // Interval bucketing; the latest observation in a step wins, later
        // list entries win ties on the same day.
        std::vector<int> chosen_day(std::size_t(T), std::numeric_limits<int>::min());
        for (const auto& obs : record.observations) {
            if (obs.feature != spec.name) continue;
            const auto step = grid.step_of_day(obs.day);
            if (!step) {
                if (diag) ++diag->clipped_observations;
                continue;
            }
            const auto k = Eigen::Index(*step);
            if (obs.day >= chosen_day[std::size_t(k)]) {
                chosen_day[std::size_t(k)] = obs.day;
                if (spec.preprocessing == Preprocessing::zscore && !(norm.sd > 0.0) && diag) ++diag->zero_sd_values;
                seq.x(d, k) = detail::preprocess(spec, norm, obs.value);
                seq.m(d, k) = 1.0;
            }
        }
    }

    recompute_delta(seq.m, seq.gap_days, seq.delta);
    seq.valid_steps = grid.steps_before(record.followup_end);
    return seq;
}

// ---------------------------------------------------------------------------
// Index-date baseline covariates for the static models.

inline constexpr int kBaselineWindowDays = 365;
inline constexpr int kComorbidityLookbackDays = 3650;

/// Rows are patients, columns follow the roster. Dynamic measurements use the
/// observation closest to day 0 within +-365 days (later wins ties);
/// comorbidities are 1 when diagnosed within 10 years before the index date.
/// Missing entries are NaN.
inline Eigen::MatrixXd baseline_design(const std::vector<PatientRecord>& records, const FeatureRoster& roster,
                                       const Norms& norms) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Eigen::MatrixXd X(Eigen::Index(records.size()), Eigen::Index(roster.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        for (std::size_t d = 0; d < roster.size(); ++d) {
            const auto& spec = roster[d];
            const auto& norm = norms.raw[d];
            double value = nan;
            if (spec.name == kAgeFeature) {
                if (!std::isnan(r.age_at_index)) value = detail::preprocess(spec, norm, r.age_at_index);
            } else if (spec.is_static) {
                if (auto it = r.static_features.find(spec.name); it != r.static_features.end()) {
                    value = detail::preprocess(spec, norm, double(it->second));
                }
            } else if (spec.kind == FeatureKind::comorbidity) {
                value = 0.0;
                for (const auto& dx : r.diagnoses) {
                    if (dx.comorbidity == spec.name && dx.day <= 0 && dx.day >= -kComorbidityLookbackDays) value = 1.0;
                }
            } else {
                int best = std::numeric_limits<int>::max();
                for (const auto& obs : r.observations) {
                    if (obs.feature != spec.name) continue;
                    const int dist = std::abs(obs.day);
                    if (dist > kBaselineWindowDays) continue;
                    if (dist < best || (dist == best && obs.day > 0)) {
                        best = dist;
                        value = detail::preprocess(spec, norm, obs.value);
                    }
                }
            }
            X(Eigen::Index(i), Eigen::Index(d)) = value;
        }
    }
    return X;
}

inline Eigen::VectorXd column_means_ignoring_nan(const Eigen::MatrixXd& X) {
    Eigen::VectorXd means = Eigen::VectorXd::Zero(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        double sum = 0.0;
        Eigen::Index n = 0;
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            if (!std::isnan(X(r, c))) {
                sum += X(r, c);
                ++n;
            }
        }
        means(c) = n > 0 ? sum / double(n) : 0.0;
    }
    return means;
}

/// Single mean imputation in place.
inline void impute_means(Eigen::MatrixXd& X, const Eigen::VectorXd& means) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            if (std::isnan(X(r, c))) X(r, c) = means(c);
        }
    }
}

}  // namespace grudw
