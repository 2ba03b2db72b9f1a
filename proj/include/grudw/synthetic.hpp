#pragma once

// Synthetic longitudinal cohorts with a known Weibull ground truth. Each
// continuous feature follows a latent z-trajectory with separate slopes before
// and after the index date; the true log-scale is a function of the trajectory
// averaged over the five post-index years, so late measurements carry risk
// information that is unavailable at the index date.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "features.hpp"
#include "grid.hpp"
#include "random.hpp"
#include "record.hpp"

namespace grudw {

struct FeatureDynamics {
    double mean = 0.0;  // raw units (log units when log_normal)
    double sd = 1.0;
    double pre_slope_sd = 0.0;   // z per year, before the index date
    double post_slope_sd = 0.0;  // z per year, after the index date
    double noise_sd = 0.3;       // z units
    bool log_normal = false;
    double missingness = 0.6;    // probability a per-step candidate is dropped
};

struct Effect {
    double linear = 0.0;
    double quadratic = 0.0;
};

struct SyntheticConfig {
    std::size_t n = 1000;
    double censoring_fraction = 0.49;
    double weibull_shape = 1.6;
    double median_event_years = 3.0;  // at zero linear predictor
    int administrative_censoring_day = 1826;

    double age_mean = 72.0;
    double age_sd = 9.0;
    double gender_prevalence = 0.5;
    double race_prevalence = 0.91;

    std::map<std::string, FeatureDynamics> continuous;
    std::map<std::string, double> binary_prevalence;
    std::map<std::string, double> binary_missingness;
    std::map<std::string, double> comorbidity_prevalence;

    // Effects on log(lambda). Continuous features act through the post-index
    // average of their latent z; age per decade from age_mean; binary,
    // comorbidity and static features through their indicator.
    std::map<std::string, Effect> effects;

    static SyntheticConfig standard() {
        SyntheticConfig c;
        c.continuous = {
            {"egfr", {22.0, 5.0, 0.3, 0.6, 0.3, false, 0.55}},
            {"albumin", {3.8, 0.45, 0.2, 0.3, 0.3, false, 0.7}},
            {"phosphorus", {4.2, 0.8, 0.2, 0.3, 0.3, false, 0.7}},
            {"calcium", {9.2, 0.6, 0.2, 0.2, 0.3, false, 0.65}},
            {"uacr", {5.7, 1.2, 0.2, 0.2, 0.3, true, 0.85}},
            {"bicarbonate", {23.0, 3.0, 0.2, 0.3, 0.4, false, 0.65}},
            {"sbp", {135.0, 18.0, 0.3, 0.5, 0.5, false, 0.5}},
            {"dbp", {72.0, 11.0, 0.3, 0.3, 0.5, false, 0.5}},
            {"bmi", {30.0, 6.0, 0.05, 0.05, 0.1, false, 0.7}},
        };
        c.binary_prevalence = {{"smoking", 0.15}, {"alcohol", 0.1}};
        c.binary_missingness = {{"smoking", 0.9}, {"alcohol", 0.9}};
        c.comorbidity_prevalence = {
            {"dm", 0.45}, {"chf", 0.25}, {"cad", 0.3}, {"cirrhosis", 0.05}, {"dyslipidemia", 0.5},
        };
        c.effects = {
            {"egfr", {0.45, 0.0}},   {"sbp", {-0.3, 0.0}},    {"albumin", {0.25, 0.0}},
            {"phosphorus", {-0.2, 0.0}}, {"calcium", {0.1, 0.0}}, {"uacr", {-0.1, 0.0}},
            {"bmi", {0.0, -0.3}},    {"age", {-0.15, 0.0}},   {"chf", {-0.35, 0.0}},
            {"dm", {-0.1, 0.0}},     {"cad", {-0.1, 0.0}},    {"cirrhosis", {-0.3, 0.0}},
            {"smoking", {-0.15, 0.0}},
        };
        return c;
    }
};

struct SyntheticTruth {
    std::string id;
    double kappa = 0.0;
    double lambda = 0.0;  // years
    double linear_predictor = 0.0;
    int event_day = 0;   // latent event day, observed only when uncensored
    int censor_day = 0;
};

struct SyntheticCohort {
    std::vector<PatientRecord> records;
    std::vector<SyntheticTruth> truth;
    double achieved_censoring = 0.0;
    bool censoring_target_reached = true;
    double random_censoring_scale_days = 0.0;  // 0 when only administrative censoring applies
};

namespace detail {

inline std::string format_date(int days_since_epoch) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{days_since_epoch}}};
    return fmt::format("{:04d}-{:02d}-{:02d}", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
}

struct LatentPatient {
    double age = 0.0;
    int gender = 0;
    int race = 0;
    int entry_day = 0;
    int index_epoch_day = 0;
    std::map<std::string, std::array<double, 3>> trajectory;  // intercept, pre slope, post slope
    std::map<std::string, int> binary_status;
    std::map<std::string, int> comorbidity_onset;  // absent when never diagnosed
    double linear_predictor = 0.0;
    int event_day = 0;
    double censor_uniform = 0.0;
};

inline double latent_z(const std::array<double, 3>& traj, double years) {
    return traj[0] + traj[1] * std::min(years, 0.0) + traj[2] * std::max(years, 0.0);
}

}  // namespace detail

inline SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& config, std::uint64_t seed) {
    const TimeGrid grid = build_grid();
    const double lambda0 = config.median_event_years / std::pow(std::log(2.0), 1.0 / config.weibull_shape);
    const int id_width = std::max(5, int(std::to_string(config.n).size()));
    const int epoch_2010 = 14610;  // 2010-01-01

    std::vector<detail::LatentPatient> latent(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        Rng rng(derive_seed(seed, 2 * i));
        auto& p = latent[i];
        p.index_epoch_day = epoch_2010 + int(rng.below(2900));
        p.age = std::clamp(rng.normal(config.age_mean, config.age_sd), 40.0, 100.0);
        p.gender = rng.bernoulli(config.gender_prevalence) ? 1 : 0;
        p.race = rng.bernoulli(config.race_prevalence) ? 1 : 0;
        p.entry_day = -int(30 + rng.below(1066));

        double eta = 0.0;
        auto effect_of = [&](const std::string& name) {
            auto it = config.effects.find(name);
            return it == config.effects.end() ? Effect{} : it->second;
        };
        for (const auto& [name, dyn] : config.continuous) {
            std::array<double, 3> traj{rng.normal(), rng.normal(0.0, dyn.pre_slope_sd),
                                       rng.normal(0.0, dyn.post_slope_sd)};
            p.trajectory[name] = traj;
            const double avg = traj[0] + traj[2] * 2.5;  // mean of latent z over [0, 5] years
            const Effect e = effect_of(name);
            eta += e.linear * avg + e.quadratic * avg * avg;
        }
        for (const auto& [name, prev] : config.binary_prevalence) {
            const int status = rng.bernoulli(prev) ? 1 : 0;
            p.binary_status[name] = status;
            eta += effect_of(name).linear * status;
        }
        for (const auto& [name, prev] : config.comorbidity_prevalence) {
            if (rng.bernoulli(prev)) {
                p.comorbidity_onset[name] = -2500 + int(rng.below(3201));
                eta += effect_of(name).linear;
            }
        }
        eta += effect_of(std::string(kAgeFeature)).linear * (p.age - config.age_mean) / 10.0;
        eta += effect_of("gender").linear * p.gender + effect_of("race").linear * p.race;
        p.linear_predictor = eta;

        const double years = rng.weibull(config.weibull_shape, lambda0 * std::exp(eta));
        p.event_day = std::max(1, int(std::ceil(std::min(years, 1e5) * kDaysPerYear)));
        p.censor_uniform = rng.uniform();
    }

    auto censor_day = [&](const detail::LatentPatient& p, double scale) {
        int day = config.administrative_censoring_day;
        if (scale > 0.0) day = std::min(day, std::max(1, int(std::ceil(p.censor_uniform * scale))));
        return day;
    };
    auto censored_fraction = [&](double scale) {
        std::size_t c = 0;
        for (const auto& p : latent) c += p.event_day > censor_day(p, scale) ? 1 : 0;
        return config.n ? double(c) / double(config.n) : 0.0;
    };

    SyntheticCohort cohort;
    double scale = 0.0;
    double achieved = censored_fraction(0.0);
    if (achieved <= config.censoring_fraction) {
        // Fraction censored decreases in the scale; bisect on log scale.
        double lo = std::log(1.0);
        double hi = std::log(1e6);
        double best_gap = std::abs(achieved - config.censoring_fraction);
        for (int it = 0; it < 50; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double f = censored_fraction(std::exp(mid));
            if (std::abs(f - config.censoring_fraction) < best_gap) {
                best_gap = std::abs(f - config.censoring_fraction);
                scale = std::exp(mid);
                achieved = f;
            }
            if (f > config.censoring_fraction) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    cohort.achieved_censoring = achieved;
    cohort.censoring_target_reached = std::abs(achieved - config.censoring_fraction) <= 0.02;
    cohort.random_censoring_scale_days = scale;

    for (std::size_t i = 0; i < config.n; ++i) {
        const auto& p = latent[i];
        Rng rng(derive_seed(seed, 2 * i + 1));
        PatientRecord r;
        r.id = fmt::format("p{:0{}d}", i + 1, id_width);
        r.index_date = detail::format_date(p.index_epoch_day);
        r.age_at_index = std::round(p.age * 10.0) / 10.0;
        r.static_features = {{"gender", p.gender}, {"race", p.race}};
        const int cday = censor_day(p, scale);
        r.event = p.event_day <= cday;
        r.followup_end = r.event ? p.event_day : cday;
        r.event_type = r.event ? "endpoint" : "";

        // One candidate per grid step that overlaps [entry, followup_end).
        auto candidate_days = [&](auto&& emit) {
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const int lo = std::max(k == 0 ? grid.day(0) : grid.day(k - 1) + 1, p.entry_day);
                const int hi = std::min(grid.day(k), r.followup_end - 1);
                if (lo > hi) continue;
                emit(lo + int(rng.below(std::uint64_t(hi - lo + 1))));
            }
        };
        for (const auto& [name, dyn] : config.continuous) {
            const auto& traj = p.trajectory.at(name);
            candidate_days([&](int day) {
                const double z = detail::latent_z(traj, day / kDaysPerYear) + rng.normal(0.0, dyn.noise_sd);
                const bool keep = !rng.bernoulli(dyn.missingness);
                if (!keep) return;
                const double raw = dyn.log_normal ? std::exp(dyn.mean + dyn.sd * z) : dyn.mean + dyn.sd * z;
                r.observations.push_back({day, name, std::round(raw * 1000.0) / 1000.0});
            });
        }
        for (const auto& [name, status] : p.binary_status) {
            auto it = config.binary_missingness.find(name);
            const double miss = it == config.binary_missingness.end() ? 0.9 : it->second;
            candidate_days([&](int day) {
                if (!rng.bernoulli(miss)) r.observations.push_back({day, name, double(status)});
            });
        }
        for (const auto& [name, onset] : p.comorbidity_onset) {
            int day = onset;
            while (day < r.followup_end) {
                if (day >= -3650) r.diagnoses.push_back({day, name});
                day += 90 + int(rng.below(361));
            }
        }
        std::stable_sort(r.observations.begin(), r.observations.end(),
                         [](const Observation& a, const Observation& b) { return a.day < b.day; });
        std::stable_sort(r.diagnoses.begin(), r.diagnoses.end(),
                         [](const Diagnosis& a, const Diagnosis& b) { return a.day < b.day; });

        SyntheticTruth t;
        t.id = r.id;
        t.kappa = config.weibull_shape;
        t.lambda = lambda0 * std::exp(p.linear_predictor);
        t.linear_predictor = p.linear_predictor;
        t.event_day = p.event_day;
        t.censor_day = cday;
        cohort.truth.push_back(t);
        cohort.records.push_back(std::move(r));
    }
    return cohort;
}

}  // namespace grudw
