#pragma once

// Text forms of fold assignments and fitted baselines. The baseline files
// carry their own norms and imputation means so they can be applied to new
// records without the training data.

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "features.hpp"
#include "mtlr.hpp"
#include "pipeline.hpp"
#include "split.hpp"

namespace grudw {

// --- fold assignments -------------------------------------------------------

inline std::string splits_csv(const std::vector<PatientRecord>& records, const FoldAssignment& folds) {
    std::string out = "patient_id,fold\n";
    for (const auto& r : records) out += fmt::format("{},{}\n", r.id, folds.assignment.at(r.id));
    return out;
}

inline FoldAssignment load_splits(const std::filesystem::path& path) {
    CsvReader reader(path);
    const auto id_col = reader.require("patient_id");
    const auto fold_col = reader.require("fold");
    FoldAssignment out;
    while (auto row = reader.next()) {
        const int f = reader.parse_int(reader.field(*row, fold_col), "fold");
        if (f < 0) reader.fail("fold must be >= 0");
        out.k = std::max(out.k, f);
        if (!out.assignment.emplace(reader.field(*row, id_col), f).second) {
            reader.fail("duplicate patient_id '" + reader.field(*row, id_col) + "'");
        }
    }
    return out;
}

// --- json helpers -----------------------------------------------------------

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

inline nlohmann::json norms_json(const Norms& n) {
    nlohmann::json j;
    for (const auto& r : n.raw) j["raw"].push_back({r.mean, r.sd});
    j["empirical_means"] = n.empirical_means;
    return j;
}

inline Norms json_norms(const nlohmann::json& j) {
    Norms n;
    for (const auto& r : j.at("raw")) n.raw.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    n.empirical_means = j.at("empirical_means").get<std::vector<double>>();
    return n;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& path, const char* kind) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        auto j = nlohmann::json::parse(in);
        if (j.value("kind", std::string()) != kind) throw DataError(path.string() + ": not a " + kind + " model file");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace detail

// --- AFT --------------------------------------------------------------------

inline std::string aft_to_string(const AftFitResult& fit, const FeatureRoster& roster) {
    nlohmann::json j;
    j["kind"] = "aft";
    j["roster_hash"] = fmt::format("{:016x}", roster.hash());
    j["beta"] = detail::vec_json(fit.model.beta);
    j["sigma"] = fit.model.sigma;
    j["columns"] = std::vector<Eigen::Index>(fit.columns.begin(), fit.columns.end());
    j["baseline_means"] = detail::vec_json(fit.baseline_means);
    j["norms"] = detail::norms_json(fit.norms);
    j["loglik"] = fit.model.loglik;
    return j.dump(1) + "\n";
}

inline AftFitResult load_aft(const std::filesystem::path& path, const FeatureRoster& roster) {
    const auto j = detail::read_json(path, "aft");
    if (j.at("roster_hash").get<std::string>() != fmt::format("{:016x}", roster.hash())) {
        throw DataError(path.string() + ": feature roster does not match");
    }
    AftFitResult fit;
    fit.model.beta = detail::json_vec(j.at("beta"));
    fit.model.sigma = j.at("sigma").get<double>();
    fit.model.loglik = j.at("loglik").get<double>();
    for (auto c : j.at("columns")) fit.columns.push_back(c.get<Eigen::Index>());
    fit.baseline_means = detail::json_vec(j.at("baseline_means"));
    fit.norms = detail::json_norms(j.at("norms"));
    return fit;
}

/// Intercept, one row per used design column, then the scale.
inline std::string aft_coefficients_csv(const AftFitResult& fit, const FeatureRoster& roster) {
    std::string out = "feature,coefficient,std_error,p_value\n";
    const auto& m = fit.model;
    auto row = [&](const std::string& name, Eigen::Index i) {
        out += fmt::format("{},{:.10g},{:.10g},{:.10g}\n", name, m.beta(i), m.std_errors(i), m.p_values(i));
    };
    row("(intercept)", 0);
    for (std::size_t j = 0; j < fit.columns.size(); ++j) row(roster[std::size_t(fit.columns[j])].name, Eigen::Index(j) + 1);
    out += fmt::format("sigma,{:.10g},{:.10g},\n", m.sigma, m.sigma_std_error);
    return out;
}

// --- MTLR -------------------------------------------------------------------

struct MtlrBaseline {
    MtlrModel model;
    Norms norms;
    Eigen::VectorXd baseline_means;
};

inline MtlrBaseline fit_mtlr_baseline(const std::vector<PatientRecord>& train, const FeatureRoster& roster,
                                      const MtlrFitOptions& options = {}) {
    MtlrBaseline out;
    out.norms = compute_norms(train, roster);
    const auto design = training_design(train, roster, out.norms);
    out.baseline_means = design.means;
    out.model = mtlr_fit(design.X, observed_years(train), event_flags(train), options).model;
    return out;
}

inline Eigen::MatrixXd mtlr_design(const MtlrBaseline& fit, const std::vector<PatientRecord>& records,
                                   const FeatureRoster& roster) {
    return apply_design(records, roster, fit.norms, fit.baseline_means);
}

inline std::string mtlr_to_string(const MtlrBaseline& fit, const FeatureRoster& roster) {
    nlohmann::json j;
    j["kind"] = "mtlr";
    j["roster_hash"] = fmt::format("{:016x}", roster.hash());
    j["time_points"] = fit.model.time_points;
    j["l2_strength"] = fit.model.l2_strength;
    for (Eigen::Index r = 0; r < fit.model.theta.rows(); ++r) {
        j["theta"].push_back(detail::vec_json(fit.model.theta.row(r).transpose()));
    }
    j["b"] = detail::vec_json(fit.model.b);
    j["baseline_means"] = detail::vec_json(fit.baseline_means);
    j["norms"] = detail::norms_json(fit.norms);
    return j.dump(1) + "\n";
}

inline MtlrBaseline load_mtlr(const std::filesystem::path& path, const FeatureRoster& roster) {
    const auto j = detail::read_json(path, "mtlr");
    if (j.at("roster_hash").get<std::string>() != fmt::format("{:016x}", roster.hash())) {
        throw DataError(path.string() + ": feature roster does not match");
    }
    MtlrBaseline fit;
    fit.model = make_mtlr(Eigen::Index(roster.size()), j.at("time_points").get<std::vector<double>>(),
                          j.at("l2_strength").get<double>());
    const auto& theta = j.at("theta");
    if (Eigen::Index(theta.size()) != fit.model.theta.rows()) throw DataError(path.string() + ": theta has the wrong shape");
    for (Eigen::Index r = 0; r < fit.model.theta.rows(); ++r) {
        const auto row = detail::json_vec(theta.at(std::size_t(r)));
        if (row.size() != fit.model.theta.cols()) throw DataError(path.string() + ": theta has the wrong shape");
        fit.model.theta.row(r) = row.transpose();
    }
    fit.model.b = detail::json_vec(j.at("b"));
    if (fit.model.b.size() != fit.model.m()) throw DataError(path.string() + ": b has the wrong length");
    fit.baseline_means = detail::json_vec(j.at("baseline_means"));
    fit.norms = detail::json_norms(j.at("norms"));
    return fit;
}

/// One row per patient and time point.
inline std::string mtlr_curves_csv(const MtlrBaseline& fit, const std::vector<PatientRecord>& records,
                                   const FeatureRoster& roster) {
    const auto X = mtlr_design(fit, records, roster);
    std::string out = "patient_id,t_years,survival\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto s = mtlr_survival(fit.model, X.row(Eigen::Index(i)).transpose());
        for (Eigen::Index k = 0; k < s.size(); ++k) {
            out += fmt::format("{},{},{:.10g}\n", records[i].id, fit.model.time_points[std::size_t(k)], s(k));
        }
    }
    return out;
}

}  // namespace grudw
