#pragma once

// Training configuration and its flat `key = value` text form.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "error.hpp"
#include "grud.hpp"

namespace grudw {

enum class EarlyStopMode { stop, report };

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 500;
    double grad_clip_norm = 1.0;
    double early_stop_gap = 0.04;
    // `stop` ends training after two consecutive epochs over the gap; `report`
    // trains all epochs and only flags them.
    EarlyStopMode early_stop_mode = EarlyStopMode::stop;
    int hidden = 40;
    std::uint64_t seed = 0;
    double tau_floor = 1.0 / kDaysPerYear;
    std::optional<FixedKappa> fixed_kappa;
    double dropout = 0.0;  // hook only; must stay 0
    double divergence_threshold = 1e5;

    void validate() const {
        auto bad = [](const std::string& what) { throw DataError("train config: " + what); };
        if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
        if (epochs < 1) bad("epochs must be >= 1");
        if (batch_size < 1) bad("batch_size must be >= 1");
        if (!(grad_clip_norm > 0.0)) bad("grad_clip_norm must be > 0");
        if (!(early_stop_gap > 0.0 && early_stop_gap < 1.0)) bad("early_stop_gap must lie in (0, 1)");
        if (hidden < 1) bad("hidden must be >= 1");
        if (!(tau_floor > 0.0)) bad("tau_floor must be > 0");
        if (dropout != 0.0) bad("dropout is not supported (must be 0)");
        if (!(divergence_threshold > 0.0)) bad("divergence_threshold must be > 0");
        if (fixed_kappa && !(fixed_kappa->halfwidth > 0.0 && fixed_kappa->center - fixed_kappa->halfwidth > 0.0)) {
            bad("fixed_kappa needs halfwidth > 0 and center - halfwidth > 0");
        }
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> kv;
        kv["learning_rate"] = fmt::format("{}", learning_rate);
        kv["epochs"] = std::to_string(epochs);
        kv["batch_size"] = std::to_string(batch_size);
        kv["grad_clip_norm"] = fmt::format("{}", grad_clip_norm);
        kv["early_stop_gap"] = fmt::format("{}", early_stop_gap);
        kv["early_stop_mode"] = early_stop_mode == EarlyStopMode::stop ? "stop" : "report";
        kv["hidden"] = std::to_string(hidden);
        kv["seed"] = std::to_string(seed);
        kv["tau_floor"] = fmt::format("{}", tau_floor);
        kv["fixed_kappa"] = fixed_kappa ? fmt::format("{},{}", fixed_kappa->center, fixed_kappa->halfwidth) : "none";
        kv["dropout"] = fmt::format("{}", dropout);
        kv["divergence_threshold"] = fmt::format("{}", divergence_threshold);
        return kv;
    }

    void set(const std::string& key, const std::string& value) {
        auto num = [&](const std::string& v) {
            std::size_t used = 0;
            double out = 0.0;
            try {
                out = std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size() || v.empty()) throw DataError(fmt::format("train config: bad value for {}: '{}'", key, v));
            return out;
        };
        auto integer = [&](const std::string& v) {
            const double d = num(v);
            if (d != std::floor(d)) throw DataError(fmt::format("train config: {} must be an integer", key));
            return d;
        };
        if (key == "learning_rate") {
            learning_rate = num(value);
        } else if (key == "epochs") {
            epochs = int(integer(value));
        } else if (key == "batch_size") {
            batch_size = int(integer(value));
        } else if (key == "grad_clip_norm") {
            grad_clip_norm = num(value);
        } else if (key == "early_stop_gap") {
            early_stop_gap = num(value);
        } else if (key == "early_stop_mode") {
            if (value == "stop") {
                early_stop_mode = EarlyStopMode::stop;
            } else if (value == "report") {
                early_stop_mode = EarlyStopMode::report;
            } else {
                throw DataError("train config: early_stop_mode must be 'stop' or 'report'");
            }
        } else if (key == "hidden") {
            hidden = int(integer(value));
        } else if (key == "seed") {
            std::size_t used = 0;
            try {
                seed = std::stoull(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != value.size() || value.empty()) throw DataError("train config: bad seed '" + value + "'");
        } else if (key == "tau_floor") {
            tau_floor = num(value);
        } else if (key == "fixed_kappa") {
            if (value == "none" || value.empty()) {
                fixed_kappa.reset();
            } else {
                const auto comma = value.find(',');
                if (comma == std::string::npos) throw DataError("train config: fixed_kappa must be 'center,halfwidth'");
                fixed_kappa = FixedKappa{num(value.substr(0, comma)), num(value.substr(comma + 1))};
            }
        } else if (key == "dropout") {
            dropout = num(value);
        } else if (key == "divergence_threshold") {
            divergence_threshold = num(value);
        } else {
            throw DataError("train config: unknown key '" + key + "'");
        }
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Parses `key = value` lines; `#` starts a comment. Later keys win.
inline std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(fmt::format("{}:{}: expected 'key = value'", origin, n));
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    TrainConfig cfg;
    for (const auto& [k, v] : parse_key_values(in, path.string())) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

inline std::string to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg.to_map()) out += k + " = " + v + "\n";
    return out;
}

}  // namespace grudw
