#pragma once

// Checkpoints are a single JSON document. Numbers are written with 17
// significant digits so every double survives the round trip exactly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "config.hpp"
#include "encode.hpp"
#include "error.hpp"
#include "features.hpp"
#include "grid.hpp"
#include "grud.hpp"

namespace grudw {

inline constexpr const char* kCheckpointSchema = "grud-weibull/1";

struct CheckpointMeta {
    FeatureRoster roster;
    Norms norms;
    TimeGrid grid;
    TrainConfig config;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    GrudParameters params;
    CheckpointMeta meta;
};

namespace detail {

inline const char* kind_name(FeatureKind k) {
    switch (k) {
        case FeatureKind::continuous: return "continuous";
        case FeatureKind::binary: return "binary";
        case FeatureKind::comorbidity: return "comorbidity";
    }
    return "?";
}

inline const char* preprocessing_name(Preprocessing p) {
    switch (p) {
        case Preprocessing::zscore: return "zscore";
        case Preprocessing::divide_by_100: return "divide_by_100";
        case Preprocessing::identity: return "identity";
    }
    return "?";
}

inline FeatureKind parse_kind(const std::string& s) {
    if (s == "continuous") return FeatureKind::continuous;
    if (s == "binary") return FeatureKind::binary;
    if (s == "comorbidity") return FeatureKind::comorbidity;
    throw DataError("checkpoint: unknown feature kind '" + s + "'");
}

inline Preprocessing parse_preprocessing(const std::string& s) {
    if (s == "zscore") return Preprocessing::zscore;
    if (s == "divide_by_100") return Preprocessing::divide_by_100;
    if (s == "identity") return Preprocessing::identity;
    throw DataError("checkpoint: unknown preprocessing '" + s + "'");
}

inline std::string num17(double v) { return fmt::format("{:.17g}", v); }

template <typename Range>
std::string number_array(const Range& values) {
    std::string out = "[";
    bool first = true;
    for (double v : values) {
        if (!first) out += ",";
        out += num17(v);
        first = false;
    }
    return out + "]";
}

inline std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

inline std::string hex64(std::uint64_t h) { return fmt::format("{:016x}", h); }

}  // namespace detail

inline std::string checkpoint_to_string(const Checkpoint& ck) {
    using namespace detail;
    const auto& p = ck.params;
    const auto& m = ck.meta;
    if (std::size_t(p.n_features()) != m.roster.size()) throw DataError("checkpoint: roster size differs from model");
    std::string out = "{\n";
    out += fmt::format("  \"schema_version\": {},\n", quote(kCheckpointSchema));
    out += fmt::format("  \"hidden_size\": {},\n", p.hidden());
    out += "  \"feature_roster\": [\n";
    for (std::size_t i = 0; i < m.roster.size(); ++i) {
        const auto& s = m.roster[i];
        out += fmt::format("    {{\"name\": {}, \"kind\": \"{}\", \"preprocessing\": \"{}\", \"static\": {}}}{}\n",
                           quote(s.name), kind_name(s.kind), preprocessing_name(s.preprocessing),
                           s.is_static ? "true" : "false", i + 1 < m.roster.size() ? "," : "");
    }
    out += "  ],\n";
    out += fmt::format("  \"feature_roster_hash\": \"{}\",\n", hex64(m.roster.hash()));
    out += fmt::format("  \"grid\": [{}],\n", fmt::join(m.grid.days(), ","));
    std::vector<double> means, sds;
    for (const auto& n : m.norms.raw) {
        means.push_back(n.mean);
        sds.push_back(n.sd);
    }
    out += fmt::format("  \"norms\": {{\"mean\": {}, \"sd\": {}, \"empirical_means\": {}}},\n", number_array(means),
                       number_array(sds), number_array(m.norms.empirical_means));
    if (p.fixed_kappa) {
        out += fmt::format("  \"fixed_kappa\": {{\"center\": {}, \"halfwidth\": {}}},\n", num17(p.fixed_kappa->center),
                           num17(p.fixed_kappa->halfwidth));
    } else {
        out += "  \"fixed_kappa\": null,\n";
    }
    out += "  \"tensors\": [\n";
    const auto& layout = p.layout();
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& t = layout[i];
        const auto* begin = p.flat().data() + t.offset;
        out += fmt::format("    {{\"name\": \"{}\", \"shape\": [{}, {}], \"values\": {}}}{}\n", t.name, t.rows, t.cols,
                           number_array(std::vector<double>(begin, begin + t.rows * t.cols)),
                           i + 1 < layout.size() ? "," : "");
    }
    out += "  ],\n";
    out += "  \"train_config\": {";
    bool first = true;
    for (const auto& [k, v] : m.config.to_map()) {
        out += fmt::format("{}{}: {}", first ? "" : ", ", quote(k), quote(v));
        first = false;
    }
    out += "},\n";
    out += fmt::format("  \"seed\": {}\n", m.seed);
    out += "}\n";
    return out;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << checkpoint_to_string(ck);
    if (!out) throw DataError("write failed: " + path.string());
}

/// Rejects schema or roster-hash mismatches by field name. When
/// `expected_roster_hash` is given the stored roster must also match it.
inline Checkpoint checkpoint_from_string(const std::string& text,
                                         std::optional<std::uint64_t> expected_roster_hash = std::nullopt) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: not valid JSON: ") + e.what());
    }
    try {
        const auto version = j.at("schema_version").get<std::string>();
        if (version != kCheckpointSchema) {
            throw DataError(fmt::format("checkpoint: schema_version '{}' is not '{}'", version, kCheckpointSchema));
        }
        std::vector<FeatureSpec> specs;
        for (const auto& s : j.at("feature_roster")) {
            specs.push_back({s.at("name").get<std::string>(), detail::parse_kind(s.at("kind").get<std::string>()),
                             detail::parse_preprocessing(s.at("preprocessing").get<std::string>()),
                             s.at("static").get<bool>()});
        }
        Checkpoint ck;
        ck.meta.roster = FeatureRoster(std::move(specs));
        const auto stored_hash = j.at("feature_roster_hash").get<std::string>();
        if (stored_hash != detail::hex64(ck.meta.roster.hash())) {
            throw DataError("checkpoint: feature_roster_hash does not match feature_roster");
        }
        if (expected_roster_hash && *expected_roster_hash != ck.meta.roster.hash()) {
            throw DataError("checkpoint: feature_roster_hash does not match the expected roster");
        }
        ck.meta.grid = TimeGrid(j.at("grid").get<std::vector<int>>());
        const auto& norms = j.at("norms");
        const auto means = norms.at("mean").get<std::vector<double>>();
        const auto sds = norms.at("sd").get<std::vector<double>>();
        ck.meta.norms.empirical_means = norms.at("empirical_means").get<std::vector<double>>();
        if (means.size() != ck.meta.roster.size() || sds.size() != means.size() ||
            ck.meta.norms.empirical_means.size() != means.size()) {
            throw DataError("checkpoint: norms length differs from feature_roster");
        }
        for (std::size_t i = 0; i < means.size(); ++i) ck.meta.norms.raw.push_back({means[i], sds[i]});

        const auto hidden = j.at("hidden_size").get<Eigen::Index>();
        ck.params = GrudParameters(Eigen::Index(ck.meta.roster.size()), hidden);
        if (!j.at("fixed_kappa").is_null()) {
            ck.params.fixed_kappa =
                FixedKappa{j["fixed_kappa"].at("center").get<double>(), j["fixed_kappa"].at("halfwidth").get<double>()};
        }
        const auto& tensors = j.at("tensors");
        const auto& layout = ck.params.layout();
        if (tensors.size() != layout.size()) throw DataError("checkpoint: tensors list has the wrong length");
        for (std::size_t i = 0; i < layout.size(); ++i) {
            const auto& t = tensors[i];
            const auto& want = layout[i];
            if (t.at("name").get<std::string>() != want.name) {
                throw DataError(fmt::format("checkpoint: tensors[{}] should be '{}'", i, want.name));
            }
            const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
            if (shape.size() != 2 || shape[0] != want.rows || shape[1] != want.cols) {
                throw DataError(fmt::format("checkpoint: tensor '{}' has the wrong shape", want.name));
            }
            const auto values = t.at("values").get<std::vector<double>>();
            if (Eigen::Index(values.size()) != want.rows * want.cols) {
                throw DataError(fmt::format("checkpoint: tensor '{}' has the wrong number of values", want.name));
            }
            std::copy(values.begin(), values.end(), ck.params.flat().data() + want.offset);
        }
        for (const auto& [k, v] : j.at("train_config").items()) ck.meta.config.set(k, v.get<std::string>());
        ck.meta.seed = j.at("seed").get<std::uint64_t>();
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: missing or malformed field: ") + e.what());
    }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_roster_hash = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str(), expected_roster_hash);
}

/// Encodes records with the checkpoint's own grid, roster and norms.
inline std::vector<EncodedSequence> encode_all_for(const Checkpoint& ck, const std::vector<PatientRecord>& records) {
    std::vector<EncodedSequence> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(encode(r, ck.meta.grid, ck.meta.roster, ck.meta.norms));
    return out;
}

}  // namespace grudw
