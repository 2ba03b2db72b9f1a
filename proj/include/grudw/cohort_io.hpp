#pragma once

// Cohort files. Two layouts:
//   * a directory holding patients.csv, observations.csv and (optionally)
//     comorbidities.csv;
//   * a JSONL file with one patient object per line.
// Days are signed integers relative to the index date.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "record.hpp"

namespace grudw {

enum class CohortFormat { csv, jsonl };

inline CohortFormat detect_format(const std::filesystem::path& path) {
    return path.extension() == ".jsonl" ? CohortFormat::jsonl : CohortFormat::csv;
}

struct IngestResult {
    std::vector<PatientRecord> records;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    return fmt::format("{}", v);
}

// Drops earlier duplicates of (day, feature) within one record, keeping the
// last one in list order.
inline void dedupe_observations(PatientRecord& r, std::vector<std::string>& warnings) {
    std::map<std::pair<int, std::string>, std::size_t> last;
    for (std::size_t i = 0; i < r.observations.size(); ++i) {
        last[{r.observations[i].day, r.observations[i].feature}] = i;
    }
    if (last.size() == r.observations.size()) return;
    std::vector<Observation> kept;
    for (std::size_t i = 0; i < r.observations.size(); ++i) {
        const auto& o = r.observations[i];
        if (last[{o.day, o.feature}] == i) {
            kept.push_back(o);
        } else {
            warnings.push_back(fmt::format("duplicate observation (patient {}, day {}, feature {}); keeping the last",
                                           r.id, o.day, o.feature));
        }
    }
    r.observations = std::move(kept);
}

inline IngestResult ingest_csv(const std::filesystem::path& dir) {
    IngestResult out;
    std::map<std::string, std::size_t> by_id;

    {
        CsvReader reader(dir / "patients.csv");
        const auto id_col = reader.require("patient_id");
        const auto age_col = reader.require("age_at_index");
        const auto gender_col = reader.require("gender");
        const auto race_col = reader.require("race");
        const auto end_col = reader.require("followup_end_day");
        const auto event_col = reader.require("event_flag");
        const auto type_col = reader.require("event_type");
        const auto date_col = reader.optional("index_date");
        while (auto row = reader.next()) {
            PatientRecord r;
            r.id = reader.field(*row, id_col);
            if (r.id.empty()) reader.fail("empty patient_id");
            if (by_id.count(r.id)) reader.fail("duplicate patient_id '" + r.id + "'");
            const auto& age = reader.field(*row, age_col);
            if (!age.empty()) r.age_at_index = reader.parse_double(age, "age_at_index");
            for (auto [col, name] : {std::pair{gender_col, "gender"}, std::pair{race_col, "race"}}) {
                const auto& v = reader.field(*row, col);
                if (!v.empty()) r.static_features[name] = reader.parse_int(v, name);
            }
            r.followup_end = reader.parse_int(reader.field(*row, end_col), "followup_end_day");
            const int flag = reader.parse_int(reader.field(*row, event_col), "event_flag");
            if (flag != 0 && flag != 1) reader.fail("event_flag must be 0 or 1");
            r.event = flag == 1;
            r.event_type = reader.field(*row, type_col);
            if (date_col) r.index_date = reader.field(*row, *date_col);
            by_id[r.id] = out.records.size();
            out.records.push_back(std::move(r));
        }
    }
    {
        CsvReader reader(dir / "observations.csv");
        const auto id_col = reader.require("patient_id");
        const auto day_col = reader.require("day");
        const auto feature_col = reader.require("feature");
        const auto value_col = reader.require("value");
        while (auto row = reader.next()) {
            const auto& id = reader.field(*row, id_col);
            auto it = by_id.find(id);
            if (it == by_id.end()) reader.fail("unknown patient_id '" + id + "'");
            Observation o;
            o.day = reader.parse_int(reader.field(*row, day_col), "day");
            o.feature = reader.field(*row, feature_col);
            if (o.feature.empty()) reader.fail("empty feature");
            o.value = reader.parse_double(reader.field(*row, value_col), "value");
            out.records[it->second].observations.push_back(std::move(o));
        }
    }
    if (std::filesystem::exists(dir / "comorbidities.csv")) {
        CsvReader reader(dir / "comorbidities.csv");
        const auto id_col = reader.require("patient_id");
        const auto day_col = reader.require("day");
        const auto name_col = reader.require("comorbidity");
        while (auto row = reader.next()) {
            const auto& id = reader.field(*row, id_col);
            auto it = by_id.find(id);
            if (it == by_id.end()) reader.fail("unknown patient_id '" + id + "'");
            Diagnosis dx;
            dx.day = reader.parse_int(reader.field(*row, day_col), "day");
            dx.comorbidity = reader.field(*row, name_col);
            out.records[it->second].diagnoses.push_back(std::move(dx));
        }
    }
    for (auto& r : out.records) dedupe_observations(r, out.warnings);
    return out;
}

inline void export_csv(const std::vector<PatientRecord>& records, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream patients(dir / "patients.csv");
    std::ofstream observations(dir / "observations.csv");
    std::ofstream comorbidities(dir / "comorbidities.csv");
    if (!patients || !observations || !comorbidities) throw DataError("cannot write cohort under " + dir.string());
    patients << "patient_id,age_at_index,gender,race,followup_end_day,event_flag,event_type,index_date\n";
    observations << "patient_id,day,feature,value\n";
    comorbidities << "patient_id,day,comorbidity\n";
    auto static_cell = [](const PatientRecord& r, const char* name) {
        auto it = r.static_features.find(name);
        return it == r.static_features.end() ? std::string() : std::to_string(it->second);
    };
    for (const auto& r : records) {
        for (const auto& [name, value] : r.static_features) {
            if (name != "gender" && name != "race") {
                throw DataError("patients.csv cannot carry static feature '" + name + "'");
            }
        }
        patients << r.id << ',' << format_number(r.age_at_index) << ',' << static_cell(r, "gender") << ','
                 << static_cell(r, "race") << ',' << r.followup_end << ',' << (r.event ? 1 : 0) << ','
                 << r.event_type << ',' << r.index_date << '\n';
        for (const auto& o : r.observations) {
            observations << r.id << ',' << o.day << ',' << o.feature << ',' << format_number(o.value) << '\n';
        }
        for (const auto& dx : r.diagnoses) comorbidities << r.id << ',' << dx.day << ',' << dx.comorbidity << '\n';
    }
}

inline nlohmann::ordered_json record_to_json(const PatientRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["index_date"] = r.index_date;
    if (std::isnan(r.age_at_index)) {
        j["age_at_index"] = nullptr;
    } else {
        j["age_at_index"] = r.age_at_index;
    }
    j["static"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.static_features) j["static"][k] = v;
    j["observations"] = nlohmann::ordered_json::array();
    for (const auto& o : r.observations) {
        j["observations"].push_back({{"day", o.day}, {"feature", o.feature}, {"value", o.value}});
    }
    j["comorbidities"] = nlohmann::ordered_json::array();
    for (const auto& dx : r.diagnoses) j["comorbidities"].push_back({{"day", dx.day}, {"comorbidity", dx.comorbidity}});
    j["followup_end"] = r.followup_end;
    j["event"] = r.event;
    j["event_type"] = r.event_type;
    return j;
}

inline PatientRecord record_from_json(const nlohmann::json& j) {
    PatientRecord r;
    r.id = j.at("id").get<std::string>();
    r.index_date = j.value("index_date", std::string());
    if (j.contains("age_at_index") && !j.at("age_at_index").is_null()) r.age_at_index = j.at("age_at_index").get<double>();
    if (j.contains("static")) {
        for (const auto& [k, v] : j.at("static").items()) r.static_features[k] = v.get<int>();
    }
    for (const auto& o : j.at("observations")) {
        r.observations.push_back({o.at("day").get<int>(), o.at("feature").get<std::string>(), o.at("value").get<double>()});
    }
    if (j.contains("comorbidities")) {
        for (const auto& dx : j.at("comorbidities")) {
            r.diagnoses.push_back({dx.at("day").get<int>(), dx.at("comorbidity").get<std::string>()});
        }
    }
    r.followup_end = j.at("followup_end").get<int>();
    r.event = j.at("event").get<bool>();
    r.event_type = j.value("event_type", std::string());
    return r;
}

inline IngestResult ingest_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    IngestResult out;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        try {
            auto rec = record_from_json(nlohmann::json::parse(line));
            if (!seen.insert(rec.id).second) throw DataError("duplicate patient id '" + rec.id + "'");
            dedupe_observations(rec, out.warnings);
            out.records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(fmt::format("{}:{}: malformed patient record: {}", path.string(), line_no, e.what()));
        } catch (const DataError& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
    return out;
}

inline void export_jsonl(const std::vector<PatientRecord>& records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

}  // namespace detail

inline IngestResult ingest(const std::filesystem::path& path, CohortFormat format) {
    return format == CohortFormat::jsonl ? detail::ingest_jsonl(path) : detail::ingest_csv(path);
}

inline IngestResult ingest(const std::filesystem::path& path) { return ingest(path, detect_format(path)); }

inline void export_cohort(const std::vector<PatientRecord>& records, const std::filesystem::path& path,
                          CohortFormat format) {
    if (format == CohortFormat::jsonl) {
        detail::export_jsonl(records, path);
    } else {
        detail::export_csv(records, path);
    }
}

inline void export_cohort(const std::vector<PatientRecord>& records, const std::filesystem::path& path) {
    export_cohort(records, path, detect_format(path));
}

}  // namespace grudw
