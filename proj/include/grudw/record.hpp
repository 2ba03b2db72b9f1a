#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "grid.hpp"

namespace grudw {

struct Observation {
    int day = 0;  // relative to the index date
    std::string feature;
    double value = 0.0;

    friend bool operator==(const Observation&, const Observation&) = default;
};

struct Diagnosis {
    int day = 0;
    std::string comorbidity;

    friend bool operator==(const Diagnosis&, const Diagnosis&) = default;
};

struct PatientRecord {
    std::string id;
    std::string index_date;  // ISO yyyy-mm-dd, may be empty
    std::map<std::string, int> static_features;
    double age_at_index = std::numeric_limits<double>::quiet_NaN();
    std::vector<Observation> observations;
    std::vector<Diagnosis> diagnoses;
    int followup_end = 0;  // days from index
    bool event = false;    // endpoint observed at followup_end
    std::string event_type;

    double observed_years() const { return followup_end / kDaysPerYear; }

    friend bool operator==(const PatientRecord& a, const PatientRecord& b) {
        const bool age_eq = (std::isnan(a.age_at_index) && std::isnan(b.age_at_index)) ||
                            a.age_at_index == b.age_at_index;
        return age_eq && a.id == b.id && a.index_date == b.index_date && a.static_features == b.static_features &&
               a.observations == b.observations && a.diagnoses == b.diagnoses && a.followup_end == b.followup_end &&
               a.event == b.event && a.event_type == b.event_type;
    }
};

}  // namespace grudw
