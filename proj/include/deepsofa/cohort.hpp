#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "deepsofa/series.hpp"

namespace deepsofa {

enum class MultiStayPolicy { all, first_only, unique_only };

inline const char* to_string(MultiStayPolicy p) {
    switch (p) {
        case MultiStayPolicy::all: return "all";
        case MultiStayPolicy::first_only: return "first_only";
        case MultiStayPolicy::unique_only: return "unique_only";
    }
    return "all";
}

inline MultiStayPolicy multi_stay_from_string(const std::string& s) {
    if (s == "all") return MultiStayPolicy::all;
    if (s == "first_only") return MultiStayPolicy::first_only;
    if (s == "unique_only") return MultiStayPolicy::unique_only;
    throw std::invalid_argument("unknown multi-stay policy: " + s);
}

struct CohortCriteria {
    double min_age_years = 18;
    int min_stay_hours = 4;
    int max_stay_days = 30;
    bool require_map = true;
    bool require_pao2_or_spo2 = true;
    MultiStayPolicy multi_stay_policy = MultiStayPolicy::all;

    void validate() const {
        require(min_stay_hours < max_stay_days * 24,
                "cohort criteria: min stay must be below max stay");
    }
};

struct ExclusionReport {
    std::size_t excluded_age = 0;
    std::size_t excluded_stay_length = 0;
    std::size_t excluded_no_map = 0;
    std::size_t excluded_no_oxygenation = 0;
    std::size_t excluded_multi_stay = 0;

    std::size_t total() const {
        return excluded_age + excluded_stay_length + excluded_no_map + excluded_no_oxygenation +
               excluded_multi_stay;
    }
};

// Applies the selection rules in order: age, stay length, measurement
// requirements, then the multi-stay policy on whatever survived. first_only
// keeps each patient's earliest surviving stay; unique_only drops every stay
// of patients with more than one surviving stay.
inline std::pair<std::vector<EncounterSeries>, ExclusionReport> apply_cohort_filters(
    std::vector<EncounterSeries> encounters, const CohortCriteria& criteria) {
    criteria.validate();
    ExclusionReport report;
    std::vector<EncounterSeries> kept;
    kept.reserve(encounters.size());
    const int max_hours = criteria.max_stay_days * 24;
    for (auto& e : encounters) {
        if (e.age_years < criteria.min_age_years) {
            ++report.excluded_age;
            continue;
        }
        if (e.hours() < criteria.min_stay_hours || e.hours() > max_hours) {
            ++report.excluded_stay_length;
            continue;
        }
        if (criteria.require_map && !e.any_observed(Var::map)) {
            ++report.excluded_no_map;
            continue;
        }
        if (criteria.require_pao2_or_spo2 && !e.any_observed(Var::pao2) &&
            !e.any_observed(Var::spo2)) {
            ++report.excluded_no_oxygenation;
            continue;
        }
        kept.push_back(std::move(e));
    }

    if (criteria.multi_stay_policy != MultiStayPolicy::all) {
        std::map<std::string, std::vector<std::size_t>> by_patient;
        for (std::size_t i = 0; i < kept.size(); ++i)
            by_patient[kept[i].patient_id].push_back(i);
        std::vector<bool> keep_flag(kept.size(), true);
        for (auto& [patient, stays] : by_patient) {
            if (stays.size() <= 1) continue;
            if (criteria.multi_stay_policy == MultiStayPolicy::first_only) {
                std::size_t earliest = stays[0];
                for (std::size_t i : stays)
                    if (kept[i].icu_stay_index < kept[earliest].icu_stay_index) earliest = i;
                for (std::size_t i : stays)
                    if (i != earliest) keep_flag[i] = false;
            } else {
                for (std::size_t i : stays) keep_flag[i] = false;
            }
        }
        std::vector<EncounterSeries> filtered;
        filtered.reserve(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (keep_flag[i])
                filtered.push_back(std::move(kept[i]));
            else
                ++report.excluded_multi_stay;
        }
        kept = std::move(filtered);
    }
    return {std::move(kept), report};
}

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline std::string read_str(std::istream& in) {
    uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace detail

inline constexpr char kCohortMagic[8] = {'D', 'S', 'C', 'O', 'H', 'R', 'T', '1'};

// Binary cohort container (native little-endian, 64-bit grid). Round-trips the
// in-memory representation exactly.
inline void save_cohort(const std::vector<EncounterSeries>& cohort, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write cohort file: " + path);
    out.write(kCohortMagic, sizeof(kCohortMagic));
    detail::write_u32(out, 1);  // version
    detail::write_u64(out, cohort.size());
    for (const auto& e : cohort) {
        detail::write_str(out, e.encounter_id);
        detail::write_str(out, e.patient_id);
        detail::write_u32(out, static_cast<uint32_t>(e.icu_stay_index));
        detail::write_f64(out, e.age_years);
        detail::write_u32(out, e.label ? 1 : 0);
        detail::write_u32(out, static_cast<uint32_t>(e.hours()));
        out.write(reinterpret_cast<const char*>(e.grid.data()),
                  static_cast<std::streamsize>(sizeof(double) * e.grid.size()));
        out.write(reinterpret_cast<const char*>(e.observed.data()),
                  static_cast<std::streamsize>(e.observed.size()));
    }
    if (!out) throw std::runtime_error("failed writing cohort file: " + path);
}

inline std::vector<EncounterSeries> load_cohort(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open cohort file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCohortMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a cohort file: " + path);
    uint32_t version = detail::read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported cohort version in " + path);
    uint64_t count = detail::read_u64(in);
    std::vector<EncounterSeries> cohort;
    cohort.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        EncounterSeries e;
        e.encounter_id = detail::read_str(in);
        e.patient_id = detail::read_str(in);
        e.icu_stay_index = static_cast<int>(detail::read_u32(in));
        e.age_years = detail::read_f64(in);
        e.label = detail::read_u32(in) != 0;
        uint32_t T = detail::read_u32(in);
        e.grid.resize(T, kNumVars);
        in.read(reinterpret_cast<char*>(e.grid.data()),
                static_cast<std::streamsize>(sizeof(double) * e.grid.size()));
        e.observed.resize(T, kNumVars);
        in.read(reinterpret_cast<char*>(e.observed.data()),
                static_cast<std::streamsize>(e.observed.size()));
        if (!in) throw std::runtime_error("truncated cohort file: " + path);
        cohort.push_back(std::move(e));
    }
    return cohort;
}

}  // namespace deepsofa
