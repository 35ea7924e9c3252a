#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepsofa/variables.hpp"

namespace deepsofa {

// One timestamped measurement. `text` carries the device name for o2_device
// rows; `value` carries the numeric reading for everything else.
struct RawEvent {
    std::string encounter_id;
    std::string patient_id;
    long minutes = 0;  // since ICU admission; negative = pre-ICU, dropped later
    std::string variable;
    double value = 0;
    std::string text;

    bool is_device() const { return variable == kO2DeviceVar; }
    bool is_flow() const { return variable == kO2FlowVar; }
};

struct Rejection {
    long line_no = 0;  // 0 when the record did not come from a file
    std::string reason_code;
    std::string detail;
};

struct RejectionReport {
    std::vector<Rejection> items;

    void add(long line_no, std::string code, std::string detail) {
        items.push_back({line_no, std::move(code), std::move(detail)});
    }
    std::size_t count(const std::string& code) const {
        return static_cast<std::size_t>(
            std::count_if(items.begin(), items.end(),
                          [&](const Rejection& r) { return r.reason_code == code; }));
    }
    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write rejection report: " + path);
        out << "line,reason,detail\n";
        for (const auto& r : items) out << r.line_no << "," << r.reason_code << "," << r.detail << "\n";
    }
};

struct Outcome {
    double age_years = 0;
    bool died_in_hospital = false;
    bool hospice_death_within_7d = false;

    bool label() const { return died_in_hospital || hospice_death_within_7d; }
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::optional<double> parse_number(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<long> parse_integer(const std::string& s) {
    std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    long v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace detail

struct ParseResult {
    std::vector<RawEvent> events;
    RejectionReport rejections;
};

// Event file: UTF-8 CSV with header encounter_id,patient_id,minutes,variable,value.
// Malformed rows become rejection records; an unreadable file is fatal.
inline ParseResult parse_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open event file: " + path);
    ParseResult result;
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error("empty event file: " + path);
    ++line_no;
    {
        auto header = detail::split_csv_row(line);
        static const std::vector<std::string> expected = {"encounter_id", "patient_id", "minutes",
                                                          "variable", "value"};
        std::vector<std::string> got;
        for (auto& h : header) got.push_back(detail::trim(h));
        if (got != expected)
            throw std::runtime_error("event file header mismatch in " + path + ": got '" + line +
                                     "'");
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 5) {
            result.rejections.add(line_no, "bad_field_count", line);
            continue;
        }
        RawEvent ev;
        ev.encounter_id = detail::trim(fields[0]);
        ev.patient_id = detail::trim(fields[1]);
        if (ev.encounter_id.empty() || ev.patient_id.empty()) {
            result.rejections.add(line_no, "missing_id", line);
            continue;
        }
        auto minutes = detail::parse_integer(fields[2]);
        if (!minutes) {
            result.rejections.add(line_no, "bad_minutes", fields[2]);
            continue;
        }
        ev.minutes = *minutes;
        ev.variable = detail::trim(fields[3]);
        if (ev.is_device()) {
            ev.text = detail::to_lower(detail::trim(fields[4]));
            if (ev.text.empty()) {
                result.rejections.add(line_no, "missing_device", line);
                continue;
            }
        } else if (ev.is_flow() || var_from_name(ev.variable).has_value()) {
            auto value = detail::parse_number(fields[4]);
            if (!value) {
                result.rejections.add(line_no, "bad_value", fields[4]);
                continue;
            }
            ev.value = *value;
        } else {
            result.rejections.add(line_no, "unknown_variable", ev.variable);
            continue;
        }
        result.events.push_back(std::move(ev));
    }
    return result;
}

// Outcome file: encounter_id,age_years,died_in_hospital,hospice_death_within_7d
inline std::map<std::string, Outcome> parse_outcomes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open outcome file: " + path);
    std::map<std::string, Outcome> outcomes;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty outcome file: " + path);
    {
        auto header = detail::split_csv_row(line);
        std::vector<std::string> got;
        for (auto& h : header) got.push_back(detail::trim(h));
        static const std::vector<std::string> expected = {"encounter_id", "age_years",
                                                          "died_in_hospital",
                                                          "hospice_death_within_7d"};
        if (got != expected)
            throw std::runtime_error("outcome file header mismatch in " + path);
    }
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 4)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad outcome row");
        auto age = detail::parse_number(fields[1]);
        auto died = detail::parse_integer(fields[2]);
        auto hospice = detail::parse_integer(fields[3]);
        if (!age || !died || !hospice || (*died != 0 && *died != 1) ||
            (*hospice != 0 && *hospice != 1))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad outcome row");
        Outcome o;
        o.age_years = *age;
        o.died_in_hospital = *died == 1;
        o.hospice_death_within_7d = *hospice == 1;
        outcomes[detail::trim(fields[0])] = o;
    }
    return outcomes;
}

}  // namespace deepsofa
