#pragma once

#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "deepsofa/core.hpp"

namespace deepsofa {

// Grid column order. SpO2 rides along as the 14th model channel and doubles as
// the PaO2 fallback for respiratory scoring.
enum class Var : int {
    map = 0,
    fio2,
    pao2,
    spo2,
    mv,
    gcs,
    urine,
    platelets,
    bilirubin,
    creatinine,
    dopamine,
    dobutamine,
    epinephrine,
    norepinephrine,
};

constexpr int kNumVars = 14;

inline int idx(Var v) { return static_cast<int>(v); }

inline const std::array<std::string, kNumVars>& var_names() {
    static const std::array<std::string, kNumVars> names = {
        "map",      "fio2",      "pao2",       "spo2",     "mv",
        "gcs",      "urine",     "platelets",  "bilirubin", "creatinine",
        "dopamine", "dobutamine", "epinephrine", "norepinephrine"};
    return names;
}

inline std::optional<Var> var_from_name(const std::string& name) {
    const auto& names = var_names();
    for (int i = 0; i < kNumVars; ++i)
        if (names[i] == name) return static_cast<Var>(i);
    return std::nullopt;
}

// Auxiliary event variables consumed by FiO2 imputation; they never enter the grid.
inline constexpr const char* kO2DeviceVar = "o2_device";
inline constexpr const char* kO2FlowVar = "o2_flow_lpm";

enum class FillRule { forward_fill, zero_fill };

struct VariableSpec {
    std::string name;
    std::string unit;
    double non_outlier_min = 0;
    double non_outlier_max = 0;
    bool min_open = false;  // open bound excludes the endpoint
    bool max_open = false;
    FillRule fill_rule = FillRule::forward_fill;
    double normal_value = 0;

    bool in_range(double v) const {
        if (!std::isfinite(v)) return false;
        bool above = min_open ? v > non_outlier_min : v >= non_outlier_min;
        bool below = max_open ? v < non_outlier_max : v <= non_outlier_max;
        return above && below;
    }

    std::string range_text() const {
        std::ostringstream os;
        os << (min_open ? '(' : '[') << non_outlier_min << ", " << non_outlier_max
           << (max_open ? ')' : ']');
        return os.str();
    }
};

struct VariableTable {
    std::array<VariableSpec, kNumVars> specs;
    VariableSpec o2_flow;  // auxiliary, outlier-filtered but never gridded

    const VariableSpec& spec(Var v) const { return specs[static_cast<std::size_t>(idx(v))]; }
    VariableSpec& spec(Var v) { return specs[static_cast<std::size_t>(idx(v))]; }

    void validate() const {
        for (const auto& s : specs) {
            require(s.non_outlier_min < s.non_outlier_max,
                    "variable " + s.name + ": range min must be below max");
            require(s.in_range(s.normal_value),
                    "variable " + s.name + ": normal value outside non-outlier range");
        }
        for (Var v : {Var::dopamine, Var::dobutamine, Var::epinephrine, Var::norepinephrine,
                      Var::mv}) {
            require(spec(v).fill_rule == FillRule::zero_fill,
                    "variable " + spec(v).name + ": vasopressors and MV must use zero_fill");
        }
        for (int i = 0; i < kNumVars; ++i) {
            Var v = static_cast<Var>(i);
            if (v == Var::dopamine || v == Var::dobutamine || v == Var::epinephrine ||
                v == Var::norepinephrine || v == Var::mv)
                continue;
            require(spec(v).fill_rule == FillRule::forward_fill,
                    "variable " + spec(v).name + ": expected forward_fill");
        }
    }
};

namespace detail {
inline VariableSpec make_spec(Var v, const char* unit, double lo, bool lo_open, double hi,
                              bool hi_open, FillRule fill, double normal) {
    VariableSpec s;
    s.name = var_names()[static_cast<std::size_t>(idx(v))];
    s.unit = unit;
    s.non_outlier_min = lo;
    s.min_open = lo_open;
    s.non_outlier_max = hi;
    s.max_open = hi_open;
    s.fill_rule = fill;
    s.normal_value = normal;
    return s;
}
}  // namespace detail

// Non-outlier ranges follow the published SOFA preprocessing rules; normal
// values are the editable clinical defaults shipped in configs/variables.ini.
inline VariableTable default_variable_table() {
    using detail::make_spec;
    VariableTable t;
    auto ff = FillRule::forward_fill;
    auto zf = FillRule::zero_fill;
    t.spec(Var::map) = make_spec(Var::map, "mmHg", 0, true, 300, false, ff, 80);
    t.spec(Var::fio2) = make_spec(Var::fio2, "%", 21, false, 100, false, ff, 21);
    t.spec(Var::pao2) = make_spec(Var::pao2, "mmHg", 0, true, 800, false, ff, 100);
    t.spec(Var::spo2) = make_spec(Var::spo2, "%", 0, true, 100, false, ff, 98);
    t.spec(Var::mv) = make_spec(Var::mv, "binary", 0, false, 1, false, zf, 0);
    t.spec(Var::gcs) = make_spec(Var::gcs, "score", 3, false, 15, false, ff, 15);
    t.spec(Var::urine) = make_spec(Var::urine, "mL", 0, false, 1095, false, ff, 60);
    t.spec(Var::platelets) = make_spec(Var::platelets, "x10^3/mm^3", 0, true, 832, false, ff, 200);
    t.spec(Var::bilirubin) = make_spec(Var::bilirubin, "mg/dL", 0, true, 50, false, ff, 0.6);
    t.spec(Var::creatinine) = make_spec(Var::creatinine, "mg/dL", 0, true, 30, false, ff, 0.9);
    t.spec(Var::dopamine) = make_spec(Var::dopamine, "mcg/kg/min", 0, false, 50, false, zf, 0);
    t.spec(Var::dobutamine) = make_spec(Var::dobutamine, "mcg/kg/min", 0, false, 40, false, zf, 0);
    t.spec(Var::epinephrine) = make_spec(Var::epinephrine, "mcg/kg/min", 0, false, 5, false, zf, 0);
    t.spec(Var::norepinephrine) =
        make_spec(Var::norepinephrine, "mcg/kg/min", 0, false, 15, false, zf, 0);
    t.o2_flow = make_spec(Var::map, "L/min", 0, false, 100, false, ff, 0);
    t.o2_flow.name = kO2FlowVar;
    return t;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// "(0, 300]" -> bounds plus openness
inline void parse_range(const std::string& text, VariableSpec& s) {
    std::string r = trim(text);
    require(r.size() >= 5, "bad range: " + text);
    char open_ch = r.front(), close_ch = r.back();
    require(open_ch == '(' || open_ch == '[', "bad range: " + text);
    require(close_ch == ')' || close_ch == ']', "bad range: " + text);
    s.min_open = open_ch == '(';
    s.max_open = close_ch == ')';
    std::string body = r.substr(1, r.size() - 2);
    std::size_t comma = body.find(',');
    require(comma != std::string::npos, "bad range: " + text);
    s.non_outlier_min = std::stod(trim(body.substr(0, comma)));
    s.non_outlier_max = std::stod(trim(body.substr(comma + 1)));
}

}  // namespace detail

// INI-style variable config:
//   [map]
//   unit = mmHg
//   range = (0, 300]
//   fill = forward
//   normal = 80
inline VariableTable load_variable_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open variable config: " + path);
    VariableTable t = default_variable_table();
    std::string line, section;
    VariableSpec* cur = nullptr;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = detail::trim(s.substr(1, s.size() - 2));
            if (section == kO2FlowVar) {
                cur = &t.o2_flow;
            } else {
                auto v = var_from_name(section);
                require(v.has_value(), path + ":" + std::to_string(line_no) +
                                           ": unknown variable section [" + section + "]");
                cur = &t.spec(*v);
            }
            continue;
        }
        std::size_t eq = s.find('=');
        require(eq != std::string::npos && cur != nullptr,
                path + ":" + std::to_string(line_no) + ": expected key = value inside a section");
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        if (key == "unit") {
            cur->unit = value;
        } else if (key == "range") {
            detail::parse_range(value, *cur);
        } else if (key == "fill") {
            require(value == "forward" || value == "zero",
                    path + ":" + std::to_string(line_no) + ": fill must be forward or zero");
            cur->fill_rule = value == "forward" ? FillRule::forward_fill : FillRule::zero_fill;
        } else if (key == "normal") {
            cur->normal_value = std::stod(value);
        } else {
            throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": unknown key " +
                                        key);
        }
    }
    t.validate();
    return t;
}

inline void save_variable_table(const VariableTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write variable config: " + path);
    auto write_spec = [&out](const VariableSpec& s) {
        out << "[" << s.name << "]\n";
        out << "unit = " << s.unit << "\n";
        out << "range = " << s.range_text() << "\n";
        out << "fill = " << (s.fill_rule == FillRule::forward_fill ? "forward" : "zero") << "\n";
        out << "normal = " << s.normal_value << "\n\n";
    };
    for (const auto& s : t.specs) write_spec(s);
    write_spec(t.o2_flow);
}

}  // namespace deepsofa
