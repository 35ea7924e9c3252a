#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "deepsofa/core.hpp"

namespace deepsofa {

// One oxygen-delivery device row. Formula shape is
//   fio2 = base + slope * min(flow - pivot, term_cap)
// which covers the straight-line devices (term_cap = inf) and the
// non-rebreather's capped term.
struct OxygenDevice {
    std::string name;
    std::optional<double> default_fio2;
    std::optional<double> flow_min;  // imputation limits; flow is clamped into them
    std::optional<double> flow_max;
    bool has_formula = false;
    double base = 0;
    double slope = 0;
    double pivot = 0;
    double term_cap = std::numeric_limits<double>::infinity();
    std::optional<double> max_imputed;
};

inline const std::vector<OxygenDevice>& oxygen_device_table() {
    static const std::vector<OxygenDevice> table = [] {
        std::vector<OxygenDevice> t;
        auto formula = [](std::string name, std::optional<double> def,
                          std::optional<double> fmin, std::optional<double> fmax, double base,
                          double slope, double pivot, double cap, double max_fio2) {
            OxygenDevice d;
            d.name = std::move(name);
            d.default_fio2 = def;
            d.flow_min = fmin;
            d.flow_max = fmax;
            d.has_formula = true;
            d.base = base;
            d.slope = slope;
            d.pivot = pivot;
            d.term_cap = cap;
            d.max_imputed = max_fio2;
            return d;
        };
        auto fixed = [](std::string name, double def) {
            OxygenDevice d;
            d.name = std::move(name);
            d.default_fio2 = def;
            return d;
        };
        double inf = std::numeric_limits<double>::infinity();
        t.push_back(formula("aerosol mask", 35.0, 0.0, std::nullopt, 21, 4, 0, inf, 60));
        t.push_back(formula("nasal cannula", std::nullopt, 0.0, std::nullopt, 21, 4, 0, inf, 40));
        t.push_back(formula("high flow nasal cannula", 50.0, 6.0, 15.0, 48, 2, 6, inf, 100));
        t.push_back(formula("simple mask", std::nullopt, 0.0, 19.0, 21, 4, 0, inf, 60));
        t.push_back(formula("non-rebreather mask", 60.0, 8.0, std::nullopt, 80, 10, 10, 2, 100));
        t.push_back(formula("venturi mask", 35.0, 4.0, 8.0, 26, 2.5, 4, inf, 55));
        t.push_back(fixed("trach mask", 30));
        t.push_back(fixed("cpap", 40));
        t.push_back(fixed("bipap", 40));
        t.push_back(fixed("tracheostomy", 40));
        t.push_back(fixed("ventilator", 40));
        t.push_back(fixed("bag valve mask", 100));
        t.push_back(fixed("t-piece", 40));
        t.push_back(fixed("transtracheal catheter", 40));
        t.push_back(fixed("blow-by", 25));
        t.push_back(fixed("partial rebreather mask", 35));
        t.push_back(fixed("face tent", 25));
        t.push_back(fixed("oxyimiser", 40));
        t.push_back(fixed("oscillator", 80));
        t.push_back(fixed("oxyhood", 35));
        t.push_back(fixed("room air", 21));
        t.push_back(fixed("none", 21));
        return t;
    }();
    return table;
}

inline const OxygenDevice* find_oxygen_device(const std::string& lowercase_name) {
    for (const auto& d : oxygen_device_table())
        if (d.name == lowercase_name) return &d;
    return nullptr;
}

// FiO2 percent in [21, 100], or nullopt when no FiO2 is derivable. A direct
// measurement wins; otherwise the device formula runs on the flow clamped into
// the device's imputation limits and the result is capped at the device max.
// No device and no flow is room air. Unknown devices yield nothing rather than
// an invented value.
inline std::optional<double> impute_fio2(const std::optional<std::string>& device,
                                         std::optional<double> flow_lpm,
                                         std::optional<double> direct_fio2) {
    if (flow_lpm) {
        require(std::isfinite(*flow_lpm) && *flow_lpm >= 0.0,
                "impute_fio2: flow must be nonnegative and finite");
    }
    if (direct_fio2) return std::clamp(*direct_fio2, 21.0, 100.0);
    if (!device) {
        if (!flow_lpm) return 21.0;  // room air
        return std::nullopt;         // flow with no device context
    }
    const OxygenDevice* d = find_oxygen_device(*device);
    if (!d) return std::nullopt;
    if (flow_lpm && d->has_formula) {
        double flow = *flow_lpm;
        if (d->flow_min) flow = std::max(flow, *d->flow_min);
        if (d->flow_max) flow = std::min(flow, *d->flow_max);
        double value = d->base + d->slope * std::min(flow - d->pivot, d->term_cap);
        if (d->max_imputed) value = std::min(value, *d->max_imputed);
        return std::clamp(value, 21.0, 100.0);
    }
    if (d->default_fio2) return *d->default_fio2;
    return std::nullopt;
}

}  // namespace deepsofa
