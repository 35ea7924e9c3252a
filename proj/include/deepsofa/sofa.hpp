#pragma once

#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepsofa/series.hpp"

namespace deepsofa {

// PaO2/FiO2 ratio with FiO2 given in percent.
inline double pf_ratio(double pao2_mmhg, double fio2_pct) {
    return 100.0 * pao2_mmhg / fio2_pct;
}

// Linear SpO2-based fallback (Rice et al., Chest 2007): S/F = 64 + 0.84 * P/F,
// inverted to estimate P/F when PaO2 was never measured. Replaceable via
// SofaOptions for sites preferring a different conversion.
inline double pf_from_spo2(double spo2_pct, double fio2_pct) {
    double sf = 100.0 * spo2_pct / fio2_pct;
    return std::max(0.0, (sf - 64.0) / 0.84);
}

struct SofaOptions {
    int window_hours = 24;
    // conversion(spo2_pct, fio2_pct) -> estimated P/F
    std::function<double(double, double)> spo2_conversion = pf_from_spo2;
};

// Trailing-window worst values feeding the component rules. pf_ratio_min is
// absent when neither PaO2 nor SpO2 had any measurement up to each hour of the
// window (normal-imputed oxygen carries no evidence of respiratory failure).
struct WindowAggregate {
    double map_min = 0;
    double gcs_min = 0;
    double platelets_min = 0;
    double bilirubin_max = 0;
    double creatinine_max = 0;
    double dopamine_max = 0;
    double dobutamine_max = 0;
    double epinephrine_max = 0;
    double norepinephrine_max = 0;
    std::optional<double> pf_ratio_min;
    double urine_sum_ml = 0;
    bool mv_any = false;
    int window_hours = 0;  // actual width, shorter near admission
};

struct SofaAssessment {
    int cardio = 0;
    int resp = 0;
    int cns = 0;
    int coag = 0;
    int liver = 0;
    int renal = 0;
    int total = 0;
    int hour = 0;
};

// Aggregates grid hours [max(0, hour - window), hour). `hour` is 1-based.
inline WindowAggregate window_aggregate(const EncounterSeries& series, int hour,
                                        const SofaOptions& opts = {}) {
    require(hour >= 1 && hour <= series.hours(), "window_aggregate: hour out of range");
    int lo = std::max(0, hour - opts.window_hours);
    WindowAggregate agg;
    agg.window_hours = hour - lo;

    agg.map_min = series.grid.col(idx(Var::map)).segment(lo, hour - lo).minCoeff();
    agg.gcs_min = series.grid.col(idx(Var::gcs)).segment(lo, hour - lo).minCoeff();
    agg.platelets_min = series.grid.col(idx(Var::platelets)).segment(lo, hour - lo).minCoeff();
    agg.bilirubin_max = series.grid.col(idx(Var::bilirubin)).segment(lo, hour - lo).maxCoeff();
    agg.creatinine_max = series.grid.col(idx(Var::creatinine)).segment(lo, hour - lo).maxCoeff();
    agg.dopamine_max = series.grid.col(idx(Var::dopamine)).segment(lo, hour - lo).maxCoeff();
    agg.dobutamine_max = series.grid.col(idx(Var::dobutamine)).segment(lo, hour - lo).maxCoeff();
    agg.epinephrine_max = series.grid.col(idx(Var::epinephrine)).segment(lo, hour - lo).maxCoeff();
    agg.norepinephrine_max =
        series.grid.col(idx(Var::norepinephrine)).segment(lo, hour - lo).maxCoeff();
    agg.urine_sum_ml = series.grid.col(idx(Var::urine)).segment(lo, hour - lo).sum();

    bool pao2_seen = false;  // any real PaO2 measurement at or before the current row
    bool spo2_seen = false;
    for (int h = 0; h < lo; ++h) {
        pao2_seen = pao2_seen || series.observed(h, idx(Var::pao2));
        spo2_seen = spo2_seen || series.observed(h, idx(Var::spo2));
    }
    for (int h = lo; h < hour; ++h) {
        pao2_seen = pao2_seen || series.observed(h, idx(Var::pao2));
        spo2_seen = spo2_seen || series.observed(h, idx(Var::spo2));
        if (series.grid(h, idx(Var::mv)) >= 0.5) agg.mv_any = true;
        double fio2 = series.grid(h, idx(Var::fio2));
        std::optional<double> ratio;
        if (pao2_seen) {
            ratio = pf_ratio(series.grid(h, idx(Var::pao2)), fio2);
        } else if (spo2_seen) {
            ratio = opts.spo2_conversion(series.grid(h, idx(Var::spo2)), fio2);
        }
        if (ratio && (!agg.pf_ratio_min || *ratio < *agg.pf_ratio_min)) agg.pf_ratio_min = *ratio;
    }
    return agg;
}

// Component rules, highest score first, first match wins. The printed rule
// table is inconsistent for cardio score 3 and the renal creatinine ladder;
// this follows the standard SOFA thresholds.
inline SofaAssessment component_scores(const WindowAggregate& agg) {
    SofaAssessment a;

    double dop = agg.dopamine_max, dob = agg.dobutamine_max;
    double epi = agg.epinephrine_max, nor = agg.norepinephrine_max;
    if (dop > 15 || epi > 0.1 || nor > 0.1)
        a.cardio = 4;
    else if (dop > 5 || epi > 0 || nor > 0)
        a.cardio = 3;
    else if (dop > 0 || dob > 0)
        a.cardio = 2;
    else if (agg.map_min < 70)
        a.cardio = 1;

    if (agg.pf_ratio_min) {
        double pf = *agg.pf_ratio_min;
        if (pf < 100 && agg.mv_any)
            a.resp = 4;
        else if (pf < 200 && agg.mv_any)
            a.resp = 3;
        else if (pf < 300)
            a.resp = 2;
        else if (pf < 400)
            a.resp = 1;
    }

    double gcs = agg.gcs_min;
    if (gcs < 6)
        a.cns = 4;
    else if (gcs < 10)
        a.cns = 3;
    else if (gcs < 13)
        a.cns = 2;
    else if (gcs < 15)
        a.cns = 1;

    double plt = agg.platelets_min;
    if (plt < 20)
        a.coag = 4;
    else if (plt < 50)
        a.coag = 3;
    else if (plt < 100)
        a.coag = 2;
    else if (plt < 150)
        a.coag = 1;

    double bili = agg.bilirubin_max;
    if (bili > 12)
        a.liver = 4;
    else if (bili >= 6)
        a.liver = 3;
    else if (bili >= 2)
        a.liver = 2;
    else if (bili >= 1.2)
        a.liver = 1;

    // Urine criteria need a full window; partial windows near admission would
    // spuriously read as oliguria.
    double cre = agg.creatinine_max;
    bool full_window = agg.window_hours == 24;
    if (cre > 5 || (full_window && agg.urine_sum_ml < 200))
        a.renal = 4;
    else if (cre >= 3.5 || (full_window && agg.urine_sum_ml < 500))
        a.renal = 3;
    else if (cre >= 2)
        a.renal = 2;
    else if (cre >= 1.2)
        a.renal = 1;

    a.total = a.cardio + a.resp + a.cns + a.coag + a.liver + a.renal;
    return a;
}

inline std::vector<SofaAssessment> sofa_trajectory(const EncounterSeries& series,
                                                   const SofaOptions& opts = {}) {
    std::vector<SofaAssessment> out;
    out.reserve(static_cast<std::size_t>(series.hours()));
    for (int hour = 1; hour <= series.hours(); ++hour) {
        SofaAssessment a = component_scores(window_aggregate(series, hour, opts));
        a.hour = hour;
        out.push_back(a);
    }
    return out;
}

// Published score-to-mortality lookup for the bedside baseline. Bands must
// partition 0..24 with nondecreasing rates.
struct BedsideBand {
    int lo = 0;
    int hi = 0;
    double rate = 0;
};

struct BedsideTable {
    std::vector<BedsideBand> bands;

    void validate() const {
        require(!bands.empty(), "bedside table: empty");
        int expect = 0;
        double prev_rate = -1;
        for (const auto& b : bands) {
            require(b.lo == expect, "bedside table: bands must partition 0..24 in order");
            require(b.hi >= b.lo, "bedside table: band hi below lo");
            require(b.rate >= 0 && b.rate <= 1, "bedside table: rate outside [0,1]");
            require(b.rate >= prev_rate, "bedside table: rates must be nondecreasing");
            prev_rate = b.rate;
            expect = b.hi + 1;
        }
        require(expect == 25, "bedside table: bands must cover scores 0..24");
    }
};

inline double bedside_probability(int total, const BedsideTable& table) {
    require(total >= 0 && total <= 24, "bedside_probability: total outside 0..24");
    for (const auto& b : table.bands)
        if (total >= b.lo && total <= b.hi) return b.rate;
    throw std::logic_error("bedside_probability: score not covered");
}

// Text file of `lo,hi,rate` lines; '#' comments allowed.
inline BedsideTable load_bedside_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open bedside table: " + path);
    BedsideTable table;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        auto fields = detail::split_csv_row(s);
        require(fields.size() == 3,
                path + ":" + std::to_string(line_no) + ": expected lo,hi,rate");
        BedsideBand b;
        auto lo = detail::parse_integer(fields[0]);
        auto hi = detail::parse_integer(fields[1]);
        auto rate = detail::parse_number(fields[2]);
        require(lo && hi && rate, path + ":" + std::to_string(line_no) + ": bad band");
        b.lo = static_cast<int>(*lo);
        b.hi = static_cast<int>(*hi);
        b.rate = *rate;
        table.bands.push_back(b);
    }
    table.validate();
    return table;
}

}  // namespace deepsofa
