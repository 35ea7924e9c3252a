#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepsofa/events.hpp"
#include "deepsofa/fio2.hpp"
#include "deepsofa/variables.hpp"

namespace deepsofa {

using MaskMat = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Hourly T x 14 grid for one ICU stay. Hour bucket h spans minutes
// [60h, 60(h+1)); boundary events belong to the later bucket.
struct EncounterSeries {
    std::string encounter_id;
    std::string patient_id;
    int icu_stay_index = 1;
    double age_years = 0;
    bool label = false;  // in-hospital death, hospice-within-7d folded in
    Mat grid;            // T x 14, hour means after fill rules
    MaskMat observed;    // true where a real measurement fell in that hour

    int hours() const { return static_cast<int>(grid.rows()); }

    bool any_observed(Var v) const {
        return observed.col(idx(v)).template cast<int>().sum() > 0;
    }
};

struct FilterResult {
    std::vector<RawEvent> events;
    RejectionReport rejections;
};

// Drops events outside the per-variable non-outlier ranges, honoring the
// open/closed bounds of each spec. Device events pass through untouched.
inline FilterResult filter_outliers(const std::vector<RawEvent>& events,
                                    const VariableTable& table) {
    FilterResult out;
    out.events.reserve(events.size());
    for (const auto& ev : events) {
        if (ev.is_device()) {
            out.events.push_back(ev);
            continue;
        }
        const VariableSpec* spec = nullptr;
        if (ev.is_flow()) {
            spec = &table.o2_flow;
        } else {
            auto v = var_from_name(ev.variable);
            require(v.has_value(), "filter_outliers: no spec for variable " + ev.variable);
            spec = &table.spec(*v);
        }
        if (spec->in_range(ev.value)) {
            out.events.push_back(ev);
        } else {
            out.rejections.add(0, "outlier",
                               ev.encounter_id + ":" + ev.variable + "=" +
                                   std::to_string(ev.value) + " outside " + spec->range_text());
        }
    }
    return out;
}

// Replaces o2_device / o2_flow_lpm events with synthesized fio2 events.
// Device and flow are treated as state carried forward in time; a device
// change resets the flow until a new reading arrives. Direct fio2 rows pass
// through and suppress synthesis at the same minute. Events must be for one
// encounter.
inline std::vector<RawEvent> impute_fio2_events(const std::vector<RawEvent>& events) {
    std::vector<const RawEvent*> ordered;
    ordered.reserve(events.size());
    for (const auto& ev : events) ordered.push_back(&ev);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const RawEvent* a, const RawEvent* b) { return a->minutes < b->minutes; });

    std::vector<RawEvent> out;
    out.reserve(events.size());
    std::optional<std::string> device;
    std::optional<double> flow;

    std::size_t i = 0;
    while (i < ordered.size()) {
        long minute = ordered[i]->minutes;
        bool state_touched = false;
        bool direct_seen = false;
        const RawEvent* representative = ordered[i];
        for (; i < ordered.size() && ordered[i]->minutes == minute; ++i) {
            const RawEvent& ev = *ordered[i];
            if (ev.is_device()) {
                if (!device || *device != ev.text) flow.reset();
                device = ev.text;
                state_touched = true;
            } else if (ev.is_flow()) {
                flow = ev.value;
                state_touched = true;
            } else {
                if (ev.variable == var_names()[static_cast<std::size_t>(idx(Var::fio2))])
                    direct_seen = true;
                out.push_back(ev);
            }
        }
        if (state_touched && !direct_seen) {
            if (auto imputed = impute_fio2(device, flow, std::nullopt)) {
                RawEvent synth;
                synth.encounter_id = representative->encounter_id;
                synth.patient_id = representative->patient_id;
                synth.minutes = minute;
                synth.variable = var_names()[static_cast<std::size_t>(idx(Var::fio2))];
                synth.value = *imputed;
                out.push_back(std::move(synth));
            }
        }
    }
    return out;
}

// Hourly resampling for one encounter: bucket means, then forward fill for
// vitals/labs (normal value before the first observation) and zero fill for
// vasopressors and MV. Pre-ICU events (negative minutes) are dropped first.
inline EncounterSeries build_series(const std::vector<RawEvent>& events,
                                    const VariableTable& table, const Outcome& outcome,
                                    const std::string& encounter_id,
                                    const std::string& patient_id, int icu_stay_index,
                                    RejectionReport* rejections = nullptr) {
    long max_minute = -1;
    for (const auto& ev : events) {
        if (ev.is_device() || ev.is_flow()) continue;  // consumed upstream, ignore here
        if (ev.minutes < 0) {
            if (rejections)
                rejections->add(0, "pre_icu", encounter_id + ":" + ev.variable + "@" +
                                                  std::to_string(ev.minutes));
            continue;
        }
        max_minute = std::max(max_minute, ev.minutes);
    }
    if (max_minute < 0) throw std::runtime_error("empty encounter: " + encounter_id);

    int T = static_cast<int>(max_minute / 60) + 1;
    Mat sum = Mat::Zero(T, kNumVars);
    MatX<int> count = MatX<int>::Zero(T, kNumVars);
    for (const auto& ev : events) {
        if (ev.is_device() || ev.is_flow() || ev.minutes < 0) continue;
        auto v = var_from_name(ev.variable);
        if (!v) continue;
        int h = static_cast<int>(ev.minutes / 60);
        sum(h, idx(*v)) += ev.value;
        count(h, idx(*v)) += 1;
    }

    EncounterSeries series;
    series.encounter_id = encounter_id;
    series.patient_id = patient_id;
    series.icu_stay_index = icu_stay_index;
    series.age_years = outcome.age_years;
    series.label = outcome.label();
    series.grid = Mat::Zero(T, kNumVars);
    series.observed = MaskMat::Zero(T, kNumVars);

    for (int v = 0; v < kNumVars; ++v) {
        const VariableSpec& spec = table.specs[static_cast<std::size_t>(v)];
        double carried = spec.normal_value;
        for (int h = 0; h < T; ++h) {
            if (count(h, v) > 0) {
                double mean = sum(h, v) / count(h, v);
                series.grid(h, v) = mean;
                series.observed(h, v) = 1;
                carried = mean;
            } else if (spec.fill_rule == FillRule::forward_fill) {
                series.grid(h, v) = carried;
            } else {
                series.grid(h, v) = 0.0;
            }
        }
    }
    return series;
}

namespace detail {

struct EncounterBucket {
    std::string encounter_id;
    std::string patient_id;
    int stay_index = 1;
    std::vector<RawEvent> events;
};

// Groups events by encounter. Stay order within a patient follows first
// appearance in the event stream.
inline std::vector<EncounterBucket> group_by_encounter(const std::vector<RawEvent>& events) {
    std::vector<EncounterBucket> buckets;
    std::map<std::string, std::size_t> by_id;
    std::map<std::string, int> stays_seen;
    for (const auto& ev : events) {
        auto it = by_id.find(ev.encounter_id);
        if (it == by_id.end()) {
            EncounterBucket b;
            b.encounter_id = ev.encounter_id;
            b.patient_id = ev.patient_id;
            b.stay_index = ++stays_seen[ev.patient_id];
            by_id.emplace(ev.encounter_id, buckets.size());
            buckets.push_back(std::move(b));
            it = by_id.find(ev.encounter_id);
        }
        buckets[it->second].events.push_back(ev);
    }
    return buckets;
}

}  // namespace detail

// Full ingest for a parsed event stream: outlier filter, FiO2 imputation,
// hourly series per encounter. Output is sorted by encounter_id. Encounters
// without an outcome row are rejected, not fatal.
inline std::vector<EncounterSeries> build_cohort(const std::vector<RawEvent>& events,
                                                 const std::map<std::string, Outcome>& outcomes,
                                                 const VariableTable& table,
                                                 RejectionReport& rejections) {
    auto filtered = filter_outliers(events, table);
    for (auto& r : filtered.rejections.items) rejections.items.push_back(std::move(r));

    auto buckets = detail::group_by_encounter(filtered.events);
    std::vector<EncounterSeries> cohort;
    cohort.reserve(buckets.size());
    for (const auto& bucket : buckets) {
        auto it = outcomes.find(bucket.encounter_id);
        if (it == outcomes.end()) {
            rejections.add(0, "missing_outcome", bucket.encounter_id);
            continue;
        }
        auto imputed = impute_fio2_events(bucket.events);
        try {
            cohort.push_back(build_series(imputed, table, it->second, bucket.encounter_id,
                                          bucket.patient_id, bucket.stay_index, &rejections));
        } catch (const std::runtime_error&) {
            rejections.add(0, "empty_encounter", bucket.encounter_id);
        }
    }
    std::sort(cohort.begin(), cohort.end(),
              [](const EncounterSeries& a, const EncounterSeries& b) {
                  return a.encounter_id < b.encounter_id;
              });
    return cohort;
}

}  // namespace deepsofa
