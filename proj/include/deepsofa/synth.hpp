#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "deepsofa/cohort.hpp"
#include "deepsofa/series.hpp"

namespace deepsofa {

// Synthetic cohort with a known, temporally structured mortality mechanism:
// smooth per-variable latents, a deterioration motif ramping over the final 24
// hours of affected stays, and survivor decoys with stable chronic
// abnormalities. The label is Bernoulli in a logistic function of motif
// intensity, so the recorded risk is the Bayes-optimal score.
struct SynthConfig {
    int n_encounters = 1000;
    uint64_t seed = 1;

    double stay_median_hours = 36.0;  // log-normal stay length
    double stay_log_sigma = 0.55;
    int min_stay_hours = 4;
    int max_stay_days = 30;

    double baseline_logit = -4.2;
    double motif_fraction = 0.30;
    double effect_weight = 12.0;  // hazard per unit motif intensity
    double noise_scale = 0.2;

    double decoy_fraction = 0.25;  // stable chronic abnormality, no added risk
    double restay_prob = 0.12;     // chance the same patient gets another stay

    double age_min_years = 21;
    double age_max_years = 89;
};

struct SynthTruth {
    std::string encounter_id;
    double risk = 0;       // Bernoulli parameter behind the label
    double intensity = 0;  // motif strength in [0, 1]; 0 for unaffected stays
    int label = 0;
};

struct SynthData {
    std::vector<RawEvent> events;
    std::map<std::string, Outcome> outcomes;
    std::vector<SynthTruth> truth;
};

namespace detail {

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

struct SynthEmitter {
    std::vector<RawEvent>* events;
    std::string encounter_id;
    std::string patient_id;

    void emit(Var v, long minute, double value) {
        RawEvent ev;
        ev.encounter_id = encounter_id;
        ev.patient_id = patient_id;
        ev.minutes = minute;
        ev.variable = var_names()[static_cast<std::size_t>(idx(v))];
        ev.value = round4(value);
        events->push_back(std::move(ev));
    }

    void emit_device(long minute, const std::string& device) {
        RawEvent ev;
        ev.encounter_id = encounter_id;
        ev.patient_id = patient_id;
        ev.minutes = minute;
        ev.variable = kO2DeviceVar;
        ev.text = device;
        events->push_back(std::move(ev));
    }

    void emit_flow(long minute, double lpm) {
        RawEvent ev;
        ev.encounter_id = encounter_id;
        ev.patient_id = patient_id;
        ev.minutes = minute;
        ev.variable = kO2FlowVar;
        ev.value = round4(lpm);
        events->push_back(std::move(ev));
    }
};

// AR(1)-style wander clamped into [lo, hi].
inline double wander(double v, double step_sd, double lo, double hi, Rng& rng) {
    return std::clamp(v + rng.normal(0.0, step_sd), lo, hi);
}

}  // namespace detail

inline SynthData generate_events(const SynthConfig& cfg) {
    require(cfg.n_encounters >= 2, "synth: need at least 2 encounters");
    require(cfg.motif_fraction >= 0 && cfg.motif_fraction <= 1, "synth: bad motif fraction");
    SynthData data;
    Rng master(cfg.seed);

    int patient_counter = 0;
    int pending_restays = 0;
    std::string patient_id;
    char buf[32];

    for (int enc = 0; enc < cfg.n_encounters; ++enc) {
        Rng rng = master.derive(static_cast<uint64_t>(enc));
        std::snprintf(buf, sizeof(buf), "e%06d", enc + 1);
        std::string encounter_id = buf;
        if (pending_restays > 0) {
            --pending_restays;
        } else {
            ++patient_counter;
            std::snprintf(buf, sizeof(buf), "p%06d", patient_counter);
            patient_id = buf;
            if (rng.bernoulli(cfg.restay_prob)) pending_restays = 1;
        }

        double mu = std::log(cfg.stay_median_hours);
        int T = static_cast<int>(std::lround(std::exp(rng.normal(mu, cfg.stay_log_sigma))));
        T = std::clamp(T, cfg.min_stay_hours, cfg.max_stay_days * 24);

        bool motif = rng.bernoulli(cfg.motif_fraction);
        double intensity = motif ? rng.uniform(0.3, 1.0) : 0.0;
        bool decoy = !motif && rng.bernoulli(cfg.decoy_fraction);

        double logit = cfg.baseline_logit + cfg.effect_weight * intensity +
                       cfg.noise_scale * rng.normal();
        double risk = sigmoid(logit);
        int label = rng.bernoulli(risk) ? 1 : 0;

        Outcome outcome;
        outcome.age_years = detail::round4(rng.uniform(cfg.age_min_years, cfg.age_max_years));
        outcome.died_in_hospital = label == 1 && !rng.bernoulli(0.08);
        outcome.hospice_death_within_7d = label == 1 && !outcome.died_in_hospital;
        data.outcomes[encounter_id] = outcome;
        data.truth.push_back({encounter_id, risk, intensity, label});

        detail::SynthEmitter em{&data.events, encounter_id, patient_id};
        auto jitter = [&rng](int h) { return static_cast<long>(h) * 60 + static_cast<long>(rng.uniform_int(60)); };

        // baselines; decoys carry stable chronic abnormalities that trip
        // threshold scores but carry no added mortality risk
        double map_base = decoy ? rng.uniform(64, 69) : rng.uniform(75, 92);
        double creat_base = decoy ? rng.uniform(1.8, 2.6) : rng.uniform(0.6, 1.2);
        double gcs_base = rng.bernoulli(0.85) ? 15 : 14;
        double pao2_base = rng.uniform(95, 130);
        double platelets_base = rng.uniform(150, 320);
        double bilirubin_base = rng.uniform(0.3, 1.0);
        double urine_base = rng.uniform(50, 90);

        // oxygen therapy track: room air, low-flow nasal cannula, or ventilator
        enum class O2Track { room_air, cannula, ventilator };
        O2Track track = O2Track::room_air;
        double o2_draw = rng.uniform01();
        if (intensity > 0.55 || o2_draw < 0.12)
            track = O2Track::ventilator;
        else if (o2_draw < 0.40)
            track = O2Track::cannula;

        bool pao2_present = rng.uniform01() > 0.35;
        bool bilirubin_present = rng.uniform01() > 0.50;
        bool platelets_present = rng.uniform01() > 0.05;
        bool creat_present = rng.uniform01() > 0.03;

        int ramp = std::min(24, T);  // deterioration spans the final day
        double map_depth = intensity * rng.uniform(22, 34);
        double creat_rise = intensity * rng.uniform(1.0, 2.4);
        double gcs_drop = intensity * rng.uniform(5, 9);
        double pao2_drop = intensity * rng.uniform(18, 38);
        double fio2_rise = intensity * rng.uniform(18, 32);
        double urine_fall = intensity * rng.uniform(0.4, 0.7);
        double nor_peak = intensity > 0.6 ? (intensity - 0.6) * rng.uniform(0.25, 0.4) : 0.0;

        double map_w = map_base, pao2_w = pao2_base, creat_w = creat_base;
        double plat_w = platelets_base, bili_w = bilirubin_base;

        for (int h = 0; h < T; ++h) {
            double progress =
                h >= T - ramp ? static_cast<double>(h - (T - ramp) + 1) / ramp : 0.0;

            map_w = detail::wander(map_w, 1.6, 45, 180, rng);
            double map_v = std::clamp(map_w - map_depth * progress, 35.0, 299.0);
            em.emit(Var::map, jitter(h), map_v);

            double urine_v =
                std::clamp(urine_base * (1.0 - urine_fall * progress) + rng.normal(0, 6), 0.0,
                           1090.0);
            em.emit(Var::urine, jitter(h), urine_v);

            double gcs_v = std::clamp(std::round(gcs_base - gcs_drop * progress), 3.0, 15.0);
            if (h % 3 == 0) em.emit(Var::gcs, jitter(h), gcs_v);

            pao2_w = detail::wander(pao2_w, 2.5, 60, 400, rng);
            double pao2_v = std::clamp(pao2_w - pao2_drop * progress, 40.0, 500.0);
            double fio2_target = 21.0;
            if (track == O2Track::cannula) fio2_target = rng.bernoulli(0.5) ? 29 : 33;
            if (track == O2Track::ventilator) fio2_target = 40.0;
            fio2_target = std::min(100.0, fio2_target + fio2_rise * progress);

            double spo2_v = std::clamp(
                85.0 + 13.0 * sigmoid((pao2_v - 60.0) / 12.0) + rng.normal(0, 0.7), 70.0, 100.0);
            em.emit(Var::spo2, jitter(h), spo2_v);
            if (pao2_present && h % 6 == 0) em.emit(Var::pao2, jitter(h), pao2_v);

            if (h == 0) {
                if (track == O2Track::room_air) em.emit_device(0, "room air");
                if (track == O2Track::cannula) em.emit_device(0, "nasal cannula");
                if (track == O2Track::ventilator) em.emit_device(0, "ventilator");
            }
            if (track == O2Track::cannula && h % 3 == 0) {
                double flow = std::clamp((fio2_target - 21.0) / 4.0, 0.5, 9.5);
                em.emit_flow(jitter(h), flow);
            }
            if (track == O2Track::ventilator) {
                if (h % 2 == 0) em.emit(Var::fio2, jitter(h), fio2_target);
                em.emit(Var::mv, jitter(h), 1.0);
            }

            creat_w = detail::wander(creat_w, 0.03, 0.3, 8, rng);
            double creat_v = std::clamp(creat_w + creat_rise * progress, 0.2, 29.0);
            if (creat_present && h % 12 == 0) em.emit(Var::creatinine, jitter(h), creat_v);

            plat_w = detail::wander(plat_w, 2.0, 20, 700, rng);
            double plat_v = std::clamp(plat_w * (1.0 - 0.25 * intensity * progress), 5.0, 831.0);
            if (platelets_present && h % 18 == 0) em.emit(Var::platelets, jitter(h), plat_v);

            bili_w = detail::wander(bili_w, 0.02, 0.2, 10, rng);
            double bili_v = std::clamp(bili_w + intensity * 1.5 * progress, 0.1, 49.0);
            if (bilirubin_present && h % 24 == 0) em.emit(Var::bilirubin, jitter(h), bili_v);

            if (nor_peak > 0 && progress > 0.5) {
                double dose = nor_peak * (progress - 0.5) * 2.0;
                em.emit(Var::norepinephrine, jitter(h), std::clamp(dose, 0.0, 14.0));
            }
        }
    }

    bool any_pos = false, any_neg = false;
    for (const auto& t : data.truth) (t.label ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg)
        throw std::runtime_error("synth: degenerate cohort with a single outcome class");
    return data;
}

// Runs the generated events through the full ingest pipeline, returning the
// cohort alongside the generating truth (matched by encounter order).
inline std::pair<std::vector<EncounterSeries>, std::vector<SynthTruth>> generate(
    const SynthConfig& cfg, const VariableTable& table) {
    SynthData data = generate_events(cfg);
    RejectionReport rejections;
    auto cohort = build_cohort(data.events, data.outcomes, table, rejections);
    std::map<std::string, const SynthTruth*> by_id;
    for (const auto& t : data.truth) by_id[t.encounter_id] = &t;
    std::vector<SynthTruth> truth;
    truth.reserve(cohort.size());
    for (const auto& e : cohort) truth.push_back(*by_id.at(e.encounter_id));
    return {std::move(cohort), std::move(truth)};
}

inline void write_events_csv(const std::vector<RawEvent>& events, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write events csv: " + path);
    out << "encounter_id,patient_id,minutes,variable,value\n";
    char buf[64];
    for (const auto& ev : events) {
        out << ev.encounter_id << "," << ev.patient_id << "," << ev.minutes << "," << ev.variable
            << ",";
        if (ev.is_device()) {
            out << ev.text;
        } else {
            std::snprintf(buf, sizeof(buf), "%.4f", ev.value);
            out << buf;
        }
        out << "\n";
    }
}

inline void write_outcomes_csv(const std::map<std::string, Outcome>& outcomes,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write outcomes csv: " + path);
    out << "encounter_id,age_years,died_in_hospital,hospice_death_within_7d\n";
    char buf[64];
    for (const auto& [id, o] : outcomes) {
        std::snprintf(buf, sizeof(buf), "%.4f", o.age_years);
        out << id << "," << buf << "," << (o.died_in_hospital ? 1 : 0) << ","
            << (o.hospice_death_within_7d ? 1 : 0) << "\n";
    }
}

inline void write_truth_csv(const std::vector<SynthTruth>& truth, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write truth csv: " + path);
    out.precision(12);
    out << "encounter_id,risk,intensity,label\n";
    for (const auto& t : truth)
        out << t.encounter_id << "," << t.risk << "," << t.intensity << "," << t.label << "\n";
}

}  // namespace deepsofa
