#pragma once

#include <string>
#include <vector>

#include "deepsofa/eval.hpp"
#include "deepsofa/model.hpp"
#include "deepsofa/sofa.hpp"

namespace deepsofa {

inline HourlyPredictions predictions_deepsofa(const ModelParams& params, const ModelConfig& cfg,
                                              const std::vector<EncounterSeries>& cohort,
                                              unsigned threads = 1) {
    HourlyPredictions preds;
    preds.probs.resize(cohort.size());
    preds.labels.resize(cohort.size());
    parallel_for(
        cohort.size(),
        [&](std::size_t i) {
            auto traj = predict_trajectory(params, cfg, cohort[i]);
            preds.probs[i].assign(traj.probs.data(), traj.probs.data() + traj.probs.size());
            preds.labels[i] = cohort[i].label ? 1 : 0;
        },
        threads);
    return preds;
}

// Raw hourly SOFA totals used directly as the ranking statistic.
inline HourlyPredictions predictions_traditional_sofa(const std::vector<EncounterSeries>& cohort,
                                                      const SofaOptions& opts = {},
                                                      unsigned threads = 1) {
    HourlyPredictions preds;
    preds.probs.resize(cohort.size());
    preds.labels.resize(cohort.size());
    parallel_for(
        cohort.size(),
        [&](std::size_t i) {
            auto traj = sofa_trajectory(cohort[i], opts);
            preds.probs[i].reserve(traj.size());
            for (const auto& a : traj) preds.probs[i].push_back(static_cast<double>(a.total));
            preds.labels[i] = cohort[i].label ? 1 : 0;
        },
        threads);
    return preds;
}

// Published mortality-rate lookup applied to the hourly SOFA totals.
inline HourlyPredictions predictions_bedside_sofa(const std::vector<EncounterSeries>& cohort,
                                                  const BedsideTable& table,
                                                  const SofaOptions& opts = {},
                                                  unsigned threads = 1) {
    HourlyPredictions preds;
    preds.probs.resize(cohort.size());
    preds.labels.resize(cohort.size());
    parallel_for(
        cohort.size(),
        [&](std::size_t i) {
            auto traj = sofa_trajectory(cohort[i], opts);
            preds.probs[i].reserve(traj.size());
            for (const auto& a : traj)
                preds.probs[i].push_back(bedside_probability(a.total, table));
            preds.labels[i] = cohort[i].label ? 1 : 0;
        },
        threads);
    return preds;
}

inline HourlyPredictions predictions_logistic(const LogisticBaseline& baseline,
                                              const std::vector<EncounterSeries>& cohort,
                                              unsigned threads = 1) {
    HourlyPredictions preds;
    preds.probs.resize(cohort.size());
    preds.labels.resize(cohort.size());
    parallel_for(
        cohort.size(),
        [&](std::size_t i) {
            const auto& e = cohort[i];
            preds.probs[i].reserve(static_cast<std::size_t>(e.hours()));
            for (int h = 1; h <= e.hours(); ++h) preds.probs[i].push_back(baseline.predict(e, h));
            preds.labels[i] = e.label ? 1 : 0;
        },
        threads);
    return preds;
}

inline void write_curve_csv(const std::vector<AucPoint>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write curve csv: " + path);
    out.precision(12);
    out << "hour,auc,ci_lo,ci_hi,n_active,mortality_rate\n";
    for (const auto& p : curve)
        out << p.hour << "," << p.auc << "," << p.ci_lo << "," << p.ci_hi << "," << p.n_active
            << "," << p.mortality_rate_active << "\n";
}

inline void write_compare_csv(const CompareResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write compare csv: " + path);
    out.precision(12);
    out << "hour,auc_a,auc_b,diff,diff_ci_lo,diff_ci_hi,p_value\n";
    for (const auto& p : result.hourly)
        out << p.hour << "," << p.auc_a << "," << p.auc_b << "," << p.diff << "," << p.diff_lo
            << "," << p.diff_hi << "," << p.p_value << "\n";
    out << "mean," << result.mean_auc_a << "," << result.mean_auc_b << "," << result.mean_diff
        << "," << result.mean_diff_lo << "," << result.mean_diff_hi << "," << result.mean_p_value
        << "\n";
}

inline void write_stratified_csv(const std::vector<StratifiedPoint>& points,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write stratified csv: " + path);
    out.precision(12);
    out << "hour,survivor_mean,survivor_lo,survivor_hi,nonsurvivor_mean,nonsurvivor_lo,"
           "nonsurvivor_hi,n_active,mortality_rate\n";
    for (const auto& p : points)
        out << p.hour << "," << p.survivor_mean << "," << p.survivor_lo << "," << p.survivor_hi
            << "," << p.nonsurvivor_mean << "," << p.nonsurvivor_lo << "," << p.nonsurvivor_hi
            << "," << p.n_active << "," << p.mortality_rate_active << "\n";
}

}  // namespace deepsofa
