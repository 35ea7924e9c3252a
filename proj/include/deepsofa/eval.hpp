#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "deepsofa/numerics.hpp"
#include "deepsofa/series.hpp"

namespace deepsofa {

// Mann-Whitney AUC with midrank tie handling, computed via the rank formula:
//   AUC = (sum of positive ranks - P(P+1)/2) / (P * N)
// Throws on single-class input.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), "roc_auc: size mismatch");
    require(!scores.empty(), "roc_auc: empty input");
    long positives = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] == 0 || labels[i] == 1, "roc_auc: labels must be 0/1");
        require(std::isfinite(scores[i]), "roc_auc: nonfinite score");
        positives += labels[i];
    }
    long negatives = static_cast<long>(labels.size()) - positives;
    require(positives > 0 && negatives > 0, "roc_auc: undefined AUC for single-class input");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t r = i; r <= j; ++r)
            if (labels[order[r]] == 1) positive_rank_sum += midrank;
        i = j + 1;
    }
    double numerator =
        positive_rank_sum - static_cast<double>(positives) * (static_cast<double>(positives) + 1.0) / 2.0;
    return numerator / (static_cast<double>(positives) * static_cast<double>(negatives));
}

namespace detail {

// Resample indices with replacement; redraw when only one class comes up.
inline std::vector<std::size_t> bootstrap_indices(const std::vector<int>& labels, Rng& rng) {
    const std::size_t n = labels.size();
    std::vector<std::size_t> idx(n);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = static_cast<std::size_t>(rng.uniform_int(n));
            (labels[idx[i]] == 1 ? pos : neg) = true;
        }
        if (pos && neg) return idx;
    }
    throw std::runtime_error("bootstrap: could not draw a two-class resample");
}

// Percentile via linear interpolation on the sorted sample.
inline double percentile(std::vector<double> values, double q) {
    require(!values.empty(), "percentile: empty sample");
    std::sort(values.begin(), values.end());
    double pos = q * static_cast<double>(values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo + 1 >= values.size()) return values.back();
    double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[lo + 1] - values[lo]) * frac;
}

}  // namespace detail

// Percentile bootstrap 95% CI for the AUC. Iteration streams derive from the
// seed by index, so the result is independent of execution order.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                              const std::vector<int>& labels, int iterations,
                                              uint64_t seed) {
    roc_auc(scores, labels);  // validate inputs; propagate single-class errors
    Rng master(seed);
    std::vector<double> aucs(static_cast<std::size_t>(iterations));
    parallel_for(static_cast<std::size_t>(iterations), [&](std::size_t it) {
        Rng rng = master.derive(it);
        auto idx = detail::bootstrap_indices(labels, rng);
        std::vector<double> s(scores.size());
        std::vector<int> y(labels.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            s[i] = scores[idx[i]];
            y[i] = labels[idx[i]];
        }
        aucs[it] = roc_auc(s, y);
    });
    return {detail::percentile(aucs, 0.025), detail::percentile(aucs, 0.975)};
}

// Per-encounter hourly probability trajectories plus stay labels.
struct HourlyPredictions {
    std::vector<std::vector<double>> probs;  // probs[e][h-1], h = 1..T_e
    std::vector<int> labels;

    std::size_t size() const { return probs.size(); }
};

enum class Alignment { from_admission, to_discharge };

inline const char* to_string(Alignment a) {
    return a == Alignment::from_admission ? "from_admission" : "to_discharge";
}

inline Alignment alignment_from_string(const std::string& s) {
    if (s == "from_admission") return Alignment::from_admission;
    if (s == "to_discharge") return Alignment::to_discharge;
    throw std::invalid_argument("unknown alignment: " + s);
}

// from_admission position h >= 1: the hour-h prediction, carrying the final
// one forward for stays shorter than h. to_discharge position j >= 0: the
// prediction j hours before the end, floored at the first hour.
inline double score_at(const std::vector<double>& probs, int position, Alignment align) {
    int T = static_cast<int>(probs.size());
    int hour = align == Alignment::from_admission ? std::min(position, T)
                                                  : std::max(1, T - position);
    return probs[static_cast<std::size_t>(hour - 1)];
}

inline int positions_begin(Alignment align) { return align == Alignment::from_admission ? 1 : 0; }

struct AucPoint {
    int hour = 0;  // admission hour, or offset before discharge
    double auc = 0;
    double ci_lo = 0;
    double ci_hi = 0;
    int n_active = 0;               // encounters still in the ICU at this position
    double mortality_rate_active = 0;
};

// Hourly AUC curve with carry-forward: every encounter contributes a score at
// every position, while n_active counts only stays still in progress.
inline std::vector<AucPoint> hourly_curve(const HourlyPredictions& preds, Alignment align,
                                          int horizon, int iterations, uint64_t seed) {
    require(!preds.probs.empty(), "hourly_curve: no predictions");
    require(preds.probs.size() == preds.labels.size(), "hourly_curve: size mismatch");
    std::vector<AucPoint> curve;
    curve.reserve(static_cast<std::size_t>(horizon));
    Rng master(seed);
    int begin = positions_begin(align);
    for (int pos = begin; pos < begin + horizon; ++pos) {
        std::vector<double> scores(preds.size());
        int n_active = 0;
        long deaths_active = 0;
        for (std::size_t e = 0; e < preds.size(); ++e) {
            scores[e] = score_at(preds.probs[e], pos, align);
            int T = static_cast<int>(preds.probs[e].size());
            bool active = align == Alignment::from_admission ? T >= pos : T >= pos + 1;
            if (active) {
                ++n_active;
                deaths_active += preds.labels[e];
            }
        }
        AucPoint point;
        point.hour = pos;
        point.auc = roc_auc(scores, preds.labels);
        auto ci = bootstrap_ci(scores, preds.labels, iterations,
                               master.derive(static_cast<uint64_t>(pos)).next_u64());
        point.ci_lo = ci.first;
        point.ci_hi = ci.second;
        point.n_active = n_active;
        point.mortality_rate_active =
            n_active > 0 ? static_cast<double>(deaths_active) / n_active : 0.0;
        curve.push_back(point);
    }
    return curve;
}

struct StratifiedPoint {
    int hour = 0;
    double survivor_mean = 0, survivor_lo = 0, survivor_hi = 0;
    double nonsurvivor_mean = 0, nonsurvivor_lo = 0, nonsurvivor_hi = 0;
    int n_active = 0;
    double mortality_rate_active = 0;
};

namespace detail {

inline std::array<double, 3> mean_with_ci(const std::vector<double>& values, int iterations,
                                          Rng stream) {
    if (values.empty()) {
        double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan};
    }
    double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                  static_cast<double>(values.size());
    std::vector<double> means(static_cast<std::size_t>(iterations));
    for (int it = 0; it < iterations; ++it) {
        Rng rng = stream.derive(static_cast<uint64_t>(it));
        double sum = 0;
        for (std::size_t i = 0; i < values.size(); ++i)
            sum += values[static_cast<std::size_t>(rng.uniform_int(values.size()))];
        means[static_cast<std::size_t>(it)] = sum / static_cast<double>(values.size());
    }
    return {mean, percentile(means, 0.025), percentile(means, 0.975)};
}

}  // namespace detail

// Mean predicted probability per hour among active encounters, split by
// outcome, with bootstrap CIs of each mean.
inline std::vector<StratifiedPoint> stratified_mean_prob(const HourlyPredictions& preds,
                                                         Alignment align, int horizon,
                                                         int iterations, uint64_t seed) {
    require(preds.probs.size() == preds.labels.size(), "stratified_mean_prob: size mismatch");
    bool any_pos = std::find(preds.labels.begin(), preds.labels.end(), 1) != preds.labels.end();
    bool any_neg = std::find(preds.labels.begin(), preds.labels.end(), 0) != preds.labels.end();
    require(any_pos && any_neg, "stratified_mean_prob: both outcome classes required");
    Rng master(seed);
    std::vector<StratifiedPoint> out;
    int begin = positions_begin(align);
    for (int pos = begin; pos < begin + horizon; ++pos) {
        std::vector<double> surv, dead;
        int n_active = 0;
        for (std::size_t e = 0; e < preds.size(); ++e) {
            int T = static_cast<int>(preds.probs[e].size());
            bool active = align == Alignment::from_admission ? T >= pos : T >= pos + 1;
            if (!active) continue;
            ++n_active;
            (preds.labels[e] == 1 ? dead : surv).push_back(score_at(preds.probs[e], pos, align));
        }
        StratifiedPoint p;
        p.hour = pos;
        p.n_active = n_active;
        p.mortality_rate_active =
            n_active > 0 ? static_cast<double>(dead.size()) / n_active : 0.0;
        auto s = detail::mean_with_ci(surv, iterations,
                                      master.derive(static_cast<uint64_t>(pos) * 2));
        auto d = detail::mean_with_ci(dead, iterations,
                                      master.derive(static_cast<uint64_t>(pos) * 2 + 1));
        p.survivor_mean = s[0];
        p.survivor_lo = s[1];
        p.survivor_hi = s[2];
        p.nonsurvivor_mean = d[0];
        p.nonsurvivor_lo = d[1];
        p.nonsurvivor_hi = d[2];
        out.push_back(p);
    }
    return out;
}

struct ComparePoint {
    int hour = 0;
    double auc_a = 0, auc_b = 0;
    double diff = 0, diff_lo = 0, diff_hi = 0;
    double p_value = 1;
};

struct CompareResult {
    std::vector<ComparePoint> hourly;
    double mean_auc_a = 0, mean_auc_b = 0;
    double mean_diff = 0, mean_diff_lo = 0, mean_diff_hi = 0;
    double mean_p_value = 1;
};

namespace detail {

inline double sign_reversal_p(const std::vector<double>& diffs, double point_diff) {
    if (point_diff == 0) return 1.0;
    long reversals = 0;
    for (double d : diffs)
        if (d * point_diff < 0) ++reversals;
    double p = 2.0 * static_cast<double>(reversals) / static_cast<double>(diffs.size());
    return std::min(1.0, p);
}

}  // namespace detail

// Paired bootstrap comparison over the hourly curve: each iteration resamples
// encounters once and recomputes both models' AUCs at every position, plus
// the curve means. Two-sided p = doubled sign-reversal fraction, capped at 1.
inline CompareResult compare_models(const HourlyPredictions& preds_a,
                                    const HourlyPredictions& preds_b, Alignment align,
                                    int horizon, int iterations, uint64_t seed) {
    require(preds_a.size() == preds_b.size(), "compare_models: encounter sets differ");
    require(preds_a.labels == preds_b.labels, "compare_models: labels differ");
    for (std::size_t e = 0; e < preds_a.size(); ++e)
        require(preds_a.probs[e].size() == preds_b.probs[e].size(),
                "compare_models: stay lengths differ");

    const int begin = positions_begin(align);
    const std::size_t n = preds_a.size();
    CompareResult result;
    result.hourly.resize(static_cast<std::size_t>(horizon));

    // point estimates
    std::vector<std::vector<double>> scores_a(static_cast<std::size_t>(horizon)),
        scores_b(static_cast<std::size_t>(horizon));
    for (int h = 0; h < horizon; ++h) {
        int pos = begin + h;
        auto& sa = scores_a[static_cast<std::size_t>(h)];
        auto& sb = scores_b[static_cast<std::size_t>(h)];
        sa.resize(n);
        sb.resize(n);
        for (std::size_t e = 0; e < n; ++e) {
            sa[e] = score_at(preds_a.probs[e], pos, align);
            sb[e] = score_at(preds_b.probs[e], pos, align);
        }
        auto& point = result.hourly[static_cast<std::size_t>(h)];
        point.hour = pos;
        point.auc_a = roc_auc(sa, preds_a.labels);
        point.auc_b = roc_auc(sb, preds_b.labels);
        point.diff = point.auc_a - point.auc_b;
        result.mean_auc_a += point.auc_a;
        result.mean_auc_b += point.auc_b;
    }
    result.mean_auc_a /= horizon;
    result.mean_auc_b /= horizon;
    result.mean_diff = result.mean_auc_a - result.mean_auc_b;

    // shared resamples across hours
    Rng master(seed);
    std::vector<std::vector<double>> hour_diffs(static_cast<std::size_t>(horizon));
    for (auto& v : hour_diffs) v.resize(static_cast<std::size_t>(iterations));
    std::vector<double> mean_diffs(static_cast<std::size_t>(iterations));
    parallel_for(static_cast<std::size_t>(iterations), [&](std::size_t it) {
        Rng rng = master.derive(it);
        auto idx = detail::bootstrap_indices(preds_a.labels, rng);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = preds_a.labels[idx[i]];
        std::vector<double> sa(n), sb(n);
        double mean_a = 0, mean_b = 0;
        for (int h = 0; h < horizon; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                sa[i] = scores_a[static_cast<std::size_t>(h)][idx[i]];
                sb[i] = scores_b[static_cast<std::size_t>(h)][idx[i]];
            }
            double auc_a = roc_auc(sa, y);
            double auc_b = roc_auc(sb, y);
            hour_diffs[static_cast<std::size_t>(h)][it] = auc_a - auc_b;
            mean_a += auc_a;
            mean_b += auc_b;
        }
        mean_diffs[it] = (mean_a - mean_b) / horizon;
    });

    for (int h = 0; h < horizon; ++h) {
        auto& point = result.hourly[static_cast<std::size_t>(h)];
        const auto& diffs = hour_diffs[static_cast<std::size_t>(h)];
        point.diff_lo = detail::percentile(diffs, 0.025);
        point.diff_hi = detail::percentile(diffs, 0.975);
        point.p_value = detail::sign_reversal_p(diffs, point.diff);
    }
    result.mean_diff_lo = detail::percentile(mean_diffs, 0.025);
    result.mean_diff_hi = detail::percentile(mean_diffs, 0.975);
    result.mean_p_value = detail::sign_reversal_p(mean_diffs, result.mean_diff);
    return result;
}

inline constexpr int kAggregateFeatureCount = 6 * kNumVars;  // 84

// Expanding-window summary of each variable over hours [0, hour): min, max,
// mean, population stdev, first, last. Feeds the regression baseline.
inline std::array<double, kAggregateFeatureCount> aggregate_features(const EncounterSeries& series,
                                                                     int hour) {
    require(hour >= 1 && hour <= series.hours(), "aggregate_features: hour out of range");
    std::array<double, kAggregateFeatureCount> out{};
    for (int v = 0; v < kNumVars; ++v) {
        auto col = series.grid.col(v).segment(0, hour);
        double mn = col.minCoeff();
        double mx = col.maxCoeff();
        double mean = col.mean();
        double var = (col.array() - mean).square().sum() / static_cast<double>(hour);
        std::size_t base = static_cast<std::size_t>(v) * 6;
        out[base + 0] = mn;
        out[base + 1] = mx;
        out[base + 2] = mean;
        out[base + 3] = std::sqrt(var);
        out[base + 4] = col[0];
        out[base + 5] = col[hour - 1];
    }
    return out;
}

// Logistic-regression baseline on the 84 aggregate features, trained on
// whole-stay features with Adam on cross-entropy; evaluated hourly with the
// expanding window.
class LogisticBaseline {
public:
    static LogisticBaseline fit(const std::vector<EncounterSeries>& cohort, int epochs = 300,
                                double lr = 0.05, double l2 = 1e-6, uint64_t seed = 1) {
        require(!cohort.empty(), "LogisticBaseline::fit: empty cohort");
        const int n = static_cast<int>(cohort.size());
        Mat X(n, kAggregateFeatureCount);
        Vec y(n);
        for (int i = 0; i < n; ++i) {
            auto f = aggregate_features(cohort[static_cast<std::size_t>(i)],
                                        cohort[static_cast<std::size_t>(i)].hours());
            for (int j = 0; j < kAggregateFeatureCount; ++j) X(i, j) = f[static_cast<std::size_t>(j)];
            y[i] = cohort[static_cast<std::size_t>(i)].label ? 1.0 : 0.0;
        }
        LogisticBaseline lb;
        lb.mean_ = X.colwise().mean().transpose();
        Vec var = ((X.rowwise() - lb.mean_.transpose()).array().square().colwise().sum() /
                   static_cast<double>(n))
                      .transpose();
        lb.stdev_ = var.array().sqrt().max(1e-8).matrix();
        Mat Z = (X.rowwise() - lb.mean_.transpose()).array().rowwise() /
                lb.stdev_.transpose().array();

        Mat w = Mat::Zero(kAggregateFeatureCount, 1);
        Mat b = Mat::Zero(1, 1);
        std::vector<Mat*> params = {&w, &b};
        AdamState<double> adam = AdamState<double>::like(params);
        adam.learning_rate = lr;
        adam.l2_lambda = l2;
        (void)seed;  // init is zero; kept for interface stability
        for (int epoch = 0; epoch < epochs; ++epoch) {
            Vec logits = Z * w.col(0);
            logits.array() += b(0, 0);
            Vec p = logits.unaryExpr([](double v) { return sigmoid(v); });
            Vec err = (p - y) / static_cast<double>(n);
            Mat gw = (Z.transpose() * err);
            Mat gb(1, 1);
            gb(0, 0) = err.sum();
            std::vector<Mat> grads_v;
            grads_v.push_back(gw);
            grads_v.push_back(gb);
            adam_step(params, mat_ptrs(grads_v), adam);
        }
        lb.weights_ = w.col(0);
        lb.bias_ = b(0, 0);
        return lb;
    }

    double predict(const EncounterSeries& series, int hour) const {
        auto f = aggregate_features(series, hour);
        double z = bias_;
        for (int j = 0; j < kAggregateFeatureCount; ++j)
            z += weights_[j] * (f[static_cast<std::size_t>(j)] - mean_[j]) / stdev_[j];
        return sigmoid(z);
    }

private:
    Vec weights_;
    double bias_ = 0;
    Vec mean_, stdev_;
};

}  // namespace deepsofa
