// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs the full synthetic end-to-end benchmark, so expect minutes.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "deepsofa/checkpoint.hpp"
#include "deepsofa/pipeline.hpp"
#include "deepsofa/synth.hpp"
#include "deepsofa/train.hpp"

#include "../support/sofa_oracle.hpp"

using namespace deepsofa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

unsigned g_threads = 2;

struct CheckResult {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------- criterion 1
CheckResult sofa_rule_oracle() {
    WindowAggregate base;
    base.map_min = 80;
    base.gcs_min = 15;
    base.platelets_min = 200;
    base.bilirubin_max = 0.6;
    base.creatinine_max = 0.9;
    base.pf_ratio_min = 476.0;
    base.urine_sum_ml = 1440;
    base.mv_any = false;
    base.window_hours = 24;

    long checks = 0, mismatches = 0;
    for (double map : sofa_oracle::map_probes())
        for (double dop : sofa_oracle::dopamine_probes())
            for (double dob : sofa_oracle::dobutamine_probes())
                for (double epi : sofa_oracle::epi_nor_probes())
                    for (double nor : sofa_oracle::epi_nor_probes()) {
                        auto agg = base;
                        agg.map_min = map;
                        agg.dopamine_max = dop;
                        agg.dobutamine_max = dob;
                        agg.epinephrine_max = epi;
                        agg.norepinephrine_max = nor;
                        ++checks;
                        if (component_scores(agg).cardio !=
                            sofa_oracle::cardio(map, dop, dob, epi, nor))
                            ++mismatches;
                    }
    for (double pf : sofa_oracle::pf_probes())
        for (bool mv : {false, true}) {
            auto agg = base;
            agg.pf_ratio_min = pf;
            agg.mv_any = mv;
            ++checks;
            if (component_scores(agg).resp != sofa_oracle::resp(pf, mv)) ++mismatches;
        }
    {
        auto agg = base;
        agg.pf_ratio_min.reset();
        agg.mv_any = true;
        ++checks;
        if (component_scores(agg).resp != sofa_oracle::resp(std::nullopt, true)) ++mismatches;
    }
    for (double gcs : sofa_oracle::gcs_probes()) {
        auto agg = base;
        agg.gcs_min = gcs;
        ++checks;
        if (component_scores(agg).cns != sofa_oracle::cns(gcs)) ++mismatches;
    }
    for (double plt : sofa_oracle::platelet_probes()) {
        auto agg = base;
        agg.platelets_min = plt;
        ++checks;
        if (component_scores(agg).coag != sofa_oracle::coag(plt)) ++mismatches;
    }
    for (double bili : sofa_oracle::bilirubin_probes()) {
        auto agg = base;
        agg.bilirubin_max = bili;
        ++checks;
        if (component_scores(agg).liver != sofa_oracle::liver(bili)) ++mismatches;
    }
    for (double cre : sofa_oracle::creatinine_probes())
        for (double urine : sofa_oracle::urine_probes())
            for (int window : {24, 23, 12, 1}) {
                auto agg = base;
                agg.creatinine_max = cre;
                agg.urine_sum_ml = urine;
                agg.window_hours = window;
                ++checks;
                if (component_scores(agg).renal != sofa_oracle::renal(cre, urine, window))
                    ++mismatches;
            }

    std::ostringstream os;
    os << checks << " grid points, " << mismatches << " mismatches";
    return {mismatches == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 2
// Literal transcription of the published device table, one branch per row.
std::optional<double> fio2_table_oracle(const std::string& device, std::optional<double> flow) {
    auto capped = [](double v, double cap) { return v > cap ? cap : v; };
    if (device == "aerosol mask") {
        if (!flow) return 35.0;
        double x = std::max(*flow, 0.0);
        return capped(21.0 + x * 4.0, 60.0);
    }
    if (device == "nasal cannula") {
        if (!flow) return std::nullopt;
        double x = std::max(*flow, 0.0);
        return capped(21.0 + x * 4.0, 40.0);
    }
    if (device == "high flow nasal cannula") {
        if (!flow) return 50.0;
        double x = std::min(std::max(*flow, 6.0), 15.0);
        return capped(48.0 + (x - 6.0) * 2.0, 100.0);
    }
    if (device == "simple mask") {
        if (!flow) return std::nullopt;
        double x = std::min(std::max(*flow, 0.0), 19.0);
        return capped(21.0 + x * 4.0, 60.0);
    }
    if (device == "non-rebreather mask") {
        if (!flow) return 60.0;
        double x = std::max(*flow, 8.0);
        return capped(80.0 + std::min(x - 10.0, 2.0) * 10.0, 100.0);
    }
    if (device == "venturi mask") {
        if (!flow) return 35.0;
        double x = std::min(std::max(*flow, 4.0), 8.0);
        return capped(26.0 + (x - 4.0) * 2.5, 55.0);
    }
    static const std::vector<std::pair<std::string, double>> fixed = {
        {"trach mask", 30},      {"cpap", 40},
        {"bipap", 40},           {"tracheostomy", 40},
        {"ventilator", 40},      {"bag valve mask", 100},
        {"t-piece", 40},         {"transtracheal catheter", 40},
        {"blow-by", 25},         {"partial rebreather mask", 35},
        {"face tent", 25},       {"oxyimiser", 40},
        {"oscillator", 80},      {"oxyhood", 35},
        {"room air", 21},        {"none", 21}};
    for (const auto& [name, value] : fixed)
        if (name == device) return value;
    return std::nullopt;
}

CheckResult fio2_table() {
    long checks = 0, mismatches = 0;
    for (const auto& device : oxygen_device_table()) {
        double lo = device.flow_min.value_or(0.0);
        double hi = device.flow_max.value_or(lo + 20.0);
        std::vector<std::optional<double>> flows = {std::nullopt};
        for (double f : {lo - 1.0, lo, (lo + hi) / 2.0, hi, hi + 1.0})
            if (f >= 0.0) flows.push_back(f);
        for (const auto& flow : flows) {
            auto expected = fio2_table_oracle(device.name, flow);
            auto actual = impute_fio2(device.name, flow, std::nullopt);
            ++checks;
            bool same = expected.has_value() == actual.has_value() &&
                        (!expected || *expected == *actual);
            if (!same) {
                ++mismatches;
                std::fprintf(stderr, "  fio2 mismatch: %s flow=%s expected=%s got=%s\n",
                             device.name.c_str(),
                             flow ? std::to_string(*flow).c_str() : "none",
                             expected ? std::to_string(*expected).c_str() : "none",
                             actual ? std::to_string(*actual).c_str() : "none");
            }
        }
    }
    std::ostringstream os;
    os << checks << " device/flow cells, " << mismatches << " mismatches";
    return {mismatches == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 3
CheckResult gradient_check() {
    auto start = Clock::now();
    Rng rng(20240601);
    double worst = 0;
    int nets = 0;
    for (auto mode : {AttentionMode::self_attention, AttentionMode::global_attention}) {
        for (int rep = 0; rep < 11; ++rep) {
            int T = 2 + static_cast<int>(rng.uniform_int(7));
            int k = 2 + static_cast<int>(rng.uniform_int(7));
            int d = 2 + static_cast<int>(rng.uniform_int(13));
            ModelConfig cfg;
            cfg.input_dim = d;
            cfg.hidden_dim = k;
            cfg.dropout_p = 0;
            cfg.attention = mode;
            cfg.seed = 7000 + static_cast<uint64_t>(nets);
            auto params = init_params(cfg);
            std::vector<TrainingExample<double>> batch;
            int B = 1 + static_cast<int>(rng.uniform_int(2));
            for (int b = 0; b < B; ++b) {
                MatX<double> x(T, d);
                for (int t = 0; t < T; ++t)
                    for (int j = 0; j < d; ++j) x(t, j) = rng.uniform(-2, 2);
                batch.push_back({x, rng.bernoulli(0.5) ? 1 : 0});
            }
            auto analytic = gradients(params, cfg, batch, false, Rng(0));
            auto slots = params.param_ptrs();
            auto loss_fn = [&]() {
                double total = 0;
                for (const auto& ex : batch) {
                    auto traj = forward(params, cfg, ex.input);
                    total += sequence_loss(traj.probs, ex.label);
                }
                return total / static_cast<double>(batch.size());
            };
            auto numeric = finite_diff_grad<double>(loss_fn, slots, 1e-5);
            auto analytic_ptrs = analytic.param_ptrs();
            for (std::size_t i = 0; i < numeric.size(); ++i) {
                for (Eigen::Index r = 0; r < numeric[i].rows(); ++r)
                    for (Eigen::Index c = 0; c < numeric[i].cols(); ++c) {
                        double a = (*analytic_ptrs[i])(r, c);
                        double n = numeric[i](r, c);
                        double rel = std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-10);
                        worst = std::max(worst, rel);
                    }
            }
            ++nets;
        }
    }
    double elapsed = seconds_since(start);
    std::ostringstream os;
    os << nets << " nets, max relative error " << worst << ", " << elapsed << " s";
    return {nets >= 20 && worst < 1e-4 && elapsed < 60.0, os.str()};
}

// ---------------------------------------------------------------- criterion 4
CheckResult causality() {
    Rng rng(99);
    long violations = 0;
    for (int rep = 0; rep < 100; ++rep) {
        int T = 3 + static_cast<int>(rng.uniform_int(10));
        int k = 2 + static_cast<int>(rng.uniform_int(6));
        int d = 2 + static_cast<int>(rng.uniform_int(6));
        ModelConfig cfg;
        cfg.input_dim = d;
        cfg.hidden_dim = k;
        cfg.dropout_p = 0;
        cfg.attention = rep % 3 == 0   ? AttentionMode::global_attention
                        : rep % 3 == 1 ? AttentionMode::last_hidden
                                       : AttentionMode::self_attention;
        cfg.seed = 300 + static_cast<uint64_t>(rep);
        auto params = init_params(cfg);
        MatX<double> input(T, d);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < d; ++j) input(t, j) = rng.uniform(-2, 2);
        int cut = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(T - 1)));
        auto base = forward(params, cfg, input);
        MatX<double> perturbed = input;
        for (int t = cut; t < T; ++t)
            for (int j = 0; j < d; ++j) perturbed(t, j) += rng.uniform(-5, 5);
        auto out = forward(params, cfg, perturbed);
        for (int t = 0; t < cut; ++t)
            if (out.probs[t] != base.probs[t]) ++violations;
    }
    std::ostringstream os;
    os << "100 series, " << violations << " violations";
    return {violations == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 5
CheckResult attention_validity() {
    Rng rng(55);
    double worst_row_sum = 0, worst_copy_diff = 0;
    long upper_nonzero = 0;
    for (int rep = 0; rep < 30; ++rep) {
        int T = 2 + static_cast<int>(rng.uniform_int(11));  // T <= 12
        int k = 2 + static_cast<int>(rng.uniform_int(6));
        int d = 2 + static_cast<int>(rng.uniform_int(6));
        auto mode =
            rep % 2 == 0 ? AttentionMode::self_attention : AttentionMode::global_attention;
        ModelConfig cfg;
        cfg.input_dim = d;
        cfg.hidden_dim = k;
        cfg.dropout_p = 0;
        cfg.attention = mode;
        cfg.seed = 900 + static_cast<uint64_t>(rep);
        auto params = init_params(cfg);
        MatX<double> input(T, d);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < d; ++j) input(t, j) = rng.uniform(-2, 2);
        auto traj = forward(params, cfg, input);

        for (int t = 0; t < T; ++t) {
            double sum = 0;
            for (int i = 0; i <= t; ++i) sum += traj.attention(t, i);
            worst_row_sum = std::max(worst_row_sum, std::abs(sum - 1.0));
            for (int i = t + 1; i < T; ++i)
                if (traj.attention(t, i) != 0.0) ++upper_nonzero;
        }

        // sequence-copy reference: rebuild each prefix from scratch, full-length
        // softmax with -inf above the diagonal
        for (int t = 0; t < T; ++t) {
            std::vector<MatX<double>> hs;
            MatX<double> h = MatX<double>::Zero(k, 1);
            for (int u = 0; u <= t; ++u) {
                h = gru_step(params, MatX<double>(input.row(u).transpose()), h);
                hs.push_back(h);
            }
            VecX<double> logits =
                VecX<double>::Constant(T, -std::numeric_limits<double>::infinity());
            for (int i = 0; i <= t; ++i) {
                if (mode == AttentionMode::global_attention)
                    logits[i] = (params.W_att * hs[static_cast<std::size_t>(i)])(0, 0);
                else
                    logits[i] = (MatX<double>(params.W_q * hs.back()).transpose() *
                                 (params.W_k * hs[static_cast<std::size_t>(i)]))(0, 0);
            }
            double mx = logits.head(t + 1).maxCoeff();
            double denom = 0;
            VecX<double> weights(T);
            for (int i = 0; i < T; ++i) {
                weights[i] = std::exp(logits[i] - mx);
                denom += weights[i];
            }
            for (int i = 0; i < T; ++i)
                worst_copy_diff =
                    std::max(worst_copy_diff, std::abs(weights[i] / denom - traj.attention(t, i)));
        }
    }
    std::ostringstream os;
    os << "worst row-sum error " << worst_row_sum << ", upper-triangle nonzeros " << upper_nonzero
       << ", masked-vs-copy diff " << worst_copy_diff;
    return {worst_row_sum < 1e-9 && upper_nonzero == 0 && worst_copy_diff < 1e-10, os.str()};
}

// ---------------------------------------------------------------- criterion 6
double pair_count_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double numerator = 0;
    long P = 0, N = 0;
    for (int y : labels) (y == 1 ? P : N) += 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j])
                numerator += 1.0;
            else if (scores[i] == scores[j])
                numerator += 0.5;
        }
    }
    return numerator / (static_cast<double>(P) * static_cast<double>(N));
}

CheckResult auc_oracle() {
    Rng rng(606);
    long mismatches = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        int n = 2 + static_cast<int>(rng.uniform_int(199));
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool coarse = rng.bernoulli(0.5);  // force heavy ties half the time
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] =
                coarse ? static_cast<double>(rng.uniform_int(8)) : rng.uniform01();
            labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
        }
        labels[0] = 1;
        labels[static_cast<std::size_t>(n - 1)] = 0;
        if (roc_auc(scores, labels) != pair_count_auc(scores, labels)) ++mismatches;
    }
    std::ostringstream os;
    os << "1000 instances, " << mismatches << " mismatches";
    return {mismatches == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 7
// The strict-table half is a theorem (monotone transforms preserve ranks) and
// is checked exactly on every cohort and hour. The banded half holds when the
// within-band ordering of the raw score is concordant with the outcome; early
// noisy hours can reverse it, so the inequality is asserted on discriminative
// final-hour cohorts while an exact tie-redistribution identity is verified
// everywhere: banding moves each within-band cross-class pair to half credit.
CheckResult baseline_rank_property() {
    auto table = default_variable_table();
    BedsideTable strict;
    for (int s = 0; s <= 24; ++s) strict.bands.push_back({s, s, 0.005 + 0.04 * s});
    strict.validate();
    BedsideTable banded;
    banded.bands = {{0, 1, 0.03}, {2, 3, 0.06},   {4, 5, 0.2},  {6, 7, 0.21},
                    {8, 9, 0.33}, {10, 11, 0.50}, {12, 24, 0.95}};
    banded.validate();
    auto band_of = [&](int total) {
        for (std::size_t b = 0; b < banded.bands.size(); ++b)
            if (total >= banded.bands[b].lo && total <= banded.bands[b].hi)
                return static_cast<int>(b);
        return -1;
    };

    long strict_mismatches = 0, identity_mismatches = 0, inequality_failures = 0;
    auto exercise = [&](const std::vector<EncounterSeries>& cohort, int hour_pick,
                        bool check_inequality) {
        std::vector<double> totals;
        std::vector<int> labels;
        for (const auto& e : cohort) {
            auto traj = sofa_trajectory(e);
            int h = hour_pick == 0 ? e.hours() : std::min(hour_pick, e.hours());
            totals.push_back(static_cast<double>(traj[static_cast<std::size_t>(h - 1)].total));
            labels.push_back(e.label ? 1 : 0);
        }
        std::vector<double> strict_probs, banded_probs;
        for (double t : totals) {
            strict_probs.push_back(bedside_probability(static_cast<int>(t), strict));
            banded_probs.push_back(bedside_probability(static_cast<int>(t), banded));
        }
        double raw = roc_auc(totals, labels);
        double banded_auc = roc_auc(banded_probs, labels);
        if (roc_auc(strict_probs, labels) != raw) ++strict_mismatches;
        if (check_inequality && banded_auc > raw) ++inequality_failures;

        // pair-level identity: banded numerator = raw numerator minus the
        // within-band concordance excess over half credit (exact halves)
        double raw_num = 0, banded_num = 0, band_pairs = 0, band_concordant = 0;
        long P = 0, N = 0;
        for (int y : labels) (y == 1 ? P : N) += 1;
        for (std::size_t i = 0; i < totals.size(); ++i) {
            if (labels[i] != 1) continue;
            for (std::size_t j = 0; j < totals.size(); ++j) {
                if (labels[j] != 0) continue;
                raw_num += totals[i] > totals[j] ? 1.0 : (totals[i] == totals[j] ? 0.5 : 0.0);
                banded_num += banded_probs[i] > banded_probs[j]
                                  ? 1.0
                                  : (banded_probs[i] == banded_probs[j] ? 0.5 : 0.0);
                if (band_of(static_cast<int>(totals[i])) == band_of(static_cast<int>(totals[j]))) {
                    band_pairs += 1.0;
                    band_concordant +=
                        totals[i] > totals[j] ? 1.0 : (totals[i] == totals[j] ? 0.5 : 0.0);
                }
            }
        }
        if (banded_num != raw_num - (band_concordant - 0.5 * band_pairs)) ++identity_mismatches;
        double denom = static_cast<double>(P) * static_cast<double>(N);
        if (banded_auc != banded_num / denom) ++identity_mismatches;
    };

    for (uint64_t seed : {41ULL, 42ULL, 43ULL}) {
        SynthConfig cfg;
        cfg.n_encounters = 150;
        cfg.seed = seed;
        cfg.stay_median_hours = 20;
        auto [cohort, truth] = generate(cfg, table);
        for (int hour_pick : {1, 8, 0}) exercise(cohort, hour_pick, false);
    }
    for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL, 6ULL}) {
        SynthConfig cfg;
        cfg.n_encounters = 600;
        cfg.seed = seed;
        auto [cohort, truth] = generate(cfg, table);
        exercise(cohort, 0, true);
    }

    std::ostringstream os;
    os << "strict mismatches " << strict_mismatches << ", tie-identity mismatches "
       << identity_mismatches << ", banded>raw on discriminative cohorts "
       << inequality_failures;
    return {strict_mismatches == 0 && identity_mismatches == 0 && inequality_failures == 0,
            os.str()};
}

// ---------------------------------------------------------------- criterion 8
CheckResult loss_identity() {
    Rng rng(808);
    double worst = 0;
    for (int rep = 0; rep < 300; ++rep) {
        int T = 1 + static_cast<int>(rng.uniform_int(200));
        int y = rng.bernoulli(0.5) ? 1 : 0;
        VecX<double> probs(T);
        for (int t = 0; t < T; ++t) probs[t] = rng.uniform(1e-9, 1.0 - 1e-9);
        double combined = sequence_loss(probs, y);
        double manual = 0;
        for (int t = 0; t < T; ++t) {
            double p = std::min(1.0 - 1e-7, std::max(1e-7, probs[t]));
            manual += -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
        }
        manual /= T;
        worst = std::max(worst, std::abs(combined - manual));
    }
    std::ostringstream os;
    os << "300 trajectories, worst difference " << worst;
    return {worst < 1e-12, os.str()};
}

// ---------------------------------------------------------------- criterion 9
CheckResult synthetic_end_to_end() {
    auto start = Clock::now();
    auto table = default_variable_table();

    SynthConfig synth_cfg;
    synth_cfg.n_encounters = 2500;  // 2000 train / 500 test
    synth_cfg.seed = 20240607;
    auto [cohort, truth] = generate(synth_cfg, table);

    // deterministic split by encounter hash order: first 500 sorted ids as test
    std::vector<EncounterSeries> test_set(cohort.begin(), cohort.begin() + 500);
    std::vector<EncounterSeries> train_all(cohort.begin() + 500, cohort.end());
    auto [train_set, val_set] = split_train_val(train_all, 0.1, 17);

    ModelConfig cfg;
    cfg.hidden_dim = 32;
    cfg.batch_size = 16;
    cfg.patience_epochs = 5;
    cfg.max_epochs = 40;
    cfg.learning_rate = 3e-3;
    cfg.dropout_p = 0.2;
    cfg.l2_lambda = 1e-6;
    cfg.seed = 11;
    auto result = train(train_set, val_set, cfg, g_threads);

    auto deepsofa_preds = predictions_deepsofa(result.params, result.config, test_set, g_threads);
    auto traditional = predictions_traditional_sofa(test_set, {}, g_threads);

    std::vector<double> final_probs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        final_probs.push_back(deepsofa_preds.probs[i].back());
        labels.push_back(deepsofa_preds.labels[i]);
    }
    double final_auc = roc_auc(final_probs, labels);

    auto comparison =
        compare_models(deepsofa_preds, traditional, Alignment::from_admission, 100, 100, 5);
    double elapsed = seconds_since(start);

    std::ostringstream os;
    os << "final-hour AUC " << final_auc << ", mean AUC " << comparison.mean_auc_a << " vs "
       << comparison.mean_auc_b << " (diff " << comparison.mean_diff << ", p "
       << comparison.mean_p_value << "), epochs " << result.log.size() << ", " << elapsed << " s";
    bool pass = final_auc >= 0.85 && comparison.mean_diff >= 0.03 &&
                comparison.mean_p_value < 0.05 && elapsed < 900.0;
    return {pass, os.str()};
}

// --------------------------------------------------------------- criterion 10
CheckResult early_stopping() {
    // scripted sequence: improvements at epochs 1..3, then flat
    EarlyStopper stopper(5);
    std::vector<double> script = {0.50, 0.60, 0.70, 0.70, 0.69, 0.70, 0.70, 0.70, 0.70, 0.70};
    int halted_at = -1;
    for (std::size_t i = 0; i < script.size(); ++i) {
        stopper.observe(script[i]);
        if (stopper.should_stop()) {
            halted_at = static_cast<int>(i + 1);
            break;
        }
    }
    bool scripted_ok = halted_at == 8 && stopper.best_epoch() == 3;

    // the real loop returns the best-epoch snapshot: retraining with
    // max_epochs = best_epoch reproduces the returned parameters bit for bit
    Rng rng(12);
    std::vector<EncounterSeries> tr, val;
    auto make = [&](int i, bool dying) {
        EncounterSeries s;
        s.encounter_id = "e" + std::to_string(i);
        s.patient_id = s.encounter_id;
        s.label = dying;
        int T = 5 + static_cast<int>(rng.uniform_int(4));
        s.grid = Mat::Zero(T, kNumVars);
        s.observed = MaskMat::Ones(T, kNumVars);
        double base = rng.uniform(70, 90);
        for (int h = 0; h < T; ++h) {
            for (int v = 0; v < kNumVars; ++v) s.grid(h, v) = rng.uniform(-0.3, 0.3);
            s.grid(h, idx(Var::map)) = dying ? base - 3.5 * h : base;
        }
        return s;
    };
    for (int i = 0; i < 48; ++i) tr.push_back(make(i, i % 2 == 0));
    for (int i = 48; i < 64; ++i) val.push_back(make(i, i % 2 == 0));
    ModelConfig cfg;
    cfg.hidden_dim = 6;
    cfg.batch_size = 8;
    cfg.max_epochs = 25;
    cfg.patience_epochs = 4;
    cfg.dropout_p = 0.15;
    cfg.learning_rate = 4e-3;
    cfg.seed = 31;
    auto full = train(tr, val, cfg, 1);
    bool halted_in_time =
        full.log.size() == static_cast<std::size_t>(full.best_epoch + cfg.patience_epochs) ||
        full.log.size() == static_cast<std::size_t>(cfg.max_epochs);
    ModelConfig truncated = cfg;
    truncated.max_epochs = full.best_epoch;
    auto rerun = train(tr, val, truncated, 1);
    bool snapshot_ok = true;
    auto a = full.params.param_ptrs();
    auto b = rerun.params.param_ptrs();
    for (std::size_t i = 0; i < a.size(); ++i)
        if (*a[i] != *b[i]) snapshot_ok = false;

    std::ostringstream os;
    os << "scripted halt at epoch " << halted_at << " (best 3), trained run: best epoch "
       << full.best_epoch << ", log " << full.log.size() << " epochs, snapshot "
       << (snapshot_ok ? "matches" : "differs");
    return {scripted_ok && halted_in_time && snapshot_ok, os.str()};
}

// --------------------------------------------------------------- criterion 11
std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(DEEPSOFA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

CheckResult determinism_end_to_end() {
    fs::path base = fs::temp_directory_path() / "ds_acceptance_determinism";
    std::error_code ec;
    fs::remove_all(base, ec);
    auto run = [&](const std::string& name) -> fs::path {
        fs::path dir = base / name;
        fs::create_directories(dir);
        std::string d = dir.string();
        if (run_cli("synth --n 160 --seed 5 --out-dir " + d) != 0)
            throw std::runtime_error("cli synth failed");
        if (run_cli("preprocess --events " + d + "/events.csv --outcomes " + d +
                    "/outcomes.csv --out " + d + "/cohort.bin") != 0)
            throw std::runtime_error("cli preprocess failed");
        if (run_cli("--threads 2 train --cohort " + d + "/cohort.bin --out " + d +
                    "/model.ckpt --log " + d + "/train_log.csv --hidden 8 --max-epochs 6 "
                    "--seed 9") != 0)
            throw std::runtime_error("cli train failed");
        std::string bedside = std::string(DEEPSOFA_SOURCE_DIR) + "/configs/bedside_sofa.csv";
        if (run_cli("--threads 2 evaluate --cohort " + d + "/cohort.bin --checkpoint " + d +
                    "/model.ckpt --bedside-table " + bedside + " --horizon 24 --iterations 50 "
                    "--seed 3 --out-dir " + d + "/reports") != 0)
            throw std::runtime_error("cli evaluate failed");
        return dir;
    };
    auto d1 = run("run1");
    auto d2 = run("run2");

    std::vector<std::string> artifacts = {"model.ckpt", "train_log.csv",
                                          "reports/deepsofa_from_admission.csv",
                                          "reports/bedside_sofa_from_admission.csv",
                                          "reports/traditional_sofa_from_admission.csv",
                                          "reports/stratified_deepsofa_from_admission.csv"};
    long mismatched = 0;
    for (const auto& name : artifacts) {
        auto c1 = read_file(d1 / name);
        auto c2 = read_file(d2 / name);
        if (c1.empty() || c1 != c2) ++mismatched;
    }
    std::ostringstream os;
    os << artifacts.size() << " artifacts compared, " << mismatched << " differ";
    return {mismatched == 0, os.str()};
}

// --------------------------------------------------------------- criterion 12
CheckResult cohort_filter_counts() {
    auto table = default_variable_table();
    auto make_enc = [&](const std::string& eid, const std::string& pid, int stay_index) {
        std::vector<RawEvent> events;
        RawEvent e;
        e.encounter_id = eid;
        e.patient_id = pid;
        e.variable = "map";
        e.value = 80;
        e.minutes = 0;
        events.push_back(e);
        e.variable = "spo2";
        e.value = 97;
        events.push_back(e);
        e.variable = "map";
        e.minutes = 5 * 60;
        events.push_back(e);
        deepsofa::Outcome o;
        o.age_years = 50;
        return build_series(events, table, o, eid, pid, stay_index);
    };
    // 10 patients: p1..p6 single stay, p7/p8 two stays, p9 three, p10 two -> 15
    std::vector<EncounterSeries> encs;
    int eid = 0;
    auto add = [&](const std::string& pid, int stays) {
        for (int s = 1; s <= stays; ++s)
            encs.push_back(make_enc("e" + std::to_string(++eid), pid, s));
    };
    for (int p = 1; p <= 6; ++p) add("p" + std::to_string(p), 1);
    add("p7", 2);
    add("p8", 2);
    add("p9", 3);
    add("p10", 2);

    CohortCriteria crit;
    auto [all_kept, r_all] = apply_cohort_filters(encs, crit);
    crit.multi_stay_policy = MultiStayPolicy::first_only;
    auto [first_kept, r_first] = apply_cohort_filters(encs, crit);
    crit.multi_stay_policy = MultiStayPolicy::unique_only;
    auto [unique_kept, r_unique] = apply_cohort_filters(encs, crit);

    auto ids = [](const std::vector<EncounterSeries>& v) {
        std::vector<std::string> out;
        for (const auto& e : v) out.push_back(e.encounter_id);
        std::sort(out.begin(), out.end());
        return out;
    };
    auto subset = [](const std::vector<std::string>& small, const std::vector<std::string>& big) {
        for (const auto& s : small)
            if (std::find(big.begin(), big.end(), s) == big.end()) return false;
        return true;
    };
    auto all_ids = ids(all_kept), first_ids = ids(first_kept), unique_ids = ids(unique_kept);
    bool counts_ok = all_kept.size() == 15 && first_kept.size() == 10 && unique_kept.size() == 6;
    bool subsets_ok = subset(first_ids, all_ids) && subset(unique_ids, first_ids);
    // first_only keeps stay index 1 for every multi-stay patient
    bool first_stays_ok = true;
    for (const auto& e : first_kept)
        if (e.icu_stay_index != 1) first_stays_ok = false;

    std::ostringstream os;
    os << "all=" << all_kept.size() << " first_only=" << first_kept.size()
       << " unique_only=" << unique_kept.size();
    return {counts_ok && subsets_ok && first_stays_ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) g_threads = static_cast<unsigned>(std::atoi(argv[1]));
    struct Criterion {
        int id;
        const char* name;
        std::function<CheckResult()> run;
    };
    std::vector<Criterion> criteria = {
        {1, "SOFA rule oracle", sofa_rule_oracle},
        {2, "FiO2 device table", fio2_table},
        {3, "gradient check vs finite differences", gradient_check},
        {4, "causality", causality},
        {5, "attention validity and mask equivalence", attention_validity},
        {6, "AUC rank formula vs pair counting", auc_oracle},
        {7, "bedside/raw-score rank property", baseline_rank_property},
        {8, "target-replicated loss identity", loss_identity},
        {9, "synthetic end-to-end benchmark", synthetic_end_to_end},
        {10, "early stopping", early_stopping},
        {11, "pipeline determinism", determinism_end_to_end},
        {12, "multi-stay cohort filters", cohort_filter_counts},
    };
    int failures = 0;
    for (auto& c : criteria) {
        CheckResult outcome;
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %2d. %s: %s\n", outcome.pass ? "PASS" : "FAIL", c.id, c.name,
                    outcome.detail.c_str());
        std::fflush(stdout);
        if (!outcome.pass) ++failures;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
