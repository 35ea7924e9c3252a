#include <catch2/catch.hpp>

#include <filesystem>

#include "deepsofa/checkpoint.hpp"
#include "deepsofa/pipeline.hpp"
#include "deepsofa/synth.hpp"
#include "deepsofa/train.hpp"

using namespace deepsofa;
namespace fs = std::filesystem;

namespace {

std::vector<EncounterSeries> small_cohort(int n, uint64_t seed) {
    SynthConfig cfg;
    cfg.n_encounters = n;
    cfg.seed = seed;
    cfg.stay_median_hours = 18;
    cfg.stay_log_sigma = 0.4;
    auto [cohort, truth] = generate(cfg, default_variable_table());
    return cohort;
}

}  // namespace

TEST_CASE("bedside probabilities preserve or lose rank information as the table dictates") {
    auto cohort = small_cohort(160, 31);

    // final-hour raw totals and labels
    std::vector<double> totals;
    std::vector<int> labels;
    for (const auto& e : cohort) {
        auto traj = sofa_trajectory(e);
        totals.push_back(static_cast<double>(traj.back().total));
        labels.push_back(e.label ? 1 : 0);
    }

    SECTION("strictly increasing table: identical AUC") {
        BedsideTable strict;
        for (int s = 0; s <= 24; ++s) strict.bands.push_back({s, s, 0.01 + 0.035 * s});
        strict.validate();
        std::vector<double> probs;
        for (double t : totals) probs.push_back(bedside_probability(static_cast<int>(t), strict));
        REQUIRE(roc_auc(probs, labels) == roc_auc(totals, labels));
    }
    SECTION("banded table only adds ties: AUC can only drop") {
        BedsideTable banded;
        banded.bands = {{0, 1, 0.03}, {2, 3, 0.06}, {4, 5, 0.20}, {6, 7, 0.21},
                        {8, 9, 0.33}, {10, 11, 0.50}, {12, 24, 0.95}};
        banded.validate();
        std::vector<double> probs;
        for (double t : totals) probs.push_back(bedside_probability(static_cast<int>(t), banded));
        REQUIRE(roc_auc(probs, labels) <= roc_auc(totals, labels) + 1e-12);
    }
}

TEST_CASE("checkpoint round-trips the model bit for bit") {
    ModelConfig cfg;
    cfg.input_dim = kNumVars;
    cfg.hidden_dim = 6;
    cfg.seed = 3;
    cfg.feature_columns = feature_subset_columns("all");
    cfg.sync_input_dim();
    cfg.feat_mean = Vec::Constant(kNumVars, 1.5);
    cfg.feat_std = Vec::Constant(kNumVars, 2.0);
    auto params = init_params(cfg);
    auto path = (fs::temp_directory_path() / "ds_ckpt.bin").string();
    save_checkpoint(params, cfg, path);
    auto [loaded, loaded_cfg] = load_checkpoint(path);
    REQUIRE(loaded_cfg.hidden_dim == cfg.hidden_dim);
    REQUIRE(loaded_cfg.attention == cfg.attention);
    REQUIRE(loaded_cfg.feature_columns == cfg.resolved_columns());
    REQUIRE(loaded_cfg.feat_mean == cfg.feat_mean);
    REQUIRE(loaded_cfg.feat_std == cfg.feat_std);
    auto p1 = params.param_ptrs();
    auto p2 = loaded.param_ptrs();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(*p1[i] == *p2[i]);

    // bad files rejected
    REQUIRE_THROWS_AS(load_checkpoint("/nonexistent/ck.bin"), std::runtime_error);
}

TEST_CASE("attention export formats") {
    Mat attention(2, 2);
    attention << 1.0, 0.0, 0.4, 0.6;
    auto dir = fs::temp_directory_path();
    auto csv_path = (dir / "ds_attention.csv").string();
    auto pgm_path = (dir / "ds_attention.pgm").string();
    write_attention_csv(attention, csv_path);
    write_attention_pgm(attention, pgm_path);

    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "1,0");
    std::getline(csv, line);
    REQUIRE(line.substr(0, 4) == "0.4,");

    std::ifstream pgm(pgm_path);
    std::string magic;
    int w, h, maxval;
    pgm >> magic >> w >> h >> maxval;
    REQUIRE(magic == "P2");
    REQUIRE(w == 2);
    REQUIRE(h == 2);
    REQUIRE(maxval == 255);
    int px[4];
    for (int& v : px) pgm >> v;
    REQUIRE(px[0] == 0);    // weight 1.0 -> darkest
    REQUIRE(px[1] == 255);  // weight 0 -> white
    REQUIRE(px[2] > px[3]); // 0.4 lighter than 0.6
}

TEST_CASE("month-long stays run through scoring and prediction") {
    auto table = default_variable_table();
    EncounterSeries s;
    s.encounter_id = "long";
    s.patient_id = "long";
    int T = 720;  // the 30-day cap
    s.grid = Mat::Zero(T, kNumVars);
    s.observed = MaskMat::Ones(T, kNumVars);
    Rng rng(2);
    for (int h = 0; h < T; ++h)
        for (int v = 0; v < kNumVars; ++v) {
            const auto& spec = table.specs[static_cast<std::size_t>(v)];
            double lo = spec.non_outlier_min + (spec.min_open ? 0.5 : 0.0);
            double hi = spec.non_outlier_max - (spec.max_open ? 0.5 : 0.0);
            s.grid(h, v) = v == idx(Var::mv) ? 0.0 : rng.uniform(lo, hi);
        }

    auto traj = sofa_trajectory(s);
    REQUIRE(traj.size() == 720);
    REQUIRE(traj.back().hour == 720);

    ModelConfig cfg;
    cfg.hidden_dim = 4;
    cfg.dropout_p = 0;
    cfg.seed = 1;
    auto params = init_params(cfg);
    auto out = forward(params, cfg, model_input(s, cfg));
    REQUIRE(out.probs.size() == 720);
    REQUIRE(out.attention.rows() == 720);
    REQUIRE(out.probs.allFinite());
    double last_row_sum = out.attention.row(719).sum();
    REQUIRE(std::abs(last_row_sum - 1.0) < 1e-9);
}

TEST_CASE("trained model beats the SOFA baselines on a motif cohort") {
    // compact version of the end-to-end benchmark: small cohort, small model
    SynthConfig synth_cfg;
    synth_cfg.n_encounters = 260;
    synth_cfg.seed = 71;
    synth_cfg.stay_median_hours = 16;
    synth_cfg.stay_log_sigma = 0.35;
    auto table = default_variable_table();
    auto [cohort, truth] = generate(synth_cfg, table);

    std::vector<EncounterSeries> test_set(cohort.begin(), cohort.begin() + 60);
    std::vector<EncounterSeries> train_all(cohort.begin() + 60, cohort.end());
    auto [train_set, val_set] = split_train_val(train_all, 0.15, 5);

    ModelConfig cfg;
    cfg.hidden_dim = 12;
    cfg.batch_size = 16;
    cfg.max_epochs = 30;
    cfg.patience_epochs = 5;
    cfg.learning_rate = 5e-3;
    cfg.dropout_p = 0.1;
    cfg.seed = 2;
    auto result = train(train_set, val_set, cfg, 2);

    auto deepsofa_preds = predictions_deepsofa(result.params, result.config, test_set, 2);
    auto traditional = predictions_traditional_sofa(test_set);

    std::vector<double> final_probs, final_totals;
    std::vector<int> labels;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        final_probs.push_back(deepsofa_preds.probs[i].back());
        final_totals.push_back(traditional.probs[i].back());
        labels.push_back(deepsofa_preds.labels[i]);
    }
    double auc_model = roc_auc(final_probs, labels);
    double auc_sofa = roc_auc(final_totals, labels);
    INFO("deepsofa " << auc_model << " traditional " << auc_sofa);
    REQUIRE(auc_model > 0.75);
    REQUIRE(auc_model > auc_sofa - 0.05);  // desk-scale smoke; the full bar lives in acceptance
}
