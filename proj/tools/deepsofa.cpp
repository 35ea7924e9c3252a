// deepsofa command-line front end: synthesize, preprocess, score, train,
// predict, evaluate, compare.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "deepsofa/checkpoint.hpp"
#include "deepsofa/cohort.hpp"
#include "deepsofa/eval.hpp"
#include "deepsofa/pipeline.hpp"
#include "deepsofa/sofa.hpp"
#include "deepsofa/synth.hpp"
#include "deepsofa/train.hpp"

namespace fs = std::filesystem;
using namespace deepsofa;

namespace {

void check_readable(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw std::runtime_error(what + " not found: " + path);
}

struct CommonOpts {
    unsigned threads = 2;
    std::string variables_path;
};

VariableTable load_variables(const CommonOpts& common) {
    if (common.variables_path.empty()) return default_variable_table();
    check_readable(common.variables_path, "variable config");
    return load_variable_table(common.variables_path);
}

void write_predictions_csv(const std::vector<EncounterSeries>& cohort,
                           const HourlyPredictions& preds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    out.precision(12);
    out << "encounter_id,hour,prob\n";
    for (std::size_t i = 0; i < cohort.size(); ++i)
        for (std::size_t h = 0; h < preds.probs[i].size(); ++h)
            out << cohort[i].encounter_id << "," << (h + 1) << "," << preds.probs[i][h] << "\n";
}

HourlyPredictions predictions_by_name(const std::string& name, const ModelParams* params,
                                      const ModelConfig* cfg,
                                      const std::vector<EncounterSeries>& cohort,
                                      const BedsideTable* bedside,
                                      const std::vector<EncounterSeries>* train_cohort,
                                      unsigned threads) {
    if (name == "deepsofa") {
        require(params != nullptr, "model '" + name + "' needs --checkpoint");
        return predictions_deepsofa(*params, *cfg, cohort, threads);
    }
    if (name == "traditional") return predictions_traditional_sofa(cohort, {}, threads);
    if (name == "bedside") {
        require(bedside != nullptr, "model '" + name + "' needs --bedside-table");
        return predictions_bedside_sofa(cohort, *bedside, {}, threads);
    }
    if (name == "logistic") {
        require(train_cohort != nullptr, "model '" + name + "' needs --train-cohort");
        auto lb = LogisticBaseline::fit(*train_cohort);
        return predictions_logistic(lb, cohort, threads);
    }
    throw std::invalid_argument("unknown model name: " + name +
                                " (expected deepsofa|traditional|bedside|logistic)");
}

int run_app(int argc, char** argv) {
    CLI::App app{"Streaming ICU acuity scores: rule-based SOFA plus a GRU "
                 "self-attention mortality model"};
    app.require_subcommand(1);
    app.set_config("--config", "", "config file (ini), also via DEEPSOFA_CONFIG")
        ->envname("DEEPSOFA_CONFIG");

    CommonOpts common;
    app.add_option("--threads", common.threads, "worker threads")->capture_default_str();
    app.add_option("--variables", common.variables_path,
                   "variable spec / normal-value config file");

    // ---- synth ----
    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic cohort");
    SynthConfig synth_cfg;
    std::string synth_dir;
    cmd_synth->add_option("--n", synth_cfg.n_encounters, "encounters")->capture_default_str();
    cmd_synth->add_option("--seed", synth_cfg.seed, "rng seed")->capture_default_str();
    cmd_synth->add_option("--out-dir", synth_dir, "output directory")->required();
    cmd_synth->add_option("--stay-median-hours", synth_cfg.stay_median_hours, "")
        ->capture_default_str();
    cmd_synth->add_option("--stay-log-sigma", synth_cfg.stay_log_sigma, "")->capture_default_str();
    cmd_synth->add_option("--baseline-logit", synth_cfg.baseline_logit, "")->capture_default_str();
    cmd_synth->add_option("--motif-fraction", synth_cfg.motif_fraction, "")->capture_default_str();
    cmd_synth->add_option("--effect-weight", synth_cfg.effect_weight, "")->capture_default_str();
    cmd_synth->add_option("--noise-scale", synth_cfg.noise_scale, "")->capture_default_str();
    cmd_synth->add_option("--decoy-fraction", synth_cfg.decoy_fraction, "")->capture_default_str();
    cmd_synth->add_option("--restay-prob", synth_cfg.restay_prob, "")->capture_default_str();

    // ---- preprocess ----
    auto* cmd_pre = app.add_subcommand("preprocess", "events + outcomes -> cohort container");
    std::string pre_events, pre_outcomes, pre_out, pre_rejections;
    CohortCriteria criteria;
    std::string pre_multistay = "all";
    cmd_pre->add_option("--events", pre_events, "event csv")->required();
    cmd_pre->add_option("--outcomes", pre_outcomes, "outcome csv")->required();
    cmd_pre->add_option("--out", pre_out, "cohort output file")->required();
    cmd_pre->add_option("--rejections", pre_rejections, "rejection report csv");
    cmd_pre->add_option("--min-age", criteria.min_age_years, "")->capture_default_str();
    cmd_pre->add_option("--min-stay-hours", criteria.min_stay_hours, "")->capture_default_str();
    cmd_pre->add_option("--max-stay-days", criteria.max_stay_days, "")->capture_default_str();
    cmd_pre->add_option("--multi-stay", pre_multistay, "all|first_only|unique_only")
        ->capture_default_str();
    bool pre_no_map = false, pre_no_oxy = false;
    cmd_pre->add_flag("--no-require-map", pre_no_map, "drop the MAP measurement requirement");
    cmd_pre->add_flag("--no-require-oxygenation", pre_no_oxy,
                      "drop the PaO2/SpO2 measurement requirement");

    // ---- sofa-score ----
    auto* cmd_sofa = app.add_subcommand("sofa-score", "hourly SOFA components per encounter");
    std::string sofa_cohort, sofa_table, sofa_out;
    cmd_sofa->add_option("--cohort", sofa_cohort, "cohort file")->required();
    cmd_sofa->add_option("--bedside-table", sofa_table, "score-to-mortality bands")->required();
    cmd_sofa->add_option("--out", sofa_out, "per-hour csv")->required();

    // ---- train ----
    auto* cmd_train = app.add_subcommand("train", "fit the mortality model");
    std::string train_cohort_path, train_out, train_log_path;
    ModelConfig model_cfg;
    std::string train_subset = "all", train_attention = "self_attention",
                train_query = "current_step";
    cmd_train->add_option("--cohort", train_cohort_path, "training cohort")->required();
    cmd_train->add_option("--out", train_out, "checkpoint path")->required();
    cmd_train->add_option("--log", train_log_path, "training log csv");
    cmd_train->add_option("--hidden", model_cfg.hidden_dim, "")->capture_default_str();
    cmd_train->add_option("--dropout", model_cfg.dropout_p, "")->capture_default_str();
    cmd_train->add_option("--l2", model_cfg.l2_lambda, "")->capture_default_str();
    cmd_train->add_option("--lr", model_cfg.learning_rate, "")->capture_default_str();
    cmd_train->add_option("--batch", model_cfg.batch_size, "")->capture_default_str();
    cmd_train->add_option("--patience", model_cfg.patience_epochs, "")->capture_default_str();
    cmd_train->add_option("--max-epochs", model_cfg.max_epochs, "")->capture_default_str();
    cmd_train->add_option("--val-fraction", model_cfg.val_fraction, "")->capture_default_str();
    cmd_train->add_option("--seed", model_cfg.seed, "")->capture_default_str();
    cmd_train->add_option("--attention", train_attention,
                          "self_attention|global_attention|last_hidden")
        ->capture_default_str();
    cmd_train->add_option("--self-query", train_query, "current_step|per_step")
        ->capture_default_str();
    cmd_train->add_flag("--scale-logits", model_cfg.scale_logits,
                        "scale attention logits by 1/sqrt(k)");
    cmd_train->add_option("--feature-subset", train_subset,
                          "all|cardiovascular|respiratory|cns|coagulation|liver|renal")
        ->capture_default_str();

    // ---- predict ----
    auto* cmd_pred = app.add_subcommand("predict", "per-hour mortality probabilities");
    std::string pred_cohort, pred_ckpt, pred_out, pred_attention_dir;
    bool pred_pgm = false;
    cmd_pred->add_option("--cohort", pred_cohort, "cohort file")->required();
    cmd_pred->add_option("--checkpoint", pred_ckpt, "model checkpoint")->required();
    cmd_pred->add_option("--out", pred_out, "probability csv")->required();
    cmd_pred->add_option("--attention-dir", pred_attention_dir,
                         "write one attention matrix csv per encounter");
    cmd_pred->add_flag("--pgm", pred_pgm, "also write PGM heatmaps of attention");

    // ---- evaluate ----
    auto* cmd_eval = app.add_subcommand("evaluate", "hourly AUC curves for all models");
    std::string eval_cohort, eval_ckpt, eval_table, eval_train_cohort, eval_dir;
    std::string eval_align = "from_admission";
    int eval_horizon = 100, eval_iterations = 100;
    uint64_t eval_seed = 1;
    cmd_eval->add_option("--cohort", eval_cohort, "test cohort")->required();
    cmd_eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    cmd_eval->add_option("--bedside-table", eval_table, "score-to-mortality bands")->required();
    cmd_eval->add_option("--train-cohort", eval_train_cohort,
                         "training cohort for the aggregate-feature regression baseline");
    cmd_eval->add_option("--align", eval_align, "from_admission|to_discharge")
        ->capture_default_str();
    cmd_eval->add_option("--horizon", eval_horizon, "")->capture_default_str();
    cmd_eval->add_option("--iterations", eval_iterations, "bootstrap iterations")
        ->capture_default_str();
    cmd_eval->add_option("--seed", eval_seed, "bootstrap seed")->capture_default_str();
    cmd_eval->add_option("--out-dir", eval_dir, "report directory")->required();

    // ---- compare ----
    auto* cmd_cmp = app.add_subcommand("compare", "paired bootstrap model comparison");
    std::string cmp_cohort, cmp_ckpt, cmp_table, cmp_train_cohort, cmp_out;
    std::string cmp_a = "deepsofa", cmp_b = "traditional", cmp_align = "from_admission";
    int cmp_horizon = 100, cmp_iterations = 100;
    uint64_t cmp_seed = 1;
    cmd_cmp->add_option("--cohort", cmp_cohort, "test cohort")->required();
    cmd_cmp->add_option("--checkpoint", cmp_ckpt, "model checkpoint (for deepsofa)");
    cmd_cmp->add_option("--bedside-table", cmp_table, "bands (for bedside)");
    cmd_cmp->add_option("--train-cohort", cmp_train_cohort, "training cohort (for logistic)");
    cmd_cmp->add_option("--a", cmp_a, "deepsofa|traditional|bedside|logistic")
        ->capture_default_str();
    cmd_cmp->add_option("--b", cmp_b, "deepsofa|traditional|bedside|logistic")
        ->capture_default_str();
    cmd_cmp->add_option("--align", cmp_align, "")->capture_default_str();
    cmd_cmp->add_option("--horizon", cmp_horizon, "")->capture_default_str();
    cmd_cmp->add_option("--iterations", cmp_iterations, "")->capture_default_str();
    cmd_cmp->add_option("--seed", cmp_seed, "")->capture_default_str();
    cmd_cmp->add_option("--out", cmp_out, "comparison csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (cmd_synth->parsed()) {
        std::cout << "synth: n=" << synth_cfg.n_encounters << " seed=" << synth_cfg.seed
                  << " motif=" << synth_cfg.motif_fraction
                  << " effect=" << synth_cfg.effect_weight << " out=" << synth_dir << "\n";
        fs::create_directories(synth_dir);
        SynthData data = generate_events(synth_cfg);
        write_events_csv(data.events, synth_dir + "/events.csv");
        write_outcomes_csv(data.outcomes, synth_dir + "/outcomes.csv");
        write_truth_csv(data.truth, synth_dir + "/truth.csv");
        long deaths = 0;
        for (const auto& t : data.truth) deaths += t.label;
        std::cout << "synth: wrote " << data.events.size() << " events, " << data.truth.size()
                  << " encounters (" << deaths << " deaths)\n";
        return 0;
    }

    if (cmd_pre->parsed()) {
        check_readable(pre_events, "event file");
        check_readable(pre_outcomes, "outcome file");
        criteria.multi_stay_policy = multi_stay_from_string(pre_multistay);
        criteria.require_map = !pre_no_map;
        criteria.require_pao2_or_spo2 = !pre_no_oxy;
        std::cout << "preprocess: events=" << pre_events << " outcomes=" << pre_outcomes
                  << " min_age=" << criteria.min_age_years
                  << " stay=[" << criteria.min_stay_hours << "h," << criteria.max_stay_days
                  << "d] multi_stay=" << pre_multistay << "\n";
        VariableTable table = load_variables(common);
        auto parsed = parse_events(pre_events);
        auto outcomes = parse_outcomes(pre_outcomes);
        RejectionReport rejections = std::move(parsed.rejections);
        auto cohort = build_cohort(parsed.events, outcomes, table, rejections);
        auto [kept, exclusions] = apply_cohort_filters(std::move(cohort), criteria);
        save_cohort(kept, pre_out);
        if (!pre_rejections.empty()) rejections.write_csv(pre_rejections);
        std::cout << "preprocess: kept " << kept.size() << " encounters"
                  << " (excluded: age=" << exclusions.excluded_age
                  << " stay=" << exclusions.excluded_stay_length
                  << " no_map=" << exclusions.excluded_no_map
                  << " no_oxygenation=" << exclusions.excluded_no_oxygenation
                  << " multi_stay=" << exclusions.excluded_multi_stay
                  << "), rejected rows=" << rejections.items.size() << "\n";
        return 0;
    }

    if (cmd_sofa->parsed()) {
        check_readable(sofa_cohort, "cohort file");
        check_readable(sofa_table, "bedside table");
        std::cout << "sofa-score: cohort=" << sofa_cohort << " bedside_table=" << sofa_table
                  << "\n";
        auto cohort = load_cohort(sofa_cohort);
        auto table = load_bedside_table(sofa_table);
        std::ofstream out(sofa_out);
        if (!out) throw std::runtime_error("cannot write " + sofa_out);
        out.precision(12);
        out << "encounter_id,hour,cardio,resp,cns,coag,liver,renal,total,bedside_prob\n";
        for (const auto& e : cohort) {
            for (const auto& a : sofa_trajectory(e)) {
                out << e.encounter_id << "," << a.hour << "," << a.cardio << "," << a.resp << ","
                    << a.cns << "," << a.coag << "," << a.liver << "," << a.renal << ","
                    << a.total << "," << bedside_probability(a.total, table) << "\n";
            }
        }
        std::cout << "sofa-score: wrote " << sofa_out << " for " << cohort.size()
                  << " encounters\n";
        return 0;
    }

    if (cmd_train->parsed()) {
        check_readable(train_cohort_path, "cohort file");
        model_cfg.attention = attention_mode_from_string(train_attention);
        model_cfg.self_query =
            train_query == "per_step" ? SelfQueryMode::per_step : SelfQueryMode::current_step;
        model_cfg.feature_columns = feature_subset_columns(train_subset);
        model_cfg.sync_input_dim();
        std::cout << "train: cohort=" << train_cohort_path << " hidden=" << model_cfg.hidden_dim
                  << " dropout=" << model_cfg.dropout_p << " batch=" << model_cfg.batch_size
                  << " patience=" << model_cfg.patience_epochs
                  << " attention=" << train_attention << " subset=" << train_subset
                  << " seed=" << model_cfg.seed << "\n";
        auto cohort = load_cohort(train_cohort_path);
        auto [train_set, val_set] =
            split_train_val(cohort, model_cfg.val_fraction, model_cfg.seed);
        auto result = train(train_set, val_set, model_cfg, common.threads);
        save_checkpoint(result.params, result.config, train_out);
        if (!train_log_path.empty()) write_training_log(result.log, train_log_path);
        std::cout << "train: best epoch " << result.best_epoch << " (val AUC "
                  << result.best_val_auc << "), checkpoint " << train_out << "\n";
        return 0;
    }

    if (cmd_pred->parsed()) {
        check_readable(pred_cohort, "cohort file");
        check_readable(pred_ckpt, "checkpoint");
        std::cout << "predict: cohort=" << pred_cohort << " checkpoint=" << pred_ckpt
                  << (pred_attention_dir.empty() ? ""
                                                 : " attention_dir=" + pred_attention_dir)
                  << "\n";
        auto cohort = load_cohort(pred_cohort);
        auto loaded = load_checkpoint(pred_ckpt);
        const ModelParams& params = loaded.first;
        const ModelConfig& cfg = loaded.second;
        HourlyPredictions preds;
        preds.probs.resize(cohort.size());
        preds.labels.resize(cohort.size());
        if (!pred_attention_dir.empty()) fs::create_directories(pred_attention_dir);
        parallel_for(
            cohort.size(),
            [&](std::size_t i) {
                auto traj = predict_trajectory(params, cfg, cohort[i]);
                preds.probs[i].assign(traj.probs.data(), traj.probs.data() + traj.probs.size());
                preds.labels[i] = cohort[i].label ? 1 : 0;
                if (!pred_attention_dir.empty()) {
                    std::string base = pred_attention_dir + "/" + cohort[i].encounter_id;
                    write_attention_csv(traj.attention, base + "_attention.csv");
                    if (pred_pgm) write_attention_pgm(traj.attention, base + "_attention.pgm");
                }
            },
            common.threads);
        write_predictions_csv(cohort, preds, pred_out);
        std::cout << "predict: wrote " << pred_out << " for " << cohort.size() << " encounters\n";
        return 0;
    }

    if (cmd_eval->parsed()) {
        check_readable(eval_cohort, "cohort file");
        check_readable(eval_ckpt, "checkpoint");
        check_readable(eval_table, "bedside table");
        Alignment align = alignment_from_string(eval_align);
        std::cout << "evaluate: cohort=" << eval_cohort << " align=" << eval_align
                  << " horizon=" << eval_horizon << " iterations=" << eval_iterations
                  << " seed=" << eval_seed << "\n";
        auto cohort = load_cohort(eval_cohort);
        auto loaded = load_checkpoint(eval_ckpt);
        const ModelParams& params = loaded.first;
        const ModelConfig& cfg = loaded.second;
        auto bedside = load_bedside_table(eval_table);
        fs::create_directories(eval_dir);

        auto run_model = [&](const std::string& name, const HourlyPredictions& preds) {
            auto curve = hourly_curve(preds, align, eval_horizon, eval_iterations, eval_seed);
            write_curve_csv(curve, eval_dir + "/" + name + "_" + eval_align + ".csv");
            double mean = 0;
            for (const auto& p : curve) mean += p.auc;
            std::cout << "evaluate: " << name << " mean AUC "
                      << mean / static_cast<double>(curve.size()) << "\n";
        };
        auto deepsofa_preds = predictions_deepsofa(params, cfg, cohort, common.threads);
        run_model("deepsofa", deepsofa_preds);
        run_model("bedside_sofa", predictions_bedside_sofa(cohort, bedside, {}, common.threads));
        run_model("traditional_sofa", predictions_traditional_sofa(cohort, {}, common.threads));
        if (!eval_train_cohort.empty()) {
            check_readable(eval_train_cohort, "training cohort");
            auto lb = LogisticBaseline::fit(load_cohort(eval_train_cohort));
            run_model("logistic", predictions_logistic(lb, cohort, common.threads));
        }
        write_stratified_csv(
            stratified_mean_prob(deepsofa_preds, align, eval_horizon, eval_iterations, eval_seed),
            eval_dir + "/stratified_deepsofa_" + eval_align + ".csv");
        return 0;
    }

    if (cmd_cmp->parsed()) {
        check_readable(cmp_cohort, "cohort file");
        auto cohort = load_cohort(cmp_cohort);
        Alignment align = alignment_from_string(cmp_align);
        std::optional<std::pair<ModelParams, ModelConfig>> ckpt;
        if (!cmp_ckpt.empty()) {
            check_readable(cmp_ckpt, "checkpoint");
            ckpt = load_checkpoint(cmp_ckpt);
        }
        std::optional<BedsideTable> bedside;
        if (!cmp_table.empty()) {
            check_readable(cmp_table, "bedside table");
            bedside = load_bedside_table(cmp_table);
        }
        std::optional<std::vector<EncounterSeries>> train_cohort;
        if (!cmp_train_cohort.empty()) {
            check_readable(cmp_train_cohort, "training cohort");
            train_cohort = load_cohort(cmp_train_cohort);
        }
        std::cout << "compare: a=" << cmp_a << " b=" << cmp_b << " align=" << cmp_align
                  << " horizon=" << cmp_horizon << " seed=" << cmp_seed << "\n";
        auto predict_named = [&](const std::string& name) {
            return predictions_by_name(name, ckpt ? &ckpt->first : nullptr,
                                       ckpt ? &ckpt->second : nullptr, cohort,
                                       bedside ? &*bedside : nullptr,
                                       train_cohort ? &*train_cohort : nullptr, common.threads);
        };
        auto result = compare_models(predict_named(cmp_a), predict_named(cmp_b), align,
                                     cmp_horizon, cmp_iterations, cmp_seed);
        write_compare_csv(result, cmp_out);
        std::cout << "compare: mean AUC " << cmp_a << "=" << result.mean_auc_a << " " << cmp_b
                  << "=" << result.mean_auc_b << " diff=" << result.mean_diff
                  << " p=" << result.mean_p_value << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_app(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
