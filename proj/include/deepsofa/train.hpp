#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "deepsofa/eval.hpp"
#include "deepsofa/model.hpp"

namespace deepsofa {

// Tracks best validation AUC; training halts once `patience` epochs pass with
// no strict increase. Kept free of the training loop so the stopping rule can
// be exercised against a scripted AUC sequence.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    // Returns true when this epoch improved on the best so far.
    bool observe(double val_auc) {
        ++epoch_;
        if (val_auc > best_auc_) {
            best_auc_ = val_auc;
            best_epoch_ = epoch_;
            epochs_since_best_ = 0;
            return true;
        }
        ++epochs_since_best_;
        return false;
    }

    bool should_stop() const { return epochs_since_best_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_auc() const { return best_auc_; }
    int epoch() const { return epoch_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int epochs_since_best_ = 0;
    double best_auc_ = -std::numeric_limits<double>::infinity();
};

struct TrainLogEntry {
    int epoch = 0;
    double train_loss = 0;
    double val_auc = 0;
    bool improved = false;
};

template <typename S>
struct TrainResult {
    ModelParamsT<S> params;  // snapshot from the best validation epoch
    ModelConfigT<S> config;
    std::vector<TrainLogEntry> log;
    int best_epoch = 0;
    double best_val_auc = 0;
};

// Per-column mean/stdev over every hour of the training cohort. Zero-variance
// columns get unit scale.
template <typename S>
void fit_normalization(ModelConfigT<S>& cfg, const std::vector<EncounterSeries>& cohort) {
    require(!cohort.empty(), "fit_normalization: empty cohort");
    auto columns = cfg.resolved_columns();
    const int d = static_cast<int>(columns.size());
    VecX<double> sum = VecX<double>::Zero(d), sum_sq = VecX<double>::Zero(d);
    long n = 0;
    for (const auto& e : cohort) {
        for (int t = 0; t < e.hours(); ++t) {
            for (int j = 0; j < d; ++j) {
                double v = e.grid(t, columns[static_cast<std::size_t>(j)]);
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
        n += e.hours();
    }
    cfg.feat_mean.resize(d);
    cfg.feat_std.resize(d);
    for (int j = 0; j < d; ++j) {
        double mean = sum[j] / static_cast<double>(n);
        double var = std::max(0.0, sum_sq[j] / static_cast<double>(n) - mean * mean);
        double sd = std::sqrt(var);
        cfg.feat_mean[j] = S(mean);
        cfg.feat_std[j] = S(sd > 1e-8 ? sd : 1.0);
    }
}

// Seeded split for early stopping; returns {train, validation}.
inline std::pair<std::vector<EncounterSeries>, std::vector<EncounterSeries>> split_train_val(
    const std::vector<EncounterSeries>& cohort, double val_fraction, uint64_t seed) {
    require(val_fraction > 0 && val_fraction < 1, "split_train_val: fraction must be in (0,1)");
    std::vector<std::size_t> order(cohort.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                     std::floor(cohort.size() * val_fraction)));
    n_val = std::min(n_val, cohort.size() - 1);
    std::pair<std::vector<EncounterSeries>, std::vector<EncounterSeries>> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < n_val)
            out.second.push_back(cohort[order[i]]);
        else
            out.first.push_back(cohort[order[i]]);
    }
    return out;
}

// Mini-batch training with target-replicated loss and AUC-based early
// stopping on the final-hour validation predictions. Returns the parameter
// snapshot from the best epoch. Fully deterministic under a fixed seed.
template <typename S>
TrainResult<S> train(const std::vector<EncounterSeries>& train_cohort,
                     const std::vector<EncounterSeries>& val_cohort, ModelConfigT<S> cfg,
                     unsigned threads = 1) {
    require(!train_cohort.empty(), "train: empty training cohort");
    require(!val_cohort.empty(), "train: empty validation cohort");
    cfg.sync_input_dim();
    if (cfg.feat_mean.size() == 0) fit_normalization(cfg, train_cohort);

    std::vector<TrainingExample<S>> examples;
    examples.reserve(train_cohort.size());
    for (const auto& e : train_cohort)
        examples.push_back({model_input(e, cfg), e.label ? 1 : 0});
    std::vector<TrainingExample<S>> val_examples;
    std::vector<int> val_labels;
    val_examples.reserve(val_cohort.size());
    for (const auto& e : val_cohort) {
        val_examples.push_back({model_input(e, cfg), e.label ? 1 : 0});
        val_labels.push_back(e.label ? 1 : 0);
    }
    bool has_pos = std::find(val_labels.begin(), val_labels.end(), 1) != val_labels.end();
    bool has_neg = std::find(val_labels.begin(), val_labels.end(), 0) != val_labels.end();
    require(has_pos && has_neg, "train: validation set needs both outcomes for AUC stopping");

    ModelParamsT<S> params = init_params(cfg);
    auto ptrs = params.param_ptrs();
    AdamState<S> adam = AdamState<S>::like(ptrs);
    adam.learning_rate = cfg.learning_rate;
    adam.l2_lambda = cfg.l2_lambda;

    Rng master(cfg.seed);
    Rng shuffle_rng = master.derive(0xA11CE);
    Rng dropout_rng = master.derive(0xD120);

    TrainResult<S> result;
    result.config = cfg;
    ModelParamsT<S> best_params = params;
    EarlyStopper stopper(cfg.patience_epochs);

    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double epoch_loss = 0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<TrainingExample<S>> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
            S batch_loss = S(0);
            Rng batch_rng = dropout_rng.derive(static_cast<uint64_t>(epoch) * 1000003ULL + start);
            ModelParamsT<S> grads =
                gradients(params, cfg, batch, true, batch_rng, &batch_loss, threads);
            adam_step(ptrs, grads.param_ptrs(), adam);
            epoch_loss += static_cast<double>(batch_loss);
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);

        // validation AUC on final-hour probabilities
        std::vector<double> final_probs(val_examples.size());
        parallel_for(
            val_examples.size(),
            [&](std::size_t i) {
                auto traj = forward(params, cfg, val_examples[i].input);
                final_probs[i] = static_cast<double>(traj.probs[traj.probs.size() - 1]);
            },
            threads);
        double val_auc = roc_auc(final_probs, val_labels);

        bool improved = stopper.observe(val_auc);
        if (improved) best_params = params;
        result.log.push_back({epoch, epoch_loss, val_auc, improved});
        if (stopper.should_stop()) break;
    }

    result.params = std::move(best_params);
    result.best_epoch = stopper.best_epoch();
    result.best_val_auc = stopper.best_auc();
    return result;
}

inline void write_training_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path);
    out << "epoch,train_loss,val_auc,improved\n";
    out.precision(12);
    for (const auto& e : log)
        out << e.epoch << "," << e.train_loss << "," << e.val_auc << "," << (e.improved ? 1 : 0)
            << "\n";
}

}  // namespace deepsofa
