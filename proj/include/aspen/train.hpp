#pragma once

#include <limits>
#include <string>
#include <vector>

#include "aspen/model.hpp"
#include "aspen/rng.hpp"
#include "aspen/tensor.hpp"

namespace aspen::train {

struct TrainConfig {
    int max_epochs = 100;
    int batch_size = 64;
    double lr = 3e-4;
    double weight_decay = 5e-4;
    double scheduler_factor = 0.5;
    int scheduler_patience = 5;
    int early_stop_patience = 15;
    double clip_norm = 1.0;
    bool weighted_sampling = false;  // inverse-class-frequency batches (p300)
    double plateau_eps = 1e-6;       // improvement below this counts as stagnant

    void validate() const;
};

// Percent-scaled metrics for one split; pr_auc is NaN for multi-class tasks.
struct MetricsRow {
    std::string split;
    double acc = 0.0;
    double f1 = 0.0;
    double recall = 0.0;
    double roc_auc = 0.0;
    double pr_auc = std::numeric_limits<double>::quiet_NaN();
    double loss = 0.0;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;  // percent
    double lr = 0.0;
};

// Halves the learning rate after `patience` epochs without the validation
// loss improving by more than eps.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor, int patience, double eps)
        : lr_(lr), factor_(factor), patience_(patience), eps_(eps) {}
    bool step(double val_loss);  // true when the rate was just reduced
    double lr() const { return lr_; }

private:
    double lr_, factor_;
    int patience_;
    double eps_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}
    bool observe(double val_acc);  // true when training should stop

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

// ---------------------------------------------------------------------------
// metric primitives
// ---------------------------------------------------------------------------

// Rank statistic with tie handling; NaN when a class is absent.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Trapezoidal area under the precision-recall curve, anchored at recall 0
// with the precision of the top-scoring group.
double pr_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted one-vs-rest macro over softmax scores (K columns).
double roc_auc_ovr_macro(const Tensor& probs, const std::vector<int>& labels);

double binary_f1(const std::vector<int>& pred, const std::vector<int>& labels);
double binary_recall(const std::vector<int>& pred, const std::vector<int>& labels);
double macro_f1(const std::vector<int>& pred, const std::vector<int>& labels, int n_classes);
double macro_recall(const std::vector<int>& pred, const std::vector<int>& labels,
                    int n_classes);

// F1-maximizing threshold over the grid {0.01, ..., 0.99}; ties take the
// smallest threshold. Probabilities, not logits.
double threshold_sweep(const std::vector<double>& probs, const std::vector<int>& labels);

// n draws with replacement, example weight inversely proportional to class
// frequency; expected class mix is uniform.
std::vector<int> weighted_sample_indices(const std::vector<int>& labels, int n_draws, Rng& rng);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

// Preprocessed arrays plus split indices; everything the protocol consumes.
struct TrainData {
    Tensor x_time;  // (n, C, T)
    Tensor x_spec;  // (n, C, F, T')
    std::vector<int> labels;
    std::vector<int> train_idx, val_idx, test1_idx, test2_idx;
};

struct TrainResult {
    std::vector<EpochLog> history;
    int best_epoch = -1;
    double best_metric = 0.0;
    bool early_stopped = false;
    double pos_weight = 1.0;  // 1 for multi-class
};

// Full protocol: seeded shuffling or weighted sampling, gradient clipping,
// Adam with loss-coupled L2, plateau scheduler on validation loss, early
// stopping on validation accuracy. Restores the best checkpoint (validation
// accuracy for multi-class, validation PR-AUC for binary) before returning.
TrainResult train_model(model::Classifier& m, const TrainData& data, const TrainConfig& cfg,
                        uint64_t seed);

// Frozen-model metrics over a split; binary tasks evaluate at `threshold`.
MetricsRow evaluate(model::Classifier& m, const TrainData& data, const std::vector<int>& idx,
                    const std::string& split_name, double pos_weight, double threshold = 0.5);

std::string history_csv(const std::vector<EpochLog>& history);

}  // namespace aspen::train
