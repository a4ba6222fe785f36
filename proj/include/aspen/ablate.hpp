#pragma once

#include <string>
#include <vector>

#include "aspen/data.hpp"
#include "aspen/model.hpp"
#include "aspen/signal.hpp"
#include "aspen/train.hpp"

namespace aspen::harness {

// Per-task preprocessing and architecture defaults.
struct TaskSpec {
    std::string name;
    data::Paradigm paradigm = data::Paradigm::Ssvep;
    int n_classes = 4;
    double band_lo = 6.0;
    double band_hi = 90.0;
    double fs_target = 0.0;  // 0 = keep the native rate
    signal::StftConfig default_stft;  // at the post-downsample rate
    bool weighted_sampling = false;
    bool phase_coded = false;

    static const std::vector<TaskSpec>& registry();
    static const TaskSpec& by_name(const std::string& name);
};

data::SynthSpec default_synth_spec(const TaskSpec& task);

// bandpass -> downsample -> z-score, then per-channel power spectrograms;
// split indices copied from the plan.
train::TrainData prepare(const signal::Dataset& ds, const TaskSpec& task,
                         const signal::StftConfig& cfg, const data::SplitPlan& plan);

model::ModelConfig default_model_config(const TaskSpec& task, double fs_effective,
                                        const std::string& fusion);

// Sigmoid probabilities of the positive class over a split (single-logit
// models only).
std::vector<double> binary_probs(model::Classifier& m, const train::TrainData& data,
                                 const std::vector<int>& idx);

struct AblationRow {
    std::string config_id;
    int n_perseg = 0;
    int n_overlap = 0;
    int n_fft = 0;
    std::string strategy;  // "spen" in the STFT sweep
    uint64_t seed = 0;
    std::string status = "ok";  // or "skipped: <reason>"
    double threshold = 0.5;     // binary tasks: F1-swept on validation
    train::MetricsRow val, seen, unseen;
};

struct StftAblationResult {
    std::vector<AblationRow> rows;
    std::vector<std::string> top3;  // best-first config identifiers
};

// Trains the same SPEN backbone for every feasible configuration in the
// task-aware search space; selection key is validation accuracy
// (multi-class) or validation PR-AUC with ROC-AUC fallback (binary).
StftAblationResult run_stft_ablation(const signal::Dataset& ds, const TaskSpec& task,
                                     const train::TrainConfig& tc, uint64_t seed);

struct FusionSummary {
    std::string best_strategy;
    std::string best_config;
    double best_acc = 0.0;  // unseen-subject accuracy, percent
    double mult_acc = 0.0;
    double delta = 0.0;  // mult_acc - best_acc; 0 when multiplicative wins
};

struct FusionAblationResult {
    std::vector<AblationRow> rows;  // 7 strategies x |configs|
    FusionSummary summary;
};

FusionAblationResult run_fusion_ablation(const signal::Dataset& ds, const TaskSpec& task,
                                         const std::vector<std::string>& config_ids,
                                         const train::TrainConfig& tc, uint64_t seed);

std::string rows_csv(const std::vector<AblationRow>& rows, bool binary);
std::string rows_json(const std::vector<AblationRow>& rows, bool binary);
std::string fusion_summary_json(const FusionSummary& s);
std::string fusion_summary_csv(const FusionSummary& s);

}  // namespace aspen::harness
