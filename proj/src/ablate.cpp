#include "aspen/ablate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace aspen::harness {

using json = nlohmann::json;
using data::Paradigm;
using signal::Dataset;
using signal::StftConfig;
using train::MetricsRow;
using train::TrainData;

// ---------------------------------------------------------------------------
// task registry
// ---------------------------------------------------------------------------

const std::vector<TaskSpec>& TaskSpec::registry() {
    static const std::vector<TaskSpec> tasks = [] {
        std::vector<TaskSpec> t;
        // ssvep: 6-90 Hz band at the native rate, then downsampled to 125 Hz
        // (synthetic class content stays below the 50 Hz anti-alias cutoff)
        t.push_back({"ssvep", Paradigm::Ssvep, 4, 6.0, 90.0, 125.0,
                     StftConfig{125.0, 64, 32, 128}, false, false});
        // p300: 1-24 Hz, native 256 Hz, weighted sampling for the imbalance
        t.push_back({"p300", Paradigm::P300, 2, 1.0, 24.0, 0.0,
                     StftConfig{256.0, 128, 64, 256}, true, false});
        // mi: 4-40 Hz, downsampled to 125 Hz, 4-second trials
        t.push_back({"mi", Paradigm::Mi, 4, 4.0, 40.0, 125.0,
                     StftConfig{125.0, 128, 64, 256}, false, false});
        // mi-phase: timing-coded classes; one whole-trial spectral frame
        t.push_back({"mi-phase", Paradigm::Mi, 2, 4.0, 40.0, 125.0,
                     StftConfig{125.0, 500, 250, 512}, false, true});
        return t;
    }();
    return tasks;
}

const TaskSpec& TaskSpec::by_name(const std::string& name) {
    for (const auto& t : registry())
        if (t.name == name) return t;
    throw std::invalid_argument("unknown task: " + name);
}

data::SynthSpec default_synth_spec(const TaskSpec& task) {
    data::SynthSpec spec;
    switch (task.paradigm) {
        case Paradigm::Ssvep: spec = data::SynthSpec::ssvep_default(); break;
        case Paradigm::P300: spec = data::SynthSpec::p300_default(); break;
        case Paradigm::Mi:
            spec = task.phase_coded ? data::SynthSpec::mi_phase_coded_default()
                                    : data::SynthSpec::mi_default();
            break;
    }
    return spec;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

TrainData prepare(const Dataset& ds, const TaskSpec& task, const StftConfig& cfg,
                  const data::SplitPlan& plan) {
    if (ds.trials.empty()) throw std::invalid_argument("prepare: empty dataset");
    int n = static_cast<int>(ds.trials.size());
    int c_n = ds.trials[0].channels();

    TrainData out;
    out.labels.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& trial = ds.trials[static_cast<size_t>(i)];
        Tensor x = signal::bandpass_filter(trial.data, task.band_lo, task.band_hi, ds.fs);
        if (task.fs_target > 0.0 && task.fs_target != ds.fs)
            x = signal::downsample(x, ds.fs, task.fs_target);
        x = signal::zscore_normalize(x);

        signal::Trial pre;
        pre.data = x;
        pre.fs = task.fs_target > 0.0 ? task.fs_target : ds.fs;
        auto sg = signal::trial_to_spectral_tensor(pre, cfg);

        if (i == 0) {
            out.x_time = Tensor({n, c_n, x.dim(1)});
            out.x_spec = Tensor({n, c_n, sg.power.dim(1), sg.power.dim(2)});
        }
        std::copy(x.data.begin(), x.data.end(),
                  out.x_time.ptr() + static_cast<int64_t>(i) * x.numel());
        std::copy(sg.power.data.begin(), sg.power.data.end(),
                  out.x_spec.ptr() + static_cast<int64_t>(i) * sg.power.numel());
        out.labels.push_back(trial.label);
    }
    out.train_idx = plan.train_idx;
    out.val_idx = plan.val_idx;
    out.test1_idx = plan.test1_idx;
    out.test2_idx = plan.test2_idx;
    return out;
}

model::ModelConfig default_model_config(const TaskSpec& task, double fs_effective,
                                        const std::string& fusion) {
    model::ModelConfig cfg;
    cfg.n_classes = task.n_classes;
    cfg.temporal_kernel = static_cast<int>(fs_effective / 2.0) | 1;  // fs/2, odd
    cfg.fusion = fusion;
    return cfg;
}

std::vector<double> binary_probs(model::Classifier& m, const TrainData& data,
                                 const std::vector<int>& idx) {
    if (m.logit_dim() != 1)
        throw std::invalid_argument("binary_probs: model is not single-logit");
    m.set_training(false);
    int64_t time_row = data.x_time.numel() / data.x_time.dim(0);
    int64_t spec_row = data.x_spec.numel() / data.x_spec.dim(0);
    std::vector<double> probs;
    const size_t chunk = 256;
    for (size_t start = 0; start < idx.size(); start += chunk) {
        size_t count = std::min(chunk, idx.size() - start);
        Shape ts = data.x_time.shape, ss = data.x_spec.shape;
        ts[0] = static_cast<int>(count);
        ss[0] = static_cast<int>(count);
        Tensor xt(ts), xs(ss);
        for (size_t i = 0; i < count; ++i) {
            int src = idx[start + i];
            std::copy(data.x_time.ptr() + src * time_row,
                      data.x_time.ptr() + (src + 1) * time_row,
                      xt.ptr() + static_cast<int64_t>(i) * time_row);
            std::copy(data.x_spec.ptr() + src * spec_row,
                      data.x_spec.ptr() + (src + 1) * spec_row,
                      xs.ptr() + static_cast<int64_t>(i) * spec_row);
        }
        Tensor logits = m.forward(xt, xs);
        for (size_t i = 0; i < count; ++i)
            probs.push_back(1.0 / (1.0 + std::exp(-logits.data[i])));
    }
    return probs;
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

namespace {

std::vector<int> labels_at(const TrainData& data, const std::vector<int>& idx) {
    std::vector<int> out;
    for (int i : idx) out.push_back(data.labels[static_cast<size_t>(i)]);
    return out;
}

// train one model on prepared data and fill an ablation row
void run_cell(model::Classifier& m, const TrainData& td, const train::TrainConfig& tc,
              uint64_t seed, bool binary, AblationRow& row) {
    auto res = train::train_model(m, td, tc, seed);
    row.threshold = 0.5;
    if (binary) {
        auto probs = binary_probs(m, td, td.val_idx);
        row.threshold = train::threshold_sweep(probs, labels_at(td, td.val_idx));
    }
    row.val = train::evaluate(m, td, td.val_idx, "val", res.pos_weight, row.threshold);
    row.seen = train::evaluate(m, td, td.test1_idx, "seen", res.pos_weight, row.threshold);
    row.unseen = train::evaluate(m, td, td.test2_idx, "unseen", res.pos_weight, row.threshold);
}

double selection_key(const AblationRow& row, bool binary) {
    if (!binary) return row.val.acc;
    return std::isnan(row.val.pr_auc) ? row.val.roc_auc : row.val.pr_auc;
}

}  // namespace

StftAblationResult run_stft_ablation(const Dataset& ds, const TaskSpec& task,
                                     const train::TrainConfig& tc, uint64_t seed) {
    bool binary = task.n_classes == 2;
    auto plan = data::split_subjects(ds, 0.75, seed);

    double fs_eff = task.fs_target > 0.0 ? task.fs_target : ds.fs;
    int trial_len = ds.trials[0].samples();
    if (task.fs_target > 0.0 && task.fs_target != ds.fs)
        trial_len = static_cast<int>(static_cast<int64_t>(trial_len) *
                                     static_cast<int64_t>(std::llround(task.fs_target)) /
                                     static_cast<int64_t>(std::llround(ds.fs)));
    auto space = signal::generate_stft_search_space(task.default_stft, trial_len);

    StftAblationResult result;
    for (const auto& p : space.pruned) {
        AblationRow row;
        row.config_id = "nperseg" + std::to_string(p.n_perseg) +
                        (p.n_fft > 0 ? "_nfft" + std::to_string(p.n_fft) : "");
        row.n_perseg = p.n_perseg;
        row.n_fft = p.n_fft;
        row.strategy = "spen";
        row.seed = seed;
        row.status = "skipped: " + p.reason;
        result.rows.push_back(row);
    }

    train::TrainConfig cell_tc = tc;
    cell_tc.weighted_sampling = task.weighted_sampling;
    for (const auto& entry : space.entries) {
        AblationRow row;
        row.config_id = entry.id;
        row.n_perseg = entry.cfg.n_perseg;
        row.n_overlap = entry.cfg.n_overlap;
        row.n_fft = entry.cfg.n_fft;
        row.strategy = "spen";
        row.seed = seed;
        try {
            TrainData td = prepare(ds, task, entry.cfg, plan);
            auto mc = default_model_config(task, fs_eff, "multiplicative");
            model::SpenModel m(mc, td.x_spec.dim(1), td.x_spec.dim(2), td.x_spec.dim(3), seed);
            run_cell(m, td, cell_tc, seed, binary, row);
        } catch (const std::exception& e) {
            row.status = std::string("skipped: ") + e.what();
        }
        result.rows.push_back(row);
    }

    // rank feasible configs by the validation selection key
    std::vector<const AblationRow*> ok;
    for (const auto& r : result.rows)
        if (r.status == "ok") ok.push_back(&r);
    std::stable_sort(ok.begin(), ok.end(), [&](const AblationRow* a, const AblationRow* b) {
        return selection_key(*a, binary) > selection_key(*b, binary);
    });
    for (size_t i = 0; i < ok.size() && i < 3; ++i) result.top3.push_back(ok[i]->config_id);
    return result;
}

FusionAblationResult run_fusion_ablation(const Dataset& ds, const TaskSpec& task,
                                         const std::vector<std::string>& config_ids,
                                         const train::TrainConfig& tc, uint64_t seed) {
    bool binary = task.n_classes == 2;
    auto plan = data::split_subjects(ds, 0.75, seed);

    double fs_eff = task.fs_target > 0.0 ? task.fs_target : ds.fs;
    int trial_len = ds.trials[0].samples();
    if (task.fs_target > 0.0 && task.fs_target != ds.fs)
        trial_len = static_cast<int>(static_cast<int64_t>(trial_len) *
                                     static_cast<int64_t>(std::llround(task.fs_target)) /
                                     static_cast<int64_t>(std::llround(ds.fs)));
    auto space = signal::generate_stft_search_space(task.default_stft, trial_len);
    std::map<std::string, StftConfig> by_id;
    for (const auto& e : space.entries) by_id[e.id] = e.cfg;

    train::TrainConfig cell_tc = tc;
    cell_tc.weighted_sampling = task.weighted_sampling;

    FusionAblationResult result;
    const AblationRow* best = nullptr;
    const AblationRow* best_mult = nullptr;
    for (const auto& id : config_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::invalid_argument("fusion ablation: unknown config id " + id);
        TrainData td = prepare(ds, task, it->second, plan);
        for (const auto& strategy : fusion::strategy_names()) {
            AblationRow row;
            row.config_id = id;
            row.n_perseg = it->second.n_perseg;
            row.n_overlap = it->second.n_overlap;
            row.n_fft = it->second.n_fft;
            row.strategy = strategy;
            row.seed = seed;
            try {
                auto mc = default_model_config(task, fs_eff, strategy);
                model::AspenModel m(mc, td.x_time.dim(1), td.x_time.dim(2), td.x_spec.dim(2),
                                    td.x_spec.dim(3), seed);
                run_cell(m, td, cell_tc, seed, binary, row);
            } catch (const std::exception& e) {
                row.status = std::string("skipped: ") + e.what();
            }
            result.rows.push_back(row);
        }
    }

    for (const auto& r : result.rows) {
        if (r.status != "ok") continue;
        if (!best || r.unseen.acc > best->unseen.acc) best = &r;
        if (r.strategy == "multiplicative" &&
            (!best_mult || r.unseen.acc > best_mult->unseen.acc))
            best_mult = &r;
    }
    if (best) {
        result.summary.best_strategy = best->strategy;
        result.summary.best_config = best->config_id;
        result.summary.best_acc = best->unseen.acc;
    }
    if (best_mult) result.summary.mult_acc = best_mult->unseen.acc;
    result.summary.delta = result.summary.mult_acc - result.summary.best_acc;
    return result;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void metrics_csv(std::ostringstream& os, const MetricsRow& m, bool binary, bool with_val_only) {
    if (with_val_only) {
        os << fmt(m.acc);
        return;
    }
    os << fmt(m.acc) << "," << fmt(m.f1) << "," << fmt(m.recall) << "," << fmt(m.roc_auc);
    if (binary) os << "," << fmt(m.pr_auc);
    os << "," << fmt(m.loss);
}

json metrics_json(const MetricsRow& m, bool binary) {
    json j = {{"acc", m.acc},       {"f1", m.f1},   {"recall", m.recall},
              {"roc_auc", m.roc_auc}, {"loss", m.loss}};
    if (binary) j["pr_auc"] = m.pr_auc;
    return j;
}

}  // namespace

std::string rows_csv(const std::vector<AblationRow>& rows, bool binary) {
    std::ostringstream os;
    os << "config_id,nperseg,noverlap,nfft,strategy,seed,status,threshold,"
          "val_acc,seen_acc,seen_loss,unseen_acc,unseen_f1,unseen_recall,unseen_auc";
    if (binary) os << ",unseen_pr_auc";
    os << ",unseen_loss\n";
    for (const auto& r : rows) {
        os << r.config_id << "," << r.n_perseg << "," << r.n_overlap << "," << r.n_fft << ","
           << r.strategy << "," << r.seed << "," << r.status << ",";
        if (r.status != "ok") {
            int blanks = binary ? 9 : 8;
            for (int i = 0; i < blanks; ++i) os << ",";
            os << "\n";
            continue;
        }
        os << fmt(r.threshold) << "," << fmt(r.val.acc) << "," << fmt(r.seen.acc) << ","
           << fmt(r.seen.loss) << ",";
        metrics_csv(os, r.unseen, binary, false);
        os << "\n";
    }
    return os.str();
}

std::string rows_json(const std::vector<AblationRow>& rows, bool binary) {
    json arr = json::array();
    for (const auto& r : rows) {
        json j;
        j["config_id"] = r.config_id;
        j["nperseg"] = r.n_perseg;
        j["noverlap"] = r.n_overlap;
        j["nfft"] = r.n_fft;
        j["strategy"] = r.strategy;
        j["seed"] = r.seed;
        j["status"] = r.status;
        if (r.status == "ok") {
            j["threshold"] = r.threshold;
            j["val"] = metrics_json(r.val, binary);
            j["seen"] = metrics_json(r.seen, binary);
            j["unseen"] = metrics_json(r.unseen, binary);
        }
        arr.push_back(j);
    }
    return arr.dump(2);
}

std::string fusion_summary_json(const FusionSummary& s) {
    json j;
    j["best_fusion"] = s.best_strategy;
    j["best_config"] = s.best_config;
    j["best_acc"] = s.best_acc;
    j["mult_acc"] = s.mult_acc;
    j["delta"] = s.delta;
    return j.dump(2);
}

std::string fusion_summary_csv(const FusionSummary& s) {
    std::ostringstream os;
    os << "best_fusion,best_config,best_acc,mult_acc,delta\n";
    os << s.best_strategy << "," << s.best_config << "," << fmt(s.best_acc) << ","
       << fmt(s.mult_acc) << "," << fmt(s.delta) << "\n";
    return os.str();
}

}  // namespace aspen::harness
