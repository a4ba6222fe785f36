#include "aspen/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace aspen::train {

using model::Classifier;
using model::LossKind;

void TrainConfig::validate() const {
    if (max_epochs < 1 || batch_size < 2) throw std::invalid_argument("train config: bad sizes");
    if (lr <= 0.0 || weight_decay < 0.0 || clip_norm <= 0.0)
        throw std::invalid_argument("train config: bad optimizer settings");
    if (scheduler_patience < 1 || early_stop_patience < 1)
        throw std::invalid_argument("train config: patience values must be >= 1");
    if (scheduler_factor <= 0.0 || scheduler_factor >= 1.0)
        throw std::invalid_argument("train config: scheduler factor must be inside (0, 1)");
}

bool PlateauScheduler::step(double val_loss) {
    if (val_loss < best_ - eps_) {
        best_ = val_loss;
        bad_ = 0;
        return false;
    }
    if (++bad_ >= patience_) {
        lr_ *= factor_;
        bad_ = 0;
        return true;
    }
    return false;
}

bool EarlyStopper::observe(double val_acc) {
    if (val_acc > best_) {
        best_ = val_acc;
        bad_ = 0;
        return false;
    }
    return ++bad_ >= patience_;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    int64_t pos = 0, neg = 0;
    for (int y : labels) (y == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks within tie groups
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - static_cast<double>(pos) * (pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double pr_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    int64_t pos = 0;
    for (int y : labels) pos += y == 1;
    if (pos == 0 || pos == static_cast<int64_t>(labels.size()))
        return std::numeric_limits<double>::quiet_NaN();

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double area = 0.0;
    double prev_recall = 0.0, prev_precision = 1.0;
    int64_t tp = 0, fp = 0;
    bool first = true;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (size_t k = i; k <= j; ++k) (labels[order[k]] == 1 ? tp : fp)++;
        double recall = static_cast<double>(tp) / pos;
        double precision = static_cast<double>(tp) / (tp + fp);
        if (first) {
            prev_precision = precision;  // anchor the curve at (0, p_first)
            first = false;
        }
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
        i = j + 1;
    }
    return area;
}

double roc_auc_ovr_macro(const Tensor& probs, const std::vector<int>& labels) {
    int k_n = probs.dim(1);
    double total = 0.0;
    int counted = 0;
    for (int k = 0; k < k_n; ++k) {
        std::vector<double> scores;
        std::vector<int> binary;
        for (size_t i = 0; i < labels.size(); ++i) {
            scores.push_back(probs.at(static_cast<int>(i), k));
            binary.push_back(labels[i] == k ? 1 : 0);
        }
        double auc = roc_auc_binary(scores, binary);
        if (!std::isnan(auc)) {
            total += auc;
            ++counted;
        }
    }
    return counted ? total / counted : std::numeric_limits<double>::quiet_NaN();
}

namespace {

struct Confusion {
    std::vector<int64_t> tp, fp, fn;
    explicit Confusion(int k) : tp(k, 0), fp(k, 0), fn(k, 0) {}
};

Confusion confusion(const std::vector<int>& pred, const std::vector<int>& labels, int k) {
    Confusion c(k);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (pred[i] == labels[i]) {
            ++c.tp[static_cast<size_t>(labels[i])];
        } else {
            ++c.fp[static_cast<size_t>(pred[i])];
            ++c.fn[static_cast<size_t>(labels[i])];
        }
    }
    return c;
}

double f1_of(int64_t tp, int64_t fp, int64_t fn) {
    return 2 * tp + fp + fn == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

double binary_f1(const std::vector<int>& pred, const std::vector<int>& labels) {
    auto c = confusion(pred, labels, 2);
    return f1_of(c.tp[1], c.fp[1], c.fn[1]);
}

double binary_recall(const std::vector<int>& pred, const std::vector<int>& labels) {
    auto c = confusion(pred, labels, 2);
    return c.tp[1] + c.fn[1] == 0 ? 0.0
                                  : static_cast<double>(c.tp[1]) / (c.tp[1] + c.fn[1]);
}

double macro_f1(const std::vector<int>& pred, const std::vector<int>& labels, int n_classes) {
    auto c = confusion(pred, labels, n_classes);
    double total = 0.0;
    for (int k = 0; k < n_classes; ++k)
        total += f1_of(c.tp[static_cast<size_t>(k)], c.fp[static_cast<size_t>(k)],
                       c.fn[static_cast<size_t>(k)]);
    return total / n_classes;
}

double macro_recall(const std::vector<int>& pred, const std::vector<int>& labels,
                    int n_classes) {
    auto c = confusion(pred, labels, n_classes);
    double total = 0.0;
    for (int k = 0; k < n_classes; ++k) {
        int64_t denom = c.tp[static_cast<size_t>(k)] + c.fn[static_cast<size_t>(k)];
        total += denom == 0 ? 0.0 : static_cast<double>(c.tp[static_cast<size_t>(k)]) / denom;
    }
    return total / n_classes;
}

double threshold_sweep(const std::vector<double>& probs, const std::vector<int>& labels) {
    int64_t pos = 0;
    for (int y : labels) pos += y == 1;
    if (pos == 0 || pos == static_cast<int64_t>(labels.size()))
        throw std::runtime_error("threshold_sweep: F1 undefined on single-class labels");

    double best_t = 0.01, best_f1 = -1.0;
    for (int i = 1; i <= 99; ++i) {
        double t = i / 100.0;
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t j = 0; j < probs.size(); ++j) {
            int pred = probs[j] >= t ? 1 : 0;
            if (pred == 1 && labels[j] == 1) ++tp;
            if (pred == 1 && labels[j] == 0) ++fp;
            if (pred == 0 && labels[j] == 1) ++fn;
        }
        double f1 = f1_of(tp, fp, fn);
        if (f1 > best_f1) {  // strict: ties keep the smallest threshold
            best_f1 = f1;
            best_t = t;
        }
    }
    return best_t;
}

std::vector<int> weighted_sample_indices(const std::vector<int>& labels, int n_draws,
                                         Rng& rng) {
    std::map<int, int64_t> counts;
    for (int y : labels) ++counts[y];
    for (auto& [label, c] : counts)
        if (c == 0) throw std::invalid_argument("weighted sampler: empty class");
    if (counts.empty()) throw std::invalid_argument("weighted sampler: no examples");

    std::vector<double> cum(labels.size());
    double total = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        total += 1.0 / static_cast<double>(counts[labels[i]]);
        cum[i] = total;
    }
    std::vector<int> out(static_cast<size_t>(n_draws));
    for (int d = 0; d < n_draws; ++d) {
        double u = rng.uniform(0.0, total);
        out[static_cast<size_t>(d)] = static_cast<int>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void gather_batch(const TrainData& data, const std::vector<int>& idx, size_t start,
                  size_t count, Tensor& x_time, Tensor& x_spec, std::vector<int>& labels) {
    int64_t time_row = data.x_time.numel() / data.x_time.dim(0);
    int64_t spec_row = data.x_spec.numel() / data.x_spec.dim(0);
    Shape tshape = data.x_time.shape;
    Shape sshape = data.x_spec.shape;
    tshape[0] = static_cast<int>(count);
    sshape[0] = static_cast<int>(count);
    x_time = Tensor(tshape);
    x_spec = Tensor(sshape);
    labels.resize(count);
    for (size_t i = 0; i < count; ++i) {
        int src = idx[start + i];
        std::copy(data.x_time.ptr() + src * time_row, data.x_time.ptr() + (src + 1) * time_row,
                  x_time.ptr() + static_cast<int64_t>(i) * time_row);
        std::copy(data.x_spec.ptr() + src * spec_row, data.x_spec.ptr() + (src + 1) * spec_row,
                  x_spec.ptr() + static_cast<int64_t>(i) * spec_row);
        labels[i] = data.labels[static_cast<size_t>(src)];
    }
}

nn::LossResult compute_loss(const Tensor& logits, const std::vector<int>& labels, bool binary,
                            double pos_weight) {
    if (binary) return nn::bce_with_logits_loss(logits, labels, pos_weight);
    return nn::cross_entropy_loss(logits, labels);
}

struct ValStats {
    double loss = 0.0;
    double acc = 0.0;      // fraction
    double pr_auc = 0.0;   // binary only
    double roc_auc = 0.0;  // binary only
};

ValStats validate_pass(Classifier& m, const TrainData& data, const std::vector<int>& idx,
                       bool binary, double pos_weight) {
    m.set_training(false);
    ValStats st;
    std::vector<double> scores;
    std::vector<int> labels, pred;
    double loss_sum = 0.0;
    int64_t n = 0;
    const size_t chunk = 256;
    for (size_t start = 0; start < idx.size(); start += chunk) {
        size_t count = std::min(chunk, idx.size() - start);
        Tensor xt, xs;
        std::vector<int> yl;
        gather_batch(data, idx, start, count, xt, xs, yl);
        Tensor logits = m.forward(xt, xs);
        auto l = compute_loss(logits, yl, binary, pos_weight);
        loss_sum += l.loss * static_cast<double>(count);
        n += static_cast<int64_t>(count);
        for (size_t i = 0; i < count; ++i) {
            labels.push_back(yl[i]);
            if (binary) {
                double s = 1.0 / (1.0 + std::exp(-logits.data[i]));
                scores.push_back(s);
                pred.push_back(s >= 0.5 ? 1 : 0);
            } else {
                const double* row = logits.ptr() + i * logits.dim(1);
                pred.push_back(static_cast<int>(
                    std::max_element(row, row + logits.dim(1)) - row));
            }
        }
    }
    st.loss = loss_sum / static_cast<double>(n);
    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
    st.acc = static_cast<double>(correct) / static_cast<double>(labels.size());
    if (binary) {
        st.pr_auc = pr_auc_binary(scores, labels);
        st.roc_auc = roc_auc_binary(scores, labels);
    }
    return st;
}

}  // namespace

TrainResult train_model(Classifier& m, const TrainData& data, const TrainConfig& cfg,
                        uint64_t seed) {
    cfg.validate();
    if (data.train_idx.empty() || data.val_idx.empty())
        throw std::invalid_argument("train: empty train or validation split");

    bool binary = m.logit_dim() == 1;
    TrainResult result;
    std::vector<int> train_labels;
    for (int i : data.train_idx) train_labels.push_back(data.labels[static_cast<size_t>(i)]);
    result.pos_weight = binary ? model::pos_weight_from_labels(train_labels) : 1.0;

    auto params = m.params();
    nn::Adam opt(params, cfg.lr);
    PlateauScheduler scheduler(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience,
                               cfg.plateau_eps);
    EarlyStopper stopper(cfg.early_stop_patience);
    Rng rng(seed);

    std::vector<Tensor> best_params;
    double best_metric = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<int> order;
        if (cfg.weighted_sampling) {
            auto draws = weighted_sample_indices(train_labels,
                                                 static_cast<int>(data.train_idx.size()), rng);
            for (int d : draws) order.push_back(data.train_idx[static_cast<size_t>(d)]);
        } else {
            order = data.train_idx;
            rng.shuffle(order);
        }

        m.set_training(true);
        double loss_sum = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t count = std::min(static_cast<size_t>(cfg.batch_size), order.size() - start);
            if (count < 2) break;  // batch norm needs at least two examples
            Tensor xt, xs;
            std::vector<int> yl;
            gather_batch(data, order, start, count, xt, xs, yl);

            nn::zero_grads(params);
            Tensor logits = m.forward(xt, xs);
            auto loss = compute_loss(logits, yl, binary, result.pos_weight);
            if (!std::isfinite(loss.loss))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(start / cfg.batch_size));
            m.backward(loss.dlogits);
            for (auto* p : params)  // loss-coupled L2
                for (size_t j = 0; j < p->grad.data.size(); ++j)
                    p->grad.data[j] += cfg.weight_decay * p->value.data[j];
            nn::clip_global_norm(params, cfg.clip_norm);
            opt.step();
            loss_sum += loss.loss * static_cast<double>(count);
            seen += static_cast<int64_t>(count);
        }

        auto val = validate_pass(m, data, data.val_idx, binary, result.pos_weight);
        double metric = binary ? (std::isnan(val.pr_auc) ? val.roc_auc : val.pr_auc) : val.acc;
        // ties keep the later checkpoint: equal validation score, lower
        // training loss
        if (metric >= best_metric) {
            best_metric = metric;
            best_epoch = epoch;
            best_params.clear();
            for (auto* p : params) best_params.push_back(p->value);
        }

        result.history.push_back({epoch, loss_sum / static_cast<double>(seen), val.loss,
                                  100.0 * val.acc, opt.lr()});

        if (scheduler.step(val.loss)) opt.set_lr(scheduler.lr());
        if (stopper.observe(val.acc)) {
            result.early_stopped = true;
            break;
        }
    }

    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    result.best_epoch = best_epoch;
    result.best_metric = best_metric;
    return result;
}

MetricsRow evaluate(Classifier& m, const TrainData& data, const std::vector<int>& idx,
                    const std::string& split_name, double pos_weight, double threshold) {
    if (idx.empty()) throw std::invalid_argument("evaluate: empty split " + split_name);
    bool binary = m.logit_dim() == 1;
    m.set_training(false);

    std::vector<double> scores;
    Tensor all_probs;
    std::vector<int> labels, pred;
    double loss_sum = 0.0;
    int64_t n = 0;
    std::vector<double> prob_rows;
    const size_t chunk = 256;
    for (size_t start = 0; start < idx.size(); start += chunk) {
        size_t count = std::min(chunk, idx.size() - start);
        Tensor xt, xs;
        std::vector<int> yl;
        gather_batch(data, idx, start, count, xt, xs, yl);
        Tensor logits = m.forward(xt, xs);
        auto l = compute_loss(logits, yl, binary, pos_weight);
        loss_sum += l.loss * static_cast<double>(count);
        n += static_cast<int64_t>(count);
        for (size_t i = 0; i < count; ++i) {
            labels.push_back(yl[i]);
            if (binary) {
                double s = 1.0 / (1.0 + std::exp(-logits.data[i]));
                scores.push_back(s);
                pred.push_back(s >= threshold ? 1 : 0);
            } else {
                Tensor row({1, logits.dim(1)});
                std::copy(logits.ptr() + i * logits.dim(1),
                          logits.ptr() + (i + 1) * logits.dim(1), row.ptr());
                Tensor p = nn::softmax(row);
                for (int k = 0; k < logits.dim(1); ++k) prob_rows.push_back(p.at(0, k));
                pred.push_back(static_cast<int>(
                    std::max_element(p.ptr(), p.ptr() + logits.dim(1)) - p.ptr()));
            }
        }
    }

    MetricsRow row;
    row.split = split_name;
    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
    row.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
    row.loss = loss_sum / static_cast<double>(n);
    if (binary) {
        row.f1 = 100.0 * binary_f1(pred, labels);
        row.recall = 100.0 * binary_recall(pred, labels);
        row.roc_auc = 100.0 * roc_auc_binary(scores, labels);
        row.pr_auc = 100.0 * pr_auc_binary(scores, labels);
    } else {
        int k_n = m.config().n_classes;
        row.f1 = 100.0 * macro_f1(pred, labels, k_n);
        row.recall = 100.0 * macro_recall(pred, labels, k_n);
        Tensor probs({static_cast<int>(labels.size()), k_n}, std::move(prob_rows));
        row.roc_auc = 100.0 * roc_auc_ovr_macro(probs, labels);
    }
    return row;
}

std::string history_csv(const std::vector<EpochLog>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_acc,lr\n";
    char buf[160];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.6f,%.9g\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_acc, e.lr);
        os << buf;
    }
    return os.str();
}

}  // namespace aspen::train
