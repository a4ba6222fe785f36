#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aspen/train.hpp"
#include "oracles.hpp"

using namespace aspen;
using namespace aspen::train;

namespace {

// Constant-output classifier for metric contracts.
class ConstantClassifier : public model::Classifier {
public:
    ConstantClassifier(int n_classes, double logit) : logit_(logit) {
        cfg_.n_classes = n_classes;
    }
    Tensor forward(const Tensor& x_time, const Tensor&) override {
        Tensor out({x_time.dim(0), cfg_.logit_dim()});
        out.fill(logit_);
        return out;
    }
    void backward(const Tensor&) override {}
    std::vector<nn::Parameter*> params() override { return {}; }
    void set_training(bool) override {}
    int logit_dim() const override { return cfg_.logit_dim(); }
    const model::ModelConfig& config() const override { return cfg_; }

private:
    model::ModelConfig cfg_;
    double logit_;
};

// Tiny, trivially separable two-class task: opposite-sign deterministic
// patterns in both views plus mild noise.
TrainData separable_task(int n_per_class, uint64_t seed) {
    Rng rng(seed);
    int c_n = 2, t_len = 32, f_n = 5, frames = 2;
    int n = 2 * n_per_class;
    TrainData data;
    data.x_time = Tensor({n, c_n, t_len});
    data.x_spec = Tensor({n, c_n, f_n, frames});
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        double sign = label == 0 ? 1.0 : -1.0;
        data.labels.push_back(label);
        for (int c = 0; c < c_n; ++c)
            for (int t = 0; t < t_len; ++t)
                data.x_time.at(i, c, t) =
                    2.0 * sign * std::sin(2.0 * M_PI * t / 8.0) + 0.05 * rng.normal();
        for (int c = 0; c < c_n; ++c)
            for (int k = 0; k < f_n; ++k)
                for (int l = 0; l < frames; ++l)
                    data.x_spec.at(i, c, k, l) =
                        (k == (label == 0 ? 1 : 3) ? 2.0 : 0.1) + 0.05 * std::abs(rng.normal());
    }
    for (int i = 0; i < n; ++i) {
        if (i % 5 == 3)
            data.val_idx.push_back(i);
        else
            data.train_idx.push_back(i);
    }
    data.test1_idx = data.val_idx;
    data.test2_idx = data.val_idx;
    return data;
}

model::ModelConfig tiny_model_config(int n_classes) {
    model::ModelConfig cfg;
    cfg.n_classes = n_classes;
    cfg.d = 8;
    cfg.temporal_kernel = 9;
    cfg.f1 = 2;
    cfg.depth_mult = 2;
    cfg.sep_kernel = 4;
    cfg.spec_ch1 = 4;
    cfg.spec_ch2 = 8;
    cfg.se_ratio = 4;
    cfg.fusion_hyper.rank = 8;
    cfg.fusion_hyper.heads = 4;
    return cfg;
}

// Binary protocol: sweep the decision threshold on the validation split of
// the frozen model, then reuse it everywhere.
double swept_threshold(model::Classifier& m, const TrainData& data) {
    m.set_training(false);
    std::vector<double> probs;
    std::vector<int> labels;
    int64_t time_row = data.x_time.numel() / data.x_time.dim(0);
    int64_t spec_row = data.x_spec.numel() / data.x_spec.dim(0);
    for (int i : data.val_idx) {
        Shape ts = data.x_time.shape, ss = data.x_spec.shape;
        ts[0] = ss[0] = 1;
        Tensor xt(ts), xs(ss);
        std::copy(data.x_time.ptr() + i * time_row, data.x_time.ptr() + (i + 1) * time_row,
                  xt.ptr());
        std::copy(data.x_spec.ptr() + i * spec_row, data.x_spec.ptr() + (i + 1) * spec_row,
                  xs.ptr());
        Tensor logit = m.forward(xt, xs);
        probs.push_back(1.0 / (1.0 + std::exp(-logit.at(0, 0))));
        labels.push_back(data.labels[static_cast<size_t>(i)]);
    }
    return threshold_sweep(probs, labels);
}

}  // namespace

// ---------------------------------------------------------------------------
// scheduler / early stopping bookkeeping
// ---------------------------------------------------------------------------

TEST_CASE("plateau scheduler: two triggers quarter the rate") {
    PlateauScheduler sched(3e-4, 0.5, 5, 1e-6);
    // improvement, then stagnation
    CHECK(!sched.step(1.0));
    for (int i = 0; i < 4; ++i) CHECK(!sched.step(1.0));
    CHECK(sched.step(1.0));  // 5th stagnant epoch halves the rate
    CHECK(sched.lr() == doctest::Approx(1.5e-4));
    for (int i = 0; i < 4; ++i) CHECK(!sched.step(1.0));
    CHECK(sched.step(1.0));
    CHECK(sched.lr() == doctest::Approx(7.5e-5));
}

TEST_CASE("plateau scheduler: sub-epsilon improvement counts as stagnant") {
    PlateauScheduler sched(1e-3, 0.5, 2, 1e-6);
    CHECK(!sched.step(1.0));
    CHECK(!sched.step(1.0 - 1e-9));  // below the epsilon
    CHECK(sched.step(1.0 - 2e-9));
    CHECK(sched.lr() == doctest::Approx(5e-4));
}

TEST_CASE("early stopper: fires after exactly `patience` non-improving epochs") {
    EarlyStopper stop(15);
    CHECK(!stop.observe(0.50));
    CHECK(!stop.observe(0.80));  // improvement at epoch 2
    for (int i = 0; i < 14; ++i) CHECK(!stop.observe(0.80));
    CHECK(stop.observe(0.80));  // 15th consecutive non-improvement

    EarlyStopper stop2(3);
    CHECK(!stop2.observe(0.5));
    CHECK(!stop2.observe(0.4));
    CHECK(!stop2.observe(0.6));  // reset
    CHECK(!stop2.observe(0.6));
    CHECK(!stop2.observe(0.6));
    CHECK(stop2.observe(0.6));
}

// ---------------------------------------------------------------------------
// weighted sampler
// ---------------------------------------------------------------------------

TEST_CASE("weighted sampler: 9:1 imbalance draws ~50% positives") {
    std::vector<int> labels;
    for (int i = 0; i < 900; ++i) labels.push_back(0);
    for (int i = 0; i < 100; ++i) labels.push_back(1);
    Rng rng(44);
    auto idx = weighted_sample_indices(labels, 100000, rng);
    int64_t pos = 0;
    for (int i : idx) pos += labels[static_cast<size_t>(i)] == 1;
    double frac = static_cast<double>(pos) / 100000.0;
    CHECK(std::abs(frac - 0.5) < 0.01);
}

TEST_CASE("weighted sampler: balanced classes stay balanced") {
    std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1};
    Rng rng(36);
    auto idx = weighted_sample_indices(labels, 40000, rng);
    int64_t pos = 0;
    for (int i : idx) pos += labels[static_cast<size_t>(i)] == 1;
    CHECK(std::abs(pos / 40000.0 - 0.5) < 0.02);
    CHECK_THROWS_AS(weighted_sample_indices({}, 10, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// threshold sweep
// ---------------------------------------------------------------------------

TEST_CASE("threshold sweep: separated probabilities tie-break to the smallest grid point") {
    std::vector<double> probs = {0.05, 0.1, 0.15, 0.2, 0.8, 0.85, 0.9};
    std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1};
    CHECK(threshold_sweep(probs, labels) == doctest::Approx(0.21));
}

TEST_CASE("threshold sweep: exact labels give F1=1 at 0.5") {
    std::vector<double> probs = {0.0, 1.0, 1.0, 0.0, 1.0};
    std::vector<int> labels = {0, 1, 1, 0, 1};
    double t = threshold_sweep(probs, labels);
    CHECK(oracle::f1_at(probs, labels, 0.5) == doctest::Approx(1.0));
    CHECK(oracle::f1_at(probs, labels, t) == doctest::Approx(1.0));
}

TEST_CASE("threshold sweep: random probabilities match the brute-force grid oracle") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> probs;
        std::vector<int> labels;
        for (int i = 0; i < 60; ++i) {
            probs.push_back(rng.uniform());
            labels.push_back(rng.uniform() < 0.3 ? 1 : 0);
        }
        if (std::count(labels.begin(), labels.end(), 1) == 0 ||
            std::count(labels.begin(), labels.end(), 0) == 0)
            continue;
        CHECK(threshold_sweep(probs, labels) ==
              doctest::Approx(oracle::best_threshold_bruteforce(probs, labels)));
    }
}

TEST_CASE("threshold sweep: single-class labels rejected") {
    CHECK_THROWS_AS(threshold_sweep({0.2, 0.8}, {1, 1}), std::runtime_error);
}

// ---------------------------------------------------------------------------
// AUC metrics
// ---------------------------------------------------------------------------

TEST_CASE("roc auc: perfect, constant, and random-vs-oracle cases") {
    CHECK(roc_auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    CHECK(roc_auc_binary({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    CHECK(std::isnan(roc_auc_binary({0.5, 0.6}, {1, 1})));

    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 50; ++i) {
            // quantized scores force plenty of ties
            scores.push_back(std::round(rng.uniform() * 10.0) / 10.0);
            labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
        }
        if (std::count(labels.begin(), labels.end(), 1) == 0 ||
            std::count(labels.begin(), labels.end(), 0) == 0)
            continue;
        double want = oracle::auc_pairwise(scores, labels);
        CHECK(std::abs(roc_auc_binary(scores, labels) - want) < 1e-9);
    }
}

TEST_CASE("pr auc: perfect separation gives 1, constant scores give prevalence") {
    CHECK(pr_auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    std::vector<double> flat(12, 0.5);
    std::vector<int> labels(12, 0);
    labels[0] = labels[1] = 1;  // prevalence 1/6
    CHECK(pr_auc_binary(flat, labels) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("ovr-macro auc: perfect multi-class probabilities score 1") {
    Tensor probs({6, 3});
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    for (int i = 0; i < 6; ++i)
        for (int k = 0; k < 3; ++k) probs.at(i, k) = labels[static_cast<size_t>(i)] == k ? 0.9 : 0.05;
    CHECK(roc_auc_ovr_macro(probs, labels) == doctest::Approx(1.0));
}

TEST_CASE("macro metrics: hand-checked confusion") {
    // two classes, pred = [1,1,0,1], labels = [1,0,0,1]
    std::vector<int> pred = {1, 1, 0, 1}, labels = {1, 0, 0, 1};
    // class1: tp=2 fp=1 fn=0 -> f1 = 4/5, recall 1; class0: tp=1 fp=0 fn=1 -> f1 = 2/3, recall 1/2
    CHECK(binary_f1(pred, labels) == doctest::Approx(0.8));
    CHECK(binary_recall(pred, labels) == doctest::Approx(1.0));
    CHECK(macro_f1(pred, labels, 2) == doctest::Approx((0.8 + 2.0 / 3.0) / 2.0));
    CHECK(macro_recall(pred, labels, 2) == doctest::Approx(0.75));
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

TEST_CASE("evaluate: the all-positive classifier on a 1:5 split") {
    // 1 positive per 5 negatives, constant +10 logit -> always predicts 1
    TrainData data;
    int n = 60;
    data.x_time = Tensor({n, 1, 4});
    data.x_spec = Tensor({n, 1, 2, 2});
    for (int i = 0; i < n; ++i) {
        data.labels.push_back(i % 6 == 0 ? 1 : 0);
        data.test2_idx.push_back(i);
    }
    ConstantClassifier clf(2, 10.0);
    auto row = evaluate(clf, data, data.test2_idx, "unseen", 1.0, 0.5);
    CHECK(row.acc == doctest::Approx(16.67).epsilon(1e-3));
    CHECK(row.recall == doctest::Approx(100.0));
    CHECK(row.f1 == doctest::Approx(100.0 * 2.0 / 7.0).epsilon(1e-6));
    CHECK(row.roc_auc == doctest::Approx(50.0));
    CHECK(row.pr_auc == doctest::Approx(100.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("evaluate: a learned perfect classifier scores 100 at the swept threshold") {
    TrainData data = separable_task(20, 3);
    model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, 44);
    TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.batch_size = 16;
    cfg.lr = 3e-3;
    auto res = train_model(m, data, cfg, 44);
    double tstar = swept_threshold(m, data);
    auto row = evaluate(m, data, data.train_idx, "train", res.pos_weight, tstar);
    CHECK(row.acc == doctest::Approx(100.0));
    CHECK(row.f1 == doctest::Approx(100.0));
    CHECK(row.roc_auc == doctest::Approx(100.0));
    CHECK_THROWS_AS(evaluate(m, data, {}, "empty", 1.0, 0.5), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// training protocol
// ---------------------------------------------------------------------------

TEST_CASE("train: identical seed and data give bitwise-identical histories") {
    TrainData data = separable_task(12, 5);
    TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.batch_size = 8;
    auto run = [&](uint64_t seed) {
        model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, seed);
        return train_model(m, data, cfg, seed);
    };
    auto a = run(44);
    auto b = run(44);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);  // bitwise
        CHECK(a.history[i].val_loss == b.history[i].val_loss);
        CHECK(a.history[i].val_acc == b.history[i].val_acc);
        CHECK(a.history[i].lr == b.history[i].lr);
    }
    CHECK(history_csv(a.history) == history_csv(b.history));
}

TEST_CASE("train: bookkeeping invariants hold on a real run") {
    TrainData data = separable_task(12, 6);
    TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.batch_size = 8;
    cfg.early_stop_patience = 5;
    model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, 36);
    auto res = train_model(m, data, cfg, 36);

    CHECK(res.history.size() <= 30);
    double lr_prev = res.history.front().lr;
    for (const auto& e : res.history) {
        CHECK(e.lr <= lr_prev + 1e-18);  // never increases
        lr_prev = e.lr;
    }
    CHECK(res.best_epoch >= 1);
}

TEST_CASE("train: separable two-class task reaches 100% train accuracy within 50 epochs") {
    for (uint64_t seed : {44ull, 36ull, 10ull}) {
        TrainData data = separable_task(20, seed);
        TrainConfig cfg;
        cfg.max_epochs = 50;
        cfg.batch_size = 8;
        cfg.lr = 3e-3;
        cfg.early_stop_patience = 50;
        model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, seed);
        auto res = train_model(m, data, cfg, seed);
        auto row = evaluate(m, data, data.train_idx, "train", res.pos_weight, 0.5);
        CHECK_MESSAGE(row.acc == doctest::Approx(100.0), "seed ", seed);
    }
}

TEST_CASE("train: empty split is a configuration error") {
    TrainData data = separable_task(4, 7);
    data.val_idx.clear();
    TrainConfig cfg;
    model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, 44);
    CHECK_THROWS_AS(train_model(m, data, cfg, 44), std::invalid_argument);
}

TEST_CASE("train: validation F1 at the swept threshold is >= F1 at 0.5") {
    TrainData data = separable_task(20, 8);
    TrainConfig cfg;
    cfg.max_epochs = 10;
    cfg.batch_size = 16;
    model::AspenModel m(tiny_model_config(2), 2, 32, 5, 2, 10);
    auto res = train_model(m, data, cfg, 10);

    // collect validation probabilities from the frozen best checkpoint
    m.set_training(false);
    std::vector<double> probs;
    std::vector<int> labels;
    for (int i : data.val_idx) {
        Tensor xt({1, 2, 32}), xs({1, 2, 5, 2});
        std::copy(data.x_time.ptr() + static_cast<int64_t>(i) * 64,
                  data.x_time.ptr() + static_cast<int64_t>(i + 1) * 64, xt.ptr());
        std::copy(data.x_spec.ptr() + static_cast<int64_t>(i) * 20,
                  data.x_spec.ptr() + static_cast<int64_t>(i + 1) * 20, xs.ptr());
        Tensor logit = m.forward(xt, xs);
        probs.push_back(1.0 / (1.0 + std::exp(-logit.at(0, 0))));
        labels.push_back(data.labels[static_cast<size_t>(i)]);
    }
    double tstar = threshold_sweep(probs, labels);
    CHECK(tstar == doctest::Approx(swept_threshold(m, data)));
    CHECK(oracle::f1_at(probs, labels, tstar) >= oracle::f1_at(probs, labels, 0.5) - 1e-12);
}
