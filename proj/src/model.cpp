#include "aspen/model.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace aspen::model {

using json = nlohmann::json;
using namespace aspen::nn;

// ---------------------------------------------------------------------------
// ModelConfig serialization
// ---------------------------------------------------------------------------

std::string ModelConfig::to_json() const {
    json j;
    j["n_classes"] = n_classes;
    j["d"] = d;
    j["temporal_kernel"] = temporal_kernel;
    j["f1"] = f1;
    j["depth_mult"] = depth_mult;
    j["sep_kernel"] = sep_kernel;
    j["pool1"] = pool1;
    j["pool2"] = pool2;
    j["spec_ch1"] = spec_ch1;
    j["spec_ch2"] = spec_ch2;
    j["se_ratio"] = se_ratio;
    j["spec_pool"] = spec_pool;
    j["cnn_dropout"] = cnn_dropout;
    j["global_dropout"] = global_dropout;
    j["fusion"] = fusion;
    j["fusion_tau"] = fusion_hyper.tau;
    j["fusion_alpha_init"] = fusion_hyper.alpha_init;
    j["fusion_rank"] = fusion_hyper.rank;
    j["fusion_heads"] = fusion_hyper.heads;
    j["fusion_dropout"] = fusion_hyper.dropout;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    json j = json::parse(s);
    ModelConfig c;
    c.n_classes = j.at("n_classes");
    c.d = j.at("d");
    c.temporal_kernel = j.at("temporal_kernel");
    c.f1 = j.at("f1");
    c.depth_mult = j.at("depth_mult");
    c.sep_kernel = j.at("sep_kernel");
    c.pool1 = j.at("pool1");
    c.pool2 = j.at("pool2");
    c.spec_ch1 = j.at("spec_ch1");
    c.spec_ch2 = j.at("spec_ch2");
    c.se_ratio = j.at("se_ratio");
    c.spec_pool = j.at("spec_pool");
    c.cnn_dropout = j.at("cnn_dropout");
    c.global_dropout = j.at("global_dropout");
    c.fusion = j.at("fusion");
    c.fusion_hyper.tau = j.at("fusion_tau");
    c.fusion_hyper.alpha_init = j.at("fusion_alpha_init");
    c.fusion_hyper.rank = j.at("fusion_rank");
    c.fusion_hyper.heads = j.at("fusion_heads");
    c.fusion_hyper.dropout = j.at("fusion_dropout");
    return c;
}

// ---------------------------------------------------------------------------
// residual conv stage: conv -> bn -> elu -> se, plus a 1x1 projection skip
// ---------------------------------------------------------------------------

namespace {

class ResidualStage : public Module {
public:
    ResidualStage(int cin, int cout, int kh, int kw, int se_ratio, const std::string& name,
                  Rng& rng)
        : conv_(cin, cout, kh, kw, 1, 1, kh / 2, kw / 2, name + ".conv", rng),
          bn_(cout, name + ".bn"),
          se_(cout, se_ratio, name + ".se", rng),
          proj_(cin, cout, 1, 1, 1, 1, 0, 0, name + ".proj", rng) {}

    Tensor forward(const Tensor& x) override {
        Tensor main = se_.forward(elu_.forward(bn_.forward(conv_.forward(x))));
        Tensor skip = proj_.forward(x);
        for (size_t i = 0; i < main.data.size(); ++i) main.data[i] += skip.data[i];
        return main;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dmain = conv_.backward(bn_.backward(elu_.backward(se_.backward(dy))));
        Tensor dskip = proj_.backward(dy);
        for (size_t i = 0; i < dmain.data.size(); ++i) dmain.data[i] += dskip.data[i];
        return dmain;
    }

    void collect_params(std::vector<Parameter*>& out) override {
        conv_.collect_params(out);
        bn_.collect_params(out);
        se_.collect_params(out);
        proj_.collect_params(out);
    }

    void set_training(bool t) override {
        training_ = t;
        conv_.set_training(t);
        bn_.set_training(t);
        se_.set_training(t);
        proj_.set_training(t);
    }

private:
    Conv2d conv_;
    BatchNorm bn_;
    ELU elu_;
    SEBlock se_;
    Conv2d proj_;
};

int pooled(int size, int window) { return (size - window) / window + 1; }

// largest odd kernel <= 3 that fits the axis; keeps every kernel column in
// play and the residual projection shape-aligned
int stage_kernel(int size) { return size >= 3 ? 3 : 1; }

uint64_t mix_seed(uint64_t seed) { return seed ^ 0xD1B54A32D192ED03ull; }

}  // namespace

// ---------------------------------------------------------------------------
// TemporalStream
// ---------------------------------------------------------------------------

TemporalStream::TemporalStream(const ModelConfig& cfg, int channels, int t_len, Rng& rng,
                               Rng* dropout_rng)
    : channels_(channels), t_len_(t_len) {
    int kt = cfg.temporal_kernel;
    if (kt < 1 || kt > t_len)
        throw std::invalid_argument("temporal stream: kernel length " + std::to_string(kt) +
                                    " does not fit trial length " + std::to_string(t_len));
    int f2 = cfg.f1 * cfg.depth_mult;

    net_.add<Conv2d>(1, cfg.f1, 1, kt, 1, 1, 0, kt / 2, "temporal.conv", rng);
    net_.add<BatchNorm>(cfg.f1, "temporal.bn");
    net_.add<DepthwiseConv2d>(cfg.f1, cfg.depth_mult, channels, 1, 0, 0, "temporal.spatial",
                              rng);
    net_.add<ELU>();
    int w = t_len + 2 * (kt / 2) - kt + 1;
    int p1 = std::min(cfg.pool1, w);
    net_.add<AvgPool2d>(1, p1);
    w = pooled(w, p1);
    net_.add<Dropout>(cfg.cnn_dropout, dropout_rng);
    int ks = std::min(cfg.sep_kernel, w);
    net_.add<SeparableConv2d>(f2, f2, 1, ks, 0, ks / 2, "temporal.separable", rng);
    w = w + 2 * (ks / 2) - ks + 1;
    net_.add<ELU>();
    int p2 = std::min(cfg.pool2, w);
    net_.add<AvgPool2d>(1, p2);
    w = pooled(w, p2);
    net_.add<Dropout>(cfg.cnn_dropout, dropout_rng);
    net_.add<Flatten>();
    net_.add<Linear>(f2 * w, cfg.d, "temporal.proj", rng);
}

Tensor TemporalStream::forward(const Tensor& x_time) {
    if (x_time.ndim() != 3 || x_time.dim(1) != channels_ || x_time.dim(2) != t_len_)
        throw std::invalid_argument("temporal stream: bad input shape " +
                                    shape_str(x_time.shape));
    int b_n = x_time.dim(0);
    return net_.forward(x_time.reshaped({b_n, 1, channels_, t_len_}));
}

Tensor TemporalStream::backward(const Tensor& d_out) {
    Tensor dx = net_.backward(d_out);
    return dx.reshaped({dx.dim(0), channels_, t_len_});
}

void TemporalStream::collect_params(std::vector<Parameter*>& out) { net_.collect_params(out); }
void TemporalStream::set_training(bool t) { net_.set_training(t); }

// ---------------------------------------------------------------------------
// SpectralStream
// ---------------------------------------------------------------------------

SpectralStream::SpectralStream(const ModelConfig& cfg, int channels, int f_bins, int t_frames,
                               Rng& rng, Rng* dropout_rng)
    : channels_(channels), f_bins_(f_bins), t_frames_(t_frames), d_(cfg.d) {
    if (f_bins < 1 || t_frames < 1)
        throw std::invalid_argument("spectral stream: empty frequency-time grid");
    int h = f_bins, w = t_frames;

    pre_tap_.add<ResidualStage>(1, cfg.spec_ch1, stage_kernel(h), stage_kernel(w),
                                cfg.se_ratio, "spectral.stage1", rng);
    int p1h = std::min(cfg.spec_pool, h), p1w = std::min(cfg.spec_pool, w);
    pre_tap_.add<AvgPool2d>(p1h, p1w);
    h = pooled(h, p1h);
    w = pooled(w, p1w);
    pre_tap_.add<Dropout>(cfg.cnn_dropout, dropout_rng);
    pre_tap_.add<ResidualStage>(cfg.spec_ch1, cfg.spec_ch2, stage_kernel(h), stage_kernel(w),
                                cfg.se_ratio, "spectral.stage2", rng);

    int p2h = std::min(cfg.spec_pool, h), p2w = std::min(cfg.spec_pool, w);
    post_tap_.add<AvgPool2d>(p2h, p2w);
    h = pooled(h, p2h);
    w = pooled(w, p2w);
    post_tap_.add<Dropout>(cfg.cnn_dropout, dropout_rng);
    post_tap_.add<Flatten>();
    post_tap_.add<Linear>(cfg.spec_ch2 * h * w, cfg.d, "spectral.proj", rng);
    tap_channels_ = cfg.spec_ch2;
}

Tensor SpectralStream::forward(const Tensor& x_spec) {
    if (x_spec.ndim() != 4 || x_spec.dim(1) != channels_ || x_spec.dim(2) != f_bins_ ||
        x_spec.dim(3) != t_frames_)
        throw std::invalid_argument("spectral stream: bad input shape " +
                                    shape_str(x_spec.shape));
    batch_ = x_spec.dim(0);
    // EEG channels share the encoder: fold them into the batch axis
    Tensor planes = x_spec.reshaped({batch_ * channels_, 1, f_bins_, t_frames_});
    Tensor mid = pre_tap_.forward(planes);
    if (capture_) tap_act_ = mid;
    Tensor feats = post_tap_.forward(mid);  // (B*C, d)
    per_chan_ = feats.reshaped({batch_, channels_, d_});

    Tensor xs({batch_, d_});
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < channels_; ++c)
            for (int j = 0; j < d_; ++j) xs.at(b, j) += per_chan_.at(b, c, j) / channels_;
    return xs;
}

Tensor SpectralStream::backward(const Tensor& d_xs, const Tensor* d_per_chan) {
    Tensor dfeats({batch_ * channels_, d_});
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < channels_; ++c)
            for (int j = 0; j < d_; ++j) {
                double g = d_xs.at(b, j) / channels_;
                if (d_per_chan) g += d_per_chan->at(b, c, j);
                dfeats.at(b * channels_ + c, j) = g;
            }
    Tensor dmid = post_tap_.backward(dfeats);
    if (capture_) tap_grad_ = dmid;
    Tensor dplanes = pre_tap_.backward(dmid);
    return dplanes.reshaped({batch_, channels_, f_bins_, t_frames_});
}

void SpectralStream::collect_params(std::vector<Parameter*>& out) {
    pre_tap_.collect_params(out);
    post_tap_.collect_params(out);
}

void SpectralStream::set_training(bool t) {
    pre_tap_.set_training(t);
    post_tap_.set_training(t);
}

int SpectralStream::tap_channels() const { return tap_channels_; }

// ---------------------------------------------------------------------------
// AspenModel
// ---------------------------------------------------------------------------

AspenModel::AspenModel(const ModelConfig& cfg, int channels, int t_len, int f_bins,
                       int t_frames, uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      drop_rng_(mix_seed(seed)),
      temporal_(cfg, channels, t_len, init_rng_, &drop_rng_),
      spectral_(cfg, channels, f_bins, t_frames, init_rng_, &drop_rng_),
      fusion_(fusion::make_fusion(fusion::kind_from_name(cfg.fusion), cfg.d, channels,
                                  cfg.fusion_hyper, init_rng_, &drop_rng_)),
      head_dropout_(cfg.global_dropout, &drop_rng_),
      classifier_(cfg.d, cfg.logit_dim(), "classifier", init_rng_) {
    if (cfg.n_classes < 2)
        throw std::invalid_argument("model: need at least two classes");
}

Tensor AspenModel::forward(const Tensor& x_time, const Tensor& x_spec) {
    xt_ = temporal_.forward(x_time);
    xs_ = spectral_.forward(x_spec);
    const Tensor* pc =
        fusion_->needs_per_channel() ? &spectral_.per_channel_features() : nullptr;
    Tensor fused = fusion_->fuse(xs_, pc, xt_);
    return classifier_.forward(head_dropout_.forward(fused));
}

void AspenModel::backward(const Tensor& dlogits) {
    Tensor dfused = head_dropout_.backward(classifier_.backward(dlogits));
    Tensor dxs, dxt, dpc;
    bool pc = fusion_->needs_per_channel();
    fusion_->backward(dfused, dxs, pc ? &dpc : nullptr, dxt);
    spectral_.backward(dxs, pc ? &dpc : nullptr);
    temporal_.backward(dxt);
}

std::vector<Parameter*> AspenModel::params() {
    std::vector<Parameter*> out;
    temporal_.collect_params(out);
    spectral_.collect_params(out);
    fusion_->collect_params(out);
    classifier_.collect_params(out);
    return out;
}

void AspenModel::set_training(bool t) {
    temporal_.set_training(t);
    spectral_.set_training(t);
    fusion_->set_training(t);
    head_dropout_.set_training(t);
    classifier_.set_training(t);
}

std::string AspenModel::hyper_json(int channels, int t_len, int f_bins, int t_frames) const {
    json j;
    j["type"] = "aspen";
    j["config"] = json::parse(cfg_.to_json());
    j["channels"] = channels;
    j["t_len"] = t_len;
    j["f_bins"] = f_bins;
    j["t_frames"] = t_frames;
    return j.dump();
}

// ---------------------------------------------------------------------------
// SpenModel
// ---------------------------------------------------------------------------

SpenModel::SpenModel(const ModelConfig& cfg, int channels, int f_bins, int t_frames,
                     uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      drop_rng_(mix_seed(seed)),
      spectral_(cfg, channels, f_bins, t_frames, init_rng_, &drop_rng_),
      bn_(cfg.d, "head.bn"),
      head_dropout_(cfg.global_dropout, &drop_rng_),
      classifier_(cfg.d, cfg.logit_dim(), "classifier", init_rng_) {
    if (cfg.n_classes < 2)
        throw std::invalid_argument("model: need at least two classes");
}

Tensor SpenModel::forward(const Tensor&, const Tensor& x_spec) {
    xs_ = spectral_.forward(x_spec);
    return classifier_.forward(head_dropout_.forward(bn_.forward(xs_)));
}

void SpenModel::backward(const Tensor& dlogits) {
    Tensor dxs = bn_.backward(head_dropout_.backward(classifier_.backward(dlogits)));
    spectral_.backward(dxs);
}

std::vector<Parameter*> SpenModel::params() {
    std::vector<Parameter*> out;
    spectral_.collect_params(out);
    bn_.collect_params(out);
    classifier_.collect_params(out);
    return out;
}

void SpenModel::set_training(bool t) {
    spectral_.set_training(t);
    bn_.set_training(t);
    head_dropout_.set_training(t);
    classifier_.set_training(t);
}

std::string SpenModel::hyper_json(int channels, int f_bins, int t_frames) const {
    json j;
    j["type"] = "spen";
    j["config"] = json::parse(cfg_.to_json());
    j["channels"] = channels;
    j["f_bins"] = f_bins;
    j["t_frames"] = t_frames;
    return j.dump();
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

LossKind select_loss(int n_classes) {
    if (n_classes < 2) throw std::invalid_argument("select_loss: need at least two classes");
    return n_classes == 2 ? LossKind::BinaryCrossEntropy : LossKind::CrossEntropy;
}

double pos_weight_from_labels(const std::vector<int>& labels) {
    int64_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y == 1)
            ++pos;
        else
            ++neg;
    }
    if (pos == 0 || neg == 0)
        throw std::runtime_error("pos_weight: training split is missing a class");
    return static_cast<double>(neg) / static_cast<double>(pos);
}

}  // namespace aspen::model
