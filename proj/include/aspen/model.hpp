#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aspen/fusion.hpp"
#include "aspen/nn.hpp"
#include "aspen/rng.hpp"
#include "aspen/tensor.hpp"

namespace aspen::model {

struct ModelConfig {
    int n_classes = 4;
    int d = 64;
    // temporal stream
    int temporal_kernel = 125;  // samples; harness defaults this to fs/2, odd
    int f1 = 8;
    int depth_mult = 2;
    int sep_kernel = 16;
    int pool1 = 4;
    int pool2 = 8;
    // spectral stream
    int spec_ch1 = 16;
    int spec_ch2 = 32;
    int se_ratio = 8;
    int spec_pool = 2;
    // regularization
    double cnn_dropout = 0.25;
    double global_dropout = 0.3;
    // fusion
    std::string fusion = "multiplicative";
    fusion::FusionHyper fusion_hyper;

    bool binary() const { return n_classes == 2; }
    int logit_dim() const { return binary() ? 1 : n_classes; }

    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

// EEGNet-style raw-waveform encoder: temporal convolution, depthwise spatial
// filter over the electrode axis, separable convolution, projection to d.
class TemporalStream {
public:
    TemporalStream(const ModelConfig& cfg, int channels, int t_len, Rng& rng,
                   Rng* dropout_rng);
    Tensor forward(const Tensor& x_time);  // (B, C, T) -> (B, d)
    Tensor backward(const Tensor& d_out);
    void collect_params(std::vector<nn::Parameter*>& out);
    void set_training(bool t);

private:
    int channels_, t_len_;
    nn::Sequential net_;
};

// Two-stage residual CNN with SE attention over per-channel power
// spectrograms; EEG channels share weights and are averaged at the end.
class SpectralStream {
public:
    SpectralStream(const ModelConfig& cfg, int channels, int f_bins, int t_frames, Rng& rng,
                   Rng* dropout_rng);
    Tensor forward(const Tensor& x_spec);  // (B, C, F, T') -> (B, d)
    // d_xs: gradient of the averaged feature; d_per_chan (optional): gradient
    // of the (B, C, d) per-channel features consumed by spatial fusion.
    Tensor backward(const Tensor& d_xs, const Tensor* d_per_chan = nullptr);
    void collect_params(std::vector<nn::Parameter*>& out);
    void set_training(bool t);

    const Tensor& per_channel_features() const { return per_chan_; }

    // saliency tap: stage-2 output (post-SE residual, pre-pool)
    void set_capture_tap(bool on) { capture_ = on; }
    const Tensor& tap_activations() const { return tap_act_; }
    const Tensor& tap_gradients() const { return tap_grad_; }
    int tap_channels() const;

private:
    int channels_, f_bins_, t_frames_, d_;
    int tap_channels_ = 0;
    nn::Sequential pre_tap_;   // stage 1 + stage 2 residual block
    nn::Sequential post_tap_;  // stage-2 pool/dropout + flatten + projection
    bool capture_ = false;
    Tensor per_chan_, tap_act_, tap_grad_;
    int batch_ = 0;
};

// Common training-facing surface of ASPEN and SPEN.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual Tensor forward(const Tensor& x_time, const Tensor& x_spec) = 0;
    virtual void backward(const Tensor& dlogits) = 0;
    virtual std::vector<nn::Parameter*> params() = 0;
    virtual void set_training(bool t) = 0;
    virtual int logit_dim() const = 0;
    virtual const ModelConfig& config() const = 0;
};

class AspenModel : public Classifier {
public:
    AspenModel(const ModelConfig& cfg, int channels, int t_len, int f_bins, int t_frames,
               uint64_t seed);

    Tensor forward(const Tensor& x_time, const Tensor& x_spec) override;
    void backward(const Tensor& dlogits) override;
    std::vector<nn::Parameter*> params() override;
    void set_training(bool t) override;
    int logit_dim() const override { return cfg_.logit_dim(); }
    const ModelConfig& config() const override { return cfg_; }

    fusion::Fusion& fusion() { return *fusion_; }
    SpectralStream& spectral() { return spectral_; }
    TemporalStream& temporal() { return temporal_; }
    const Tensor& spectral_features() const { return xs_; }
    const Tensor& temporal_features() const { return xt_; }

    std::string hyper_json(int channels, int t_len, int f_bins, int t_frames) const;

private:
    ModelConfig cfg_;
    Rng init_rng_, drop_rng_;
    TemporalStream temporal_;
    SpectralStream spectral_;
    std::unique_ptr<fusion::Fusion> fusion_;
    nn::Dropout head_dropout_;
    nn::Linear classifier_;
    Tensor xs_, xt_;
};

// Standalone spectral encoder: spectral stream, batch norm, classifier.
class SpenModel : public Classifier {
public:
    SpenModel(const ModelConfig& cfg, int channels, int f_bins, int t_frames, uint64_t seed);

    Tensor forward(const Tensor& x_time, const Tensor& x_spec) override;  // x_time ignored
    void backward(const Tensor& dlogits) override;
    std::vector<nn::Parameter*> params() override;
    void set_training(bool t) override;
    int logit_dim() const override { return cfg_.logit_dim(); }
    const ModelConfig& config() const override { return cfg_; }

    SpectralStream& spectral() { return spectral_; }
    const Tensor& spectral_features() const { return xs_; }

    std::string hyper_json(int channels, int f_bins, int t_frames) const;

private:
    ModelConfig cfg_;
    Rng init_rng_, drop_rng_;
    SpectralStream spectral_;
    nn::BatchNorm bn_;
    nn::Dropout head_dropout_;
    nn::Linear classifier_;
    Tensor xs_;
};

enum class LossKind { CrossEntropy, BinaryCrossEntropy };

// Two-class tasks train a single logit with BCE; multi-class tasks use CE.
LossKind select_loss(int n_classes);

// neg/pos count ratio from a training split; throws when a class is missing.
double pos_weight_from_labels(const std::vector<int>& labels);

}  // namespace aspen::model
