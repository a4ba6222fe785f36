#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aspen/nn.hpp"
#include "aspen/rng.hpp"
#include "aspen/tensor.hpp"

namespace aspen::fusion {

enum class Kind {
    Static,
    GlobalAttention,
    SpatialAttention,
    Glu,
    Multiplicative,
    Bilinear,
    CrossAttention,
};

// Canonical strategy names, in ablation order.
const std::vector<std::string>& strategy_names();
Kind kind_from_name(const std::string& name);
const std::string& name_of(Kind kind);

struct FusionHyper {
    double tau = 1.0;         // softmax temperature, fixed
    double alpha_init = 0.0;  // learnable residual gate, sigmoid(0) = 0.5
    int rank = 16;            // bilinear bottleneck
    int heads = 4;            // cross-attention heads
    double dropout = 0.25;    // multiplicative / bilinear
};

// Combines the two stream vectors into one d-dimensional feature. Every
// variant owns its output batch norm. Spatial attention additionally reads
// the per-channel spectral features (B x C x d) captured before averaging.
class Fusion {
public:
    virtual ~Fusion() = default;

    virtual Tensor fuse(const Tensor& xs, const Tensor* xs_per_chan, const Tensor& xt) = 0;
    // Gradient of the fused output; fills dxs/dxt (and dxs_per_chan when the
    // variant consumes per-channel features).
    virtual void backward(const Tensor& df, Tensor& dxs, Tensor* dxs_per_chan,
                          Tensor& dxt) = 0;

    virtual Kind kind() const = 0;
    virtual bool needs_per_channel() const { return false; }
    // True for the variants with explicit stream projections (multiplicative,
    // bilinear); those expose the projected features for analysis.
    virtual bool has_projections() const { return false; }
    virtual const Tensor& proj_spectral() const;
    virtual const Tensor& proj_temporal() const;

    // Introspection for the attention/gated variants; null when not present.
    virtual const Tensor* attention_weights() const { return nullptr; }
    virtual const Tensor* gate_values() const { return nullptr; }
    virtual const Tensor* attention_pre() const { return nullptr; }

    virtual void collect_params(std::vector<nn::Parameter*>& out) = 0;
    virtual void set_training(bool t) { training_ = t; }

protected:
    bool training_ = false;
};

// `dropout_rng` feeds the train-time dropout of multiplicative/bilinear; it
// may be null when the dropout rate is zero or the fusion is eval-only.
std::unique_ptr<Fusion> make_fusion(Kind kind, int d, int channels, const FusionHyper& hyper,
                                    Rng& rng, Rng* dropout_rng = nullptr);

}  // namespace aspen::fusion
