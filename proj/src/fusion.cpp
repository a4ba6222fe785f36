#include "aspen/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace aspen::fusion {

using nn::BatchNorm;
using nn::Dropout;
using nn::Linear;
using nn::Parameter;

const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names = {
        "static", "global_attn", "spatial_attn", "glu",
        "multiplicative", "bilinear", "cross_attn",
    };
    return names;
}

Kind kind_from_name(const std::string& name) {
    const auto& names = strategy_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<Kind>(i);
    throw std::invalid_argument("unknown fusion strategy: " + name);
}

const std::string& name_of(Kind kind) {
    return strategy_names()[static_cast<size_t>(kind)];
}

const Tensor& Fusion::proj_spectral() const {
    throw std::logic_error("fusion variant has no explicit projections");
}
const Tensor& Fusion::proj_temporal() const {
    throw std::logic_error("fusion variant has no explicit projections");
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    int b_n = a.dim(0), da = a.dim(1), db = b.dim(1);
    Tensor c({b_n, da + db});
    for (int i = 0; i < b_n; ++i) {
        for (int j = 0; j < da; ++j) c.at(i, j) = a.at(i, j);
        for (int j = 0; j < db; ++j) c.at(i, da + j) = b.at(i, j);
    }
    return c;
}

// Two-way softmax over logits/tau, rows of shape (N, 2).
Tensor softmax2(const Tensor& logits, double tau) {
    Tensor a = logits;
    for (int i = 0; i < a.dim(0); ++i) {
        double l0 = logits.at(i, 0) / tau, l1 = logits.at(i, 1) / tau;
        double mx = std::max(l0, l1);
        double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        a.at(i, 0) = e0 / (e0 + e1);
        a.at(i, 1) = e1 / (e0 + e1);
    }
    return a;
}

// d(softmax)/d(logits) pullback for the two-way case.
Tensor softmax2_backward(const Tensor& a, const Tensor& da, double tau) {
    Tensor dl(a.shape);
    for (int i = 0; i < a.dim(0); ++i) {
        double dot = a.at(i, 0) * da.at(i, 0) + a.at(i, 1) * da.at(i, 1);
        dl.at(i, 0) = a.at(i, 0) * (da.at(i, 0) - dot) / tau;
        dl.at(i, 1) = a.at(i, 1) * (da.at(i, 1) - dot) / tau;
    }
    return dl;
}

// ---------------------------------------------------------------------------

class StaticFusion : public Fusion {
public:
    StaticFusion(int d, Rng&) : bn_(d, "fusion.static.bn") {}

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("static fusion: stream dims differ");
        Tensor f(xs.shape);
        for (size_t i = 0; i < f.data.size(); ++i)
            f.data[i] = 0.5 * (xs.data[i] + xt.data[i]);
        return bn_.forward(f);
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor d = bn_.backward(df);
        dxs = d;
        dxt = d;
        for (double& v : dxs.data) v *= 0.5;
        for (double& v : dxt.data) v *= 0.5;
    }

    Kind kind() const override { return Kind::Static; }
    void collect_params(std::vector<Parameter*>& out) override { bn_.collect_params(out); }
    void set_training(bool t) override {
        training_ = t;
        bn_.set_training(t);
    }

private:
    BatchNorm bn_;
};

// ---------------------------------------------------------------------------

class GlobalAttentionFusion : public Fusion {
public:
    GlobalAttentionFusion(int d, const FusionHyper& h, Rng& rng)
        : d_(d), tau_(h.tau),
          mlp1_(2 * d, d, "fusion.global_attn.mlp1", rng),
          mlp2_(d, 2, "fusion.global_attn.mlp2", rng),
          alpha_({1}, "fusion.global_attn.alpha"),
          bn_(d, "fusion.global_attn.bn") {
        alpha_.value.at(0) = h.alpha_init;
    }

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("global attention fusion: stream dims differ");
        xs_ = xs;
        xt_ = xt;
        Tensor cat = concat_cols(xs, xt);
        z1_ = mlp1_.forward(cat);
        Tensor h = z1_;
        for (double& v : h.data) v = std::max(0.0, v);
        attn_ = softmax2(mlp2_.forward(h), tau_);

        int b_n = xs.dim(0);
        double gate = sigmoid(alpha_.value.at(0));
        Tensor pre({b_n, d_});
        for (int b = 0; b < b_n; ++b)
            for (int j = 0; j < d_; ++j)
                pre.at(b, j) = attn_.at(b, 0) * xs.at(b, j) + attn_.at(b, 1) * xt.at(b, j) +
                               gate * 0.5 * (xs.at(b, j) + xt.at(b, j));
        return bn_.forward(pre);
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor d = bn_.backward(df);
        int b_n = xs_.dim(0);
        double a_raw = alpha_.value.at(0);
        double gate = sigmoid(a_raw);

        dxs = Tensor(xs_.shape);
        dxt = Tensor(xt_.shape);
        Tensor dattn({b_n, 2});
        double dalpha = 0.0;
        for (int b = 0; b < b_n; ++b) {
            double da0 = 0.0, da1 = 0.0;
            for (int j = 0; j < d_; ++j) {
                double g = d.at(b, j);
                da0 += g * xs_.at(b, j);
                da1 += g * xt_.at(b, j);
                dxs.at(b, j) += g * (attn_.at(b, 0) + gate * 0.5);
                dxt.at(b, j) += g * (attn_.at(b, 1) + gate * 0.5);
                dalpha += g * 0.5 * (xs_.at(b, j) + xt_.at(b, j));
            }
            dattn.at(b, 0) = da0;
            dattn.at(b, 1) = da1;
        }
        alpha_.grad.at(0) += dalpha * gate * (1.0 - gate);

        Tensor dlogits = softmax2_backward(attn_, dattn, tau_);
        Tensor dh = mlp2_.backward(dlogits);
        for (size_t i = 0; i < dh.data.size(); ++i)
            if (z1_.data[i] <= 0.0) dh.data[i] = 0.0;
        Tensor dcat = mlp1_.backward(dh);
        for (int b = 0; b < b_n; ++b)
            for (int j = 0; j < d_; ++j) {
                dxs.at(b, j) += dcat.at(b, j);
                dxt.at(b, j) += dcat.at(b, d_ + j);
            }
    }

    Kind kind() const override { return Kind::GlobalAttention; }
    void collect_params(std::vector<Parameter*>& out) override {
        mlp1_.collect_params(out);
        mlp2_.collect_params(out);
        out.push_back(&alpha_);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        bn_.set_training(t);
    }
    const Tensor* attention_weights() const override { return &attn_; }
    const Tensor* attention_pre() const override { return &z1_; }

private:
    int d_;
    double tau_;
    Linear mlp1_, mlp2_;
    Parameter alpha_;
    BatchNorm bn_;
    Tensor xs_, xt_, z1_, attn_;
};

// ---------------------------------------------------------------------------

class SpatialAttentionFusion : public Fusion {
public:
    SpatialAttentionFusion(int d, const FusionHyper& h, Rng& rng)
        : d_(d), tau_(h.tau),
          mlp1_(2 * d, d, "fusion.spatial_attn.mlp1", rng),
          mlp2_(d, 2, "fusion.spatial_attn.mlp2", rng),
          bn_(d, "fusion.spatial_attn.bn") {}

    Tensor fuse(const Tensor&, const Tensor* xs_per_chan, const Tensor& xt) override {
        if (!xs_per_chan)
            throw std::invalid_argument(
                "spatial attention fusion requires per-channel spectral features");
        const Tensor& xsc = *xs_per_chan;
        if (xsc.ndim() != 3 || xsc.dim(2) != d_ || xt.dim(1) != d_)
            throw std::invalid_argument("spatial attention fusion: bad feature shapes");
        xsc_ = xsc;
        xt_ = xt;
        int b_n = xsc.dim(0), c_n = xsc.dim(1);

        // one shared MLP over all (trial, channel) pairs
        Tensor cat({b_n * c_n, 2 * d_});
        for (int b = 0; b < b_n; ++b)
            for (int c = 0; c < c_n; ++c) {
                int r = b * c_n + c;
                for (int j = 0; j < d_; ++j) {
                    cat.at(r, j) = xsc.at(b, c, j);
                    cat.at(r, d_ + j) = xt.at(b, j);
                }
            }
        z1_ = mlp1_.forward(cat);
        Tensor h = z1_;
        for (double& v : h.data) v = std::max(0.0, v);
        attn_ = softmax2(mlp2_.forward(h), tau_);

        Tensor pre({b_n, d_});
        for (int b = 0; b < b_n; ++b)
            for (int c = 0; c < c_n; ++c) {
                int r = b * c_n + c;
                for (int j = 0; j < d_; ++j)
                    pre.at(b, j) += (attn_.at(r, 0) * xsc.at(b, c, j) +
                                     attn_.at(r, 1) * xt.at(b, j)) / c_n;
            }
        return bn_.forward(pre);
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor* dxs_per_chan, Tensor& dxt) override {
        if (!dxs_per_chan)
            throw std::invalid_argument("spatial attention fusion: missing per-channel grad");
        Tensor d = bn_.backward(df);
        int b_n = xsc_.dim(0), c_n = xsc_.dim(1);

        dxs = Tensor({b_n, d_});  // the averaged x_s is not consumed
        *dxs_per_chan = Tensor(xsc_.shape);
        dxt = Tensor(xt_.shape);
        Tensor dattn({b_n * c_n, 2});
        for (int b = 0; b < b_n; ++b)
            for (int c = 0; c < c_n; ++c) {
                int r = b * c_n + c;
                double da0 = 0.0, da1 = 0.0;
                for (int j = 0; j < d_; ++j) {
                    double g = d.at(b, j) / c_n;
                    da0 += g * xsc_.at(b, c, j);
                    da1 += g * xt_.at(b, j);
                    dxs_per_chan->at(b, c, j) += g * attn_.at(r, 0);
                    dxt.at(b, j) += g * attn_.at(r, 1);
                }
                dattn.at(r, 0) = da0;
                dattn.at(r, 1) = da1;
            }

        Tensor dlogits = softmax2_backward(attn_, dattn, tau_);
        Tensor dh = mlp2_.backward(dlogits);
        for (size_t i = 0; i < dh.data.size(); ++i)
            if (z1_.data[i] <= 0.0) dh.data[i] = 0.0;
        Tensor dcat = mlp1_.backward(dh);
        for (int b = 0; b < b_n; ++b)
            for (int c = 0; c < c_n; ++c) {
                int r = b * c_n + c;
                for (int j = 0; j < d_; ++j) {
                    dxs_per_chan->at(b, c, j) += dcat.at(r, j);
                    dxt.at(b, j) += dcat.at(r, d_ + j);
                }
            }
    }

    Kind kind() const override { return Kind::SpatialAttention; }
    bool needs_per_channel() const override { return true; }
    void collect_params(std::vector<Parameter*>& out) override {
        mlp1_.collect_params(out);
        mlp2_.collect_params(out);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        bn_.set_training(t);
    }
    const Tensor* attention_weights() const override { return &attn_; }
    const Tensor* attention_pre() const override { return &z1_; }

private:
    int d_;
    double tau_;
    Linear mlp1_, mlp2_;
    BatchNorm bn_;
    Tensor xsc_, xt_, z1_, attn_;
};

// ---------------------------------------------------------------------------

class GluFusion : public Fusion {
public:
    GluFusion(int d, Rng& rng)
        : d_(d), gate_fc_(2 * d, d, "fusion.glu.gate", rng), bn_(d, "fusion.glu.bn") {}

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("glu fusion: stream dims differ");
        xs_ = xs;
        xt_ = xt;
        gate_ = gate_fc_.forward(concat_cols(xs, xt));
        for (double& v : gate_.data) v = sigmoid(v);
        Tensor pre(xs.shape);
        for (size_t i = 0; i < pre.data.size(); ++i)
            pre.data[i] = (xs.data[i] + xt.data[i]) * gate_.data[i];
        return bn_.forward(pre);
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor d = bn_.backward(df);
        int b_n = xs_.dim(0);
        Tensor dgate(gate_.shape);
        dxs = Tensor(xs_.shape);
        dxt = Tensor(xt_.shape);
        for (size_t i = 0; i < d.data.size(); ++i) {
            double sum = xs_.data[i] + xt_.data[i];
            dgate.data[i] = d.data[i] * sum * gate_.data[i] * (1.0 - gate_.data[i]);
            dxs.data[i] = d.data[i] * gate_.data[i];
            dxt.data[i] = d.data[i] * gate_.data[i];
        }
        Tensor dcat = gate_fc_.backward(dgate);
        for (int b = 0; b < b_n; ++b)
            for (int j = 0; j < d_; ++j) {
                dxs.at(b, j) += dcat.at(b, j);
                dxt.at(b, j) += dcat.at(b, d_ + j);
            }
    }

    Kind kind() const override { return Kind::Glu; }
    void collect_params(std::vector<Parameter*>& out) override {
        gate_fc_.collect_params(out);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        bn_.set_training(t);
    }
    const Tensor* gate_values() const override { return &gate_; }

private:
    int d_;
    Linear gate_fc_;
    BatchNorm bn_;
    Tensor xs_, xt_, gate_;
};

// ---------------------------------------------------------------------------

class MultiplicativeFusion : public Fusion {
public:
    MultiplicativeFusion(int d, const FusionHyper& h, Rng& rng, Rng* dropout_rng)
        : proj_s_(d, d, "fusion.multiplicative.proj_s", rng),
          proj_t_(d, d, "fusion.multiplicative.proj_t", rng),
          dropout_(h.dropout, dropout_rng),
          bn_(d, "fusion.multiplicative.bn") {}

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("multiplicative fusion: stream dims differ");
        ps_ = proj_s_.forward(xs);
        pt_ = proj_t_.forward(xt);
        Tensor f(ps_.shape);
        for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = ps_.data[i] * pt_.data[i];
        return bn_.forward(dropout_.forward(f));
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor d = dropout_.backward(bn_.backward(df));
        Tensor dps(ps_.shape), dpt(pt_.shape);
        for (size_t i = 0; i < d.data.size(); ++i) {
            dps.data[i] = d.data[i] * pt_.data[i];
            dpt.data[i] = d.data[i] * ps_.data[i];
        }
        dxs = proj_s_.backward(dps);
        dxt = proj_t_.backward(dpt);
    }

    Kind kind() const override { return Kind::Multiplicative; }
    bool has_projections() const override { return true; }
    const Tensor& proj_spectral() const override { return ps_; }
    const Tensor& proj_temporal() const override { return pt_; }
    void collect_params(std::vector<Parameter*>& out) override {
        proj_s_.collect_params(out);
        proj_t_.collect_params(out);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        dropout_.set_training(t);
        bn_.set_training(t);
    }

private:
    Linear proj_s_, proj_t_;
    Dropout dropout_;
    BatchNorm bn_;
    Tensor ps_, pt_;
};

// ---------------------------------------------------------------------------

class BilinearFusion : public Fusion {
public:
    BilinearFusion(int d, const FusionHyper& h, Rng& rng, Rng* dropout_rng)
        : rank_(h.rank),
          u_s_(d, h.rank, "fusion.bilinear.u_s", rng, /*with_bias=*/false),
          u_t_(d, h.rank, "fusion.bilinear.u_t", rng, /*with_bias=*/false),
          out_fc_(h.rank, d, "fusion.bilinear.out", rng),
          dropout_(h.dropout, dropout_rng),
          bn_(d, "fusion.bilinear.bn") {
        if (h.rank > d)
            throw std::invalid_argument("bilinear fusion: rank must be <= d");
        if (h.rank < 1) throw std::invalid_argument("bilinear fusion: rank must be >= 1");
    }

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("bilinear fusion: stream dims differ");
        zs_ = u_s_.forward(xs);
        zt_ = u_t_.forward(xt);
        Tensor z(zs_.shape);
        for (size_t i = 0; i < z.data.size(); ++i) z.data[i] = zs_.data[i] * zt_.data[i];
        return bn_.forward(dropout_.forward(out_fc_.forward(z)));
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor dz = out_fc_.backward(dropout_.backward(bn_.backward(df)));
        Tensor dzs(zs_.shape), dzt(zt_.shape);
        for (size_t i = 0; i < dz.data.size(); ++i) {
            dzs.data[i] = dz.data[i] * zt_.data[i];
            dzt.data[i] = dz.data[i] * zs_.data[i];
        }
        dxs = u_s_.backward(dzs);
        dxt = u_t_.backward(dzt);
    }

    Kind kind() const override { return Kind::Bilinear; }
    bool has_projections() const override { return true; }
    const Tensor& proj_spectral() const override { return zs_; }
    const Tensor& proj_temporal() const override { return zt_; }
    void collect_params(std::vector<Parameter*>& out) override {
        u_s_.collect_params(out);
        u_t_.collect_params(out);
        out_fc_.collect_params(out);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        dropout_.set_training(t);
        bn_.set_training(t);
    }

private:
    int rank_;
    Linear u_s_, u_t_, out_fc_;
    Dropout dropout_;
    BatchNorm bn_;
    Tensor zs_, zt_;
};

// ---------------------------------------------------------------------------

class CrossAttentionFusion : public Fusion {
public:
    CrossAttentionFusion(int d, const FusionHyper& h, Rng& rng)
        : d_(d), heads_(h.heads), tau_(h.tau),
          w_q_(d, d, "fusion.cross_attn.w_q", rng, false),
          w_k_(d, d, "fusion.cross_attn.w_k", rng, false),
          w_v_(d, d, "fusion.cross_attn.w_v", rng, false),
          w_o_(d, d, "fusion.cross_attn.w_o", rng, false),
          mlp1_(2 * d, d, "fusion.cross_attn.mlp1", rng),
          mlp2_(d, 2, "fusion.cross_attn.mlp2", rng),
          alpha_({1}, "fusion.cross_attn.alpha"),
          bn_(d, "fusion.cross_attn.bn") {
        if (d % heads_ != 0)
            throw std::invalid_argument("cross attention fusion: heads must divide d");
        alpha_.value.at(0) = h.alpha_init;
    }

    Tensor fuse(const Tensor& xs, const Tensor*, const Tensor& xt) override {
        if (!xs.same_shape(xt))
            throw std::invalid_argument("cross attention fusion: stream dims differ");
        xs_ = xs;
        xt_ = xt;
        int b_n = xs.dim(0);
        int dh = d_ / heads_;

        Tensor q = w_q_.forward(xs);
        Tensor k = w_k_.forward(xt);
        v_ = w_v_.forward(xt);

        // per-trial sequence length is 1, so each head attends to a single
        // key; the softmax weight is exp(s)/exp(s) = 1 and the head output is
        // the value slice itself
        Tensor heads_out({b_n, d_});
        for (int b = 0; b < b_n; ++b)
            for (int hd = 0; hd < heads_; ++hd) {
                double score = 0.0;
                for (int j = 0; j < dh; ++j)
                    score += q.at(b, hd * dh + j) * k.at(b, hd * dh + j);
                score /= tau_ * std::sqrt(static_cast<double>(dh));
                double w = std::exp(score - score);  // length-1 softmax
                for (int j = 0; j < dh; ++j)
                    heads_out.at(b, hd * dh + j) = w * v_.at(b, hd * dh + j);
            }
        attn_out_ = w_o_.forward(heads_out);

        Tensor cat = concat_cols(xs, attn_out_);
        z1_ = mlp1_.forward(cat);
        Tensor h = z1_;
        for (double& v : h.data) v = std::max(0.0, v);
        weights_ = softmax2(mlp2_.forward(h), tau_);

        double gate = sigmoid(alpha_.value.at(0));
        Tensor pre({b_n, d_});
        for (int b = 0; b < b_n; ++b)
            for (int j = 0; j < d_; ++j)
                pre.at(b, j) = weights_.at(b, 0) * xs.at(b, j) +
                               weights_.at(b, 1) * attn_out_.at(b, j) +
                               gate * 0.5 * (xs.at(b, j) + xt.at(b, j));
        return bn_.forward(pre);
    }

    void backward(const Tensor& df, Tensor& dxs, Tensor*, Tensor& dxt) override {
        Tensor d = bn_.backward(df);
        int b_n = xs_.dim(0);
        double gate = sigmoid(alpha_.value.at(0));

        dxs = Tensor(xs_.shape);
        dxt = Tensor(xt_.shape);
        Tensor dattn_out({b_n, d_});
        Tensor dw({b_n, 2});
        double dalpha = 0.0;
        for (int b = 0; b < b_n; ++b) {
            double dw0 = 0.0, dw1 = 0.0;
            for (int j = 0; j < d_; ++j) {
                double g = d.at(b, j);
                dw0 += g * xs_.at(b, j);
                dw1 += g * attn_out_.at(b, j);
                dxs.at(b, j) += g * (weights_.at(b, 0) + gate * 0.5);
                dxt.at(b, j) += g * gate * 0.5;
                dattn_out.at(b, j) += g * weights_.at(b, 1);
                dalpha += g * 0.5 * (xs_.at(b, j) + xt_.at(b, j));
            }
            dw.at(b, 0) = dw0;
            dw.at(b, 1) = dw1;
        }
        alpha_.grad.at(0) += dalpha * gate * (1.0 - gate);

        Tensor dlogits = softmax2_backward(weights_, dw, tau_);
        Tensor dh = mlp2_.backward(dlogits);
        for (size_t i = 0; i < dh.data.size(); ++i)
            if (z1_.data[i] <= 0.0) dh.data[i] = 0.0;
        Tensor dcat = mlp1_.backward(dh);
        for (int b = 0; b < b_n; ++b)
            for (int j = 0; j < d_; ++j) {
                dxs.at(b, j) += dcat.at(b, j);
                dattn_out.at(b, j) += dcat.at(b, d_ + j);
            }

        // the length-1 softmax weight is constant, so no gradient reaches
        // Q or K; only the value path carries signal
        Tensor dheads = w_o_.backward(dattn_out);
        Tensor dxt_v = w_v_.backward(dheads);
        for (size_t i = 0; i < dxt.data.size(); ++i) dxt.data[i] += dxt_v.data[i];
    }

    Kind kind() const override { return Kind::CrossAttention; }
    void collect_params(std::vector<Parameter*>& out) override {
        w_q_.collect_params(out);
        w_k_.collect_params(out);
        w_v_.collect_params(out);
        w_o_.collect_params(out);
        mlp1_.collect_params(out);
        mlp2_.collect_params(out);
        out.push_back(&alpha_);
        bn_.collect_params(out);
    }
    void set_training(bool t) override {
        training_ = t;
        bn_.set_training(t);
    }
    const Tensor* attention_weights() const override { return &weights_; }
    const Tensor* attention_pre() const override { return &z1_; }

private:
    int d_, heads_;
    double tau_;
    Linear w_q_, w_k_, w_v_, w_o_, mlp1_, mlp2_;
    Parameter alpha_;
    BatchNorm bn_;
    Tensor xs_, xt_, v_, attn_out_, z1_, weights_;
};

}  // namespace

std::unique_ptr<Fusion> make_fusion(Kind kind, int d, int channels, const FusionHyper& hyper,
                                    Rng& rng, Rng* dropout_rng) {
    (void)channels;
    switch (kind) {
        case Kind::Static:
            return std::make_unique<StaticFusion>(d, rng);
        case Kind::GlobalAttention:
            return std::make_unique<GlobalAttentionFusion>(d, hyper, rng);
        case Kind::SpatialAttention:
            return std::make_unique<SpatialAttentionFusion>(d, hyper, rng);
        case Kind::Glu:
            return std::make_unique<GluFusion>(d, rng);
        case Kind::Multiplicative:
            return std::make_unique<MultiplicativeFusion>(d, hyper, rng, dropout_rng);
        case Kind::Bilinear:
            return std::make_unique<BilinearFusion>(d, hyper, rng, dropout_rng);
        case Kind::CrossAttention:
            return std::make_unique<CrossAttentionFusion>(d, hyper, rng);
    }
    throw std::logic_error("unreachable");
}

}  // namespace aspen::fusion
