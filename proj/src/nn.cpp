#include "aspen/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace aspen::nn {

using json = nlohmann::json;

void kaiming_uniform(Tensor& w, int fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / fan_in);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& dy) {
    Tensor d = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
}

void Sequential::collect_params(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l->collect_params(out);
}

void Sequential::set_training(bool t) {
    training_ = t;
    for (auto& l : layers_) l->set_training(t);
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int cin, int cout, int kh, int kw, int sh, int sw, int ph, int pw,
               const std::string& name, Rng& rng)
    : weight({cout, cin, kh, kw}, name + ".weight"),
      bias({cout}, name + ".bias"),
      cin_(cin), cout_(cout), kh_(kh), kw_(kw), sh_(sh), sw_(sw), ph_(ph), pw_(pw) {
    kaiming_uniform(weight.value, cin * kh * kw, rng);
}

namespace {

void im2col(const double* x, int cin, int h, int w, int kh, int kw, int sh, int sw,
            int ph, int pw, int ho, int wo, double* col) {
    // col: (cin*kh*kw) x (ho*wo)
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                double* row = col + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                                        (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * sh - ph + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + static_cast<size_t>(oy) * wo,
                                  row + static_cast<size_t>(oy + 1) * wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * sw - pw + kx;
                        row[static_cast<size_t>(oy) * wo + ox] =
                            (ix < 0 || ix >= w) ? 0.0 : src[ix];
                    }
                }
            }
}

void col2im(const double* col, int cin, int h, int w, int kh, int kw, int sh, int sw,
            int ph, int pw, int ho, int wo, double* x) {
    std::fill(x, x + static_cast<size_t>(cin) * h * w, 0.0);
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = col + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                                              (static_cast<size_t>(ho) * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * sh - ph + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = x + (static_cast<size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * sw - pw + kx;
                        if (ix < 0 || ix >= w) continue;
                        dst[ix] += row[static_cast<size_t>(oy) * wo + ox];
                    }
                }
            }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != cin_)
        throw std::invalid_argument("Conv2d: bad input shape " + shape_str(x.shape));
    int b_n = x.dim(0), h = x.dim(2), w = x.dim(3);
    int ho = (h + 2 * ph_ - kh_) / sh_ + 1;
    int wo = (w + 2 * pw_ - kw_) / sw_ + 1;
    if (h + 2 * ph_ < kh_ || w + 2 * pw_ < kw_ || ho < 1 || wo < 1)
        throw std::invalid_argument("Conv2d: kernel does not fit input " + shape_str(x.shape));
    x_ = x;
    Tensor y({b_n, cout_, ho, wo});
    int k = cin_ * kh_ * kw_;
    std::vector<double> col(static_cast<size_t>(k) * ho * wo);
    for (int b = 0; b < b_n; ++b) {
        im2col(x.ptr() + static_cast<size_t>(b) * cin_ * h * w, cin_, h, w, kh_, kw_,
               sh_, sw_, ph_, pw_, ho, wo, col.data());
        gemm(false, false, cout_, ho * wo, k, 1.0, weight.value.ptr(), col.data(), 0.0,
             y.ptr() + static_cast<size_t>(b) * cout_ * ho * wo);
        for (int co = 0; co < cout_; ++co) {
            double* dst = y.ptr() + (static_cast<size_t>(b) * cout_ + co) *
                                        (static_cast<size_t>(ho) * wo);
            double bv = bias.value.at(co);
            for (int i = 0; i < ho * wo; ++i) dst[i] += bv;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    int b_n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
    int ho = dy.dim(2), wo = dy.dim(3);
    int k = cin_ * kh_ * kw_;
    Tensor dx(x_.shape);
    std::vector<double> col(static_cast<size_t>(k) * ho * wo);
    std::vector<double> dcol(static_cast<size_t>(k) * ho * wo);
    for (int b = 0; b < b_n; ++b) {
        const double* dyb = dy.ptr() + static_cast<size_t>(b) * cout_ * ho * wo;
        im2col(x_.ptr() + static_cast<size_t>(b) * cin_ * h * w, cin_, h, w, kh_, kw_,
               sh_, sw_, ph_, pw_, ho, wo, col.data());
        // dW += dy_b (cout x howo) * col^T
        gemm(false, true, cout_, k, ho * wo, 1.0, dyb, col.data(), 1.0, weight.grad.ptr());
        // dcol = W^T (k x cout) * dy_b
        gemm(true, false, k, ho * wo, cout_, 1.0, weight.value.ptr(), dyb, 0.0, dcol.data());
        col2im(dcol.data(), cin_, h, w, kh_, kw_, sh_, sw_, ph_, pw_, ho, wo,
               dx.ptr() + static_cast<size_t>(b) * cin_ * h * w);
        for (int co = 0; co < cout_; ++co) {
            const double* src = dyb + static_cast<size_t>(co) * ho * wo;
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += src[i];
            bias.grad.at(co) += acc;
        }
    }
    return dx;
}

void Conv2d::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// DepthwiseConv2d
// ---------------------------------------------------------------------------

DepthwiseConv2d::DepthwiseConv2d(int cin, int mult, int kh, int kw, int ph, int pw,
                                 const std::string& name, Rng& rng)
    : weight({cin * mult, 1, kh, kw}, name + ".weight"),
      bias({cin * mult}, name + ".bias"),
      cin_(cin), mult_(mult), kh_(kh), kw_(kw), ph_(ph), pw_(pw) {
    kaiming_uniform(weight.value, kh * kw, rng);
}

Tensor DepthwiseConv2d::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != cin_)
        throw std::invalid_argument("DepthwiseConv2d: bad input shape " + shape_str(x.shape));
    int b_n = x.dim(0), h = x.dim(2), w = x.dim(3);
    int ho = h + 2 * ph_ - kh_ + 1;
    int wo = w + 2 * pw_ - kw_ + 1;
    if (ho < 1 || wo < 1)
        throw std::invalid_argument("DepthwiseConv2d: kernel does not fit input");
    x_ = x;
    Tensor y({b_n, cin_ * mult_, ho, wo});
    for (int b = 0; b < b_n; ++b)
        for (int ci = 0; ci < cin_; ++ci)
            for (int d = 0; d < mult_; ++d) {
                int co = ci * mult_ + d;
                const double* kern = weight.value.ptr() + static_cast<size_t>(co) * kh_ * kw_;
                double bv = bias.value.at(co);
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        double acc = bv;
                        for (int ky = 0; ky < kh_; ++ky) {
                            int iy = oy - ph_ + ky;
                            if (iy < 0 || iy >= h) continue;
                            const double* src = x.ptr() +
                                ((static_cast<size_t>(b) * cin_ + ci) * h + iy) * w;
                            for (int kx = 0; kx < kw_; ++kx) {
                                int ix = ox - pw_ + kx;
                                if (ix < 0 || ix >= w) continue;
                                acc += src[ix] * kern[ky * kw_ + kx];
                            }
                        }
                        y.at(b, co, oy, ox) = acc;
                    }
            }
    return y;
}

Tensor DepthwiseConv2d::backward(const Tensor& dy) {
    int b_n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
    int ho = dy.dim(2), wo = dy.dim(3);
    Tensor dx(x_.shape);
    for (int b = 0; b < b_n; ++b)
        for (int ci = 0; ci < cin_; ++ci)
            for (int d = 0; d < mult_; ++d) {
                int co = ci * mult_ + d;
                const double* kern = weight.value.ptr() + static_cast<size_t>(co) * kh_ * kw_;
                double* dkern = weight.grad.ptr() + static_cast<size_t>(co) * kh_ * kw_;
                double db = 0.0;
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        double g = dy.at(b, co, oy, ox);
                        db += g;
                        for (int ky = 0; ky < kh_; ++ky) {
                            int iy = oy - ph_ + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw_; ++kx) {
                                int ix = ox - pw_ + kx;
                                if (ix < 0 || ix >= w) continue;
                                dkern[ky * kw_ + kx] += g * x_.at(b, ci, iy, ix);
                                dx.at(b, ci, iy, ix) += g * kern[ky * kw_ + kx];
                            }
                        }
                    }
                bias.grad.at(co) += db;
            }
    return dx;
}

void DepthwiseConv2d::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// SeparableConv2d
// ---------------------------------------------------------------------------

SeparableConv2d::SeparableConv2d(int cin, int cout, int kh, int kw, int ph, int pw,
                                 const std::string& name, Rng& rng)
    : depthwise_(cin, 1, kh, kw, ph, pw, name + ".depthwise", rng),
      pointwise_(cin, cout, 1, 1, 1, 1, 0, 0, name + ".pointwise", rng) {}

Tensor SeparableConv2d::forward(const Tensor& x) {
    return pointwise_.forward(depthwise_.forward(x));
}

Tensor SeparableConv2d::backward(const Tensor& dy) {
    return depthwise_.backward(pointwise_.backward(dy));
}

void SeparableConv2d::collect_params(std::vector<Parameter*>& out) {
    depthwise_.collect_params(out);
    pointwise_.collect_params(out);
}

void SeparableConv2d::set_training(bool t) {
    training_ = t;
    depthwise_.set_training(t);
    pointwise_.set_training(t);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in, int out, const std::string& name, Rng& rng, bool with_bias)
    : weight({out, in}, name + ".weight"), bias({out}, name + ".bias"),
      with_bias_(with_bias) {
    kaiming_uniform(weight.value, in, rng);
}

Tensor Linear::forward(const Tensor& x) {
    if (x.ndim() != 2 || x.dim(1) != weight.value.dim(1))
        throw std::invalid_argument("Linear: bad input shape " + shape_str(x.shape));
    int b_n = x.dim(0), in = x.dim(1), out = weight.value.dim(0);
    x_ = x;
    Tensor y({b_n, out});
    gemm(false, true, b_n, out, in, 1.0, x.ptr(), weight.value.ptr(), 0.0, y.ptr());
    for (int b = 0; b < b_n; ++b)
        for (int o = 0; o < out; ++o) y.at(b, o) += bias.value.at(o);
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    int b_n = x_.dim(0), in = x_.dim(1), out = weight.value.dim(0);
    gemm(true, false, out, in, b_n, 1.0, dy.ptr(), x_.ptr(), 1.0, weight.grad.ptr());
    for (int b = 0; b < b_n; ++b)
        for (int o = 0; o < out; ++o) bias.grad.at(o) += dy.at(b, o);
    Tensor dx({b_n, in});
    gemm(false, false, b_n, in, out, 1.0, dy.ptr(), weight.value.ptr(), 0.0, dx.ptr());
    return dx;
}

void Linear::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (with_bias_) out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// SEBlock
// ---------------------------------------------------------------------------

SEBlock::SEBlock(int channels, int reduction, const std::string& name, Rng& rng)
    : channels_(channels),
      fc1_(channels, std::max(1, channels / reduction), name + ".fc1", rng),
      fc2_(std::max(1, channels / reduction), channels, name + ".fc2", rng) {}

Tensor SEBlock::forward(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) != channels_)
        throw std::invalid_argument("SEBlock: bad input shape " + shape_str(x.shape));
    int b_n = x.dim(0), c_n = x.dim(1), hw = x.dim(2) * x.dim(3);
    x_ = x;
    Tensor pooled({b_n, c_n});
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            const double* src = x.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += src[i];
            pooled.at(b, c) = acc / hw;
        }
    z1_ = fc1_.forward(pooled);
    Tensor h = z1_;
    for (double& v : h.data) v = std::max(0.0, v);
    Tensor z2 = fc2_.forward(h);
    gate_ = z2;
    for (double& v : gate_.data) v = 1.0 / (1.0 + std::exp(-v));

    Tensor y(x.shape);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            double g = gate_.at(b, c);
            const double* src = x.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            double* dst = y.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            for (int i = 0; i < hw; ++i) dst[i] = src[i] * g;
        }
    return y;
}

Tensor SEBlock::backward(const Tensor& dy) {
    int b_n = x_.dim(0), c_n = x_.dim(1), hw = x_.dim(2) * x_.dim(3);
    Tensor dgate({b_n, c_n});
    Tensor dx(x_.shape);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            double g = gate_.at(b, c);
            const double* dsrc = dy.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            const double* xs = x_.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            double* dst = dx.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) {
                acc += dsrc[i] * xs[i];
                dst[i] = dsrc[i] * g;
            }
            dgate.at(b, c) = acc;
        }
    // back through the sigmoid gate, then the bottleneck MLP
    Tensor dz2 = dgate;
    for (size_t i = 0; i < dz2.data.size(); ++i)
        dz2.data[i] *= gate_.data[i] * (1.0 - gate_.data[i]);
    Tensor dh = fc2_.backward(dz2);
    for (size_t i = 0; i < dh.data.size(); ++i)
        if (z1_.data[i] <= 0.0) dh.data[i] = 0.0;
    Tensor dpooled = fc1_.backward(dh);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c) {
            double g = dpooled.at(b, c) / hw;
            double* dst = dx.ptr() + (static_cast<size_t>(b) * c_n + c) * hw;
            for (int i = 0; i < hw; ++i) dst[i] += g;
        }
    return dx;
}

void SEBlock::collect_params(std::vector<Parameter*>& out) {
    fc1_.collect_params(out);
    fc2_.collect_params(out);
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int features, const std::string& name, double momentum, double eps)
    : gamma({features}, name + ".gamma"),
      beta({features}, name + ".beta"),
      running_mean({features}),
      running_var({features}),
      features_(features), momentum_(momentum), eps_(eps) {
    gamma.value.fill(1.0);
    running_var.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x) {
    if ((x.ndim() != 2 && x.ndim() != 4) || x.dim(1) != features_)
        throw std::invalid_argument("BatchNorm: bad input shape " + shape_str(x.shape));
    int b_n = x.dim(0);
    if (training_ && b_n < 2)
        throw std::invalid_argument("BatchNorm: train mode requires batch >= 2");
    int hw = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
    int64_t n = static_cast<int64_t>(b_n) * hw;
    in_shape_ = x.shape;
    used_batch_stats_ = training_;
    xhat_ = Tensor(x.shape);
    invstd_.assign(static_cast<size_t>(features_), 0.0);

    Tensor y(x.shape);
    for (int c = 0; c < features_; ++c) {
        double mean, var;
        if (training_) {
            double acc = 0.0;
            for (int b = 0; b < b_n; ++b) {
                const double* src = x.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
                for (int i = 0; i < hw; ++i) acc += src[i];
            }
            mean = acc / n;
            double vacc = 0.0;
            for (int b = 0; b < b_n; ++b) {
                const double* src = x.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
                for (int i = 0; i < hw; ++i) vacc += (src[i] - mean) * (src[i] - mean);
            }
            var = vacc / n;
            running_mean.at(c) = (1.0 - momentum_) * running_mean.at(c) + momentum_ * mean;
            running_var.at(c) = (1.0 - momentum_) * running_var.at(c) + momentum_ * var;
        } else {
            mean = running_mean.at(c);
            var = running_var.at(c);
        }
        double inv = 1.0 / std::sqrt(var + eps_);
        invstd_[static_cast<size_t>(c)] = inv;
        double g = gamma.value.at(c), bv = beta.value.at(c);
        for (int b = 0; b < b_n; ++b) {
            const double* src = x.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            double* xh = xhat_.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            double* dst = y.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            for (int i = 0; i < hw; ++i) {
                xh[i] = (src[i] - mean) * inv;
                dst[i] = g * xh[i] + bv;
            }
        }
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
    int b_n = in_shape_[0];
    int hw = in_shape_.size() == 4 ? in_shape_[2] * in_shape_[3] : 1;
    int64_t n = static_cast<int64_t>(b_n) * hw;
    Tensor dx(in_shape_);
    for (int c = 0; c < features_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < b_n; ++b) {
            const double* d = dy.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            const double* xh = xhat_.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            for (int i = 0; i < hw; ++i) {
                sum_dy += d[i];
                sum_dy_xhat += d[i] * xh[i];
            }
        }
        gamma.grad.at(c) += sum_dy_xhat;
        beta.grad.at(c) += sum_dy;
        double g = gamma.value.at(c);
        double inv = invstd_[static_cast<size_t>(c)];
        for (int b = 0; b < b_n; ++b) {
            const double* d = dy.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            const double* xh = xhat_.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            double* dst = dx.ptr() + (static_cast<size_t>(b) * features_ + c) * hw;
            if (used_batch_stats_) {
                for (int i = 0; i < hw; ++i)
                    dst[i] = g * inv * (d[i] - sum_dy / n - xh[i] * sum_dy_xhat / n);
            } else {
                for (int i = 0; i < hw; ++i) dst[i] = g * inv * d[i];
            }
        }
    }
    return dx;
}

void BatchNorm::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

// ---------------------------------------------------------------------------
// AvgPool2d
// ---------------------------------------------------------------------------

Tensor AvgPool2d::forward(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("AvgPool2d: expected 4-d input");
    int b_n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ph_ > h || pw_ > w)
        throw std::invalid_argument("AvgPool2d: window larger than input " + shape_str(x.shape));
    in_shape_ = x.shape;
    int ho = (h - ph_) / sh_ + 1;
    int wo = (w - pw_) / sw_ + 1;
    Tensor y({b_n, c_n, ho, wo});
    double inv = 1.0 / (ph_ * pw_);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < ph_; ++ky)
                        for (int kx = 0; kx < pw_; ++kx)
                            acc += x.at(b, c, oy * sh_ + ky, ox * sw_ + kx);
                    y.at(b, c, oy, ox) = acc * inv;
                }
    return y;
}

Tensor AvgPool2d::backward(const Tensor& dy) {
    Tensor dx(in_shape_);
    int b_n = dy.dim(0), c_n = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
    double inv = 1.0 / (ph_ * pw_);
    for (int b = 0; b < b_n; ++b)
        for (int c = 0; c < c_n; ++c)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double g = dy.at(b, c, oy, ox) * inv;
                    for (int ky = 0; ky < ph_; ++ky)
                        for (int kx = 0; kx < pw_; ++kx)
                            dx.at(b, c, oy * sh_ + ky, ox * sw_ + kx) += g;
                }
    return dx;
}

// ---------------------------------------------------------------------------
// activations / dropout / flatten
// ---------------------------------------------------------------------------

Tensor ELU::forward(const Tensor& x) {
    y_ = x;
    for (double& v : y_.data) v = v > 0.0 ? v : std::expm1(v);
    return y_;
}

Tensor ELU::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i)
        if (y_.data[i] <= 0.0) dx.data[i] *= y_.data[i] + 1.0;
    return dx;
}

Tensor ReLU::forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    for (double& v : y.data) v = std::max(0.0, v);
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i)
        if (x_.data[i] <= 0.0) dx.data[i] = 0.0;
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    y_ = x;
    for (double& v : y_.data) v = 1.0 / (1.0 + std::exp(-v));
    return y_;
}

Tensor Sigmoid::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i)
        dx.data[i] *= y_.data[i] * (1.0 - y_.data[i]);
    return dx;
}

Tensor Dropout::forward(const Tensor& x) {
    if (!training_ || p_ <= 0.0) {
        mask_ = Tensor();
        return x;
    }
    if (!rng_) throw std::logic_error("Dropout: no rng bound");
    mask_ = Tensor(x.shape);
    double keep = 1.0 - p_;
    for (double& m : mask_.data) m = rng_->uniform() >= p_ ? 1.0 / keep : 0.0;
    Tensor y = x;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask_.data[i];
    return y;
}

Tensor Dropout::backward(const Tensor& dy) {
    if (mask_.numel() == 0) return dy;
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= mask_.data[i];
    return dx;
}

Tensor Flatten::forward(const Tensor& x) {
    in_shape_ = x.shape;
    int b_n = x.dim(0);
    return x.reshaped({b_n, static_cast<int>(x.numel() / b_n)});
}

Tensor Flatten::backward(const Tensor& dy) { return dy.reshaped(in_shape_); }

// ---------------------------------------------------------------------------
// softmax / losses
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("softmax: tau must be positive");
    int cols = x.dim(x.ndim() - 1);
    int rows = static_cast<int>(x.numel() / cols);
    Tensor y = x;
    for (int r = 0; r < rows; ++r) {
        double* row = y.ptr() + static_cast<size_t>(r) * cols;
        double mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp((row[c] - mx) / tau);
            sum += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] /= sum;
    }
    return y;
}

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    int b_n = logits.dim(0), k_n = logits.dim(1);
    if (static_cast<int>(labels.size()) != b_n)
        throw std::invalid_argument("cross_entropy_loss: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= k_n)
            throw std::invalid_argument("cross_entropy_loss: label out of range");
    LossResult res;
    res.dlogits = Tensor(logits.shape);
    double total = 0.0;
    for (int b = 0; b < b_n; ++b) {
        const double* row = logits.ptr() + static_cast<size_t>(b) * k_n;
        double mx = row[0];
        for (int c = 1; c < k_n; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (int c = 0; c < k_n; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        total += lse - row[labels[static_cast<size_t>(b)]];
        for (int c = 0; c < k_n; ++c) {
            double p = std::exp(row[c] - lse);
            res.dlogits.at(b, c) =
                (p - (c == labels[static_cast<size_t>(b)] ? 1.0 : 0.0)) / b_n;
        }
    }
    res.loss = total / b_n;
    return res;
}

namespace {
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

LossResult bce_with_logits_loss(const Tensor& logits, const std::vector<int>& labels,
                                double pos_weight) {
    if (pos_weight <= 0.0)
        throw std::invalid_argument("bce_with_logits_loss: pos_weight must be positive");
    int b_n = static_cast<int>(logits.numel());
    if (static_cast<int>(labels.size()) != b_n)
        throw std::invalid_argument("bce_with_logits_loss: label count mismatch");
    LossResult res;
    res.dlogits = Tensor(logits.shape);
    double total = 0.0;
    for (int b = 0; b < b_n; ++b) {
        double z = logits.data[static_cast<size_t>(b)];
        int y = labels[static_cast<size_t>(b)];
        if (y != 0 && y != 1)
            throw std::invalid_argument("bce_with_logits_loss: labels must be 0/1");
        total += pos_weight * y * softplus(-z) + (1 - y) * softplus(z);
        res.dlogits.data[static_cast<size_t>(b)] =
            ((1 - y) * sigmoid_fn(z) - pos_weight * y * sigmoid_fn(-z)) / b_n;
    }
    res.loss = total / b_n;
    return res;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (double g : p->grad.data) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    double scale = max_norm / norm;
    for (auto* p : params)
        for (double& g : p->grad.data) g *= scale;
    return scale;
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            double g = p.grad.data[j];
            double m = m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
            double v = v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
            p.value.data[j] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        }
    }
}

void zero_grads(const std::vector<Parameter*>& params) {
    for (auto* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_f32_le(std::ofstream& out, double v) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
}

double read_f32_le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                    (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

}  // namespace

void save_checkpoint(const std::string& prefix, const std::string& hyper_json,
                     const std::vector<Parameter*>& params, uint64_t seed) {
    json manifest;
    manifest["format"] = "aspen-checkpoint";
    manifest["version"] = 1;
    manifest["seed"] = seed;
    manifest["hyperparameters"] = json::parse(hyper_json);
    json plist = json::array();
    for (auto* p : params) plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    manifest["params"] = plist;

    std::ofstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
    jf << manifest.dump(2) << "\n";

    std::ofstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
    for (auto* p : params)
        for (double v : p->value.data) write_f32_le(bf, v);
}

std::string read_checkpoint_hyper(const std::string& prefix) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("checkpoint manifest not found: " + prefix + ".json");
    json manifest = json::parse(jf);
    return manifest.at("hyperparameters").dump();
}

void load_checkpoint(const std::string& prefix, const std::vector<Parameter*>& params) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("checkpoint manifest not found: " + prefix + ".json");
    json manifest = json::parse(jf);
    const auto& plist = manifest.at("params");
    if (plist.size() != params.size())
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    std::ifstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint payload not found: " + prefix + ".bin");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = plist[i];
        if (entry.at("name").get<std::string>() != params[i]->name)
            throw std::runtime_error("load_checkpoint: parameter order mismatch at " +
                                     params[i]->name);
        auto shape = entry.at("shape").get<Shape>();
        if (shape != params[i]->value.shape)
            throw std::runtime_error("load_checkpoint: shape mismatch at " + params[i]->name);
        for (double& v : params[i]->value.data) {
            v = read_f32_le(bf);
            if (!bf) throw std::runtime_error("load_checkpoint: payload truncated");
        }
    }
}

}  // namespace aspen::nn
