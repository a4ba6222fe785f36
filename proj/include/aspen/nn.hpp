#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aspen/rng.hpp"
#include "aspen/tensor.hpp"

namespace aspen::nn {

struct Parameter {
    Tensor value;
    Tensor grad;
    std::string name;

    Parameter() = default;
    Parameter(Shape shape, std::string n) : value(shape), grad(shape), name(std::move(n)) {}
    void zero_grad() { grad.fill(0.0); }
};

void kaiming_uniform(Tensor& w, int fan_in, Rng& rng);

// A layer with one input and one output. backward() accumulates parameter
// gradients and returns the gradient with respect to the input; it must be
// called after forward() on the same data.
class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual void collect_params(std::vector<Parameter*>& out) {}
    virtual void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

protected:
    bool training_ = false;
};

class Sequential : public Module {
public:
    template <class M, class... Args>
    M* add(Args&&... args) {
        auto m = std::make_unique<M>(std::forward<Args>(args)...);
        M* raw = m.get();
        layers_.push_back(std::move(m));
        return raw;
    }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;
    void set_training(bool t) override;

private:
    std::vector<std::unique_ptr<Module>> layers_;
};

// Standard cross-correlation, im2col + GEMM inside.
class Conv2d : public Module {
public:
    Conv2d(int cin, int cout, int kh, int kw, int sh, int sw, int ph, int pw,
           const std::string& name, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;

    Parameter weight;  // (cout, cin, kh, kw)
    Parameter bias;    // (cout)

private:
    int cin_, cout_, kh_, kw_, sh_, sw_, ph_, pw_;
    Tensor x_;
};

// Each input channel convolved with its own `mult` kernels; stride 1.
class DepthwiseConv2d : public Module {
public:
    DepthwiseConv2d(int cin, int mult, int kh, int kw, int ph, int pw,
                    const std::string& name, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;

    Parameter weight;  // (cin*mult, 1, kh, kw)
    Parameter bias;    // (cin*mult)

private:
    int cin_, mult_, kh_, kw_, ph_, pw_;
    Tensor x_;
};

// Depthwise stage followed by a 1x1 pointwise stage.
class SeparableConv2d : public Module {
public:
    SeparableConv2d(int cin, int cout, int kh, int kw, int ph, int pw,
                    const std::string& name, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;
    void set_training(bool t) override;

private:
    DepthwiseConv2d depthwise_;
    Conv2d pointwise_;
};

class Linear : public Module {
public:
    Linear(int in, int out, const std::string& name, Rng& rng, bool with_bias = true);
    Tensor forward(const Tensor& x) override;  // (B, in) -> (B, out)
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;

    Parameter weight;  // (out, in)
    Parameter bias;    // (out), all-zero and frozen when constructed without bias

private:
    bool with_bias_;
    Tensor x_;
};

// Squeeze-and-excitation: global average pool -> bottleneck MLP -> sigmoid
// gate per channel.
class SEBlock : public Module {
public:
    SEBlock(int channels, int reduction, const std::string& name, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;

    const Tensor& gates() const { return gate_; }
    const Tensor& bottleneck_pre() const { return z1_; }

private:
    int channels_;
    Linear fc1_, fc2_;
    Tensor x_, z1_, gate_;
};

// Per-channel batch normalization over (B, C) or (B, C, H, W) input.
class BatchNorm : public Module {
public:
    BatchNorm(int features, const std::string& name,
              double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void collect_params(std::vector<Parameter*>& out) override;

    Parameter gamma, beta;
    Tensor running_mean, running_var;

private:
    int features_;
    double momentum_, eps_;
    Tensor xhat_;
    std::vector<double> invstd_;
    Shape in_shape_;
    bool used_batch_stats_ = false;
};

class AvgPool2d : public Module {
public:
    AvgPool2d(int ph, int pw, int sh, int sw) : ph_(ph), pw_(pw), sh_(sh), sw_(sw) {}
    AvgPool2d(int ph, int pw) : AvgPool2d(ph, pw, ph, pw) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    int ph_, pw_, sh_, sw_;
    Shape in_shape_;
};

class ELU : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor y_;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor x_;
};

class Sigmoid : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor y_;
};

// Inverted dropout: kept units scaled by 1/(1-p) at train time, identity in
// eval mode.
class Dropout : public Module {
public:
    Dropout(double p, Rng* rng) : p_(p), rng_(rng) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    double p_;
    Rng* rng_;
    Tensor mask_;
};

class Flatten : public Module {
public:
    Tensor forward(const Tensor& x) override;  // (B, ...) -> (B, rest)
    Tensor backward(const Tensor& dy) override;

private:
    Shape in_shape_;
};

// Row-wise softmax over the last axis with temperature tau > 0.
Tensor softmax(const Tensor& x, double tau = 1.0);

struct LossResult {
    double loss = 0.0;
    Tensor dlogits;
};

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// Mean of pos_weight*y*softplus(-z) + (1-y)*softplus(z).
LossResult bce_with_logits_loss(const Tensor& logits, const std::vector<int>& labels,
                                double pos_weight);

// Rescales all gradients jointly when the global L2 norm exceeds max_norm;
// returns the scale factor applied.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

class Adam {
public:
    Adam(std::vector<Parameter*> params, double lr,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

void zero_grads(const std::vector<Parameter*>& params);

// Checkpoints: <prefix>.json manifest (names, shapes, hyperparameters, seed)
// plus <prefix>.bin with raw little-endian float32 buffers concatenated in
// manifest order.
void save_checkpoint(const std::string& prefix, const std::string& hyper_json,
                     const std::vector<Parameter*>& params, uint64_t seed);
std::string read_checkpoint_hyper(const std::string& prefix);
void load_checkpoint(const std::string& prefix, const std::vector<Parameter*>& params);

}  // namespace aspen::nn
