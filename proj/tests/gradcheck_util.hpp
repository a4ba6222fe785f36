#pragma once

// Central finite-difference gradient checking against the hand-chained
// backward passes. The probe loss is sum(r * y) for a fixed random r, so
// dL/dy = r feeds straight into Module::backward.

#include <functional>
#include <vector>

#include "aspen/nn.hpp"
#include "aspen/rng.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// fwd() must run the full forward pass and return the probe loss;
// bwd() must zero grads, run forward + backward, and return (loss, dx...).
// `bufs` lists every buffer to differentiate (parameter values and inputs),
// `grads` the matching analytic gradients (filled after calling bwd()).
inline Result check(const std::function<double()>& fwd,
                    const std::function<void()>& bwd,
                    const std::vector<std::pair<std::string, aspen::Tensor*>>& bufs,
                    const std::vector<const aspen::Tensor*>& grads,
                    double h = 1e-5) {
    bwd();
    Result res;
    for (size_t i = 0; i < bufs.size(); ++i) {
        auto* buf = bufs[i].second;
        std::vector<double> analytic = grads[i]->data;
        std::vector<double> fd = oracle::finite_diff(fwd, buf->ptr(), buf->data.size(), h);
        double err = oracle::max_rel_err(analytic, fd);
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_param = bufs[i].first;
        }
    }
    return res;
}

// Convenience: probe a single-input module end to end (params + input).
inline Result check_module(aspen::nn::Module& m, aspen::Tensor& x, aspen::Rng& rng,
                           bool training = true) {
    m.set_training(training);
    aspen::Tensor y0 = m.forward(x);
    aspen::Tensor r(y0.shape);
    for (double& v : r.data) v = rng.uniform(-1.0, 1.0);

    auto fwd = [&]() {
        aspen::Tensor y = m.forward(x);
        double loss = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i) loss += r.data[i] * y.data[i];
        return loss;
    };

    std::vector<aspen::nn::Parameter*> params;
    m.collect_params(params);
    aspen::Tensor dx;
    auto bwd = [&]() {
        aspen::nn::zero_grads(params);
        m.forward(x);
        dx = m.backward(r);
    };

    std::vector<std::pair<std::string, aspen::Tensor*>> bufs;
    std::vector<const aspen::Tensor*> grads;
    bwd();
    for (auto* p : params) {
        bufs.push_back({p->name, &p->value});
        grads.push_back(&p->grad);
    }
    bufs.push_back({"input", &x});
    grads.push_back(&dx);
    return check(fwd, bwd, bufs, grads);
}

}  // namespace gradcheck
