#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aspen/fusion.hpp"
#include "gradcheck_util.hpp"
#include "oracles.hpp"

using namespace aspen;
using namespace aspen::fusion;

namespace {

// BatchNorm in eval mode with default running stats scales by this factor.
const double kBnEval = 1.0 / std::sqrt(1.0 + 1e-5);

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

nn::Parameter* find_param(std::vector<nn::Parameter*>& ps, const std::string& suffix) {
    for (auto* p : ps)
        if (p->name.size() >= suffix.size() &&
            p->name.compare(p->name.size() - suffix.size(), suffix.size(), suffix) == 0)
            return p;
    return nullptr;
}

void set_identity(Tensor& w) {
    w.fill(0.0);
    for (int i = 0; i < w.dim(0); ++i) w.at(i, i) = 1.0;
}

}  // namespace

TEST_CASE("registry: exactly the seven strategies, round-tripping names") {
    const auto& names = strategy_names();
    REQUIRE(names.size() == 7);
    CHECK(names[0] == "static");
    CHECK(names[4] == "multiplicative");
    for (const auto& n : names) CHECK(name_of(kind_from_name(n)) == n);
    CHECK_THROWS_AS(kind_from_name("concat"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// static
// ---------------------------------------------------------------------------

TEST_CASE("static fusion: averaging identities") {
    Rng rng(1);
    auto f = make_fusion(Kind::Static, 6, 0, {}, rng);
    f->set_training(false);
    Tensor v = random_tensor({3, 6}, rng);

    Tensor out = f->fuse(v, nullptr, v);
    for (size_t i = 0; i < v.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(v.data[i] * kBnEval).epsilon(1e-9));

    Tensor neg = v;
    for (double& x : neg.data) x = -x;
    Tensor out0 = f->fuse(v, nullptr, neg);
    for (double x : out0.data) CHECK(std::abs(x) < 1e-12);

    Tensor a = random_tensor({3, 6}, rng), b = random_tensor({3, 6}, rng);
    Tensor outr = f->fuse(a, nullptr, b);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(std::abs(outr.data[i] - 0.5 * (a.data[i] + b.data[i]) * kBnEval) < 1e-12);

    Tensor bad({3, 5});
    CHECK_THROWS_AS(f->fuse(a, nullptr, bad), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// global attention
// ---------------------------------------------------------------------------

TEST_CASE("global attention: zero MLP gives equal weights; weights always sum to 1") {
    Rng rng(2);
    auto f = make_fusion(Kind::GlobalAttention, 8, 0, {}, rng);
    f->set_training(false);
    std::vector<nn::Parameter*> ps;
    f->collect_params(ps);
    find_param(ps, ".mlp2.weight")->value.fill(0.0);
    find_param(ps, ".mlp2.bias")->value.fill(0.0);

    Tensor xs = random_tensor({4, 8}, rng), xt = random_tensor({4, 8}, rng);
    f->fuse(xs, nullptr, xt);
    const Tensor* a = f->attention_weights();
    REQUIRE(a);
    for (int b = 0; b < 4; ++b) {
        CHECK(a->at(b, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(a->at(b, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }

    auto f2 = make_fusion(Kind::GlobalAttention, 8, 0, {}, rng);
    f2->set_training(false);
    f2->fuse(xs, nullptr, xt);
    const Tensor* a2 = f2->attention_weights();
    for (int b = 0; b < 4; ++b)
        CHECK(std::abs(a2->at(b, 0) + a2->at(b, 1) - 1.0) < 1e-12);
}

TEST_CASE("global attention: large temperature drives weights to uniform") {
    Rng rng(3);
    FusionHyper h;
    h.tau = 1000.0;
    auto f = make_fusion(Kind::GlobalAttention, 8, 0, h, rng);
    f->set_training(false);
    Tensor xs = random_tensor({5, 8}, rng), xt = random_tensor({5, 8}, rng);
    f->fuse(xs, nullptr, xt);
    const Tensor* a = f->attention_weights();
    for (double v : a->data) CHECK(std::abs(v - 0.5) < 0.01);
}

// ---------------------------------------------------------------------------
// spatial attention
// ---------------------------------------------------------------------------

TEST_CASE("spatial attention: C=1 reduces to global attention with the residual gated off") {
    Rng rng(4);
    int d = 8;
    auto sp = make_fusion(Kind::SpatialAttention, d, 1, {}, rng);
    auto gl = make_fusion(Kind::GlobalAttention, d, 0, {}, rng);
    sp->set_training(false);
    gl->set_training(false);

    std::vector<nn::Parameter*> sps, gps;
    sp->collect_params(sps);
    gl->collect_params(gps);
    for (const char* suffix : {".mlp1.weight", ".mlp1.bias", ".mlp2.weight", ".mlp2.bias"}) {
        find_param(gps, suffix)->value = find_param(sps, suffix)->value;
    }
    find_param(gps, ".alpha")->value.at(0) = -60.0;  // sigmoid ~ 0: kill the residual

    Tensor xs = random_tensor({3, d}, rng), xt = random_tensor({3, d}, rng);
    Tensor xsc = xs.reshaped({3, 1, d});
    Tensor out_sp = sp->fuse(xs, &xsc, xt);
    Tensor out_gl = gl->fuse(xs, nullptr, xt);
    for (size_t i = 0; i < out_sp.data.size(); ++i)
        CHECK(out_sp.data[i] == doctest::Approx(out_gl.data[i]).epsilon(1e-9));
}

TEST_CASE("spatial attention: identical channels equal the C=1 case; weights sum to 1") {
    Rng rng(5);
    int d = 8, c_n = 4;
    auto sp = make_fusion(Kind::SpatialAttention, d, c_n, {}, rng);
    sp->set_training(false);
    Tensor xs = random_tensor({3, d}, rng), xt = random_tensor({3, d}, rng);
    Tensor xsc({3, c_n, d});
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < c_n; ++c)
            for (int j = 0; j < d; ++j) xsc.at(b, c, j) = xs.at(b, j);
    Tensor out_multi = sp->fuse(xs, &xsc, xt);
    const Tensor* a = sp->attention_weights();
    for (int r = 0; r < a->dim(0); ++r)
        CHECK(std::abs(a->at(r, 0) + a->at(r, 1) - 1.0) < 1e-12);

    Tensor xsc1 = xs.reshaped({3, 1, d});
    Tensor out_single = sp->fuse(xs, &xsc1, xt);
    for (size_t i = 0; i < out_multi.data.size(); ++i)
        CHECK(out_multi.data[i] == doctest::Approx(out_single.data[i]).epsilon(1e-9));

    CHECK_THROWS_AS(sp->fuse(xs, nullptr, xt), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// GLU
// ---------------------------------------------------------------------------

TEST_CASE("glu: zero gate weights halve the sum; gates strictly inside (0,1); closed gate kills output") {
    Rng rng(6);
    auto f = make_fusion(Kind::Glu, 6, 0, {}, rng);
    f->set_training(false);
    std::vector<nn::Parameter*> ps;
    f->collect_params(ps);
    auto* gw = find_param(ps, ".gate.weight");
    auto* gb = find_param(ps, ".gate.bias");

    Tensor xs = random_tensor({3, 6}, rng), xt = random_tensor({3, 6}, rng);

    Tensor gw_saved = gw->value;
    gw->value.fill(0.0);
    gb->value.fill(0.0);
    Tensor out = f->fuse(xs, nullptr, xt);
    for (size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] ==
              doctest::Approx(0.5 * (xs.data[i] + xt.data[i]) * kBnEval).epsilon(1e-9));

    gw->value = gw_saved;
    f->fuse(xs, nullptr, xt);
    for (double g : f->gate_values()->data) {
        CHECK(g > 0.0);
        CHECK(g < 1.0);
    }

    gb->value.fill(-60.0);
    gw->value.fill(0.0);
    Tensor closed = f->fuse(xs, nullptr, xt);
    for (double v : closed.data) CHECK(std::abs(v) < 1e-12);
}

// ---------------------------------------------------------------------------
// multiplicative
// ---------------------------------------------------------------------------

TEST_CASE("multiplicative: identity projections give the elementwise product") {
    Rng rng(7);
    FusionHyper h;
    h.dropout = 0.0;
    auto f = make_fusion(Kind::Multiplicative, 5, 0, h, rng);
    f->set_training(false);
    std::vector<nn::Parameter*> ps;
    f->collect_params(ps);
    set_identity(find_param(ps, ".proj_s.weight")->value);
    set_identity(find_param(ps, ".proj_t.weight")->value);
    find_param(ps, ".proj_s.bias")->value.fill(0.0);
    find_param(ps, ".proj_t.bias")->value.fill(0.0);

    Tensor xs = random_tensor({4, 5}, rng), xt = random_tensor({4, 5}, rng);
    Tensor out = f->fuse(xs, nullptr, xt);
    for (size_t i = 0; i < out.data.size(); ++i)
        CHECK(std::abs(out.data[i] - xs.data[i] * xt.data[i] * kBnEval) < 1e-12);
}

TEST_CASE("multiplicative: zero temporal projection coordinate annihilates the fused coordinate") {
    Rng rng(8);
    FusionHyper h;
    h.dropout = 0.0;
    auto f = make_fusion(Kind::Multiplicative, 5, 0, h, rng);
    f->set_training(false);
    std::vector<nn::Parameter*> ps;
    f->collect_params(ps);
    set_identity(find_param(ps, ".proj_t.weight")->value);
    find_param(ps, ".proj_t.bias")->value.fill(0.0);

    Tensor xs = random_tensor({4, 5}, rng);
    Tensor xt = random_tensor({4, 5}, rng);
    for (int b = 0; b < 4; ++b) xt.at(b, 2) = 0.0;  // (W_t x_t + b_t)_2 = 0
    Tensor out = f->fuse(xs, nullptr, xt);
    for (int b = 0; b < 4; ++b) CHECK(out.at(b, 2) == 0.0);  // exact annihilation
    CHECK(f->has_projections());
}

// ---------------------------------------------------------------------------
// bilinear
// ---------------------------------------------------------------------------

TEST_CASE("bilinear: default rank within the stated band; rank > d rejected") {
    CHECK(FusionHyper{}.rank == 16);
    CHECK(FusionHyper{}.rank >= 8);
    CHECK(FusionHyper{}.rank <= 32);
    Rng rng(9);
    FusionHyper h;
    h.rank = 10;
    CHECK_THROWS_AS(make_fusion(Kind::Bilinear, 8, 0, h, rng), std::invalid_argument);
}

TEST_CASE("bilinear: full-rank identity setup equals multiplicative with identity projections") {
    Rng rng(10);
    int d = 6;
    FusionHyper h;
    h.rank = d;
    h.dropout = 0.0;
    auto bi = make_fusion(Kind::Bilinear, d, 0, h, rng);
    auto mu = make_fusion(Kind::Multiplicative, d, 0, h, rng);
    bi->set_training(false);
    mu->set_training(false);
    std::vector<nn::Parameter*> bps, mps;
    bi->collect_params(bps);
    mu->collect_params(mps);
    set_identity(find_param(bps, ".u_s.weight")->value);
    set_identity(find_param(bps, ".u_t.weight")->value);
    set_identity(find_param(bps, ".out.weight")->value);
    find_param(bps, ".out.bias")->value.fill(0.0);
    set_identity(find_param(mps, ".proj_s.weight")->value);
    set_identity(find_param(mps, ".proj_t.weight")->value);
    find_param(mps, ".proj_s.bias")->value.fill(0.0);
    find_param(mps, ".proj_t.bias")->value.fill(0.0);

    Tensor xs = random_tensor({3, d}, rng), xt = random_tensor({3, d}, rng);
    Tensor a = bi->fuse(xs, nullptr, xt);
    Tensor b = mu->fuse(xs, nullptr, xt);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-9);
}

TEST_CASE("bilinear: projections are linear in each stream") {
    Rng rng(11);
    FusionHyper h;
    h.rank = 4;
    h.dropout = 0.0;
    auto f = make_fusion(Kind::Bilinear, 8, 0, h, rng);
    f->set_training(false);
    Tensor xs = random_tensor({2, 8}, rng), xt = random_tensor({2, 8}, rng);
    f->fuse(xs, nullptr, xt);
    Tensor zs1 = f->proj_spectral();
    Tensor xs3 = xs;
    for (double& v : xs3.data) v *= 3.0;
    f->fuse(xs3, nullptr, xt);
    Tensor zs3 = f->proj_spectral();
    for (size_t i = 0; i < zs1.data.size(); ++i)
        CHECK(zs3.data[i] == doctest::Approx(3.0 * zs1.data[i]).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// cross attention
// ---------------------------------------------------------------------------

TEST_CASE("cross attention: explicit per-head oracle reproduces the output") {
    Rng rng(12);
    int d = 8, heads = 4;
    FusionHyper h;
    h.heads = heads;
    auto f = make_fusion(Kind::CrossAttention, d, 0, h, rng);
    f->set_training(false);
    std::vector<nn::Parameter*> ps;
    f->collect_params(ps);
    const Tensor& wq = find_param(ps, ".w_q.weight")->value;
    const Tensor& wk = find_param(ps, ".w_k.weight")->value;
    const Tensor& wv = find_param(ps, ".w_v.weight")->value;
    const Tensor& wo = find_param(ps, ".w_o.weight")->value;
    const Tensor& m1w = find_param(ps, ".mlp1.weight")->value;
    const Tensor& m1b = find_param(ps, ".mlp1.bias")->value;
    const Tensor& m2w = find_param(ps, ".mlp2.weight")->value;
    const Tensor& m2b = find_param(ps, ".mlp2.bias")->value;
    double alpha = find_param(ps, ".alpha")->value.at(0);

    int b_n = 3;
    Tensor xs = random_tensor({b_n, d}, rng), xt = random_tensor({b_n, d}, rng);
    Tensor out = f->fuse(xs, nullptr, xt);

    auto matvec = [&](const Tensor& w, const Tensor& x, int b) {
        std::vector<double> y(static_cast<size_t>(w.dim(0)), 0.0);
        for (int o = 0; o < w.dim(0); ++o)
            for (int i = 0; i < w.dim(1); ++i)
                y[static_cast<size_t>(o)] += w.at(o, i) * x.at(b, i);
        return y;
    };
    int dh = d / heads;
    for (int b = 0; b < b_n; ++b) {
        auto q = matvec(wq, xs, b), k = matvec(wk, xt, b), v = matvec(wv, xt, b);
        // each head attends over the single key: softmax of one score is 1
        std::vector<double> concat(static_cast<size_t>(d), 0.0);
        for (int hd = 0; hd < heads; ++hd) {
            double score = 0.0;
            for (int j = 0; j < dh; ++j)
                score += q[static_cast<size_t>(hd * dh + j)] * k[static_cast<size_t>(hd * dh + j)];
            score /= std::sqrt(static_cast<double>(dh));
            (void)score;
            double attn = 1.0;
            for (int j = 0; j < dh; ++j)
                concat[static_cast<size_t>(hd * dh + j)] =
                    attn * v[static_cast<size_t>(hd * dh + j)];
        }
        std::vector<double> x_attn(static_cast<size_t>(d), 0.0);
        for (int o = 0; o < d; ++o)
            for (int i = 0; i < d; ++i)
                x_attn[static_cast<size_t>(o)] += wo.at(o, i) * concat[static_cast<size_t>(i)];

        std::vector<double> hmid(static_cast<size_t>(d), 0.0);
        for (int o = 0; o < d; ++o) {
            double acc = m1b.at(o);
            for (int i = 0; i < d; ++i) acc += m1w.at(o, i) * xs.at(b, i);
            for (int i = 0; i < d; ++i) acc += m1w.at(o, d + i) * x_attn[static_cast<size_t>(i)];
            hmid[static_cast<size_t>(o)] = std::max(0.0, acc);
        }
        double l0 = m2b.at(0), l1 = m2b.at(1);
        for (int i = 0; i < d; ++i) {
            l0 += m2w.at(0, i) * hmid[static_cast<size_t>(i)];
            l1 += m2w.at(1, i) * hmid[static_cast<size_t>(i)];
        }
        double mx = std::max(l0, l1);
        double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
        double gate = 1.0 / (1.0 + std::exp(-alpha));
        for (int j = 0; j < d; ++j) {
            double pre = w0 * xs.at(b, j) + w1 * x_attn[static_cast<size_t>(j)] +
                         gate * 0.5 * (xs.at(b, j) + xt.at(b, j));
            CHECK(std::abs(out.at(b, j) - pre * kBnEval) < 1e-9);
        }
    }
    const Tensor* w = f->attention_weights();
    for (int b = 0; b < b_n; ++b)
        CHECK(std::abs(w->at(b, 0) + w->at(b, 1) - 1.0) < 1e-12);
}

TEST_CASE("cross attention: head count must divide d") {
    Rng rng(13);
    FusionHyper h;
    h.heads = 3;
    CHECK_THROWS_AS(make_fusion(Kind::CrossAttention, 8, 0, h, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// shape preservation + gradient checks across all variants
// ---------------------------------------------------------------------------

TEST_CASE("all variants: output is (B, d)") {
    Rng rng(14);
    int d = 8, c_n = 3, b_n = 4;
    FusionHyper h;
    h.rank = 4;
    h.heads = 2;
    h.dropout = 0.0;
    Tensor xs = random_tensor({b_n, d}, rng), xt = random_tensor({b_n, d}, rng);
    Tensor xsc = random_tensor({b_n, c_n, d}, rng);
    for (const auto& name : strategy_names()) {
        auto f = make_fusion(kind_from_name(name), d, c_n, h, rng);
        f->set_training(false);
        Tensor out = f->fuse(xs, f->needs_per_channel() ? &xsc : nullptr, xt);
        CHECK(out.shape == Shape{b_n, d});
    }
}

TEST_CASE("gradcheck: all seven fusion strategies") {
    constexpr double kTol = 1e-4;
    int d = 8, c_n = 2, b_n = 3;
    FusionHyper h;
    h.rank = 4;
    h.heads = 2;
    h.dropout = 0.0;  // dropout masks would break finite differences

    for (const auto& name : strategy_names()) {
        for (int seed = 0; seed < 10; ++seed) {
            Rng rng(2000 + 100 * static_cast<uint64_t>(kind_from_name(name)) +
                    static_cast<uint64_t>(seed));
            auto f = make_fusion(kind_from_name(name), d, c_n, h, rng);
            f->set_training(true);  // batch-stat path is the one used in training

            Tensor xs = random_tensor({b_n, d}, rng);
            Tensor xt = random_tensor({b_n, d}, rng);
            Tensor xsc = random_tensor({b_n, c_n, d}, rng);
            bool per_chan = f->needs_per_channel();

            std::vector<nn::Parameter*> params;
            f->collect_params(params);

            // keep attention-MLP pre-activations clear of the ReLU kink
            if (f->attention_pre()) {
                auto* m1b = find_param(params, ".mlp1.bias");
                for (int attempt = 0; attempt < 30; ++attempt) {
                    f->fuse(xs, per_chan ? &xsc : nullptr, xt);
                    const Tensor* z1 = f->attention_pre();
                    bool clean = true;
                    for (int r = 0; r < z1->dim(0); ++r)
                        for (int o = 0; o < z1->dim(1); ++o)
                            if (std::abs(z1->at(r, o)) < 1e-3) {
                                m1b->value.at(o) += 0.05;
                                clean = false;
                            }
                    if (clean) break;
                }
            }

            Tensor out0 = f->fuse(xs, per_chan ? &xsc : nullptr, xt);
            Tensor r(out0.shape);
            for (double& v : r.data) v = rng.uniform(-1.0, 1.0);

            auto fwd = [&]() {
                Tensor y = f->fuse(xs, per_chan ? &xsc : nullptr, xt);
                double loss = 0.0;
                for (size_t i = 0; i < y.data.size(); ++i) loss += r.data[i] * y.data[i];
                return loss;
            };
            Tensor dxs, dxt, dxsc;
            auto bwd = [&]() {
                nn::zero_grads(params);
                f->fuse(xs, per_chan ? &xsc : nullptr, xt);
                f->backward(r, dxs, per_chan ? &dxsc : nullptr, dxt);
            };

            std::vector<std::pair<std::string, Tensor*>> bufs;
            std::vector<const Tensor*> grads;
            bwd();
            for (auto* p : params) {
                bufs.push_back({p->name, &p->value});
                grads.push_back(&p->grad);
            }
            bufs.push_back({"xs", &xs});
            grads.push_back(&dxs);
            bufs.push_back({"xt", &xt});
            grads.push_back(&dxt);
            if (per_chan) {
                bufs.push_back({"xs_per_chan", &xsc});
                grads.push_back(&dxsc);
            }
            auto res = gradcheck::check(fwd, bwd, bufs, grads);
            CHECK_MESSAGE(res.max_rel_err < kTol,
                          name, " seed ", seed, " worst ", res.worst_param);
        }
    }
}
