#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aspen/characterize.hpp"
#include "aspen/rng.hpp"
#include "oracles.hpp"

using namespace aspen;
using namespace aspen::characterize;
using signal::Dataset;
using signal::StftConfig;
using signal::Trial;

namespace {

Trial make_trial(int c_n, int t_len, int label, int subject, int session, Rng& rng,
                 double scale = 1.0) {
    Trial t;
    t.label = label;
    t.subject = subject;
    t.session = session;
    t.fs = 250.0;
    t.data = Tensor({c_n, t_len});
    for (double& v : t.data.data) v = scale * rng.normal();
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// class_representative
// ---------------------------------------------------------------------------

TEST_CASE("representative: a singleton class equals the trial itself") {
    Rng rng(1);
    Trial t = make_trial(3, 64, 0, 1, 1, rng);
    auto pat = class_representative({t}, 0, Domain::Temporal);
    CHECK(pat.tensor.data == t.data.data);
    CHECK(pat.trial_count == 1);

    StftConfig cfg{250.0, 32, 16, 32};
    auto spec = class_representative({t}, 0, Domain::Spectral, &cfg);
    auto want = signal::trial_to_spectral_tensor(t, cfg).power;
    REQUIRE(spec.tensor.shape == want.shape);
    for (size_t i = 0; i < want.data.size(); ++i)
        CHECK(spec.tensor.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("representative: x and -x average to zero; duplicates average to the trial") {
    Rng rng(2);
    Trial a = make_trial(2, 32, 1, 1, 1, rng);
    Trial b = a;
    for (double& v : b.data.data) v = -v;
    auto pat = class_representative({a, b}, 1, Domain::Temporal);
    for (double v : pat.tensor.data) CHECK(std::abs(v) < 1e-15);

    std::vector<Trial> copies(7, a);
    auto rep = class_representative(copies, 1, Domain::Temporal);
    for (size_t i = 0; i < a.data.data.size(); ++i)
        CHECK(std::abs(rep.tensor.data[i] - a.data.data[i]) < 1e-12);
}

TEST_CASE("representative: empty class raises") {
    Rng rng(3);
    Trial t = make_trial(2, 32, 0, 1, 1, rng);
    CHECK_THROWS_AS(class_representative({t}, 5, Domain::Temporal), std::runtime_error);
    CHECK_THROWS_AS(class_representative({t}, 0, Domain::Spectral, nullptr),
                    std::invalid_argument);
}

// ---------------------------------------------------------------------------
// pattern_correlation
// ---------------------------------------------------------------------------

TEST_CASE("correlation: identity, negation, affine invariance, symmetry") {
    Rng rng(4);
    RepresentativePattern a;
    a.domain = Domain::Temporal;
    a.tensor = Tensor({4, 100});
    for (double& v : a.tensor.data) v = rng.normal();

    CHECK(pattern_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    RepresentativePattern neg = a;
    for (double& v : neg.tensor.data) v = -v;
    CHECK(pattern_correlation(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    RepresentativePattern affine = a;
    for (double& v : affine.tensor.data) v = 3.0 * v + 7.0;
    CHECK(pattern_correlation(a, affine) == doctest::Approx(1.0).epsilon(1e-9));

    RepresentativePattern b = a;
    for (double& v : b.tensor.data) v = rng.normal();
    double rab = pattern_correlation(a, b);
    double rba = pattern_correlation(b, a);
    CHECK(std::abs(rab - rba) < 1e-12);
    CHECK(rab >= -1.0);
    CHECK(rab <= 1.0);

    // scale/offset invariance of one side
    RepresentativePattern scaled = b;
    for (double& v : scaled.tensor.data) v = 0.4 * v - 11.0;
    CHECK(pattern_correlation(a, scaled) == doctest::Approx(rab).epsilon(1e-9));
}

TEST_CASE("correlation: shape mismatch and zero variance raise") {
    RepresentativePattern a, b;
    a.domain = b.domain = Domain::Temporal;
    a.tensor = Tensor({2, 10});
    b.tensor = Tensor({2, 11});
    CHECK_THROWS_AS(pattern_correlation(a, b), std::invalid_argument);

    b.tensor = Tensor({2, 10});
    a.tensor.fill(5.0);  // zero variance
    for (double& v : b.tensor.data) v = 1.0;
    CHECK_THROWS_AS(pattern_correlation(a, b), std::runtime_error);
}

// ---------------------------------------------------------------------------
// cross-session
// ---------------------------------------------------------------------------

TEST_CASE("cross-session: duplicated sessions give mean r = 1") {
    Rng rng(5);
    Dataset ds;
    ds.n_classes = 2;
    ds.fs = 250.0;
    for (int label : {0, 1}) {
        Trial t = make_trial(2, 64, label, 1, 1, rng);
        Trial t2 = t;
        t2.session = 2;
        ds.trials.push_back(t);
        ds.trials.push_back(t2);
    }
    auto rep = cross_session_correlation(ds, Domain::Temporal);
    CHECK(rep.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.count == 2);  // one session pair x two labels
    CHECK(rep.cohort == std::vector<int>{1});
}

TEST_CASE("cross-session: independent noise sessions decorrelate") {
    Rng rng(6);
    Dataset ds;
    ds.n_classes = 1;
    ds.fs = 250.0;
    // single subject, two sessions, one label, >= 1e4 flattened dims
    ds.trials.push_back(make_trial(10, 1000, 0, 7, 1, rng));
    ds.trials.push_back(make_trial(10, 1000, 0, 7, 2, rng));
    auto rep = cross_session_correlation(ds, Domain::Temporal);
    CHECK(std::abs(rep.mean) < 0.1);
}

TEST_CASE("cross-session: no multi-session subject raises") {
    Rng rng(7);
    Dataset ds;
    ds.trials.push_back(make_trial(2, 32, 0, 1, 1, rng));
    ds.trials.push_back(make_trial(2, 32, 0, 2, 1, rng));
    CHECK_THROWS_AS(cross_session_correlation(ds, Domain::Temporal), std::runtime_error);
}

// ---------------------------------------------------------------------------
// cross-subject
// ---------------------------------------------------------------------------

TEST_CASE("cross-subject: cloned subject correlates perfectly") {
    Rng rng(8);
    Dataset ds;
    ds.n_classes = 2;
    for (int label : {0, 1}) {
        Trial t = make_trial(3, 50, label, 1, 1, rng);
        Trial clone = t;
        clone.subject = 2;
        ds.trials.push_back(t);
        ds.trials.push_back(clone);
    }
    auto rep = cross_subject_correlation(ds, Domain::Temporal);
    CHECK(rep.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.count == 2);
}

TEST_CASE("cross-subject: pair x label enumeration") {
    Rng rng(9);
    int s_n = 5, l_n = 3;
    Dataset ds;
    ds.n_classes = l_n;
    for (int s = 0; s < s_n; ++s)
        for (int l = 0; l < l_n; ++l)
            for (int k = 0; k < 2; ++k) ds.trials.push_back(make_trial(2, 40, l, s, 1, rng));
    auto rep = cross_subject_correlation(ds, Domain::Temporal);
    CHECK(rep.count == l_n * s_n * (s_n - 1) / 2);
    for (const auto& p : rep.pairs) {
        CHECK(p.r >= -1.0);
        CHECK(p.r <= 1.0);
    }
}

TEST_CASE("cross-subject: fewer than two subjects raises") {
    Rng rng(10);
    Dataset ds;
    ds.trials.push_back(make_trial(2, 32, 0, 1, 1, rng));
    CHECK_THROWS_AS(cross_subject_correlation(ds, Domain::Temporal), std::runtime_error);
}

TEST_CASE("cross-subject: phase-shifted sinusoids decorrelate temporally, not spectrally") {
    // class signature identical across subjects except per-subject phase:
    // the paper's cross-subject contrast restated on constructed data
    double fs = 128.0;
    int t_len = 128, c_n = 4;
    Dataset ds;
    ds.n_classes = 1;
    ds.fs = fs;
    Rng rng(11);
    for (int s = 0; s < 4; ++s) {
        double phase = s * M_PI / 2.0;  // offsets >= pi/4 apart
        for (int trial = 0; trial < 3; ++trial) {
            Trial t;
            t.label = 0;
            t.subject = s;
            t.session = 1;
            t.fs = fs;
            t.data = Tensor({c_n, t_len});
            for (int c = 0; c < c_n; ++c)
                for (int i = 0; i < t_len; ++i)
                    t.data.at(c, i) = std::sin(2.0 * M_PI * 10.0 * i / fs + phase) +
                                      0.1 * rng.normal();
            ds.trials.push_back(t);
        }
    }
    StftConfig cfg{fs, 64, 32, 64};
    auto temporal = cross_subject_correlation(ds, Domain::Temporal);
    auto spectral = cross_subject_correlation(ds, Domain::Spectral, &cfg);
    CHECK(spectral.mean > temporal.mean);
    CHECK(temporal.mean < 0.5);
}

TEST_CASE("report serialization carries pairs and aggregate") {
    Rng rng(12);
    Dataset ds;
    ds.n_classes = 1;
    for (int s = 0; s < 3; ++s)
        ds.trials.push_back(make_trial(2, 64, 0, s, 1, rng));
    auto rep = cross_subject_correlation(ds, Domain::Temporal);
    std::string j = rep.to_json();
    CHECK(j.find("\"cross_subject\"") != std::string::npos);
    CHECK(j.find("\"aggregate\"") != std::string::npos);
    std::string csv = rep.to_csv();
    CHECK(csv.find("mode,domain,subject,id_a,id_b,label,r") == 0);
    // header + one row per pair
    int rows = static_cast<int>(std::count(csv.begin(), csv.end(), '\n'));
    CHECK(rows == rep.count + 1);
}
