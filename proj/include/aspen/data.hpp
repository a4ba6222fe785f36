#pragma once

#include <string>
#include <vector>

#include "aspen/rng.hpp"
#include "aspen/signal.hpp"

namespace aspen::data {

enum class Paradigm { Ssvep, P300, Mi };

const char* paradigm_name(Paradigm p);
Paradigm paradigm_from_name(const std::string& name);

// Parameters of the synthetic EEG generators. Subject-variability knobs model
// the inter-subject phase shifts, latency jitter, and amplitude scaling that
// make cross-subject decoding hard.
struct SynthSpec {
    Paradigm paradigm = Paradigm::Ssvep;
    int n_subjects = 12;
    int n_sessions = 2;
    int trials_per_class = 40;
    int channels = 8;
    int n_classes = 4;
    double fs = 250.0;
    double trial_seconds = 1.0;

    double phase_offset_range = 2.0 * 3.14159265358979323846;  // per subject-channel
    double latency_jitter = 0.05;                              // seconds (p300)
    double amp_scale_lo = 0.8;
    double amp_scale_hi = 1.2;
    double noise_sigma = 1.0;

    // ssvep
    std::vector<double> class_freqs = {8.0, 10.0, 12.0, 15.0};
    std::vector<double> harmonic_amps = {1.0, 0.5};

    // p300
    double imbalance_ratio = 5.0;  // negatives per positive
    double p300_latency = 0.3;     // seconds
    double p300_width = 0.05;      // gaussian sigma, seconds
    double p300_amp = 4.0;

    // mi
    bool phase_coded = false;
    double erd_depth = 0.7;
    double mi_mu_freq = 10.0;
    double mi_beta_freq = 20.0;
    double mi_mu_amp = 2.0;
    double mi_beta_amp = 1.0;
    double envelope_width = 0.12;  // fraction of the trial (phase-coded)

    int trial_len() const { return static_cast<int>(fs * trial_seconds + 0.5); }

    static SynthSpec ssvep_default();
    static SynthSpec p300_default();
    static SynthSpec mi_default();
    static SynthSpec mi_phase_coded_default();

    void validate() const;
};

// Ground-truth per-subject draws, exposed so tests can audit the knobs.
struct SubjectParams {
    std::vector<double> phases;  // per channel
    double latency = 0.0;        // p300 deflection center, seconds
    double amp_scale = 1.0;
};

struct SynthMeta {
    std::vector<SubjectParams> subjects;
};

signal::Dataset synth_ssvep(const SynthSpec& spec, uint64_t seed, SynthMeta* meta = nullptr);
signal::Dataset synth_p300(const SynthSpec& spec, uint64_t seed, SynthMeta* meta = nullptr);
signal::Dataset synth_mi(const SynthSpec& spec, uint64_t seed, SynthMeta* meta = nullptr);
signal::Dataset synthesize(const SynthSpec& spec, uint64_t seed, SynthMeta* meta = nullptr);

// Seen subjects split 60/20/20 (train/val/test1) stratified by label, whole
// recording sessions preferred for test1 when they fit the quota; unseen
// subjects contribute every trial to test2.
struct SplitPlan {
    std::vector<int> seen_subjects;
    std::vector<int> unseen_subjects;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
    std::vector<int> test1_idx;  // seen-subject held-out trials
    std::vector<int> test2_idx;  // unseen-subject trials
    std::vector<std::string> warnings;
};

SplitPlan split_subjects(const signal::Dataset& ds, double seen_fraction, uint64_t seed);

// Binary epochs container: magic "EEGT", version, dimensions, label/subject/
// session arrays, then float32 little-endian samples in (n, C, T) order.
void save_epochs(const signal::Dataset& ds, const std::string& path);
signal::Dataset load_epochs(const std::string& path);

}  // namespace aspen::data
