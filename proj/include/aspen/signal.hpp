#pragma once

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "aspen/tensor.hpp"

namespace aspen::signal {

// Raw EEG trial: data is (C x T), label is a class index.
struct Trial {
    Tensor data;
    int label = 0;
    int subject = 0;
    int session = 0;
    double fs = 0.0;

    int channels() const { return data.dim(0); }
    int samples() const { return data.dim(1); }
};

struct Dataset {
    std::vector<Trial> trials;
    int n_classes = 0;
    double fs = 0.0;

    std::vector<int> subject_ids() const;
    std::vector<int> session_ids(int subject) const;
    std::vector<int> label_set() const;
};

struct StftConfig {
    double fs = 0.0;
    int n_perseg = 0;
    int n_overlap = 0;
    int n_fft = 0;

    int hop() const { return n_perseg - n_overlap; }
    int bins() const { return n_fft / 2 + 1; }
    int frames(int trial_len) const { return (trial_len - n_perseg) / hop() + 1; }
    void validate() const;
};

// Per-trial power tensor (C x F x T') with physical axes.
struct Spectrogram {
    Tensor power;
    std::vector<double> freq_axis;  // Hz per bin
    std::vector<double> time_axis;  // frame-center seconds
};

struct SearchEntry {
    StftConfig cfg;
    double ratio = 0.0;  // overlap ratio the config was generated from
    std::string id;
};

struct PrunedEntry {
    int n_perseg = 0;
    int n_fft = 0;
    double ratio = 0.0;
    std::string reason;
};

struct SearchSpace {
    std::vector<SearchEntry> entries;
    std::vector<PrunedEntry> pruned;

    size_t size() const { return entries.size(); }
};

// Zero-phase band-limited copy of (C x T). 4th-order Butterworth high-pass at
// `low` cascaded with 4th-order low-pass at `high`, run forward-backward.
Tensor bandpass_filter(const Tensor& x, double low, double high, double fs);

// Per-channel, per-trial standardization with population variance.
// Zero-variance channels come back as zeros and are appended to `flagged`.
Tensor zscore_normalize(const Tensor& x, std::vector<int>* flagged = nullptr);

// Integer decimation with a zero-phase anti-alias low-pass at 0.8x the output
// Nyquist. fs_in must be an integer multiple of fs_out.
Tensor downsample(const Tensor& x, double fs_in, double fs_out);

struct ComplexMatrix {
    int rows = 0;  // F
    int cols = 0;  // T'
    std::vector<std::complex<double>> v;

    std::complex<double>& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    std::complex<double> at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// One-sided STFT of a single channel: periodic Hann window, no boundary
// padding, frames fully contained in the signal.
ComplexMatrix stft(const double* x, int t_len, const StftConfig& cfg);

Tensor power_spectrogram(const ComplexMatrix& z);

Spectrogram trial_to_spectral_tensor(const Trial& trial, const StftConfig& cfg);

// (delta_f Hz, delta_t s)
std::pair<double, double> stft_resolution(const StftConfig& cfg);

// Task-aware sweep over (window length, overlap ratio, FFT size); at most 27
// configurations, infeasible candidates pruned and logged.
SearchSpace generate_stft_search_space(const StftConfig& default_cfg, int trial_len);

std::string config_identifier(const StftConfig& cfg, double ratio);

}  // namespace aspen::signal
