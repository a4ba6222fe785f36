#include "aspen/signal.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace aspen::signal {

// ---------------------------------------------------------------------------
// dataset helpers
// ---------------------------------------------------------------------------

std::vector<int> Dataset::subject_ids() const {
    std::set<int> s;
    for (const auto& t : trials) s.insert(t.subject);
    return {s.begin(), s.end()};
}

std::vector<int> Dataset::session_ids(int subject) const {
    std::set<int> s;
    for (const auto& t : trials)
        if (t.subject == subject) s.insert(t.session);
    return {s.begin(), s.end()};
}

std::vector<int> Dataset::label_set() const {
    std::set<int> s;
    for (const auto& t : trials) s.insert(t.label);
    return {s.begin(), s.end()};
}

void StftConfig::validate() const {
    if (fs <= 0.0) throw std::invalid_argument("StftConfig: fs must be positive");
    if (n_perseg < 1) throw std::invalid_argument("StftConfig: n_perseg must be >= 1");
    if (n_overlap < 0 || n_overlap >= n_perseg)
        throw std::invalid_argument("StftConfig: require 0 <= n_overlap < n_perseg");
    if (n_fft < n_perseg) throw std::invalid_argument("StftConfig: require n_fft >= n_perseg");
}

// ---------------------------------------------------------------------------
// IIR filtering: Butterworth biquad cascades run forward-backward
// ---------------------------------------------------------------------------

namespace {

struct Biquad {
    double b0, b1, b2, a1, a2;  // a0 normalized to 1
};

// RBJ cookbook sections (bilinear transform with prewarping).
Biquad butter_section(double fc, double fs, double q, bool highpass) {
    double w0 = 2.0 * M_PI * fc / fs;
    double cw = std::cos(w0);
    double alpha = std::sin(w0) / (2.0 * q);
    double a0 = 1.0 + alpha;
    Biquad s{};
    if (highpass) {
        s.b0 = (1.0 + cw) / 2.0 / a0;
        s.b1 = -(1.0 + cw) / a0;
        s.b2 = s.b0;
    } else {
        s.b0 = (1.0 - cw) / 2.0 / a0;
        s.b1 = (1.0 - cw) / a0;
        s.b2 = s.b0;
    }
    s.a1 = -2.0 * cw / a0;
    s.a2 = (1.0 - alpha) / a0;
    return s;
}

// Butterworth pole quality factors: Q_k = 1 / (2 cos((2k+1) pi / (2n))).
std::vector<double> butter_qs(int order) {
    std::vector<double> qs;
    for (int k = 0; k < order / 2; ++k)
        qs.push_back(1.0 / (2.0 * std::cos(M_PI * (2 * k + 1) / (2.0 * order))));
    return qs;
}

std::vector<Biquad> butter_filter(double fc, double fs, int order, bool highpass) {
    std::vector<Biquad> sections;
    for (double q : butter_qs(order)) sections.push_back(butter_section(fc, fs, q, highpass));
    return sections;
}

// One section, DF2-transposed, with the state preloaded to the step-input
// steady state scaled by the first sample (kills the start-up transient).
void run_section(const Biquad& s, std::vector<double>& x) {
    double x0 = x.empty() ? 0.0 : x[0];
    double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double y_ss = dc * x0;
    double s1 = y_ss - s.b0 * x0;
    double s2 = s.b2 * x0 - s.a2 * y_ss;
    for (double& v : x) {
        double y = s.b0 * v + s1;
        s1 = s.b1 * v - s.a1 * y + s2;
        s2 = s.b2 * v - s.a2 * y;
        v = y;
    }
}

void run_cascade(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const auto& s : sections) run_section(s, x);
}

// Zero-phase filtering with odd-reflection edge padding.
std::vector<double> filtfilt(const std::vector<Biquad>& sections,
                             const double* x, int t_len) {
    int pad = 3 * (2 * static_cast<int>(sections.size()) + 1);
    if (t_len <= pad)
        throw std::invalid_argument("filter: signal shorter than warm-up length " +
                                    std::to_string(pad + 1));
    std::vector<double> buf(static_cast<size_t>(t_len + 2 * pad));
    for (int i = 0; i < pad; ++i) buf[i] = 2.0 * x[0] - x[pad - i];
    for (int i = 0; i < t_len; ++i) buf[pad + i] = x[i];
    for (int i = 0; i < pad; ++i) buf[pad + t_len + i] = 2.0 * x[t_len - 1] - x[t_len - 2 - i];

    run_cascade(sections, buf);
    std::reverse(buf.begin(), buf.end());
    run_cascade(sections, buf);
    std::reverse(buf.begin(), buf.end());

    return {buf.begin() + pad, buf.begin() + pad + t_len};
}

Tensor filter_channels(const Tensor& x, const std::vector<Biquad>& sections) {
    int c_n = x.dim(0), t_n = x.dim(1);
    Tensor out({c_n, t_n});
    for (int c = 0; c < c_n; ++c) {
        auto y = filtfilt(sections, x.ptr() + static_cast<size_t>(c) * t_n, t_n);
        std::copy(y.begin(), y.end(), out.ptr() + static_cast<size_t>(c) * t_n);
    }
    return out;
}

}  // namespace

Tensor bandpass_filter(const Tensor& x, double low, double high, double fs) {
    if (x.ndim() != 2) throw std::invalid_argument("bandpass_filter: expected (C x T)");
    if (!(low > 0.0 && low < high && high < fs / 2.0))
        throw std::invalid_argument("bandpass_filter: require 0 < low < high < fs/2");
    auto sections = butter_filter(low, fs, 4, true);
    auto lp = butter_filter(high, fs, 4, false);
    sections.insert(sections.end(), lp.begin(), lp.end());
    return filter_channels(x, sections);
}

Tensor zscore_normalize(const Tensor& x, std::vector<int>* flagged) {
    if (x.ndim() != 2) throw std::invalid_argument("zscore_normalize: expected (C x T)");
    int c_n = x.dim(0), t_n = x.dim(1);
    Tensor out({c_n, t_n});
    for (int c = 0; c < c_n; ++c) {
        const double* in = x.ptr() + static_cast<size_t>(c) * t_n;
        double* o = out.ptr() + static_cast<size_t>(c) * t_n;
        double mean = 0.0;
        for (int t = 0; t < t_n; ++t) mean += in[t];
        mean /= t_n;
        double var = 0.0;
        for (int t = 0; t < t_n; ++t) var += (in[t] - mean) * (in[t] - mean);
        var /= t_n;
        if (var <= 0.0) {
            if (flagged) flagged->push_back(c);
            std::fill(o, o + t_n, 0.0);
            continue;
        }
        double inv = 1.0 / std::sqrt(var);
        for (int t = 0; t < t_n; ++t) o[t] = (in[t] - mean) * inv;
    }
    return out;
}

Tensor downsample(const Tensor& x, double fs_in, double fs_out) {
    if (x.ndim() != 2) throw std::invalid_argument("downsample: expected (C x T)");
    if (fs_out > fs_in) throw std::invalid_argument("downsample: fs_out must be <= fs_in");
    int q = static_cast<int>(std::llround(fs_in / fs_out));
    if (std::abs(fs_in - q * fs_out) > 1e-9 * fs_in)
        throw std::invalid_argument("downsample: fs_in must be an integer multiple of fs_out");
    if (q == 1) return x;

    double cutoff = 0.8 * (fs_out / 2.0);
    Tensor filtered = filter_channels(x, butter_filter(cutoff, fs_in, 8, false));

    int c_n = x.dim(0), t_n = x.dim(1);
    int t_out = static_cast<int>(static_cast<int64_t>(t_n) * static_cast<int64_t>(std::llround(fs_out)) /
                                 static_cast<int64_t>(std::llround(fs_in)));
    Tensor out({c_n, t_out});
    for (int c = 0; c < c_n; ++c)
        for (int t = 0; t < t_out; ++t)
            out.at(c, t) = filtered.at(c, t * q);
    return out;
}

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place, size must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& a) {
    int n = static_cast<int>(a.size());
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / len;
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                auto u = a[i + j];
                auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

void dft_naive(std::vector<std::complex<double>>& a) {
    int n = static_cast<int>(a.size());
    std::vector<std::complex<double>> out(a.size());
    for (int k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (int m = 0; m < n; ++m) {
            double ang = -2.0 * M_PI * k * m / n;
            acc += a[m] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    a = std::move(out);
}

std::vector<double> hann_periodic(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int m = 0; m < n; ++m) w[m] = 0.5 * (1.0 - std::cos(2.0 * M_PI * m / n));
    return w;
}

}  // namespace

ComplexMatrix stft(const double* x, int t_len, const StftConfig& cfg) {
    cfg.validate();
    if (t_len < cfg.n_perseg)
        throw std::invalid_argument("stft: trial length " + std::to_string(t_len) +
                                    " shorter than n_perseg " + std::to_string(cfg.n_perseg));
    int hop = cfg.hop();
    int f_n = cfg.bins();
    int frames = cfg.frames(t_len);
    auto w = hann_periodic(cfg.n_perseg);

    ComplexMatrix out;
    out.rows = f_n;
    out.cols = frames;
    out.v.assign(static_cast<size_t>(f_n) * frames, {0.0, 0.0});

    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.n_fft));
    bool pow2 = is_pow2(cfg.n_fft);
    for (int l = 0; l < frames; ++l) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        const double* seg = x + static_cast<size_t>(l) * hop;
        for (int m = 0; m < cfg.n_perseg; ++m) buf[m] = seg[m] * w[m];
        if (pow2)
            fft_pow2(buf);
        else
            dft_naive(buf);
        for (int k = 0; k < f_n; ++k) out.at(k, l) = buf[k];
    }
    return out;
}

Tensor power_spectrogram(const ComplexMatrix& z) {
    Tensor out({z.rows, z.cols});
    for (size_t i = 0; i < z.v.size(); ++i)
        out.data[i] = z.v[i].real() * z.v[i].real() + z.v[i].imag() * z.v[i].imag();
    return out;
}

Spectrogram trial_to_spectral_tensor(const Trial& trial, const StftConfig& cfg) {
    int c_n = trial.channels();
    int t_len = trial.samples();
    int f_n = cfg.bins();
    int frames = cfg.frames(t_len);

    Spectrogram sg;
    sg.power = Tensor({c_n, f_n, frames});
    for (int c = 0; c < c_n; ++c) {
        auto z = stft(trial.data.ptr() + static_cast<size_t>(c) * t_len, t_len, cfg);
        auto p = power_spectrogram(z);
        std::copy(p.data.begin(), p.data.end(),
                  sg.power.ptr() + static_cast<size_t>(c) * f_n * frames);
    }
    sg.freq_axis.resize(static_cast<size_t>(f_n));
    for (int k = 0; k < f_n; ++k) sg.freq_axis[k] = k * cfg.fs / cfg.n_fft;
    sg.time_axis.resize(static_cast<size_t>(frames));
    for (int l = 0; l < frames; ++l)
        sg.time_axis[l] = (l * cfg.hop() + cfg.n_perseg / 2.0) / cfg.fs;
    return sg;
}

std::pair<double, double> stft_resolution(const StftConfig& cfg) {
    cfg.validate();
    return {cfg.fs / cfg.n_fft, static_cast<double>(cfg.hop()) / cfg.fs};
}

// ---------------------------------------------------------------------------
// search space
// ---------------------------------------------------------------------------

namespace {

int pow2_ceil(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace

std::string config_identifier(const StftConfig& cfg, double ratio) {
    double pct = 100.0 * ratio;
    std::ostringstream os;
    os << "nperseg" << cfg.n_perseg << "_ov";
    if (pct == std::floor(pct)) {
        os << static_cast<long long>(pct);
    } else {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", pct);
        std::string s(buf);
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
        os << s;
    }
    os << "_nfft" << cfg.n_fft;
    return os.str();
}

SearchSpace generate_stft_search_space(const StftConfig& default_cfg, int trial_len) {
    default_cfg.validate();
    const int n0 = default_cfg.n_perseg;
    const int nfft0 = default_cfg.n_fft;
    const double ratios[] = {0.50, 0.75, 0.9375};

    std::vector<int> persegs = {std::max(32, n0 / 2), n0, std::min(trial_len, 2 * n0)};
    std::sort(persegs.begin(), persegs.end());
    persegs.erase(std::unique(persegs.begin(), persegs.end()), persegs.end());

    SearchSpace space;
    std::set<std::tuple<int, int, int>> seen;
    for (int np : persegs) {
        if (np > trial_len) {
            space.pruned.push_back({np, 0, 0.0, "n_perseg > trial_len"});
            continue;
        }
        std::vector<int> pool = {pow2_ceil(np), 256, 512, 1024, 2048, nfft0};
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        std::vector<int> valid;
        for (int f : pool) {
            if (f >= np)
                valid.push_back(f);
            else
                space.pruned.push_back({np, f, 0.0, "n_fft < n_perseg"});
        }
        while (valid.size() < 3) valid.push_back(2 * valid.back());

        std::vector<int> ffts;
        auto it = std::find(valid.begin(), valid.end(), nfft0);
        if (it != valid.end() && valid.size() > 3) {
            int i = static_cast<int>(it - valid.begin());
            int lo = std::clamp(i - 1, 0, static_cast<int>(valid.size()) - 3);
            ffts = {valid[lo], valid[lo + 1], valid[lo + 2]};
        } else {
            ffts = {valid[0], valid[1], valid[2]};
        }

        for (double r : ratios) {
            int nov = static_cast<int>(std::floor(r * np));
            if (nov >= np) {
                space.pruned.push_back({np, 0, r, "n_overlap >= n_perseg"});
                continue;
            }
            for (int f : ffts) {
                if (!seen.insert({np, nov, f}).second) continue;  // dedup
                StftConfig cfg{default_cfg.fs, np, nov, f};
                space.entries.push_back({cfg, r, config_identifier(cfg, r)});
            }
        }
    }
    return space;
}

}  // namespace aspen::signal
