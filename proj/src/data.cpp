#include "aspen/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace aspen::data {

using signal::Dataset;
using signal::Trial;

const char* paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::Ssvep: return "ssvep";
        case Paradigm::P300: return "p300";
        case Paradigm::Mi: return "mi";
    }
    return "?";
}

Paradigm paradigm_from_name(const std::string& name) {
    if (name == "ssvep") return Paradigm::Ssvep;
    if (name == "p300") return Paradigm::P300;
    if (name == "mi") return Paradigm::Mi;
    throw std::invalid_argument("unknown paradigm: " + name);
}

// ---------------------------------------------------------------------------
// SynthSpec
// ---------------------------------------------------------------------------

SynthSpec SynthSpec::ssvep_default() {
    SynthSpec s;
    s.paradigm = Paradigm::Ssvep;
    return s;
}

SynthSpec SynthSpec::p300_default() {
    SynthSpec s;
    s.paradigm = Paradigm::P300;
    s.n_classes = 2;
    s.fs = 256.0;
    s.trial_seconds = 1.0;
    return s;
}

SynthSpec SynthSpec::mi_default() {
    SynthSpec s;
    s.paradigm = Paradigm::Mi;
    s.n_classes = 4;
    s.fs = 250.0;
    s.trial_seconds = 4.0;
    return s;
}

SynthSpec SynthSpec::mi_phase_coded_default() {
    SynthSpec s = mi_default();
    s.phase_coded = true;
    s.n_classes = 2;
    return s;
}

void SynthSpec::validate() const {
    if (n_subjects < 1 || n_sessions < 1 || trials_per_class < 1 || channels < 1)
        throw std::invalid_argument("synth spec: all counts must be >= 1");
    if (fs <= 0.0 || trial_seconds <= 0.0)
        throw std::invalid_argument("synth spec: fs and trial length must be positive");
    switch (paradigm) {
        case Paradigm::Ssvep: {
            if (static_cast<int>(class_freqs.size()) < n_classes)
                throw std::invalid_argument("synth spec: need a frequency per class");
            for (int k = 0; k < n_classes; ++k)
                if (class_freqs[static_cast<size_t>(k)] * harmonic_amps.size() >= fs / 2.0)
                    throw std::invalid_argument("synth spec: harmonic above Nyquist");
            break;
        }
        case Paradigm::P300: {
            if (n_classes != 2)
                throw std::invalid_argument("synth spec: p300 is a binary paradigm");
            if (imbalance_ratio < 1.0)
                throw std::invalid_argument("synth spec: imbalance ratio must be >= 1");
            if (p300_latency - latency_jitter <= 0.0 ||
                p300_latency + latency_jitter >= trial_seconds)
                throw std::invalid_argument("synth spec: latency + jitter beyond the trial");
            break;
        }
        case Paradigm::Mi: {
            if (n_classes != 2 && n_classes != 4)
                throw std::invalid_argument("synth spec: mi supports 2 or 4 classes");
            if (channels < n_classes)
                throw std::invalid_argument(
                    "synth spec: need at least one channel per lateralized group");
            if (latency_jitter >= trial_seconds)
                throw std::invalid_argument("synth spec: jitter exceeds trial length");
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

namespace {

std::vector<SubjectParams> draw_subjects(const SynthSpec& spec, Rng& rng) {
    std::vector<SubjectParams> out(static_cast<size_t>(spec.n_subjects));
    for (auto& sp : out) {
        sp.phases.resize(static_cast<size_t>(spec.channels));
        for (double& p : sp.phases) p = rng.uniform(0.0, spec.phase_offset_range);
        sp.latency = spec.p300_latency +
                     rng.uniform(-spec.latency_jitter, spec.latency_jitter);
        sp.amp_scale = rng.uniform(spec.amp_scale_lo, spec.amp_scale_hi);
    }
    return out;
}

Trial noise_trial(const SynthSpec& spec, int label, int subject, int session, Rng& rng) {
    Trial t;
    t.label = label;
    t.subject = subject;
    t.session = session;
    t.fs = spec.fs;
    t.data = Tensor({spec.channels, spec.trial_len()});
    for (double& v : t.data.data) v = spec.noise_sigma * rng.normal();
    return t;
}

}  // namespace

Dataset synth_ssvep(const SynthSpec& spec, uint64_t seed, SynthMeta* meta) {
    spec.validate();
    Rng rng(seed);
    auto subjects = draw_subjects(spec, rng);
    if (meta) meta->subjects = subjects;

    Dataset ds;
    ds.n_classes = spec.n_classes;
    ds.fs = spec.fs;
    int t_len = spec.trial_len();
    for (int s = 0; s < spec.n_subjects; ++s)
        for (int sess = 0; sess < spec.n_sessions; ++sess)
            for (int k = 0; k < spec.n_classes; ++k)
                for (int i = 0; i < spec.trials_per_class; ++i) {
                    Trial t = noise_trial(spec, k, s, sess, rng);
                    double f = spec.class_freqs[static_cast<size_t>(k)];
                    for (int c = 0; c < spec.channels; ++c) {
                        double phase = subjects[static_cast<size_t>(s)].phases[static_cast<size_t>(c)];
                        double amp = subjects[static_cast<size_t>(s)].amp_scale;
                        for (int n = 0; n < t_len; ++n) {
                            double acc = 0.0;
                            for (size_t h = 0; h < spec.harmonic_amps.size(); ++h)
                                acc += spec.harmonic_amps[h] *
                                       std::sin(2.0 * M_PI * (h + 1) * f * n / spec.fs + phase);
                            t.data.at(c, n) += amp * acc;
                        }
                    }
                    ds.trials.push_back(std::move(t));
                }
    return ds;
}

Dataset synth_p300(const SynthSpec& spec, uint64_t seed, SynthMeta* meta) {
    spec.validate();
    Rng rng(seed);
    auto subjects = draw_subjects(spec, rng);
    if (meta) meta->subjects = subjects;

    Dataset ds;
    ds.n_classes = 2;
    ds.fs = spec.fs;
    int t_len = spec.trial_len();
    int n_neg = static_cast<int>(spec.imbalance_ratio * spec.trials_per_class + 0.5);
    int posterior_start = spec.channels / 2;

    for (int s = 0; s < spec.n_subjects; ++s) {
        const auto& sp = subjects[static_cast<size_t>(s)];
        for (int sess = 0; sess < spec.n_sessions; ++sess) {
            for (int i = 0; i < spec.trials_per_class; ++i) {
                Trial t = noise_trial(spec, 1, s, sess, rng);
                for (int c = posterior_start; c < spec.channels; ++c)
                    for (int n = 0; n < t_len; ++n) {
                        double dt = n / spec.fs - sp.latency;
                        t.data.at(c, n) += sp.amp_scale * spec.p300_amp *
                                           std::exp(-dt * dt /
                                                    (2.0 * spec.p300_width * spec.p300_width));
                    }
                ds.trials.push_back(std::move(t));
            }
            for (int i = 0; i < n_neg; ++i)
                ds.trials.push_back(noise_trial(spec, 0, s, sess, rng));
        }
    }
    return ds;
}

Dataset synth_mi(const SynthSpec& spec, uint64_t seed, SynthMeta* meta) {
    spec.validate();
    Rng rng(seed);
    auto subjects = draw_subjects(spec, rng);
    if (meta) meta->subjects = subjects;

    Dataset ds;
    ds.n_classes = spec.n_classes;
    ds.fs = spec.fs;
    int t_len = spec.trial_len();
    int group_size = spec.channels / spec.n_classes;

    for (int s = 0; s < spec.n_subjects; ++s) {
        const auto& sp = subjects[static_cast<size_t>(s)];
        for (int sess = 0; sess < spec.n_sessions; ++sess)
            for (int k = 0; k < spec.n_classes; ++k)
                for (int i = 0; i < spec.trials_per_class; ++i) {
                    Trial t = noise_trial(spec, k, s, sess, rng);
                    if (spec.phase_coded) {
                        // classes differ only in when the carrier burst
                        // happens; per-trial random carrier phase keeps the
                        // class-mean power spectra identical
                        double center = (0.3 + 0.4 * k / std::max(1, spec.n_classes - 1)) *
                                        spec.trial_seconds;
                        double width = spec.envelope_width * spec.trial_seconds;
                        for (int c = 0; c < spec.channels; ++c) {
                            double phase = rng.uniform(0.0, 2.0 * M_PI);
                            for (int n = 0; n < t_len; ++n) {
                                double dt = n / spec.fs - center;
                                double env = std::exp(-dt * dt / (2.0 * width * width));
                                t.data.at(c, n) +=
                                    sp.amp_scale * spec.mi_mu_amp * env *
                                    std::sin(2.0 * M_PI * spec.mi_mu_freq * n / spec.fs + phase);
                            }
                        }
                    } else {
                        // class-dependent ERD: the class's channel group sees
                        // its mu rhythm attenuated under a smooth envelope
                        for (int c = 0; c < spec.channels; ++c) {
                            bool relevant = c / group_size == k;
                            double phase = sp.phases[static_cast<size_t>(c)];
                            for (int n = 0; n < t_len; ++n) {
                                double env = std::sin(M_PI * n / (t_len - 1.0));
                                env *= env;
                                double mu_amp = spec.mi_mu_amp *
                                                (relevant ? 1.0 - spec.erd_depth * env : 1.0);
                                t.data.at(c, n) +=
                                    sp.amp_scale *
                                    (mu_amp * std::sin(2.0 * M_PI * spec.mi_mu_freq * n /
                                                           spec.fs + phase) +
                                     spec.mi_beta_amp *
                                         std::sin(2.0 * M_PI * spec.mi_beta_freq * n / spec.fs +
                                                  2.0 * phase));
                            }
                        }
                    }
                    ds.trials.push_back(std::move(t));
                }
    }
    return ds;
}

Dataset synthesize(const SynthSpec& spec, uint64_t seed, SynthMeta* meta) {
    switch (spec.paradigm) {
        case Paradigm::Ssvep: return synth_ssvep(spec, seed, meta);
        case Paradigm::P300: return synth_p300(spec, seed, meta);
        case Paradigm::Mi: return synth_mi(spec, seed, meta);
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

namespace {

// exactly k indices drawn proportionally from the label groups
// (largest-remainder apportionment), consuming what it takes
std::vector<int> stratified_take(std::map<int, std::vector<int>>& pools, int k) {
    std::vector<int> taken;
    int64_t total = 0;
    for (auto& [label, v] : pools) total += static_cast<int64_t>(v.size());
    if (k <= 0 || total == 0) return taken;
    k = static_cast<int>(std::min<int64_t>(k, total));

    std::vector<std::pair<double, int>> remainders;  // fractional part, label
    std::map<int, int> quota;
    int assigned = 0;
    for (auto& [label, v] : pools) {
        double exact = static_cast<double>(k) * v.size() / total;
        quota[label] = static_cast<int>(exact);
        assigned += quota[label];
        remainders.push_back({exact - quota[label], label});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; assigned < k && i < static_cast<int>(remainders.size()); ++i) {
        int label = remainders[static_cast<size_t>(i)].second;
        if (quota[label] < static_cast<int>(pools[label].size())) {
            ++quota[label];
            ++assigned;
        }
    }
    for (auto& [label, q] : quota) {
        auto& pool = pools[label];
        for (int i = 0; i < q; ++i) {
            taken.push_back(pool.back());
            pool.pop_back();
        }
    }
    return taken;
}

}  // namespace

SplitPlan split_subjects(const Dataset& ds, double seen_fraction, uint64_t seed) {
    auto subjects = ds.subject_ids();
    if (subjects.size() < 2)
        throw std::invalid_argument("split_subjects: need at least two subjects");
    if (seen_fraction <= 0.0 || seen_fraction >= 1.0)
        throw std::invalid_argument("split_subjects: seen fraction must be inside (0, 1)");

    Rng rng(seed);
    std::vector<int> shuffled = subjects;
    rng.shuffle(shuffled);
    int n_seen = static_cast<int>(std::ceil(seen_fraction * subjects.size()));
    n_seen = std::min<int>(n_seen, static_cast<int>(subjects.size()) - 1);

    SplitPlan plan;
    plan.seen_subjects.assign(shuffled.begin(), shuffled.begin() + n_seen);
    plan.unseen_subjects.assign(shuffled.begin() + n_seen, shuffled.end());
    std::sort(plan.seen_subjects.begin(), plan.seen_subjects.end());
    std::sort(plan.unseen_subjects.begin(), plan.unseen_subjects.end());

    std::set<int> seen_set(plan.seen_subjects.begin(), plan.seen_subjects.end());
    auto label_vec = ds.label_set();
    std::set<int> all_labels(label_vec.begin(), label_vec.end());

    for (int subject : plan.seen_subjects) {
        std::map<int, std::vector<int>> by_session;
        std::map<int, std::vector<int>> by_label;
        int total = 0;
        for (size_t i = 0; i < ds.trials.size(); ++i) {
            if (ds.trials[i].subject != subject) continue;
            by_session[ds.trials[i].session].push_back(static_cast<int>(i));
            ++total;
        }
        for (int label : all_labels) {
            bool present = false;
            for (auto& [sess, idx] : by_session)
                for (int i : idx)
                    if (ds.trials[static_cast<size_t>(i)].label == label) present = true;
            if (!present)
                plan.warnings.push_back("subject " + std::to_string(subject) +
                                        " has no trials of class " + std::to_string(label) +
                                        "; proportional split over present classes");
        }

        int t1_target = static_cast<int>(0.2 * total + 0.5);
        int val_target = static_cast<int>(0.2 * total + 0.5);

        // whole held-out sessions first, as long as they fit the quota
        std::set<int> taken_sessions;
        if (by_session.size() >= 2) {
            std::vector<int> sess_ids;
            for (auto& [sess, idx] : by_session) sess_ids.push_back(sess);
            rng.shuffle(sess_ids);
            int t1_count = 0;
            for (int sess : sess_ids) {
                int size = static_cast<int>(by_session[sess].size());
                if (t1_count + size <= t1_target &&
                    taken_sessions.size() + 1 < by_session.size()) {
                    taken_sessions.insert(sess);
                    t1_count += size;
                    for (int i : by_session[sess]) plan.test1_idx.push_back(i);
                }
            }
        }

        // pool the rest by label, shuffled
        int session_trials_taken = 0;
        for (int sess : taken_sessions)
            session_trials_taken += static_cast<int>(by_session[sess].size());
        for (auto& [sess, idx] : by_session) {
            if (taken_sessions.count(sess)) continue;
            for (int i : idx) by_label[ds.trials[static_cast<size_t>(i)].label].push_back(i);
        }
        for (auto& [label, pool] : by_label) rng.shuffle(pool);

        auto t1_extra = stratified_take(by_label, t1_target - session_trials_taken);
        plan.test1_idx.insert(plan.test1_idx.end(), t1_extra.begin(), t1_extra.end());
        auto val = stratified_take(by_label, val_target);
        plan.val_idx.insert(plan.val_idx.end(), val.begin(), val.end());
        for (auto& [label, pool] : by_label)
            plan.train_idx.insert(plan.train_idx.end(), pool.begin(), pool.end());
    }

    for (size_t i = 0; i < ds.trials.size(); ++i)
        if (!seen_set.count(ds.trials[i].subject))
            plan.test2_idx.push_back(static_cast<int>(i));

    std::sort(plan.train_idx.begin(), plan.train_idx.end());
    std::sort(plan.val_idx.begin(), plan.val_idx.end());
    std::sort(plan.test1_idx.begin(), plan.test1_idx.end());
    std::sort(plan.test2_idx.begin(), plan.test2_idx.end());
    return plan;
}

// ---------------------------------------------------------------------------
// EpochsFile
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

uint32_t get_u32(const std::string& buf, size_t off) {
    return static_cast<uint32_t>(static_cast<unsigned char>(buf[off])) |
           (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
           (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
           (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
}

float get_f32(const std::string& buf, size_t off) {
    uint32_t bits = get_u32(buf, off);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void save_epochs(const Dataset& ds, const std::string& path) {
    if (ds.trials.empty()) throw std::invalid_argument("save_epochs: empty dataset");
    int c_n = ds.trials[0].channels();
    int t_n = ds.trials[0].samples();
    uint32_t n = static_cast<uint32_t>(ds.trials.size());
    for (const auto& t : ds.trials) {
        if (t.channels() != c_n || t.samples() != t_n)
            throw std::invalid_argument("save_epochs: trials disagree on (C, T)");
        if (t.label < 0 || t.label >= ds.n_classes)
            throw std::invalid_argument("save_epochs: label outside [0, K)");
        if (t.subject < 0 || t.session < 0)
            throw std::invalid_argument("save_epochs: negative subject/session id");
    }

    std::string buf;
    buf.reserve(28 + 12ull * n + 4ull * n * c_n * t_n);
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(c_n));
    put_u32(buf, static_cast<uint32_t>(t_n));
    put_u32(buf, n);
    put_f32(buf, static_cast<float>(ds.fs));
    put_u32(buf, static_cast<uint32_t>(ds.n_classes));
    for (const auto& t : ds.trials) put_u32(buf, static_cast<uint32_t>(t.label));
    for (const auto& t : ds.trials) put_u32(buf, static_cast<uint32_t>(t.subject));
    for (const auto& t : ds.trials) put_u32(buf, static_cast<uint32_t>(t.session));
    for (const auto& t : ds.trials)
        for (double v : t.data.data) put_f32(buf, static_cast<float>(v));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_epochs: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Dataset load_epochs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_epochs: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 28)
        throw std::runtime_error("load_epochs: header truncated, expected 28 bytes, got " +
                                 std::to_string(buf.size()));
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("load_epochs: bad magic at byte offset 0");
    if (get_u32(buf, 4) != kVersion)
        throw std::runtime_error("load_epochs: unsupported version at byte offset 4");

    uint32_t c_n = get_u32(buf, 8);
    uint32_t t_n = get_u32(buf, 12);
    uint32_t n = get_u32(buf, 16);
    float fs = get_f32(buf, 20);
    uint32_t k_n = get_u32(buf, 24);

    size_t expected = 28 + 12ull * n + 4ull * n * c_n * t_n;
    if (buf.size() != expected)
        throw std::runtime_error("load_epochs: payload truncated, expected " +
                                 std::to_string(expected) + " bytes, got " +
                                 std::to_string(buf.size()));

    Dataset ds;
    ds.n_classes = static_cast<int>(k_n);
    ds.fs = static_cast<double>(fs);
    size_t off_label = 28;
    size_t off_subject = off_label + 4ull * n;
    size_t off_session = off_subject + 4ull * n;
    size_t off_data = off_session + 4ull * n;
    for (uint32_t i = 0; i < n; ++i) {
        Trial t;
        t.label = static_cast<int>(get_u32(buf, off_label + 4ull * i));
        if (t.label >= static_cast<int>(k_n))
            throw std::runtime_error("load_epochs: label >= K at trial " + std::to_string(i));
        t.subject = static_cast<int>(get_u32(buf, off_subject + 4ull * i));
        t.session = static_cast<int>(get_u32(buf, off_session + 4ull * i));
        t.fs = ds.fs;
        t.data = Tensor({static_cast<int>(c_n), static_cast<int>(t_n)});
        size_t base = off_data + 4ull * i * c_n * t_n;
        for (size_t j = 0; j < static_cast<size_t>(c_n) * t_n; ++j)
            t.data.data[j] = static_cast<double>(get_f32(buf, base + 4 * j));
        ds.trials.push_back(std::move(t));
    }
    return ds;
}

}  // namespace aspen::data
