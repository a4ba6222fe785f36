#include "aspen/characterize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace aspen::characterize {

using json = nlohmann::json;
using signal::Dataset;
using signal::StftConfig;
using signal::Trial;

const char* domain_name(Domain d) { return d == Domain::Temporal ? "temporal" : "spectral"; }

RepresentativePattern class_representative(const std::vector<Trial>& trials, int label,
                                           Domain domain, const StftConfig* cfg) {
    if (domain == Domain::Spectral && !cfg)
        throw std::invalid_argument("class_representative: spectral domain needs an STFT config");

    RepresentativePattern pat;
    pat.domain = domain;
    pat.label = label;
    for (const Trial& t : trials) {
        if (t.label != label) continue;
        Tensor contrib = domain == Domain::Temporal
                             ? t.data
                             : signal::trial_to_spectral_tensor(t, *cfg).power;
        if (pat.trial_count == 0) {
            pat.tensor = contrib;
        } else {
            if (!pat.tensor.same_shape(contrib))
                throw std::invalid_argument(
                    "class_representative: trials disagree on pattern shape");
            for (size_t i = 0; i < contrib.data.size(); ++i)
                pat.tensor.data[i] += contrib.data[i];
        }
        ++pat.trial_count;
    }
    if (pat.trial_count == 0)
        throw std::runtime_error("class_representative: no trials with label " +
                                 std::to_string(label));
    for (double& v : pat.tensor.data) v /= pat.trial_count;
    return pat;
}

double pattern_correlation(const RepresentativePattern& a, const RepresentativePattern& b) {
    if (a.domain != b.domain)
        throw std::invalid_argument("pattern_correlation: domains differ");
    if (!a.tensor.same_shape(b.tensor))
        throw std::invalid_argument("pattern_correlation: shapes differ");

    auto znorm = [](const Tensor& t) {
        size_t n = t.data.size();
        double mean = 0.0;
        for (double v : t.data) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : t.data) var += (v - mean) * (v - mean);
        var /= n;
        if (var <= 0.0)
            throw std::runtime_error("pattern_correlation: zero-variance pattern");
        double inv = 1.0 / std::sqrt(var);
        std::vector<double> z(n);
        for (size_t i = 0; i < n; ++i) z[i] = (t.data[i] - mean) * inv;
        return z;
    };
    auto za = znorm(a.tensor);
    auto zb = znorm(b.tensor);
    double r = 0.0;
    for (size_t i = 0; i < za.size(); ++i) r += za[i] * zb[i];
    r /= static_cast<double>(za.size());
    return std::clamp(r, -1.0, 1.0);
}

namespace {

void aggregate(CorrelationReport& rep) {
    rep.count = static_cast<int>(rep.pairs.size());
    if (rep.count == 0) return;
    double mean = 0.0;
    for (const auto& p : rep.pairs) mean += p.r;
    mean /= rep.count;
    double var = 0.0;
    for (const auto& p : rep.pairs) var += (p.r - mean) * (p.r - mean);
    var /= rep.count;
    rep.mean = mean;
    rep.stddev = std::sqrt(var);
}

std::vector<Trial> filter_trials(const Dataset& ds, int subject, int session) {
    std::vector<Trial> out;
    for (const Trial& t : ds.trials)
        if (t.subject == subject && (session < 0 || t.session == session)) out.push_back(t);
    return out;
}

std::set<int> labels_of(const std::vector<Trial>& trials) {
    std::set<int> s;
    for (const auto& t : trials) s.insert(t.label);
    return s;
}

}  // namespace

CorrelationReport cross_session_correlation(const Dataset& ds, Domain domain,
                                            const StftConfig* cfg) {
    CorrelationReport rep;
    rep.mode = "cross_session";
    rep.domain = domain;

    for (int subject : ds.subject_ids()) {
        auto sessions = ds.session_ids(subject);
        if (sessions.size() < 2) continue;
        rep.cohort.push_back(subject);

        std::map<int, std::vector<Trial>> by_session;
        for (int s : sessions) by_session[s] = filter_trials(ds, subject, s);

        for (size_t i = 0; i < sessions.size(); ++i)
            for (size_t j = i + 1; j < sessions.size(); ++j) {
                const auto& ta = by_session[sessions[i]];
                const auto& tb = by_session[sessions[j]];
                std::set<int> shared;
                for (int l : labels_of(ta))
                    if (labels_of(tb).count(l)) shared.insert(l);
                for (int label : shared) {
                    auto pa = class_representative(ta, label, domain, cfg);
                    auto pb = class_representative(tb, label, domain, cfg);
                    rep.pairs.push_back(
                        {subject, sessions[i], sessions[j], label, pattern_correlation(pa, pb)});
                }
            }
    }
    if (rep.pairs.empty())
        throw std::runtime_error(
            "cross_session_correlation: no subject has two or more sessions");
    aggregate(rep);
    return rep;
}

CorrelationReport cross_subject_correlation(const Dataset& ds, Domain domain,
                                            const StftConfig* cfg) {
    auto subjects = ds.subject_ids();
    if (subjects.size() < 2)
        throw std::runtime_error("cross_subject_correlation: need at least two subjects");

    CorrelationReport rep;
    rep.mode = "cross_subject";
    rep.domain = domain;
    rep.cohort = subjects;

    // subject-level patterns pool every session
    std::map<int, std::vector<Trial>> by_subject;
    for (int s : subjects) by_subject[s] = filter_trials(ds, s, -1);
    std::map<int, std::set<int>> subj_labels;
    for (int s : subjects) subj_labels[s] = labels_of(by_subject[s]);

    std::map<std::pair<int, int>, RepresentativePattern> cache;
    auto pattern = [&](int subject, int label) -> const RepresentativePattern& {
        auto key = std::make_pair(subject, label);
        auto it = cache.find(key);
        if (it == cache.end())
            it = cache.emplace(key, class_representative(by_subject[subject], label, domain, cfg))
                     .first;
        return it->second;
    };

    for (size_t i = 0; i < subjects.size(); ++i)
        for (size_t j = i + 1; j < subjects.size(); ++j) {
            std::set<int> shared;
            for (int l : subj_labels[subjects[i]])
                if (subj_labels[subjects[j]].count(l)) shared.insert(l);
            for (int label : shared) {
                double r = pattern_correlation(pattern(subjects[i], label),
                                               pattern(subjects[j], label));
                rep.pairs.push_back({-1, subjects[i], subjects[j], label, r});
            }
        }
    aggregate(rep);
    return rep;
}

std::string CorrelationReport::to_json() const {
    json j;
    j["mode"] = mode;
    j["domain"] = domain_name(domain);
    j["aggregate"] = {{"mean", mean}, {"std", stddev}, {"count", count}};
    j["cohort"] = cohort;
    json rows = json::array();
    for (const auto& p : pairs) {
        json row = {{"id_a", p.id_a}, {"id_b", p.id_b}, {"label", p.label}, {"r", p.r}};
        if (p.subject >= 0) row["subject"] = p.subject;
        rows.push_back(row);
    }
    j["pairs"] = rows;
    return j.dump(2);
}

std::string CorrelationReport::to_csv() const {
    std::ostringstream os;
    os << "mode,domain,subject,id_a,id_b,label,r\n";
    for (const auto& p : pairs) {
        os << mode << "," << domain_name(domain) << "," << p.subject << "," << p.id_a << ","
           << p.id_b << "," << p.label << ",";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9f", p.r);
        os << buf << "\n";
    }
    return os.str();
}

}  // namespace aspen::characterize
