#pragma once

#include <string>
#include <vector>

#include "aspen/signal.hpp"
#include "aspen/tensor.hpp"

namespace aspen::characterize {

enum class Domain { Temporal, Spectral };

const char* domain_name(Domain d);

// Class-conditional average of trials: (C x T) for the temporal domain,
// (C x F x T') of per-trial power spectrograms for the spectral domain.
struct RepresentativePattern {
    Domain domain = Domain::Temporal;
    Tensor tensor;
    int label = -1;
    int subject = -1;  // -1 = pooled
    int session = -1;  // -1 = all sessions
    int trial_count = 0;
};

struct PairCorrelation {
    int subject = -1;  // set for cross-session entries
    int id_a = -1;     // session or subject ids, depending on mode
    int id_b = -1;
    int label = -1;
    double r = 0.0;
};

struct CorrelationReport {
    std::string mode;  // "cross_session" | "cross_subject"
    Domain domain = Domain::Temporal;
    std::vector<PairCorrelation> pairs;
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
    std::vector<int> cohort;  // subjects the report was computed over

    std::string to_json() const;
    std::string to_csv() const;
};

RepresentativePattern class_representative(const std::vector<signal::Trial>& trials, int label,
                                           Domain domain,
                                           const signal::StftConfig* cfg = nullptr);

// Pearson correlation of the flattened, z-normalized patterns.
double pattern_correlation(const RepresentativePattern& a, const RepresentativePattern& b);

// Per subject, per unordered session pair, per shared label.
CorrelationReport cross_session_correlation(const signal::Dataset& ds, Domain domain,
                                            const signal::StftConfig* cfg = nullptr);

// Per unordered subject pair (sessions pooled), per shared label.
CorrelationReport cross_subject_correlation(const signal::Dataset& ds, Domain domain,
                                            const signal::StftConfig* cfg = nullptr);

}  // namespace aspen::characterize
