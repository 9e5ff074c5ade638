#pragma once

#include <span>
#include <string>
#include <vector>

namespace delta {

/// L(P) / L(P0); below 1 means P beats the native plan.
double relative_latency(double latency, double native_latency);

/// Queries whose best candidate is this much slower than P0 are incompatible with the generator.
inline constexpr double kIncompatibleRatio = 1.5;
inline bool is_incompatible(double best_relative_latency) { return best_relative_latency > kIncompatibleRatio; }

struct QueryResult
{
    std::string query_id;
    double selected = 0.0;              ///< latency of the emitted plan
    double native = 0.0;                ///< latency of P0
    std::vector<double> candidates;     ///< true latencies of the stage-I candidates, in rank order
};

/// Sum of selected over sum of native latencies.
double wrl(std::span<const QueryResult> results);
/// Geometric mean of per-query relative latencies, in log space.
double gmrl(std::span<const QueryResult> results);
inline double speedup(double workload_relative_latency) { return 1.0 / workload_relative_latency; }

struct CandidateQuality
{
    double best;      ///< R(P*) = min R_i
    double worst;     ///< R(P^) = max R_i
    double fraction;  ///< eta: share of candidates with R_i < 1
};

CandidateQuality candidate_quality(std::span<const double> candidate_latencies, double native_latency);

}
