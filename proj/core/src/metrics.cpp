#include "delta/metrics.hpp"

#include "delta/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace delta {

namespace {

void check_latency(double v)
{
    if (!(v > 0.0) || !std::isfinite(v))
        throw InvalidArgument("latencies must be positive and finite");
}

}

double relative_latency(double latency, double native_latency)
{
    check_latency(latency);
    check_latency(native_latency);
    return latency / native_latency;
}

double wrl(std::span<const QueryResult> results)
{
    if (results.empty())
        throw InvalidArgument("wrl of an empty workload");
    double sel = 0.0, nat = 0.0;
    for (const auto & r : results) {
        check_latency(r.selected);
        check_latency(r.native);
        sel += r.selected;
        nat += r.native;
    }
    return sel / nat;
}

double gmrl(std::span<const QueryResult> results)
{
    if (results.empty())
        throw InvalidArgument("gmrl of an empty workload");
    double sum = 0.0;
    for (const auto & r : results)
        sum += std::log(relative_latency(r.selected, r.native));
    return std::exp(sum / static_cast<double>(results.size()));
}

CandidateQuality candidate_quality(std::span<const double> candidates, double native_latency)
{
    if (candidates.empty())
        throw InvalidArgument("candidate_quality needs at least one candidate");
    CandidateQuality q{ std::numeric_limits<double>::infinity(), 0.0, 0.0 };
    std::size_t better = 0;
    for (double c : candidates) {
        double r = relative_latency(c, native_latency);
        q.best = std::min(q.best, r);
        q.worst = std::max(q.worst, r);
        better += r < 1.0;
    }
    q.fraction = static_cast<double>(better) / static_cast<double>(candidates.size());
    return q;
}

}
