#include "delta/common.hpp"
#include "delta/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

using namespace delta;

namespace {

QueryResult row(double selected, double native, std::vector<double> candidates = {})
{
    return { "q", selected, native, std::move(candidates) };
}

}

TEST_SUITE("metrics")
{
    TEST_CASE("relative latency")
    {
        CHECK(relative_latency(100.0, 100.0) == 1.0);
        CHECK(relative_latency(50.0, 100.0) == 0.5);
        CHECK(is_incompatible(relative_latency(151.0, 100.0)));
        CHECK_FALSE(is_incompatible(relative_latency(150.0, 100.0)));
        CHECK_THROWS_AS(relative_latency(0.0, 1.0), InvalidArgument);
        CHECK_THROWS_AS(relative_latency(1.0, -2.0), InvalidArgument);
        CHECK_THROWS_AS(relative_latency(std::numeric_limits<double>::infinity(), 1.0), InvalidArgument);
    }

    TEST_CASE("WRL uses sums, not a mean of ratios")
    {
        std::vector<QueryResult> same{ row(5.0, 5.0), row(7.0, 7.0) };
        CHECK(wrl(same) == 1.0);
        std::vector<QueryResult> r{ row(1.0, 2.0), row(3.0, 2.0) };
        CHECK(wrl(r) == 1.0);
        CHECK(gmrl(r) != 1.0);
        std::vector<QueryResult> heavy{ row(10.0, 100.0), row(2.0, 1.0) };
        CHECK(wrl(heavy) == 12.0 / 101.0);
        std::vector<QueryResult> none;
        CHECK_THROWS_AS(wrl(none), InvalidArgument);
        CHECK_THROWS_AS(gmrl(none), InvalidArgument);
    }

    TEST_CASE("speedup is the reciprocal of WRL")
    {
        CHECK(speedup(0.28) == 1.0 / 0.28);
        char text[16];
        std::snprintf(text, sizeof text, "%.2f", speedup(0.28));
        CHECK(std::string(text) == "3.57");
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0.01, 100.0);
        for (int i = 0; i != 1000; ++i) {
            double w = u(rng);
            CHECK(std::abs(speedup(w) * w - 1.0) <= std::numeric_limits<double>::epsilon());
        }
    }

    TEST_CASE("GMRL cases")
    {
        std::vector<QueryResult> ones{ row(3.0, 3.0), row(8.0, 8.0), row(1.0, 1.0) };
        CHECK(gmrl(ones) == 1.0);
        std::vector<QueryResult> sym{ row(2.0, 1.0), row(1.0, 2.0) };
        CHECK(gmrl(sym) == 1.0);
        std::vector<QueryResult> four{ row(4.0, 1.0), row(1.0, 1.0) };
        CHECK(gmrl(four) == 2.0);
    }

    TEST_CASE("aggregates are permutation invariant and GMRL is log-additive")
    {
        std::mt19937_64 rng(7);
        std::lognormal_distribution<double> ln(0.0, 2.0);
        std::vector<QueryResult> rs;
        for (int i = 0; i != 40; ++i)
            rs.push_back(row(ln(rng) * 1e4, ln(rng) * 1e4));
        const double w = wrl(rs), g = gmrl(rs);
        for (int t = 0; t != 5; ++t) {
            std::shuffle(rs.begin(), rs.end(), rng);
            CHECK(wrl(rs) == doctest::Approx(w).epsilon(1e-14));
            CHECK(gmrl(rs) == doctest::Approx(g).epsilon(1e-14));
        }
        std::span<const QueryResult> all(rs);
        auto a = all.first(15), b = all.subspan(15);
        const double combined = std::exp((15.0 * std::log(gmrl(a)) + 25.0 * std::log(gmrl(b))) / 40.0);
        CHECK(gmrl(all) == doctest::Approx(combined).epsilon(1e-12));
    }

    TEST_CASE("GMRL does not overflow on huge workloads")
    {
        std::vector<QueryResult> rs(100000, row(1e300, 1e299));
        CHECK(gmrl(rs) == doctest::Approx(10.0).epsilon(1e-9));
    }

    TEST_CASE("candidate quality")
    {
        std::vector<double> single{ 100.0 };
        auto q = candidate_quality(single, 100.0);
        CHECK(q.best == 1.0);
        CHECK(q.worst == 1.0);
        CHECK(q.fraction == 0.0);

        std::vector<double> three{ 50.0, 120.0, 90.0 };
        auto r = candidate_quality(three, 100.0);
        CHECK(r.best == 0.5);
        CHECK(r.worst == 1.2);
        CHECK(r.fraction == 2.0 / 3.0);

        // Best of the top-k never exceeds the top-1 ratio.
        for (std::size_t k = 1; k <= three.size(); ++k)
            CHECK(candidate_quality(std::span<const double>(three).first(k), 100.0).best <= three[0] / 100.0);

        // eta is scale-free.
        std::vector<double> scaled;
        for (double c : three)
            scaled.push_back(c * 37.5);
        CHECK(candidate_quality(scaled, 3750.0).fraction == r.fraction);

        std::vector<double> none;
        CHECK_THROWS_AS(candidate_quality(none, 1.0), InvalidArgument);
    }
}
