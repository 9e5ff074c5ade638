#include <benchmark/benchmark.h>

#include "delta/cps.hpp"
#include "delta/cqd.hpp"
#include "delta/vpg.hpp"

using namespace delta;

namespace {

struct Fixture
{
    Workload workload;
    CardinalityModel estimated = CardinalityModel::estimated(1.0, 7);
    Model model;

    explicit Fixture(int relations)
        : workload(gen_workload(CatalogSpec{}, 16, relations, relations, 11)),
          model(NetConfig{}, node_feature_width(workload.catalog.table_count()), context_width(workload.catalog))
    { }
};

}

static void BM_NativeOptimize(benchmark::State & state)
{
    Fixture f(static_cast<int>(state.range(0)));
    std::size_t i = 0;
    for (auto _ : state) {
        const auto & q = f.workload.queries[i++ % f.workload.queries.size()];
        benchmark::DoNotOptimize(native_optimize(q, f.workload.catalog, f.estimated));
    }
}
BENCHMARK(BM_NativeOptimize)->DenseRange(4, 8, 2);

// Stage-I beam search with a freshly initialised value network (b = 20, k = 10).
static void BM_BeamSearch(benchmark::State & state)
{
    Fixture f(static_cast<int>(state.range(0)));
    const ModelAnnotator annotator(f.workload.catalog, f.estimated);
    const NetworkEstimator network(f.model, f.workload.catalog, f.estimated);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto & q = f.workload.queries[i++ % f.workload.queries.size()];
        benchmark::DoNotOptimize(top_k_plans(q, f.workload.catalog, annotator, network, { 20, 10, 0.0, 0 }));
    }
}
BENCHMARK(BM_BeamSearch)->DenseRange(4, 8, 2)->Unit(benchmark::kMillisecond);

static void BM_ForwardPass(benchmark::State & state)
{
    Fixture f(static_cast<int>(state.range(0)));
    const ModelAnnotator annotator(f.workload.catalog, f.estimated);
    const auto plan = native_optimize(f.workload.queries.front(), f.workload.catalog, f.estimated);
    std::vector<NodePtr> roots{ annotator.annotate(plan.root) };
    const auto tree = featurize(*roots.front(), f.workload.catalog, NormalizationStats::fit(roots));
    const auto ctx = query_context(f.workload.queries.front(), f.workload.catalog, f.estimated);
    for (auto _ : state)
        benchmark::DoNotOptimize(f.model.forward(tree, &ctx));
}
BENCHMARK(BM_ForwardPass)->DenseRange(4, 8, 2);

static void BM_MahalanobisDistance(benchmark::State & state)
{
    Fixture f(6);
    const ModelAnnotator annotator(f.workload.catalog, f.estimated);
    std::vector<NodePtr> roots;
    std::vector<Plan> natives;
    for (const auto & q : f.workload.queries) {
        natives.push_back(native_optimize(q, f.workload.catalog, f.estimated));
        roots.push_back(natives.back().root);
    }
    const auto stats = NormalizationStats::fit(roots);
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i != natives.size(); ++i)
        rows.push_back(encode_query(f.workload.queries[i], f.workload.catalog, natives[i], annotator, stats));
    const auto detector = fit_detector(rows);
    std::size_t i = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(distance(detector, rows[i++ % rows.size()]));
}
BENCHMARK(BM_MahalanobisDistance);

BENCHMARK_MAIN();
