#include "delta/experiment.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

using namespace delta;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 3)
{
    ExperimentConfig c;
    c.seed = seed;
    c.catalog.tables = 6;
    c.train_queries = 12;
    c.test_queries = 4;
    c.min_relations = 3;
    c.max_relations = 4;
    c.iterations = 2;
    c.explore_width = 2;
    c.beam = 6;
    c.k = 3;
    for (auto * n : { &c.value_net, &c.cost_net }) {
        n->channels = { 8, 8 };
        n->head_hidden = 6;
        n->epochs = 3;
    }
    c.k_sweep = { 1, 3 };
    c.gamma_sweep = { 0.0, std::numeric_limits<double>::infinity() };
    return c;
}

BenchRow make_row(std::string id, double native, std::vector<double> candidates, std::vector<double> predicted,
                  double distance)
{
    BenchRow r;
    r.query_id = std::move(id);
    r.relations = 4;
    r.native = native;
    r.candidates = std::move(candidates);
    r.predicted = std::move(predicted);
    r.top1 = r.candidates.front();
    r.distance = distance;
    return r;
}

std::string two_decimals(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}

TEST_SUITE("experiment")
{
    TEST_CASE("config defaults follow the paper's parameter settings")
    {
        ExperimentConfig c;
        CHECK(c.k == 10);
        CHECK(c.beam == 20);
        CHECK(c.gamma == 500.0);
        CHECK_FALSE(c.gamma_quantile.has_value());
        CHECK(c.iterations == 15);
        CHECK(c.train_queries == 100);
        CHECK(c.test_queries == 25);
        CHECK(c.min_relations == 4);
        CHECK(c.max_relations == 7);
        CHECK(c.error_log_sd == 1.0);
        CHECK(c.noise_log_sd == 0.1);
        CHECK(c.epsilon == 0.2);
    }

    TEST_CASE("config JSON round trip and strict keys")
    {
        auto c = tiny_config();
        c.gamma_quantile = 0.95;
        c.ablate.no_da = true;
        auto text = config_to_json(c);
        auto back = config_from_json(text);
        CHECK(config_to_json(back) == text);
        CHECK(back.gamma_quantile == 0.95);
        CHECK(back.ablate.no_da);
        CHECK(back.value_net.channels == c.value_net.channels);

        CHECK_NOTHROW(config_from_json("{}"));
        CHECK(config_from_json(R"({"planner": {"k": 4}})").k == 4);
        CHECK_THROWS_AS(config_from_json(R"({"planner": {"kk": 4}})"), SchemaError);
        CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), SchemaError);
        CHECK_THROWS_AS(config_from_json(R"({"planner": {"k": 0}})"), SchemaError);
        CHECK_THROWS_AS(config_from_json(R"({"planner": {"k": "ten"}})"), SchemaError);
        CHECK_THROWS_AS(config_from_json(R"({"planner": {"gamma_quantile": 1.5}})"), SchemaError);
        CHECK_THROWS_AS(config_from_json(R"({"ablate": ["no-gpu"]})"), SchemaError);
        CHECK_THROWS_AS(config_from_json("[1]"), SchemaError);
        CHECK_THROWS_AS(load_config("/nonexistent/delta.json"), IoError);
    }

    TEST_CASE("bench workload: ids, sizes, determinism")
    {
        auto c = tiny_config();
        auto a = make_bench_workload(c), b = make_bench_workload(c);
        REQUIRE(a.train.size() == 12);
        REQUIRE(a.test.size() == 4);
        CHECK(a.train[0].id() == "train0000");
        CHECK(a.test[3].id() == "test0003");
        for (std::size_t i = 0; i != a.test.size(); ++i) {
            CHECK(a.test[i].relations() == b.test[i].relations());
            CHECK(a.test[i].size() >= 3);
            CHECK(a.test[i].size() <= 4);
        }
        c.seed = 4;
        auto other = make_bench_workload(c);
        bool differs = false;
        for (std::size_t i = 0; i != a.train.size(); ++i)
            differs = differs || a.train[i].relations() != other.train[i].relations();
        CHECK(differs);
    }

    TEST_CASE("decision rule: gate, k, ablations")
    {
        std::vector<BenchRow> rows{ make_row("a", 100.0, { 120.0, 80.0, 60.0 }, { 5.0, 4.0, 6.0 }, 1.0),
                                    make_row("b", 200.0, { 150.0, 300.0, 100.0 }, { 5.0, 4.0, 3.0 }, 10.0) };
        auto full = aggregate_rows(rows, 3, 100.0, {});
        CHECK(full.wrl == (80.0 + 100.0) / 300.0);
        auto top1 = aggregate_rows(rows, 1, 100.0, {});
        CHECK(top1.wrl == (120.0 + 150.0) / 300.0);
        auto gated = aggregate_rows(rows, 3, 5.0, {});
        CHECK(gated.wrl == (80.0 + 200.0) / 300.0);
        Ablations no_cqd;
        no_cqd.no_cqd = true;
        CHECK(aggregate_rows(rows, 3, 0.0, no_cqd).wrl == full.wrl);
        Ablations no_cps;
        no_cps.no_cps = true;
        CHECK(aggregate_rows(rows, 3, 100.0, no_cps).wrl == top1.wrl);
        CHECK(aggregate_rows(rows, 3, 100.0, {}).speedup == 1.0 / full.wrl);
        // Ties in the prediction keep the earlier candidate.
        std::vector<BenchRow> tied{ make_row("c", 10.0, { 20.0, 5.0 }, { 1.0, 1.0 }, 0.0) };
        CHECK(aggregate_rows(tied, 2, 1.0, {}).wrl == 2.0);
    }

    TEST_CASE("results JSON and CSV")
    {
        BenchResults r;
        r.seed = 9;
        r.k = 3;
        r.beam = 20;
        r.gamma = 500.0;
        r.ablate.mse_loss = true;
        r.rows = { make_row("test0000", 100.0, { 80.0, 90.0 }, { 4.0, 4.5 }, 3.0) };
        r.rows[0].selected = 80.0;
        r.k_sweep = { { 1.0, { 0.8, 0.8, 1.25 } } };
        r.gamma_sweep = { { std::numeric_limits<double>::infinity(), { 0.8, 0.8, 1.25 } } };
        auto text = results_to_json(r);
        auto back = results_from_json(text);
        CHECK(results_to_json(back) == text);
        CHECK(back.ablate.mse_loss);
        CHECK(std::isinf(back.gamma_sweep[0].parameter));

        auto csv = results_to_csv(r);
        std::istringstream lines(csv);
        std::string line;
        std::getline(lines, line);
        CHECK(line == "table,parameter,wrl,gmrl,speedup");
        std::getline(lines, line);
        CHECK(line == "summary,native,1.000000,1.000000,1.00");
        std::getline(lines, line);
        CHECK(line == "summary,top1,0.800000,0.800000,1.25");
        std::getline(lines, line);
        CHECK(line == "summary,delta,0.800000,0.800000,1.25");
        std::getline(lines, line);
        CHECK(line == "k_sweep,1,0.800000,0.800000,1.25");
        std::getline(lines, line);
        CHECK(line == "gamma_sweep,inf,0.800000,0.800000,1.25");
    }

    TEST_CASE("malformed results files report a line number")
    {
        BenchResults r;
        r.rows = { make_row("test0000", 100.0, { 80.0 }, { 4.0 }, 3.0), make_row("test0001", 50.0, { 60.0 }, { 4.0 }, 3.0) };
        for (auto & row : r.rows)
            row.selected = row.top1;
        auto text = results_to_json(r);
        auto j = nlohmann::json::parse(text);
        j["rows"][1]["native"] = -1.0;
        try {
            results_from_json(j.dump(2));
            FAIL("expected SchemaError");
        } catch (const SchemaError & e) {
            CHECK(e.line() > 0);
            CHECK(std::string(e.what()).find("row 1") != std::string::npos);
        }
        CHECK_THROWS_AS(results_from_json("{\"header\": {}}"), SchemaError);
        CHECK_THROWS_AS(results_from_json("not json"), SchemaError);
    }

    TEST_CASE("report: header-only sweeps, single-row aggregates, speedup to 2 decimals")
    {
        BenchResults r;
        r.seed = 1;
        r.k = 10;
        r.beam = 20;
        r.gamma = 500.0;
        r.rows = { make_row("test0000", 400.0, { 300.0 }, { 1.0 }, 3.0) };
        r.rows[0].selected = 300.0;
        auto d = r.delta();
        CHECK(d.wrl == 0.75);
        CHECK(d.gmrl == 0.75);
        CHECK(two_decimals(d.speedup) == "1.33");

        auto report = format_report(r);
        CHECK(report.find("k-sweep\n  k          WRL       GMRL    speedup\n\ngamma-sweep") != std::string::npos);
        CHECK(report.ends_with("gamma-sweep\n  gamma      WRL       GMRL    speedup\n"));
        CHECK(report.find("delta          0.7500     0.7500       1.33") != std::string::npos);
        CHECK(report.find("specificity undefined") != std::string::npos);

        BenchResults empty;
        auto bare = format_report(empty);
        CHECK(bare.find("0 test queries") != std::string::npos);
        CHECK(results_to_csv(empty) == "table,parameter,wrl,gmrl,speedup\n");
    }

    TEST_CASE("tiny end-to-end bench is deterministic and self-consistent")
    {
        auto c = tiny_config();
        auto a = run_bench(c);
        auto b = run_bench(c);
        CHECK(results_to_json(a) == results_to_json(b));
        REQUIRE(a.rows.size() == 4);
        for (std::size_t i = 1; i < a.rows.size(); ++i)
            CHECK(a.rows[i - 1].query_id < a.rows[i].query_id);
        const auto w = make_bench_workload(c);
        for (std::size_t i = 0; i != a.rows.size(); ++i) {
            const auto & row = a.rows[i];
            CHECK(row.candidates.size() <= 3);
            CHECK(row.native == true_latency(native_optimize(w.test[i], w.catalog, c.estimator(), c.constants),
                                             w.catalog, c.constants));
            CHECK(row.top1 == row.candidates.front());
            CHECK(std::min_element(row.candidates.begin(), row.candidates.end())[0] <= row.top1);
        }
        REQUIRE(a.k_sweep.size() == 2);
        CHECK(a.k_sweep[1].delta.wrl == a.delta().wrl);
        REQUIRE(a.gamma_sweep.size() == 2);
        CHECK(a.gamma_sweep[0].delta.wrl <= 1.0 + 1e-12);
        CHECK(a.executed_plans > 12);

        auto m = c;
        m.ablate.no_cps = true;
        auto top = run_bench(m);
        for (const auto & row : top.rows)
            CHECK(row.selected == (row.accepted ? row.top1 : row.native));
        CHECK(top.delta().wrl == aggregate_rows(a.rows, 3, a.gamma, m.ablate).wrl);
    }
}
