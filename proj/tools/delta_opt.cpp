#include "delta/experiment.hpp"
#include "delta/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

using namespace delta;
using nlohmann::json;

namespace {

struct Overrides
{
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<std::size_t> beam;
    std::optional<double> gamma;
    std::optional<double> gamma_quantile;
    std::optional<int> iterations;
    std::optional<int> explore_width;
    std::vector<std::string> ablate;
    std::string format = "json";
    std::string out;
    std::string split;
    bool quiet = false;
};

int exit_code(const Error & e)
{
    static const std::map<std::string, int> codes{ { "argument", 2 }, { "schema", 3 }, { "io", 4 },
                                                   { "invariant", 5 }, { "bound", 6 }, { "training", 7 } };
    auto it = codes.find(e.category());
    return it == codes.end() ? 1 : it->second;
}

ExperimentConfig resolve(const Overrides & o)
{
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (o.seed)
        c.seed = *o.seed;
    if (o.k)
        c.k = *o.k;
    if (o.beam)
        c.beam = *o.beam;
    if (o.gamma) {
        c.gamma = *o.gamma;
        c.gamma_quantile.reset();
    }
    if (o.gamma_quantile)
        c.gamma_quantile = *o.gamma_quantile;
    if (o.iterations)
        c.iterations = *o.iterations;
    if (o.explore_width)
        c.explore_width = *o.explore_width;
    for (const auto & a : o.ablate) {
        if (a == "no-cps")
            c.ablate.no_cps = true;
        else if (a == "no-cqd")
            c.ablate.no_cqd = true;
        else if (a == "no-da")
            c.ablate.no_da = true;
        else if (a == "mse-loss")
            c.ablate.mse_loss = true;
    }
    if (c.k < 1)
        throw InvalidArgument("--k must be at least 1");
    if (c.beam < 1)
        throw InvalidArgument("--beam must be at least 1");
    return c;
}

/// Throws an IoError that tells the operator which subcommand produces the missing artifact.
void require_artifact(const std::string & path, const std::string & what, const std::string & producer)
{
    if (!std::filesystem::exists(path))
        throw IoError(what + " '" + path + "' not found; run `delta-opt " + producer + "` first");
}

void emit(const std::string & text, const std::string & out)
{
    if (out.empty() || out == "-") {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot write " + out);
    f << text;
    if (!f)
        throw IoError("write failed for " + out);
}

void note(const Overrides & o, const std::string & msg)
{
    if (!o.quiet)
        std::cerr << msg << '\n';
}

Workload load_split(const ExperimentConfig & c, const std::string & split, const std::string & fallback)
{
    require_artifact(c.workload_path, "workload", "gen-workload");
    auto w = load_workload(c.workload_path);
    const std::string want = split.empty() ? fallback : split;
    if (want == "all")
        return w;
    std::vector<Query> picked;
    for (const auto & q : w.queries)
        if (q.id().rfind(want, 0) == 0)
            picked.push_back(q);
    if (picked.empty())
        throw InvalidArgument("workload " + c.workload_path + " has no '" + want + "' queries");
    w.queries = std::move(picked);
    return w;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Subcommands
 *--------------------------------------------------------------------------------------------------------------------*/

void cmd_gen_workload(const Overrides & o)
{
    auto c = resolve(o);
    auto bench = make_bench_workload(c);
    Workload w{ bench.catalog, bench.train };
    w.queries.insert(w.queries.end(), bench.test.begin(), bench.test.end());
    const auto path = o.out.empty() ? c.workload_path : o.out;
    save_workload(w, path);
    note(o, "wrote " + std::to_string(w.queries.size()) + " queries over " + std::to_string(w.catalog.table_count()) +
                " tables to " + path);
}

void cmd_train_value(const Overrides & o)
{
    auto c = resolve(o);
    auto w = load_split(c, o.split, "train");
    BenchWorkload bw{ w.catalog, w.queries, {} };
    ValueTrainingOptions opt;
    opt.iterations = c.iterations;
    opt.explore_width = c.explore_width;
    opt.beam_width = c.beam;
    opt.epsilon = c.epsilon;
    opt.estimated = c.estimator();
    opt.constants = c.constants;
    opt.execution = c.execution();
    opt.net = c.value_net;
    opt.net.seed = derive_seed(c.seed, "value-net");
    opt.epochs_per_iteration = c.value_epochs_per_iteration;
    opt.seed = derive_seed(c.seed, "value-training");
    PlanPool pool;
    BestSeenTable table;
    auto result = train_value_network(bw.catalog, bw.train, opt, pool, table, [&](int it, const PlanPool & p) {
        note(o, "iteration " + std::to_string(it + 1) + "/" + std::to_string(c.iterations) + ": pool " +
                    std::to_string(p.size()));
    });
    save_model(result.model, c.value_model_path);
    save_pool(pool, c.pool_path);
    save_best_seen(table, c.best_seen_path);
    note(o, "executed " + std::to_string(result.executed_plans) + " plans; wrote " + c.value_model_path + ", " +
                c.pool_path + ", " + c.best_seen_path);
}

void cmd_train_cost(const Overrides & o, const std::string & samples_path)
{
    auto c = resolve(o);
    auto w = load_split(c, "all", "all");
    require_artifact(c.pool_path, "plan pool", "train-value");
    auto pool = load_pool(c.pool_path, w.catalog);
    auto samples = cost_samples(pool, c);
    if (!samples_path.empty())
        save_samples(samples, samples_path);
    const ModelAnnotator annotator(w.catalog, c.estimator(), c.constants);
    TrainingReport report;
    auto model = train_cost_model(samples, w.catalog, annotator, cost_net_config(c), &report);
    save_model(model, c.cost_model_path);
    note(o, "trained on " + std::to_string(samples.size()) + " samples from " + std::to_string(pool.size()) +
                " plans; wrote " + c.cost_model_path);
}

void cmd_fit_detector(const Overrides & o)
{
    auto c = resolve(o);
    auto w = load_split(c, o.split, "train");
    auto det = fit_query_detector(w.queries, w.catalog, c);
    const auto path = o.out.empty() ? c.detector_path : o.out;
    save_detector(det, path);
    note(o, "fitted on " + std::to_string(w.queries.size()) + " queries, gamma " + fmt(det.gamma) + "; wrote " + path);
}

void cmd_optimize(const Overrides & o)
{
    auto c = resolve(o);
    auto w = load_split(c, o.split, "test");
    require_artifact(c.value_model_path, "value model checkpoint", "train-value");
    auto model = load_model(c.value_model_path, node_feature_width(w.catalog.table_count()), context_width(w.catalog));
    const auto estimated = c.estimator();
    const ModelAnnotator annotator(w.catalog, estimated, c.constants);
    const NetworkEstimator estimator(model, w.catalog, estimated);
    std::vector<std::vector<Plan>> plans(w.queries.size());
    parallel_for(w.queries.size(), [&](std::size_t i) {
        plans[i] = top_k_plans(w.queries[i], w.catalog, annotator, estimator,
                               { c.beam, static_cast<std::size_t>(c.k), 0.0, 0 });
    });
    std::string text;
    for (std::size_t i = 0; i != w.queries.size(); ++i)
        for (std::size_t r = 0; r != plans[i].size(); ++r) {
            json line{ { "query_id", w.queries[i].id() },
                       { "rank", r },
                       { "key", plans[i][r].key() },
                       { "plan", json::parse(plan_to_json(*plans[i][r].root)) } };
            text += line.dump() + "\n";
        }
    emit(text, o.out);
}

void cmd_select(const Overrides & o, const std::string & model_path, const std::string & candidates_path)
{
    auto c = resolve(o);
    auto w = load_split(c, "all", "all");
    const auto mpath = model_path.empty() ? c.cost_model_path : model_path;
    require_artifact(mpath, "cost model checkpoint", "train-cost");
    require_artifact(candidates_path, "candidate file", "optimize");
    auto model = load_model(mpath, node_feature_width(w.catalog.table_count()), 0);
    const ModelAnnotator annotator(w.catalog, c.estimator(), c.constants);

    std::map<std::string, std::vector<Plan>> by_query;
    std::ifstream in(candidates_path);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.empty())
            continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error & e) {
            throw SchemaError(candidates_path + ": " + e.what(), no);
        }
        if (!j.contains("query_id") || !j.contains("plan"))
            throw SchemaError(candidates_path + ": candidate needs query_id and plan", no);
        const auto id = j["query_id"].get<std::string>();
        Plan p{ id, plan_from_json(j["plan"].dump(), w.catalog) };
        validate_plan(p, w.query(id));
        by_query[id].push_back(std::move(p));
    }
    std::string text;
    for (const auto & [id, cands] : by_query) {
        std::vector<double> labels;
        for (const auto & p : cands)
            labels.push_back(predict_label(model, p, w.catalog, annotator));
        auto best = select_best_index(cands, [&](const Plan & p) {
            return labels[static_cast<std::size_t>(&p - cands.data())];
        });
        json out{ { "query_id", id }, { "index", best }, { "key", cands[best].key() }, { "predicted", labels[best] } };
        text += out.dump() + "\n";
    }
    emit(text, o.out);
}

void cmd_detect(const Overrides & o)
{
    auto c = resolve(o);
    auto w = load_split(c, o.split, "test");
    require_artifact(c.detector_path, "detector checkpoint", "fit-detector");
    auto det = load_detector(c.detector_path, detector_width(w.catalog));
    if (o.gamma)
        det.gamma = *o.gamma;
    else if (o.gamma_quantile) {
        if (det.training_distances.empty())
            throw InvalidArgument("detector has no training distances; refit it with `delta-opt fit-detector`");
        det.gamma = sorted_quantile(det.training_distances, *o.gamma_quantile);
    }
    const auto estimated = c.estimator();
    const ModelAnnotator annotator(w.catalog, estimated, c.constants);
    std::string text;
    for (const auto & q : w.queries) {
        auto native = native_optimize(q, w.catalog, estimated, c.constants);
        const double d = distance(det, encode_query(q, w.catalog, native, annotator, det.stats));
        json line{ { "query_id", q.id() }, { "distance", d }, { "accept", d <= det.gamma } };
        text += line.dump() + "\n";
    }
    emit(text, o.out);
}

void cmd_bench(const Overrides & o)
{
    auto c = resolve(o);
    auto results = run_bench(c, [&](const std::string & m) { note(o, m); });
    const auto path = o.out.empty() ? c.results_path : o.out;
    emit(o.format == "csv" ? results_to_csv(results) : results_to_json(results), path);
    const auto d = results.delta();
    note(o, "delta WRL " + fmt(d.wrl) + ", GMRL " + fmt(d.gmrl) + "; wrote " + (path.empty() ? "stdout" : path));
}

void cmd_report(const Overrides & o, const std::string & results_path)
{
    auto c = resolve(o);
    const auto path = results_path.empty() ? c.results_path : results_path;
    require_artifact(path, "results file", "bench");
    auto results = load_results(path);
    emit(o.format == "csv" ? results_to_csv(results) : format_report(results), o.out);
}

}

int main(int argc, char ** argv)
{
    CLI::App app{ "delta-opt: two-stage learned query optimizer on a simulated database" };
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "root seed");
    app.add_flag("-q,--quiet", o.quiet, "suppress progress on stderr");

    auto add_search = [&](CLI::App * s) {
        s->add_option("--k", o.k, "candidates kept by beam search");
        s->add_option("--beam", o.beam, "beam width");
    };
    auto add_gamma = [&](CLI::App * s) {
        auto g = s->add_option("--gamma", o.gamma, "detector threshold");
        s->add_option("--gamma-quantile", o.gamma_quantile, "threshold as a quantile of training distances")
            ->check(CLI::Range(0.0, 1.0))
            ->excludes(g);
    };
    auto add_training = [&](CLI::App * s) {
        s->add_option("--iterations", o.iterations, "value-training iterations");
        s->add_option("--explore-width", o.explore_width, "plans explored per query per iteration");
    };
    auto add_out = [&](CLI::App * s) { s->add_option("--out", o.out, "output path (default per config, - for stdout)"); };
    auto add_split = [&](CLI::App * s) {
        s->add_option("--split", o.split, "query id prefix to use (train, test, all)");
    };

    auto gen = app.add_subcommand("gen-workload", "generate the catalog plus train and test queries");
    add_out(gen);

    auto train = app.add_subcommand("train-value", "run the value-network training loop");
    train->alias("train");
    add_search(train);
    add_training(train);
    add_split(train);

    std::string samples_path;
    auto cost = app.add_subcommand("train-cost", "train the stage-II cost model on the plan pool");
    cost->add_option("--samples", samples_path, "also dump the augmented samples (JSON lines)");
    cost->add_option("--ablate", o.ablate, "no-da, mse-loss")->check(CLI::IsMember({ "no-da", "mse-loss" }));

    auto fit = app.add_subcommand("fit-detector", "fit the compatible-query detector");
    add_gamma(fit);
    add_out(fit);
    add_split(fit);

    auto opt = app.add_subcommand("optimize", "emit top-k candidate plans (JSON lines)");
    add_search(opt);
    add_out(opt);
    add_split(opt);

    std::string model_path, candidates_path;
    auto sel = app.add_subcommand("select", "pick each query's candidate with the lowest predicted latency");
    sel->add_option("--model", model_path, "cost model checkpoint");
    sel->add_option("--candidates", candidates_path, "output of optimize")->required();
    add_out(sel);

    auto det = app.add_subcommand("detect", "gate queries with the detector (JSON lines)");
    add_gamma(det);
    add_out(det);
    add_split(det);

    auto bench = app.add_subcommand("bench", "seeded end-to-end benchmark");
    add_search(bench);
    add_gamma(bench);
    add_training(bench);
    bench->add_option("--ablate", o.ablate, "ablations")
        ->check(CLI::IsMember({ "no-cps", "no-cqd", "no-da", "mse-loss" }));
    bench->add_option("--format", o.format, "results format")->check(CLI::IsMember({ "json", "csv" }));
    add_out(bench);

    std::string results_path;
    auto report = app.add_subcommand("report", "print a benchmark results file");
    report->add_option("--results", results_path, "results file");
    report->add_option("--format", o.format, "json prints the text report, csv the tables")
        ->check(CLI::IsMember({ "json", "csv" }));
    add_out(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        // Help and version exit 0; malformed command lines are argument errors.
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        if (*gen)
            cmd_gen_workload(o);
        else if (*train)
            cmd_train_value(o);
        else if (*cost)
            cmd_train_cost(o, samples_path);
        else if (*fit)
            cmd_fit_detector(o);
        else if (*opt)
            cmd_optimize(o);
        else if (*sel)
            cmd_select(o, model_path, candidates_path);
        else if (*det)
            cmd_detect(o);
        else if (*bench)
            cmd_bench(o);
        else if (*report)
            cmd_report(o, results_path);
    } catch (const Error & e) {
        std::cerr << "delta-opt: " << e.category() << " error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception & e) {
        std::cerr << "delta-opt: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
