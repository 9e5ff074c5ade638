#include "delta/experiment.hpp"

#include "delta/parallel.hpp"

#include "json_internal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

namespace delta {

using detail::field;
using detail::json;
using detail::threshold_from;
using detail::threshold_json;
using detail::thresholds_json;

/*======================================================================================================================
 * Config
 *====================================================================================================================*/

CardinalityModel ExperimentConfig::estimator() const
{
    return CardinalityModel::estimated(error_log_sd, derive_seed(seed, "estimator"));
}

ExecutionOptions ExperimentConfig::execution() const
{
    return { constants, noise_log_sd, derive_seed(seed, "execution"), 0 };
}

namespace {

/// Reads the listed keys of `j` into their targets and rejects any other key.
class Reader
{
    public:
    Reader(const json & j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j.is_object())
            throw SchemaError("config section '" + where_ + "' must be an object");
    }

    template<typename T>
    Reader & get(const char * name, T & target)
    {
        known_.insert(name);
        if (j_.contains(name))
            target = field<T>(j_, name);
        return *this;
    }

    Reader & section(const char * name, const std::function<void(const json &)> & body)
    {
        known_.insert(name);
        if (j_.contains(name))
            body(j_.at(name));
        return *this;
    }

    void done() const
    {
        for (const auto & [k, v] : j_.items())
            if (!known_.contains(k))
                throw SchemaError("unknown config key '" + where_ + (where_.empty() ? "" : ".") + k + "'");
    }

    private:
    const json & j_;
    std::string where_;
    std::set<std::string> known_;
};

void read_net(const json & j, NetConfig & n, const std::string & where)
{
    Reader(j, where)
        .get("channels", n.channels)
        .get("head_hidden", n.head_hidden)
        .get("learning_rate", n.learning_rate)
        .get("momentum", n.momentum)
        .get("batch_size", n.batch_size)
        .get("epochs", n.epochs)
        .get("validation_fraction", n.validation_fraction)
        .get("grad_clip", n.grad_clip)
        .done();
    try {
        n.validate();
    } catch (const InvalidArgument & e) {
        throw SchemaError("config section '" + where + "': " + e.what());
    }
}

json net_json(const NetConfig & n)
{
    return { { "channels", n.channels },       { "head_hidden", n.head_hidden },
             { "learning_rate", n.learning_rate }, { "momentum", n.momentum },
             { "batch_size", n.batch_size },   { "epochs", n.epochs },
             { "validation_fraction", n.validation_fraction }, { "grad_clip", n.grad_clip } };
}

std::vector<std::string> ablation_names(const Ablations & a)
{
    std::vector<std::string> out;
    if (a.no_cps)
        out.push_back("no-cps");
    if (a.no_cqd)
        out.push_back("no-cqd");
    if (a.no_da)
        out.push_back("no-da");
    if (a.mse_loss)
        out.push_back("mse-loss");
    return out;
}

void set_ablation(Ablations & a, const std::string & name)
{
    if (name == "no-cps")
        a.no_cps = true;
    else if (name == "no-cqd")
        a.no_cqd = true;
    else if (name == "no-da")
        a.no_da = true;
    else if (name == "mse-loss")
        a.mse_loss = true;
    else
        throw SchemaError("unknown ablation '" + name + "'");
}

}

ExperimentConfig config_from_json(std::string_view text)
{
    auto j = detail::parse_json(text);
    ExperimentConfig c;
    std::optional<double> quantile;
    bool has_quantile = false;
    std::vector<std::string> ablate;
    Reader(j, "")
        .get("seed", c.seed)
        .section("paths",
                 [&](const json & p) {
                     Reader(p, "paths")
                         .get("workload", c.workload_path)
                         .get("pool", c.pool_path)
                         .get("best_seen", c.best_seen_path)
                         .get("value_model", c.value_model_path)
                         .get("cost_model", c.cost_model_path)
                         .get("detector", c.detector_path)
                         .get("results", c.results_path)
                         .done();
                 })
        .section("workload",
                 [&](const json & w) {
                     Reader(w, "workload")
                         .get("tables", c.catalog.tables)
                         .get("min_rows", c.catalog.min_rows)
                         .get("max_rows", c.catalog.max_rows)
                         .get("extra_edges", c.catalog.extra_edges)
                         .get("min_selectivity", c.catalog.min_selectivity)
                         .get("max_selectivity", c.catalog.max_selectivity)
                         .get("train_queries", c.train_queries)
                         .get("test_queries", c.test_queries)
                         .get("min_relations", c.min_relations)
                         .get("max_relations", c.max_relations)
                         .done();
                 })
        .section("simulator",
                 [&](const json & s) {
                     Reader(s, "simulator")
                         .get("scan", c.constants.scan)
                         .get("build", c.constants.build)
                         .get("probe", c.constants.probe)
                         .get("nested_loop", c.constants.nested_loop)
                         .get("merge", c.constants.merge)
                         .get("error_log_sd", c.error_log_sd)
                         .get("noise_log_sd", c.noise_log_sd)
                         .done();
                 })
        .section("planner",
                 [&](const json & p) {
                     Reader r(p, "planner");
                     r.get("k", c.k)
                         .get("beam", c.beam)
                         .section("gamma", [&](const json & g) { c.gamma = threshold_from(g, "gamma"); })
                         .get("iterations", c.iterations)
                         .get("explore_width", c.explore_width)
                         .get("epsilon", c.epsilon)
                         .get("value_epochs_per_iteration", c.value_epochs_per_iteration);
                     r.section("gamma_quantile", [&](const json & q) {
                         has_quantile = true;
                         if (!q.is_null()) {
                             if (!q.is_number())
                                 throw SchemaError("field 'gamma_quantile' has the wrong type");
                             quantile = q.get<double>();
                         }
                     });
                     r.done();
                 })
        .section("value_net", [&](const json & n) { read_net(n, c.value_net, "value_net"); })
        .section("cost_net", [&](const json & n) { read_net(n, c.cost_net, "cost_net"); })
        .get("ablate", ablate)
        .get("k_sweep", c.k_sweep)
        .section("gamma_sweep",
                 [&](const json & g) {
                     if (!g.is_array())
                         throw SchemaError("field 'gamma_sweep' has the wrong type");
                     c.gamma_sweep.clear();
                     for (const auto & x : g)
                         c.gamma_sweep.push_back(threshold_from(x, "gamma_sweep"));
                 })
        .done();
    if (has_quantile)
        c.gamma_quantile = quantile;
    for (const auto & a : ablate)
        set_ablation(c.ablate, a);
    if (c.k < 1 || c.beam < 1 || c.iterations < 1 || c.explore_width < 1 || c.train_queries < 1 ||
        c.test_queries < 1)
        throw SchemaError("config needs k, beam, iterations, explore_width and query counts >= 1");
    if (c.gamma_quantile && !(*c.gamma_quantile >= 0.0 && *c.gamma_quantile <= 1.0))
        throw SchemaError("gamma_quantile must lie in [0,1]");
    return c;
}

std::string config_to_json(const ExperimentConfig & c)
{
    json j{ { "seed", c.seed },
            { "paths",
              { { "workload", c.workload_path },
                { "pool", c.pool_path },
                { "best_seen", c.best_seen_path },
                { "value_model", c.value_model_path },
                { "cost_model", c.cost_model_path },
                { "detector", c.detector_path },
                { "results", c.results_path } } },
            { "workload",
              { { "tables", c.catalog.tables },
                { "min_rows", c.catalog.min_rows },
                { "max_rows", c.catalog.max_rows },
                { "extra_edges", c.catalog.extra_edges },
                { "min_selectivity", c.catalog.min_selectivity },
                { "max_selectivity", c.catalog.max_selectivity },
                { "train_queries", c.train_queries },
                { "test_queries", c.test_queries },
                { "min_relations", c.min_relations },
                { "max_relations", c.max_relations } } },
            { "simulator",
              { { "scan", c.constants.scan },
                { "build", c.constants.build },
                { "probe", c.constants.probe },
                { "nested_loop", c.constants.nested_loop },
                { "merge", c.constants.merge },
                { "error_log_sd", c.error_log_sd },
                { "noise_log_sd", c.noise_log_sd } } },
            { "planner",
              { { "k", c.k },
                { "beam", c.beam },
                { "gamma", threshold_json(c.gamma) },
                { "gamma_quantile", c.gamma_quantile ? json(*c.gamma_quantile) : json(nullptr) },
                { "iterations", c.iterations },
                { "explore_width", c.explore_width },
                { "epsilon", c.epsilon },
                { "value_epochs_per_iteration", c.value_epochs_per_iteration } } },
            { "value_net", net_json(c.value_net) },
            { "cost_net", net_json(c.cost_net) },
            { "ablate", ablation_names(c.ablate) },
            { "k_sweep", c.k_sweep },
            { "gamma_sweep", thresholds_json(c.gamma_sweep) } };
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string & path) { return config_from_json(detail::read_text_file(path)); }

/*======================================================================================================================
 * Workload and detector
 *====================================================================================================================*/

BenchWorkload make_bench_workload(const ExperimentConfig & c)
{
    BenchWorkload w;
    w.catalog = gen_catalog(c.catalog, derive_seed(c.seed, "catalog"));
    w.train = gen_queries(w.catalog, c.train_queries, c.min_relations, c.max_relations,
                          derive_seed(c.seed, "train-queries"), "train");
    w.test = gen_queries(w.catalog, c.test_queries, c.min_relations, c.max_relations,
                         derive_seed(c.seed, "test-queries"), "test");
    return w;
}

std::vector<Eigen::VectorXd> detector_rows(std::span<const Query> queries, const Catalog & catalog,
                                           const ExperimentConfig & config, const NormalizationStats & stats)
{
    const auto estimated = config.estimator();
    const ModelAnnotator annotator(catalog, estimated, config.constants);
    std::vector<Eigen::VectorXd> rows(queries.size());
    parallel_for(queries.size(), [&](std::size_t i) {
        auto native = native_optimize(queries[i], catalog, estimated, config.constants);
        rows[i] = encode_query(queries[i], catalog, native, annotator, stats);
    });
    return rows;
}

DetectorModel fit_query_detector(std::span<const Query> queries, const Catalog & catalog,
                                 const ExperimentConfig & config)
{
    const auto estimated = config.estimator();
    std::vector<NodePtr> roots;
    for (const auto & q : queries)
        roots.push_back(native_optimize(q, catalog, estimated, config.constants).root);
    const auto stats = NormalizationStats::fit(roots);
    auto rows = detector_rows(queries, catalog, config, stats);
    auto model = fit_detector(rows, config.gamma);
    model.stats = stats;
    for (const auto & r : rows)
        model.training_distances.push_back(distance(model, r));
    std::sort(model.training_distances.begin(), model.training_distances.end());
    if (config.gamma_quantile)
        model.gamma = sorted_quantile(model.training_distances, *config.gamma_quantile);
    return model;
}

/*======================================================================================================================
 * Aggregates
 *====================================================================================================================*/

namespace {

Aggregate aggregate_of(std::span<const QueryResult> results)
{
    Aggregate a;
    a.wrl = wrl(results);
    a.gmrl = gmrl(results);
    a.speedup = speedup(a.wrl);
    return a;
}

double choose(const BenchRow & row, std::size_t k, double gamma, const Ablations & ablate)
{
    const bool accepted = ablate.no_cqd || row.distance <= gamma;
    if (!accepted || row.candidates.empty())
        return row.native;
    if (ablate.no_cps)
        return row.candidates.front();
    const std::size_t n = std::min(k, row.candidates.size());
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (row.predicted[i] < row.predicted[best])
            best = i;
    return row.candidates[best];
}

}

Aggregate aggregate_rows(std::span<const BenchRow> rows, std::size_t k, double gamma, const Ablations & ablate)
{
    std::vector<QueryResult> results;
    for (const auto & r : rows)
        results.push_back({ r.query_id, choose(r, k, gamma, ablate), r.native, {} });
    return aggregate_of(results);
}

Aggregate BenchResults::delta() const
{
    std::vector<QueryResult> results;
    for (const auto & r : rows)
        results.push_back({ r.query_id, r.selected, r.native, r.candidates });
    return aggregate_of(results);
}

Aggregate BenchResults::top1() const
{
    std::vector<QueryResult> results;
    for (const auto & r : rows)
        results.push_back({ r.query_id, r.top1, r.native, {} });
    return aggregate_of(results);
}

CandidateQuality BenchResults::mean_quality() const
{
    CandidateQuality m{ 0.0, 0.0, 0.0 };
    std::size_t n = 0;
    for (const auto & r : rows) {
        if (r.candidates.empty())
            continue;
        auto q = candidate_quality(r.candidates, r.native);
        m.best += q.best;
        m.worst += q.worst;
        m.fraction += q.fraction;
        ++n;
    }
    if (n) {
        m.best /= static_cast<double>(n);
        m.worst /= static_cast<double>(n);
        m.fraction /= static_cast<double>(n);
    }
    return m;
}

Confusion BenchResults::detector_confusion() const
{
    std::vector<GateDecision> decisions;
    std::vector<bool> labels;
    for (const auto & r : rows) {
        decisions.push_back(r.accepted ? GateDecision::Accept : GateDecision::Reject);
        labels.push_back(r.compatible);
    }
    return confusion(decisions, labels);
}

/*======================================================================================================================
 * Results files
 *====================================================================================================================*/

namespace {

constexpr const char * kResultsFormat = "delta-bench-results";
constexpr int kResultsVersion = 1;

json aggregate_json(const Aggregate & a) { return { { "wrl", a.wrl }, { "gmrl", a.gmrl }, { "speedup", a.speedup } }; }

json sweep_json(const std::vector<SweepPoint> & sweep)
{
    json out = json::array();
    for (const auto & p : sweep)
        out.push_back({ { "parameter", threshold_json(p.parameter) }, { "delta", aggregate_json(p.delta) } });
    return out;
}

json optional_json(const std::optional<double> & v) { return v ? json(*v) : json(nullptr); }

Aggregate aggregate_from(const json & j)
{
    return { field<double>(j, "wrl"), field<double>(j, "gmrl"), field<double>(j, "speedup") };
}

std::vector<SweepPoint> sweep_from(const json & j)
{
    std::vector<SweepPoint> out;
    if (!j.is_array())
        throw SchemaError("sweep must be an array");
    for (const auto & p : j)
        out.push_back({ threshold_from(field<json>(p, "parameter"), "parameter"), aggregate_from(field<json>(p, "delta")) });
    return out;
}

}

std::string results_to_json(const BenchResults & r)
{
    const auto conf = r.detector_confusion();
    const auto quality = r.mean_quality();
    json header{ { "format", kResultsFormat }, { "version", kResultsVersion }, { "seed", r.seed },
                 { "k", r.k },                 { "beam", r.beam },                { "gamma", threshold_json(r.gamma) },
                 { "ablate", ablation_names(r.ablate) } };
    json training{ { "train_queries", r.train_queries }, { "executed_plans", r.executed_plans },
                   { "cost_samples", r.cost_samples } };
    json aggregates{ { "delta", aggregate_json(r.delta()) },
                     { "top1", aggregate_json(r.top1()) },
                     { "quality", { { "best", quality.best }, { "worst", quality.worst }, { "eta", quality.fraction } } } };
    json detector{ { "accepted_compatible", conf.accepted_compatible },
                   { "rejected_compatible", conf.rejected_compatible },
                   { "accepted_incompatible", conf.accepted_incompatible },
                   { "rejected_incompatible", conf.rejected_incompatible },
                   { "recall", optional_json(conf.recall) },
                   { "specificity", optional_json(conf.specificity) } };

    // One top-level entry per line and one row per line, so schema errors can name a line.
    std::string out = "{\n";
    out += "\"header\": " + header.dump() + ",\n";
    out += "\"training\": " + training.dump() + ",\n";
    out += "\"aggregates\": " + aggregates.dump() + ",\n";
    out += "\"detector\": " + detector.dump() + ",\n";
    out += "\"k_sweep\": " + sweep_json(r.k_sweep).dump() + ",\n";
    out += "\"gamma_sweep\": " + sweep_json(r.gamma_sweep).dump() + ",\n";
    out += "\"rows\": [";
    for (std::size_t i = 0; i != r.rows.size(); ++i) {
        const auto & row = r.rows[i];
        json j{ { "query_id", row.query_id }, { "relations", row.relations }, { "native", row.native },
                { "top1", row.top1 },         { "selected", row.selected },   { "candidates", row.candidates },
                { "predicted", row.predicted }, { "distance", row.distance }, { "accepted", row.accepted },
                { "compatible", row.compatible } };
        out += (i ? ",\n" : "\n") + j.dump();
    }
    out += r.rows.empty() ? "]\n}\n" : "\n]\n}\n";
    return out;
}

BenchResults results_from_json(std::string_view text)
{
    auto j = detail::parse_json(text);
    auto line_of_row = [&](std::size_t i) -> std::size_t {
        auto pos = text.find("\"rows\": [");
        if (pos == std::string_view::npos)
            return 0;
        return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) +
               2 + i;
    };
    auto line_of_key = [&](const std::string & key) -> std::size_t {
        auto pos = text.find("\"" + key + "\"");
        if (pos == std::string_view::npos)
            return 0;
        return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
    };
    BenchResults r;
    auto section = [&](const char * key, auto && body) {
        try {
            body(field<json>(j, key));
        } catch (const SchemaError & e) {
            throw SchemaError(std::string(key) + ": " + e.what(), e.line() ? e.line() : line_of_key(key));
        }
    };
    section("header", [&](const json & h) {
        if (field<std::string>(h, "format") != kResultsFormat)
            throw SchemaError("not a delta bench results file");
        if (field<int>(h, "version") != kResultsVersion)
            throw SchemaError("unsupported results version");
        r.seed = field<std::uint64_t>(h, "seed");
        r.k = field<int>(h, "k");
        r.beam = field<std::size_t>(h, "beam");
        r.gamma = threshold_from(field<json>(h, "gamma"), "gamma");
        for (const auto & a : field<std::vector<std::string>>(h, "ablate"))
            set_ablation(r.ablate, a);
    });
    section("training", [&](const json & t) {
        r.train_queries = field<std::size_t>(t, "train_queries");
        r.executed_plans = field<std::size_t>(t, "executed_plans");
        r.cost_samples = field<std::size_t>(t, "cost_samples");
    });
    section("k_sweep", [&](const json & s) { r.k_sweep = sweep_from(s); });
    section("gamma_sweep", [&](const json & s) { r.gamma_sweep = sweep_from(s); });
    auto rows = field<json>(j, "rows");
    if (!rows.is_array())
        throw SchemaError("'rows' must be an array", line_of_key("rows"));
    for (std::size_t i = 0; i != rows.size(); ++i) {
        try {
            const auto & x = rows[i];
            BenchRow row;
            row.query_id = field<std::string>(x, "query_id");
            row.relations = field<int>(x, "relations");
            row.native = field<double>(x, "native");
            row.top1 = field<double>(x, "top1");
            row.selected = field<double>(x, "selected");
            row.candidates = field<std::vector<double>>(x, "candidates");
            row.predicted = field<std::vector<double>>(x, "predicted");
            row.distance = field<double>(x, "distance");
            row.accepted = field<bool>(x, "accepted");
            row.compatible = field<bool>(x, "compatible");
            if (row.predicted.size() != row.candidates.size())
                throw SchemaError("'predicted' and 'candidates' differ in length");
            if (!(row.native > 0.0) || !(row.selected > 0.0) || !(row.top1 > 0.0))
                throw SchemaError("latencies must be positive");
            r.rows.push_back(std::move(row));
        } catch (const SchemaError & e) {
            throw SchemaError(std::string("row ") + std::to_string(i) + ": " + e.what(), line_of_row(i));
        }
    }
    return r;
}

BenchResults load_results(const std::string & path) { return results_from_json(detail::read_text_file(path)); }

namespace {

std::string fmt(const char * f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string fmt_parameter(double p)
{
    if (std::isinf(p))
        return "inf";
    return fmt("%g", p);
}

}

std::string results_to_csv(const BenchResults & r)
{
    std::string out = "table,parameter,wrl,gmrl,speedup\n";
    auto line = [&](const std::string & table, const std::string & param, const Aggregate & a) {
        out += table + "," + param + "," + fmt("%.6f", a.wrl) + "," + fmt("%.6f", a.gmrl) + "," +
               fmt("%.2f", a.speedup) + "\n";
    };
    if (!r.rows.empty()) {
        line("summary", "native", { 1.0, 1.0, 1.0 });
        line("summary", "top1", r.top1());
        line("summary", "delta", r.delta());
    }
    for (const auto & p : r.k_sweep)
        line("k_sweep", fmt_parameter(p.parameter), p.delta);
    for (const auto & p : r.gamma_sweep)
        line("gamma_sweep", fmt_parameter(p.parameter), p.delta);
    return out;
}

std::string format_report(const BenchResults & r)
{
    std::ostringstream out;
    auto agg_line = [&](const std::string & name, const Aggregate & a) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-10s %10.4f %10.4f %10.2f\n", name.c_str(), a.wrl, a.gmrl, a.speedup);
        out << buf;
    };
    out << "seed " << r.seed << ", k " << r.k << ", beam " << r.beam << ", gamma " << fmt_parameter(r.gamma);
    auto ab = ablation_names(r.ablate);
    if (!ab.empty()) {
        out << ", ablate";
        for (const auto & a : ab)
            out << ' ' << a;
    }
    out << "\n" << r.rows.size() << " test queries, " << r.train_queries << " training queries, " << r.executed_plans
        << " executed plans, " << r.cost_samples << " cost-model samples\n\n";

    out << "  method            WRL       GMRL    speedup\n";
    if (!r.rows.empty()) {
        agg_line("native", { 1.0, 1.0, 1.0 });
        agg_line("top-1", r.top1());
        agg_line("delta", r.delta());
        auto q = r.mean_quality();
        char buf[160];
        std::snprintf(buf, sizeof buf, "\ncandidate set: mean R(P*) %.4f, mean R(P^) %.4f, mean eta %.4f\n", q.best,
                      q.worst, q.fraction);
        out << buf;
        auto c = r.detector_confusion();
        out << "detector: accepted " << c.accepted_compatible + c.accepted_incompatible << " of " << c.total()
            << ", recall " << (c.recall ? fmt("%.4f", *c.recall) : "undefined") << ", specificity "
            << (c.specificity ? fmt("%.4f", *c.specificity) : "undefined") << "\n";
    }
    out << "\nk-sweep\n  k          WRL       GMRL    speedup\n";
    for (const auto & p : r.k_sweep)
        agg_line(fmt_parameter(p.parameter), p.delta);
    out << "\ngamma-sweep\n  gamma      WRL       GMRL    speedup\n";
    for (const auto & p : r.gamma_sweep)
        agg_line(fmt_parameter(p.parameter), p.delta);
    return out.str();
}

/*======================================================================================================================
 * Pipeline
 *====================================================================================================================*/

double true_latency(const Plan & plan, const Catalog & catalog, const CostConstants & constants)
{
    return analytic_cost(*plan.root, CardinalityModel::truth(), catalog, constants);
}

NetConfig cost_net_config(const ExperimentConfig & config)
{
    NetConfig n = config.cost_net;
    n.seed = derive_seed(config.seed, "cost-net");
    n.loss = config.ablate.mse_loss ? LossKind::SquaredError : LossKind::Heteroscedastic;
    return n;
}

std::vector<AugmentedSample> cost_samples(const PlanPool & pool, const ExperimentConfig & config)
{
    return config.ablate.no_da ? root_samples(pool.records()) : augment(pool.records());
}

TrainedSystem train_system(const BenchWorkload & workload, const ExperimentConfig & config,
                           const std::function<void(const std::string &)> & log)
{
    TrainedSystem sys;
    ValueTrainingOptions opt;
    opt.iterations = config.iterations;
    opt.explore_width = config.explore_width;
    opt.beam_width = config.beam;
    opt.epsilon = config.epsilon;
    opt.estimated = config.estimator();
    opt.constants = config.constants;
    opt.execution = config.execution();
    opt.net = config.value_net;
    opt.net.seed = derive_seed(config.seed, "value-net");
    opt.epochs_per_iteration = config.value_epochs_per_iteration;
    opt.seed = derive_seed(config.seed, "value-training");
    auto progress = [&](int it, const PlanPool & pool) {
        if (log)
            log("value iteration " + std::to_string(it + 1) + "/" + std::to_string(config.iterations) + ": pool " +
                std::to_string(pool.size()));
    };
    auto value = train_value_network(workload.catalog, workload.train, opt, sys.pool, sys.best_seen, progress);
    sys.value_model = std::move(value.model);
    sys.executed_plans = value.executed_plans;

    const ModelAnnotator annotator(workload.catalog, config.estimator(), config.constants);
    auto samples = cost_samples(sys.pool, config);
    sys.cost_samples = samples.size();
    if (log)
        log("cost model: " + std::to_string(samples.size()) + " samples");
    sys.cost_model = train_cost_model(samples, workload.catalog, annotator, cost_net_config(config));
    sys.detector = fit_query_detector(workload.train, workload.catalog, config);
    return sys;
}

BenchResults evaluate(const BenchWorkload & workload, const TrainedSystem & sys, const ExperimentConfig & config)
{
    const auto estimated = config.estimator();
    const ModelAnnotator annotator(workload.catalog, estimated, config.constants);
    const NetworkEstimator estimator(sys.value_model, workload.catalog, estimated);
    std::size_t k_max = static_cast<std::size_t>(config.k);
    for (int k : config.k_sweep)
        k_max = std::max(k_max, static_cast<std::size_t>(std::max(k, 1)));

    std::vector<BenchRow> rows(workload.test.size());
    parallel_for(workload.test.size(), [&](std::size_t i) {
        const auto & q = workload.test[i];
        BenchRow row;
        row.query_id = q.id();
        row.relations = q.size();
        auto native = native_optimize(q, workload.catalog, estimated, config.constants);
        row.native = true_latency(native, workload.catalog, config.constants);
        row.distance = distance(sys.detector, encode_query(q, workload.catalog, native, annotator, sys.detector.stats));
        BeamOptions beam{ config.beam, k_max, 0.0, 0 };
        auto plans = top_k_plans(q, workload.catalog, annotator, estimator, beam);
        for (const auto & p : plans) {
            row.candidates.push_back(true_latency(p, workload.catalog, config.constants));
            row.predicted.push_back(predict_label(sys.cost_model, p, workload.catalog, annotator));
        }
        row.top1 = row.candidates.empty() ? row.native : row.candidates.front();
        if (!row.candidates.empty()) {
            std::vector<double> first(row.candidates.begin(),
                                      row.candidates.begin() +
                                          static_cast<std::ptrdiff_t>(std::min<std::size_t>(config.k, plans.size())));
            row.compatible = !is_incompatible(candidate_quality(first, row.native).best);
        }
        row.accepted = config.ablate.no_cqd || row.distance <= sys.detector.gamma;
        row.selected = choose(row, static_cast<std::size_t>(config.k), sys.detector.gamma, config.ablate);
        rows[i] = std::move(row);
    });

    BenchResults r;
    r.seed = config.seed;
    r.k = config.k;
    r.beam = config.beam;
    r.gamma = sys.detector.gamma;
    r.ablate = config.ablate;
    r.train_queries = workload.train.size();
    r.executed_plans = sys.executed_plans;
    r.cost_samples = sys.cost_samples;
    std::sort(rows.begin(), rows.end(), [](const BenchRow & a, const BenchRow & b) { return a.query_id < b.query_id; });
    for (int k : config.k_sweep)
        r.k_sweep.push_back({ static_cast<double>(k),
                              aggregate_rows(rows, static_cast<std::size_t>(std::max(k, 1)), r.gamma, config.ablate) });
    for (double g : config.gamma_sweep)
        r.gamma_sweep.push_back({ g, aggregate_rows(rows, static_cast<std::size_t>(config.k), g, config.ablate) });
    for (auto & row : rows) {
        const auto keep = std::min<std::size_t>(row.candidates.size(), static_cast<std::size_t>(config.k));
        row.candidates.resize(keep);
        row.predicted.resize(keep);
    }
    r.rows = std::move(rows);
    return r;
}

BenchResults run_bench(const ExperimentConfig & config, const std::function<void(const std::string &)> & log)
{
    const auto workload = make_bench_workload(config);
    const auto sys = train_system(workload, config, log);
    return evaluate(workload, sys, config);
}

}
