#include "delta/simdb.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <unordered_map>

namespace delta {

/*======================================================================================================================
 * Cardinalities and costs
 *====================================================================================================================*/

CardinalityModel CardinalityModel::estimated(double error_log_sd, std::uint64_t seed)
{
    if (!(error_log_sd >= 0.0))
        throw InvalidArgument("error-factor-log-sd must be nonnegative");
    CardinalityModel m;
    m.mode_ = CardinalityMode::Estimated;
    m.error_log_sd_ = error_log_sd;
    m.seed_ = seed;
    return m;
}

double CardinalityModel::error_factor(const JoinEdge & edge) const
{
    if (mode_ == CardinalityMode::True || error_log_sd_ == 0.0)
        return 1.0;
    auto lo = std::min(edge.a, edge.b), hi = std::max(edge.a, edge.b);
    SplitMix64 rng(hash_combine(hash_combine(seed_, lo), hi));
    std::normal_distribution<double> normal(0.0, error_log_sd_);
    return std::exp(normal(rng));
}

double CardinalityModel::selectivity(const JoinEdge & edge) const
{
    return std::min(1.0, edge.selectivity * error_factor(edge));
}

namespace {

template<typename Selectivity>
double set_cardinality(RelSet s, const Catalog & catalog, Selectivity && sel)
{
    double rows = 1.0;
    for (RelSet r = s; r; r &= r - 1)
        rows *= static_cast<double>(catalog.rows(lowest(r)));
    const auto & edges = catalog.edges();
    for (std::size_t i = 0; i != edges.size(); ++i)
        if (contains(s, edges[i].a) && contains(s, edges[i].b))
            rows *= sel(i);
    return rows;
}

}

double cardinality(RelSet s, const CardinalityModel & model, const Catalog & catalog)
{
    return set_cardinality(s, catalog, [&](std::size_t i) { return model.selectivity(catalog.edges()[i]); });
}

double cardinality(const PlanNode & node, const CardinalityModel & model, const Catalog & catalog)
{
    return cardinality(node.relations(), model, catalog);
}

double scan_cost(double rows, const CostConstants & c) { return c.scan * rows; }

double join_cost(Operator op, double l, double r, const CostConstants & c)
{
    switch (op) {
        case Operator::HashJoin: return c.build * l + c.probe * r;
        case Operator::NestLoopJoin: return c.nested_loop * l * r;
        case Operator::MergeJoin: return c.merge * (l * std::log2(1.0 + l) + r * std::log2(1.0 + r));
        case Operator::SeqScan: break;
    }
    throw InvalidArgument("join_cost called with SeqScan");
}

double analytic_cost(const PlanNode & node, const CardinalityModel & model, const Catalog & catalog,
                     const CostConstants & constants)
{
    if (node.is_leaf())
        return scan_cost(static_cast<double>(catalog.rows(*node.relation())), constants);
    double l = cardinality(*node.left(), model, catalog);
    double r = cardinality(*node.right(), model, catalog);
    return analytic_cost(*node.left(), model, catalog, constants) +
           analytic_cost(*node.right(), model, catalog, constants) + join_cost(node.op(), l, r, constants);
}

Annotation ModelAnnotator::scan(TableId relation) const
{
    double rows = static_cast<double>(catalog_->rows(relation));
    return { rows, scan_cost(rows, constants_) };
}

ModelAnnotator::ModelAnnotator(const Catalog & catalog, CardinalityModel model, CostConstants constants)
    : catalog_(&catalog), model_(model), constants_(constants)
{
    for (const auto & e : catalog.edges())
        selectivities_.push_back(model_.selectivity(e));
}

double ModelAnnotator::cardinality(RelSet s) const
{
    return set_cardinality(s, *catalog_, [&](std::size_t i) { return selectivities_[i]; });
}

Annotation ModelAnnotator::join(Operator op, const PlanNode & left, const PlanNode & right) const
{
    double card = cardinality(left.relations() | right.relations());
    double cost = left.est_cost() + right.est_cost() +
                  join_cost(op, left.est_cardinality(), right.est_cardinality(), constants_);
    return { card, cost };
}

NodePtr ModelAnnotator::annotate(const NodePtr & root) const
{
    if (root->is_leaf())
        return PlanNode::scan(*root->relation(), scan(*root->relation()));
    auto l = annotate(root->left());
    auto r = annotate(root->right());
    auto ann = join(root->op(), *l, *r);
    return PlanNode::join(root->op(), std::move(l), std::move(r), ann);
}

/*======================================================================================================================
 * Execution
 *====================================================================================================================*/

namespace {

double execute_node(const PlanNode & node, const ExecutedPlanRecord & rec, const Catalog & catalog,
                    const ExecutionOptions & opt, std::map<std::string, double> & out)
{
    static const CardinalityModel truth = CardinalityModel::truth();
    double cost;
    double floor = 0.0;
    if (node.is_leaf()) {
        cost = scan_cost(static_cast<double>(catalog.rows(*node.relation())), opt.constants);
    } else {
        double l = execute_node(*node.left(), rec, catalog, opt, out);
        double r = execute_node(*node.right(), rec, catalog, opt, out);
        floor = std::max(l, r);
        cost = analytic_cost(node, truth, catalog, opt.constants);
    }
    double value = cost;
    if (opt.noise_log_sd > 0.0) {
        std::uint64_t s = hash_combine(opt.seed, stable_hash(rec.query_id));
        s = hash_combine(s, stable_hash(node.key()));
        s = hash_combine(s, opt.repetition);
        SplitMix64 rng(s);
        std::normal_distribution<double> normal(0.0, opt.noise_log_sd);
        value = cost * std::exp(normal(rng));
    }
    value = std::max(value, floor);
    out[node.key()] = value;
    return value;
}

}

ExecutedPlanRecord execute(const Plan & plan, const Catalog & catalog, const ExecutionOptions & options)
{
    if (!(options.noise_log_sd >= 0.0))
        throw InvalidArgument("noise-log-sd must be nonnegative");
    ExecutedPlanRecord rec;
    rec.query_id = plan.query_id;
    rec.plan = plan;
    rec.repetition = options.repetition;
    rec.latency = execute_node(*plan.root, rec, catalog, options, rec.node_latencies);
    return rec;
}

void validate_record(const ExecutedPlanRecord & record)
{
    const auto & lat = record.node_latencies;
    auto get = [&](const PlanNode & n) {
        auto it = lat.find(n.key());
        if (it == lat.end())
            throw InvariantViolation("record misses node-latency for " + n.key());
        if (!(it->second > 0.0))
            throw InvariantViolation("record has nonpositive node latency");
        return it->second;
    };
    if (get(*record.plan.root) != record.latency)
        throw InvariantViolation("root node-latency differs from record latency");
    std::set<std::string> seen;
    for (const auto & n : subplans(record.plan)) {
        seen.insert(n->key());
        if (!n->is_leaf() && get(*n) < std::max(get(*n->left()), get(*n->right())))
            throw InvariantViolation("cumulative timing violated at " + n->key());
    }
    if (seen.size() != lat.size())
        throw InvariantViolation("record has node-latencies for nodes outside the plan");
}

/*======================================================================================================================
 * Native optimizer
 *====================================================================================================================*/

Plan native_optimize(const Query & query, const Catalog & catalog, const CardinalityModel & estimated,
                     const CostConstants & constants, int max_relations)
{
    if (query.size() > max_relations)
        throw BoundExceeded("native_optimize: query " + query.id() + " has " + std::to_string(query.size()) +
                            " relations, DP bound is " + std::to_string(max_relations));
    const ModelAnnotator annotator(catalog, estimated, constants);
    const RelSet all = query.relations();

    std::vector<RelSet> subsets;
    for (RelSet s = all; s; s = (s - 1) & all)
        if (query.connected(s))
            subsets.push_back(s);
    std::sort(subsets.begin(), subsets.end(), [](RelSet a, RelSet b) {
        return std::pair(cardinality_of(a), a) < std::pair(cardinality_of(b), b);
    });

    std::unordered_map<RelSet, NodePtr> best;
    best.reserve(subsets.size());
    for (RelSet s : subsets) {
        if (cardinality_of(s) == 1) {
            best[s] = PlanNode::scan(lowest(s), annotator.scan(lowest(s)));
            continue;
        }
        const double card = annotator.cardinality(s);
        NodePtr winner;
        for (RelSet l = (s - 1) & s; l; l = (l - 1) & s) {
            RelSet r = s & ~l;
            auto li = best.find(l), ri = best.find(r);
            if (li == best.end() || ri == best.end() || !query.joinable(l, r))
                continue;
            const auto & L = *li->second;
            const auto & R = *ri->second;
            for (auto op : kJoinOperators) {
                double cost = L.est_cost() + R.est_cost() +
                              join_cost(op, L.est_cardinality(), R.est_cardinality(), constants);
                if (winner && cost > winner->est_cost())
                    continue;
                if (winner && cost == winner->est_cost() && join_key(op, L.key(), R.key()) >= winner->key())
                    continue;
                winner = PlanNode::join(op, li->second, ri->second, { card, cost });
            }
        }
        best[s] = std::move(winner);
    }
    return { query.id(), best.at(all) };
}

/*======================================================================================================================
 * Workload generation
 *====================================================================================================================*/

const Query & Workload::query(const std::string & id) const
{
    for (const auto & q : queries)
        if (q.id() == id)
            return q;
    throw InvalidArgument("unknown query id " + id);
}

namespace {

double log_uniform(std::mt19937_64 & rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
}

}

Catalog gen_catalog(const CatalogSpec & spec, std::uint64_t seed)
{
    if (spec.tables < 2 || spec.tables > static_cast<int>(kMaxTables))
        throw InvalidArgument("catalog needs 2..64 tables");
    if (!(spec.min_rows >= 1.0 && spec.max_rows >= spec.min_rows))
        throw InvalidArgument("row range must satisfy 1 <= min <= max");
    if (!(spec.min_selectivity > 0.0 && spec.max_selectivity <= 1.0 && spec.min_selectivity <= spec.max_selectivity))
        throw InvalidArgument("selectivity range must lie in (0,1]");
    std::mt19937_64 rng(derive_seed(seed, "catalog"));

    std::vector<Table> tables;
    for (int i = 0; i != spec.tables; ++i)
        tables.push_back({ static_cast<TableId>(i),
                           static_cast<std::uint64_t>(std::llround(log_uniform(rng, spec.min_rows, spec.max_rows))) });

    std::vector<JoinEdge> edges;
    std::set<std::pair<TableId, TableId>> used;
    auto add = [&](TableId a, TableId b) {
        if (a > b)
            std::swap(a, b);
        if (a == b || !used.insert({ a, b }).second)
            return false;
        edges.push_back({ a, b, log_uniform(rng, spec.min_selectivity, spec.max_selectivity) });
        return true;
    };
    for (int i = 1; i != spec.tables; ++i) {
        std::uniform_int_distribution<int> parent(0, i - 1);
        add(static_cast<TableId>(parent(rng)), static_cast<TableId>(i));
    }
    const int max_edges = spec.tables * (spec.tables - 1) / 2;
    int extra = std::min(spec.extra_edges, max_edges - (spec.tables - 1));
    std::uniform_int_distribution<int> pick(0, spec.tables - 1);
    while (extra > 0)
        if (add(static_cast<TableId>(pick(rng)), static_cast<TableId>(pick(rng))))
            --extra;
    return Catalog(std::move(tables), std::move(edges));
}

std::vector<Query> gen_queries(const Catalog & catalog, int count, int min_relations, int max_relations,
                               std::uint64_t seed, const std::string & prefix)
{
    if (count < 1)
        throw InvalidArgument("query count must be at least 1");
    if (min_relations < 2 || min_relations > max_relations ||
        max_relations > static_cast<int>(catalog.table_count()))
        throw InvalidArgument("infeasible relations-range [" + std::to_string(min_relations) + "," +
                              std::to_string(max_relations) + "] for a catalog of " +
                              std::to_string(catalog.table_count()) + " tables");
    std::mt19937_64 rng(derive_seed(seed, "queries:" + prefix));
    std::uniform_int_distribution<int> size_dist(min_relations, max_relations);
    std::uniform_int_distribution<TableId> start_dist(0, static_cast<TableId>(catalog.table_count() - 1));
    const int width = std::max(4, static_cast<int>(std::to_string(count).size()));

    std::vector<Query> out;
    out.reserve(count);
    for (int i = 0; i != count; ++i) {
        const int n = size_dist(rng);
        RelSet s = singleton(start_dist(rng));
        while (cardinality_of(s) < n) {
            RelSet frontier = 0;
            for (RelSet r = s; r; r &= r - 1)
                frontier |= catalog.neighbors(lowest(r));
            frontier &= ~s;
            if (!frontier)
                throw InvalidArgument("catalog join graph is too small for the requested relations-range");
            std::vector<TableId> options;
            for (RelSet f = frontier; f; f &= f - 1)
                options.push_back(lowest(f));
            std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
            s |= singleton(options[pick(rng)]);
        }
        std::string idx = std::to_string(i);
        std::string id = prefix + std::string(width - std::min<int>(width, idx.size()), '0') + idx;
        out.push_back(Query::induced(std::move(id), s, catalog));
    }
    return out;
}

Workload gen_workload(const CatalogSpec & spec, int count, int min_relations, int max_relations, std::uint64_t seed)
{
    if (max_relations > spec.tables)
        throw InvalidArgument("infeasible relations-range: more relations than tables");
    Workload w{ gen_catalog(spec, seed), {} };
    w.queries = gen_queries(w.catalog, count, min_relations, max_relations, seed);
    return w;
}

Catalog scale_selectivities(const Catalog & catalog, double factor)
{
    if (!(factor > 0.0))
        throw InvalidArgument("selectivity scale factor must be positive");
    auto edges = catalog.edges();
    for (auto & e : edges)
        e.selectivity = std::min(1.0, e.selectivity * factor);
    return Catalog(catalog.tables(), std::move(edges));
}

}
