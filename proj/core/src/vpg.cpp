#include "delta/vpg.hpp"

#include "delta/parallel.hpp"

#include "json_internal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <unordered_set>

namespace delta {

using detail::field;
using detail::json;

/*======================================================================================================================
 * Estimators
 *====================================================================================================================*/

namespace {

class ConstantScorer final : public StateScorer
{
    public:
    StateScore score(const SearchState &) override { return {}; }
};

class OracleScorer final : public StateScorer
{
    public:
    OracleScorer(const Query & query, const Catalog & catalog, const CostConstants & constants)
        : query_(&query), truth_(catalog, CardinalityModel::truth(), constants)
    { }

    StateScore score(const SearchState & state) override
    {
        state.validate(*query_);
        if (state.is_initial())
            return {};
        struct Unit
        {
            RelSet rels;
            double cost;
            std::string key;
        };
        std::vector<Unit> units;
        for (const auto & t : state.forest())
            units.push_back({ t->relations(), tree_cost(*t), t->key() });
        for (RelSet r = state.remaining(); r; r &= r - 1)
            units.push_back({ singleton(lowest(r)), truth_.scan(lowest(r)).cost, scan_key(lowest(r)) });

        const std::size_t u = units.size();
        const std::size_t full = (std::size_t{ 1 } << u) - 1;
        std::vector<RelSet> rels(full + 1, 0);
        std::vector<double> card(full + 1, 0.0);
        std::vector<double> cost(full + 1, -1.0);
        std::vector<std::string> key(full + 1);
        for (std::size_t m = 1; m <= full; ++m) {
            std::size_t low = m & (~m + 1);
            rels[m] = rels[m ^ low] | units[std::countr_zero(low)].rels;
            card[m] = truth_.cardinality(rels[m]);
        }
        std::vector<std::size_t> order(full);
        for (std::size_t m = 1; m <= full; ++m)
            order[m - 1] = m;
        std::stable_sort(order.begin(), order.end(),
                         [](std::size_t a, std::size_t b) { return std::popcount(a) < std::popcount(b); });
        for (std::size_t m : order) {
            if (std::popcount(m) == 1) {
                const auto & unit = units[std::countr_zero(m)];
                cost[m] = unit.cost;
                key[m] = unit.key;
                continue;
            }
            for (std::size_t l = (m - 1) & m; l; l = (l - 1) & m) {
                std::size_t r = m & ~l;
                if (cost[l] < 0.0 || cost[r] < 0.0 || !query_->joinable(rels[l], rels[r]))
                    continue;
                for (auto op : kJoinOperators) {
                    double c = cost[l] + cost[r] + join_cost(op, card[l], card[r], truth_.constants());
                    if (cost[m] >= 0.0 && c > cost[m])
                        continue;
                    std::string k = join_key(op, key[l], key[r]);
                    if (cost[m] >= 0.0 && c == cost[m] && k >= key[m])
                        continue;
                    cost[m] = c;
                    key[m] = std::move(k);
                }
            }
        }
        if (cost[full] < 0.0)
            throw InvariantViolation("oracle: state of query " + query_->id() + " has no join-connected completion");
        return { cost[full], key[full] };
    }

    private:
    double tree_cost(const PlanNode & node)
    {
        auto it = costs_.find(node.key());
        if (it != costs_.end())
            return it->second;
        double c = node.is_leaf()
                       ? truth_.scan(*node.relation()).cost
                       : tree_cost(*node.left()) + tree_cost(*node.right()) +
                             join_cost(node.op(), truth_.cardinality(node.left()->relations()),
                                       truth_.cardinality(node.right()->relations()), truth_.constants());
        costs_.emplace(node.key(), c);
        return c;
    }

    const Query * query_;
    ModelAnnotator truth_;
    std::unordered_map<std::string, double> costs_;
};

class NetworkScorer final : public StateScorer
{
    public:
    NetworkScorer(const Model & model, const Catalog & catalog, Eigen::VectorXd context)
        : model_(&model), catalog_(&catalog), context_(std::move(context))
    { }

    StateScore score(const SearchState & state) override
    {
        if (state.is_initial())
            return {};
        Eigen::VectorXd pooled;
        for (const auto & t : state.forest()) {
            const auto & enc = encode(*t);
            pooled = pooled.size() ? Eigen::VectorXd(pooled.cwiseMax(enc.pooled)) : enc.pooled;
        }
        auto p = model_->head(pooled, context_.size() ? &context_ : nullptr);
        double v = std::max(0.0, label_to_latency(p.mean));
        return { std::isfinite(v) ? v : 0.0, {} };
    }

    private:
    const TreeEncoding & encode(const PlanNode & node)
    {
        auto it = cache_.find(node.key());
        if (it != cache_.end())
            return it->second;
        auto f = node_features(node, *catalog_, model_->normalization());
        TreeEncoding enc = node.is_leaf() ? model_->encode_leaf(f)
                                          : model_->encode_join(f, encode(*node.left()), encode(*node.right()));
        return cache_.emplace(node.key(), std::move(enc)).first->second;
    }

    const Model * model_;
    const Catalog * catalog_;
    Eigen::VectorXd context_;
    std::unordered_map<std::string, TreeEncoding> cache_;
};

}

std::unique_ptr<StateScorer> ConstantEstimator::begin_search(const Query &) const
{
    return std::make_unique<ConstantScorer>();
}

OracleEstimator::OracleEstimator(const Catalog & catalog, CostConstants constants, int max_relations)
    : catalog_(&catalog), constants_(constants), max_relations_(max_relations)
{ }

std::unique_ptr<StateScorer> OracleEstimator::begin_search(const Query & query) const
{
    if (query.size() > max_relations_)
        throw BoundExceeded("oracle estimator: query " + query.id() + " has " + std::to_string(query.size()) +
                            " relations, bound is " + std::to_string(max_relations_));
    return std::make_unique<OracleScorer>(query, *catalog_, constants_);
}

NetworkEstimator::NetworkEstimator(const Model & model, const Catalog & catalog, CardinalityModel estimated)
    : model_(&model), catalog_(&catalog), estimated_(estimated)
{
    if (model.feature_width() != node_feature_width(catalog.table_count()))
        throw InvalidArgument("value network feature width does not match the catalog");
    if (model.context_width() != context_width(catalog))
        throw InvalidArgument("value network context width does not match the catalog");
}

std::unique_ptr<StateScorer> NetworkEstimator::begin_search(const Query & query) const
{
    return std::make_unique<NetworkScorer>(*model_, *catalog_, query_context(query, *catalog_, estimated_));
}

double score_state(const ValueEstimator & estimator, const Query & query, const SearchState & state)
{
    return estimator.begin_search(query)->score(state).value;
}

/*======================================================================================================================
 * Beam search
 *====================================================================================================================*/

namespace {

struct BeamEntry
{
    double value;
    std::string tiebreak;
    std::uint64_t seq;
    SearchState state;

    bool operator<(const BeamEntry & o) const
    {
        return std::tie(value, tiebreak, seq) < std::tie(o.value, o.tiebreak, o.seq);
    }
};

class Beam
{
    public:
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    void push(BeamEntry e)
    {
        auto it = where_.find(e.state.key());
        if (it != where_.end()) {
            if (!(e < *it->second))
                return;
            entries_.erase(it->second);
            where_.erase(it);
        }
        std::string key = e.state.key();
        where_.emplace(std::move(key), entries_.insert(std::move(e)).first);
    }

    BeamEntry pop_front() { return take(entries_.begin()); }

    /// Removes and returns the entry with `key`, if present.
    std::optional<BeamEntry> take(const std::string & key)
    {
        auto it = where_.find(key);
        if (it == where_.end())
            return std::nullopt;
        return take(it->second);
    }

    void truncate(std::size_t width)
    {
        while (entries_.size() > width)
            take(std::prev(entries_.end()));
    }

    private:
    BeamEntry take(std::set<BeamEntry>::iterator it)
    {
        where_.erase(it->state.key());
        return std::move(entries_.extract(it).value());
    }

    std::set<BeamEntry> entries_;
    std::unordered_map<std::string, std::set<BeamEntry>::iterator> where_;
};

}

std::vector<Plan> top_k_plans(const Query & query, const Catalog & catalog, const NodeAnnotator & annotator,
                              const ValueEstimator & estimator, const BeamOptions & options, BeamStats * stats)
{
    if (options.beam_width < 1 || options.k < 1)
        throw InvalidArgument("top_k_plans needs beam width >= 1 and k >= 1");
    if (!(options.epsilon >= 0.0 && options.epsilon <= 1.0))
        throw InvalidArgument("exploration epsilon must lie in [0,1]");
    auto scorer = estimator.begin_search(query);
    BeamStats st;
    std::vector<Plan> out;
    std::unordered_set<std::string> closed;
    std::uint64_t seq = 0;
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    Beam beam;
    beam.push({ 0.0, {}, seq++, SearchState::initial(query) });
    std::optional<BeamEntry> forced;
    while (out.size() < options.k && (forced || !beam.empty())) {
        BeamEntry cur = forced ? std::move(*forced) : beam.pop_front();
        forced.reset();
        ++st.pops;
        closed.insert(cur.state.key());
        if (cur.state.is_terminal()) {
            out.push_back({ query.id(), cur.state.forest().front() });
            continue;
        }
        std::vector<BeamEntry> fresh;
        for (auto & next : expand(cur.state, query, catalog, annotator, options.operators)) {
            if (closed.contains(next.key()))
                continue;
            auto s = scorer->score(next);
            fresh.push_back({ s.value, std::move(s.tiebreak), seq++, std::move(next) });
        }
        std::optional<std::string> pick;
        if (options.epsilon > 0.0 && !fresh.empty() && coin(rng) < options.epsilon) {
            std::uniform_int_distribution<std::size_t> any(0, fresh.size() - 1);
            pick = fresh[any(rng)].state.key();
        }
        for (auto & e : fresh) {
            beam.push(std::move(e));
            ++st.pushes;
        }
        if (pick) {
            forced = beam.take(*pick);
            if (forced)
                ++st.random_steps;
        }
        beam.truncate(options.beam_width - (forced ? 1 : 0));
        st.max_beam = std::max(st.max_beam, beam.size() + (forced ? 1 : 0));
    }
    if (stats)
        *stats = st;
    return out;
}

/*======================================================================================================================
 * Plan pool
 *====================================================================================================================*/

bool PlanPool::append(ExecutedPlanRecord record)
{
    if (!index_.emplace(record.query_id, record.plan.key()).second)
        return false;
    records_.push_back(std::move(record));
    return true;
}

bool PlanPool::contains(const std::string & query_id, const std::string & plan_key) const
{
    return index_.contains({ query_id, plan_key });
}

void save_pool(const PlanPool & pool, const std::string & path)
{
    std::string text;
    for (const auto & r : pool.records())
        text += record_to_json(r) + "\n";
    detail::write_text_file(path, text);
}

namespace {

template<typename OnLine>
void for_each_line(const std::string & path, OnLine && on_line)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n)
        if (line.find_first_not_of(" \t\r") != std::string::npos)
            on_line(line, n);
}

}

PlanPool load_pool(const std::string & path, const Catalog & catalog)
{
    PlanPool pool;
    for_each_line(path, [&](const std::string & line, std::size_t n) {
        if (!pool.append(record_from_json(line, catalog, n)))
            throw SchemaError("duplicate (query, plan) pair in plan pool", n);
    });
    return pool;
}

/*======================================================================================================================
 * Best-seen table
 *====================================================================================================================*/

bool BestSeenTable::update(const std::string & query_id, const NodePtr & subplan, double latency)
{
    if (!(latency > 0.0) || !std::isfinite(latency))
        throw InvalidArgument("best-seen latency must be positive and finite");
    auto [it, created] = entries_.try_emplace({ query_id, subplan->key() }, Entry{ latency, subplan });
    if (created)
        return true;
    if (latency < it->second.latency) {
        it->second.latency = latency;
        return true;
    }
    return false;
}

void BestSeenTable::observe(const ExecutedPlanRecord & record)
{
    for (const auto & n : subplans(record.plan))
        update(record.query_id, n, record.latency);
}

const BestSeenTable::Entry * BestSeenTable::find(const std::string & query_id, const std::string & key) const
{
    auto it = entries_.find({ query_id, key });
    return it == entries_.end() ? nullptr : &it->second;
}

void save_best_seen(const BestSeenTable & table, const std::string & path)
{
    std::string text;
    for (const auto & [k, e] : table.entries()) {
        json j{ { "query_id", k.first }, { "key", k.second }, { "latency", e.latency },
                { "plan", detail::node_to_json(*e.subplan) } };
        text += j.dump() + "\n";
    }
    detail::write_text_file(path, text);
}

BestSeenTable load_best_seen(const std::string & path, const Catalog & catalog)
{
    BestSeenTable table;
    for_each_line(path, [&](const std::string & line, std::size_t n) {
        try {
            auto j = detail::parse_json(line, n);
            auto node = detail::node_from_json(field<json>(j, "plan"), catalog);
            if (node->key() != field<std::string>(j, "key"))
                throw SchemaError("best-seen key does not match its plan");
            table.update(field<std::string>(j, "query_id"), node, field<double>(j, "latency"));
        } catch (const SchemaError & e) {
            throw SchemaError(e.what(), e.line() ? e.line() : n);
        } catch (const Error & e) {
            throw SchemaError(e.what(), n);
        }
    });
    return table;
}

/*======================================================================================================================
 * Training loop
 *====================================================================================================================*/

std::vector<TrainingSample> value_samples(const BestSeenTable & table, const Catalog & catalog,
                                          std::span<const Query> queries, const ModelAnnotator & annotator,
                                          const NormalizationStats & stats)
{
    std::unordered_map<std::string, Eigen::VectorXd> contexts;
    for (const auto & q : queries)
        contexts.emplace(q.id(), query_context(q, catalog, annotator.model()));
    std::vector<TrainingSample> out;
    out.reserve(table.size());
    for (const auto & [k, e] : table.entries()) {
        auto ctx = contexts.find(k.first);
        if (ctx == contexts.end())
            continue;
        out.push_back({ featurize(*annotator.annotate(e.subplan), catalog, stats), ctx->second,
                        latency_to_label(e.latency) });
    }
    return out;
}

ValueTrainingResult train_value_network(const Catalog & catalog, std::span<const Query> queries,
                                        const ValueTrainingOptions & options, PlanPool & pool, BestSeenTable & table,
                                        const std::function<void(int, const PlanPool &)> & progress)
{
    if (queries.empty())
        throw InvalidArgument("train_value_network needs at least one training query");
    if (options.iterations < 1 || options.explore_width < 1)
        throw InvalidArgument("train_value_network needs iterations >= 1 and explore width >= 1");
    const ModelAnnotator annotator(catalog, options.estimated, options.constants);
    NetConfig net = options.net;
    net.loss = LossKind::SquaredError;

    ValueTrainingResult result;
    result.model = Model(net, node_feature_width(catalog.table_count()), context_width(catalog));

    std::vector<Plan> natives;
    std::vector<NodePtr> roots;
    for (const auto & q : queries) {
        natives.push_back(native_optimize(q, catalog, options.estimated, options.constants));
        roots.push_back(natives.back().root);
    }
    result.model.set_normalization(NormalizationStats::fit(roots));

    for (int it = 0; it != options.iterations; ++it) {
        const NetworkEstimator estimator(result.model, catalog, options.estimated);
        std::vector<std::vector<Plan>> generated(queries.size());
        parallel_for(queries.size(), [&](std::size_t i) {
            BeamOptions beam{ options.beam_width, static_cast<std::size_t>(options.explore_width), options.epsilon,
                              hash_combine(derive_seed(options.seed, "explore"),
                                           hash_combine(static_cast<std::uint64_t>(it), stable_hash(queries[i].id()))) };
            generated[i] = top_k_plans(queries[i], catalog, annotator, estimator, beam);
            if (it == 0)
                generated[i].insert(generated[i].begin(), natives[i]);
        });
        std::vector<std::vector<ExecutedPlanRecord>> executed(queries.size());
        parallel_for(queries.size(), [&](std::size_t i) {
            std::set<std::string> seen;
            for (const auto & p : generated[i]) {
                if (pool.contains(p.query_id, p.key()) || !seen.insert(p.key()).second)
                    continue;
                executed[i].push_back(execute(p, catalog, options.execution));
            }
        });
        for (auto & recs : executed) {
            for (auto & r : recs) {
                table.observe(r);
                if (pool.append(std::move(r)))
                    ++result.executed_plans;
            }
        }
        result.pool_size_per_iteration.push_back(pool.size());

        if (it == 0) {
            std::vector<NodePtr> pooled_roots;
            for (const auto & r : pool.records())
                pooled_roots.push_back(r.plan.root);
            result.model.set_normalization(NormalizationStats::fit(pooled_roots));
        }
        auto samples = value_samples(table, catalog, queries, annotator, result.model.normalization());
        NetConfig round = net;
        round.seed = hash_combine(net.seed, static_cast<std::uint64_t>(it));
        if (options.epochs_per_iteration > 0)
            round.epochs = options.epochs_per_iteration;
        result.model = train(std::move(result.model), samples, round);
        result.model.set_config(net);
        if (progress)
            progress(it, pool);
    }
    return result;
}

}
