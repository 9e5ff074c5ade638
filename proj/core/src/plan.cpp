#include "delta/plan.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>
#include <tuple>

namespace delta {

/*======================================================================================================================
 * Catalog
 *====================================================================================================================*/

Catalog::Catalog(std::vector<Table> tables, std::vector<JoinEdge> edges)
    : tables_(std::move(tables)), edges_(std::move(edges))
{
    if (tables_.size() > kMaxTables)
        throw InvariantViolation("catalog has " + std::to_string(tables_.size()) + " tables, limit is 64");
    for (std::size_t i = 0; i != tables_.size(); ++i) {
        if (tables_[i].id != i)
            throw InvariantViolation("table ids must be unique and dense 0..n-1; position " + std::to_string(i) +
                                     " holds id " + std::to_string(tables_[i].id));
        if (tables_[i].rows < 1)
            throw InvariantViolation("table " + std::to_string(i) + " has row-count 0");
    }
    adjacency_.assign(tables_.size(), 0);
    for (const auto & e : edges_) {
        if (!has_table(e.a) || !has_table(e.b))
            throw InvariantViolation("join edge references unknown table");
        if (e.a == e.b)
            throw InvariantViolation("self edge on table " + std::to_string(e.a));
        if (!(e.selectivity > 0.0 && e.selectivity <= 1.0))
            throw InvariantViolation("edge selectivity must lie in (0,1]");
        if (contains(adjacency_[e.a], e.b))
            throw InvariantViolation("duplicate edge between " + std::to_string(e.a) + " and " + std::to_string(e.b));
        adjacency_[e.a] |= singleton(e.b);
        adjacency_[e.b] |= singleton(e.a);
    }
}

std::optional<std::size_t> Catalog::find_edge(TableId a, TableId b) const
{
    for (std::size_t i = 0; i != edges_.size(); ++i) {
        const auto & e = edges_[i];
        if ((e.a == a && e.b == b) || (e.a == b && e.b == a))
            return i;
    }
    return std::nullopt;
}

RelSet Catalog::all_tables() const
{
    return tables_.size() == 64 ? ~RelSet{0} : (RelSet{1} << tables_.size()) - 1;
}

/*======================================================================================================================
 * Query
 *====================================================================================================================*/

Query::Query(std::string id, RelSet relations, std::vector<std::size_t> predicates, const Catalog & catalog)
    : id_(std::move(id)), relations_(relations), predicates_(std::move(predicates))
{
    if ((relations_ & ~catalog.all_tables()) != 0)
        throw InvariantViolation("query " + id_ + " references a table outside the catalog");
    if (cardinality_of(relations_) < 2)
        throw InvariantViolation("query " + id_ + " must join at least two relations");
    std::sort(predicates_.begin(), predicates_.end());
    if (std::adjacent_find(predicates_.begin(), predicates_.end()) != predicates_.end())
        throw InvariantViolation("query " + id_ + " lists a predicate twice");
    for (auto p : predicates_) {
        if (p >= catalog.edge_count())
            throw InvariantViolation("query " + id_ + " references unknown edge " + std::to_string(p));
        const auto & e = catalog.edges()[p];
        if (!contains(relations_, e.a) || !contains(relations_, e.b))
            throw InvariantViolation("query " + id_ + " predicate leaves its relation set");
        adjacency_[e.a] |= singleton(e.b);
        adjacency_[e.b] |= singleton(e.a);
    }
    if (!connected(relations_))
        throw InvariantViolation("query " + id_ + " join graph is not connected");
}

Query Query::induced(std::string id, RelSet relations, const Catalog & catalog)
{
    std::vector<std::size_t> preds;
    for (std::size_t i = 0; i != catalog.edge_count(); ++i) {
        const auto & e = catalog.edges()[i];
        if (contains(relations, e.a) && contains(relations, e.b))
            preds.push_back(i);
    }
    return Query(std::move(id), relations, std::move(preds), catalog);
}

bool Query::joinable(RelSet left, RelSet right) const
{
    for (RelSet s = left; s; s &= s - 1)
        if (adjacency_[lowest(s)] & right)
            return true;
    return false;
}

bool Query::connected(RelSet s) const
{
    if (s == 0)
        return false;
    RelSet seen = singleton(lowest(s));
    RelSet frontier = seen;
    while (frontier) {
        RelSet next = 0;
        for (RelSet f = frontier; f; f &= f - 1)
            next |= adjacency_[lowest(f)];
        next &= s & ~seen;
        seen |= next;
        frontier = next;
    }
    return seen == s;
}

/*======================================================================================================================
 * Operators and nodes
 *====================================================================================================================*/

std::string_view to_string(Operator op)
{
    switch (op) {
        case Operator::SeqScan: return "SeqScan";
        case Operator::HashJoin: return "HashJoin";
        case Operator::NestLoopJoin: return "NestLoopJoin";
        case Operator::MergeJoin: return "MergeJoin";
    }
    return "?";
}

Operator parse_operator(std::string_view name)
{
    for (auto op : { Operator::SeqScan, Operator::HashJoin, Operator::NestLoopJoin, Operator::MergeJoin })
        if (name == to_string(op))
            return op;
    throw InvalidArgument("unknown operator '" + std::string(name) + "'");
}

std::string scan_key(TableId relation)
{
    std::string key = R"({"children":[],"op":"SeqScan","rel":)";
    key += std::to_string(relation);
    key += '}';
    return key;
}

std::string join_key(Operator op, std::string_view left_key, std::string_view right_key)
{
    std::string key;
    key.reserve(left_key.size() + right_key.size() + 40);
    key += R"({"children":[)";
    key += left_key;
    key += ',';
    key += right_key;
    key += R"(],"op":")";
    key += to_string(op);
    key += "\"}";
    return key;
}

PlanNode::PlanNode(Private, Operator op, std::optional<TableId> rel, NodePtr left, NodePtr right,
                   Annotation annotation)
    : op_(op), relation_(rel), left_(std::move(left)), right_(std::move(right)), annotation_(annotation)
{
    if (op_ == Operator::SeqScan) {
        relations_ = singleton(*relation_);
        key_ = scan_key(*relation_);
        size_ = 1;
    } else {
        relations_ = left_->relations() | right_->relations();
        key_ = join_key(op_, left_->key(), right_->key());
        size_ = 1 + left_->size() + right_->size();
    }
}

NodePtr PlanNode::scan(TableId relation, Annotation annotation)
{
    if (relation >= kMaxTables)
        throw InvariantViolation("table id " + std::to_string(relation) + " out of range");
    return std::make_shared<const PlanNode>(Private{}, Operator::SeqScan, relation, nullptr, nullptr, annotation);
}

NodePtr PlanNode::join(Operator op, NodePtr left, NodePtr right, Annotation annotation)
{
    if (!is_join(op))
        throw InvariantViolation("join node needs a join operator");
    if (!left || !right)
        throw InvariantViolation("join node needs two children");
    if (!disjoint(left->relations(), right->relations()))
        throw InvariantViolation("join children overlap");
    return std::make_shared<const PlanNode>(Private{}, op, std::nullopt, std::move(left), std::move(right), annotation);
}

void validate_subplan(const PlanNode & node, const Query & query)
{
    if (node.is_leaf()) {
        if (!contains(query.relations(), *node.relation()))
            throw InvariantViolation("scan of table outside query " + query.id());
        return;
    }
    validate_subplan(*node.left(), query);
    validate_subplan(*node.right(), query);
    if (!query.joinable(node.left()->relations(), node.right()->relations()))
        throw InvariantViolation("cross product in plan for query " + query.id());
}

void validate_plan(const Plan & plan, const Query & query)
{
    if (!plan.root)
        throw InvariantViolation("empty plan");
    if (plan.query_id != query.id())
        throw InvariantViolation("plan is for query " + plan.query_id + ", not " + query.id());
    validate_subplan(*plan.root, query);
    if (plan.root->relations() != query.relations())
        throw InvariantViolation("plan does not cover query " + query.id());
    if (plan.root->size() != static_cast<std::size_t>(2 * query.size() - 1))
        throw InvariantViolation("plan scans a table twice");
}

std::vector<NodePtr> subplans(const NodePtr & root)
{
    std::vector<NodePtr> out;
    out.reserve(root->size());
    std::vector<NodePtr> stack{ root };
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        if (!n->is_leaf()) {
            stack.push_back(n->right());
            stack.push_back(n->left());
        }
        out.push_back(std::move(n));
    }
    return out;
}

std::vector<NodePtr> subplans(const Plan & plan) { return subplans(plan.root); }

/*======================================================================================================================
 * SearchState
 *====================================================================================================================*/

SearchState::SearchState(std::vector<NodePtr> forest, RelSet remaining)
    : forest_(std::move(forest)), remaining_(remaining)
{
    std::sort(forest_.begin(), forest_.end(), [](const NodePtr & a, const NodePtr & b) { return a->key() < b->key(); });
    key_ = "[";
    for (std::size_t i = 0; i != forest_.size(); ++i) {
        if (i)
            key_ += ',';
        key_ += forest_[i]->key();
    }
    key_ += "]#";
    char buf[24];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, remaining_, 16);
    key_.append(buf, end);
}

RelSet SearchState::built() const
{
    RelSet s = 0;
    for (const auto & t : forest_)
        s |= t->relations();
    return s;
}

void SearchState::validate(const Query & query) const
{
    RelSet seen = remaining_;
    if ((remaining_ & ~query.relations()) != 0)
        throw InvariantViolation("search state: remaining tables outside query " + query.id());
    for (const auto & t : forest_) {
        if (!disjoint(seen, t->relations()))
            throw InvariantViolation("search state: trees overlap or overlap remaining tables");
        validate_subplan(*t, query);
        seen |= t->relations();
    }
    if (seen != query.relations())
        throw InvariantViolation("search state does not partition query " + query.id());
}

std::vector<SearchState> expand(const SearchState & state, const Query & query, const Catalog & catalog)
{
    return expand(state, query, catalog, NullAnnotator{});
}

std::vector<SearchState> expand(const SearchState & state, const Query & query, const Catalog & catalog,
                                const NodeAnnotator & annotator, std::span<const Operator> operators)
{
    state.validate(query);
    if (state.is_terminal())
        return {};
    for (RelSet r = state.remaining(); r; r &= r - 1)
        if (!catalog.has_table(lowest(r)))
            throw InvariantViolation("search state references table outside the catalog");

    struct Successor
    {
        int rank;
        const std::string * left;
        const std::string * right;
        SearchState state;
    };
    static const std::string empty;
    std::vector<Successor> out;
    const auto & forest = state.forest();

    for (RelSet r = state.remaining(); r; r &= r - 1) {
        TableId t = lowest(r);
        auto leaf = PlanNode::scan(t, annotator.scan(t));
        auto trees = forest;
        trees.push_back(leaf);
        SearchState next(std::move(trees), state.remaining() & ~singleton(t));
        out.push_back({ rank(Operator::SeqScan), &leaf->key(), &empty, std::move(next) });
    }

    for (std::size_t i = 0; i != forest.size(); ++i) {
        for (std::size_t j = i + 1; j != forest.size(); ++j) {
            if (!query.joinable(forest[i]->relations(), forest[j]->relations()))
                continue;
            std::vector<NodePtr> rest;
            rest.reserve(forest.size() - 1);
            for (std::size_t m = 0; m != forest.size(); ++m)
                if (m != i && m != j)
                    rest.push_back(forest[m]);
            for (auto op : operators) {
                for (auto [l, r] : { std::pair{ i, j }, std::pair{ j, i } }) {
                    auto node = PlanNode::join(op, forest[l], forest[r], annotator.join(op, *forest[l], *forest[r]));
                    auto trees = rest;
                    trees.push_back(node);
                    out.push_back({ rank(op), &forest[l]->key(), &forest[r]->key(),
                                    SearchState(std::move(trees), state.remaining()) });
                }
            }
        }
    }

    std::sort(out.begin(), out.end(), [](const Successor & a, const Successor & b) {
        return std::tie(a.rank, *a.left, *a.right) < std::tie(b.rank, *b.left, *b.right);
    });
    std::vector<SearchState> states;
    states.reserve(out.size());
    for (auto & s : out)
        states.push_back(std::move(s.state));
    return states;
}

/*======================================================================================================================
 * Exhaustive enumeration
 *====================================================================================================================*/

namespace {

/// Visits the connected subsets of `query` in ascending popcount order, then every ordered connected split.
template<typename OnLeaf, typename OnSplit>
void for_each_connected_split(const Query & query, OnLeaf && on_leaf, OnSplit && on_split)
{
    const RelSet all = query.relations();
    std::vector<RelSet> subsets;
    for (RelSet s = all; s; s = (s - 1) & all)
        if (query.connected(s))
            subsets.push_back(s);
    std::sort(subsets.begin(), subsets.end(), [](RelSet a, RelSet b) {
        return std::pair(cardinality_of(a), a) < std::pair(cardinality_of(b), b);
    });
    for (RelSet s : subsets) {
        if (cardinality_of(s) == 1) {
            on_leaf(s);
            continue;
        }
        for (RelSet l = (s - 1) & s; l; l = (l - 1) & s) {
            RelSet r = s & ~l;
            if (query.connected(l) && query.connected(r) && query.joinable(l, r))
                on_split(s, l, r);
        }
    }
}

}

double count_plans(const Query & query, std::span<const Operator> operators)
{
    std::map<RelSet, double> count;
    const double ops = static_cast<double>(operators.size());
    for_each_connected_split(
        query, [&](RelSet s) { count[s] = 1.0; },
        [&](RelSet s, RelSet l, RelSet r) { count[s] += ops * count[l] * count[r]; });
    return count[query.relations()];
}

std::vector<Plan> enumerate_all(const Query & query, const Catalog & catalog, std::span<const Operator> operators)
{
    return enumerate_all(query, catalog, operators, NullAnnotator{});
}

std::vector<Plan> enumerate_all(const Query & query, const Catalog & catalog, std::span<const Operator> operators,
                                const NodeAnnotator & annotator, EnumerationLimits limits)
{
    const double estimate = count_plans(query, operators);
    if (query.size() > limits.max_relations || estimate > static_cast<double>(limits.max_plans)) {
        std::ostringstream msg;
        msg << "enumerate_all refused for query " << query.id() << ": " << query.size() << " relations, "
            << estimate << " plans (limits: " << limits.max_relations << " relations, " << limits.max_plans
            << " plans)";
        throw BoundExceeded(msg.str());
    }
    for (RelSet r = query.relations(); r; r &= r - 1)
        if (!catalog.has_table(lowest(r)))
            throw InvariantViolation("query references table outside the catalog");

    std::map<RelSet, std::vector<NodePtr>> trees;
    for_each_connected_split(
        query,
        [&](RelSet s) { trees[s].push_back(PlanNode::scan(lowest(s), annotator.scan(lowest(s)))); },
        [&](RelSet s, RelSet l, RelSet r) {
            auto & out = trees[s];
            const auto & ls = trees[l];
            const auto & rs = trees[r];
            for (auto op : operators)
                for (const auto & a : ls)
                    for (const auto & b : rs)
                        out.push_back(PlanNode::join(op, a, b, annotator.join(op, *a, *b)));
        });

    auto & roots = trees[query.relations()];
    std::sort(roots.begin(), roots.end(), [](const NodePtr & a, const NodePtr & b) { return a->key() < b->key(); });
    std::vector<Plan> plans;
    plans.reserve(roots.size());
    for (auto & r : roots)
        plans.push_back({ query.id(), r });
    return plans;
}

}
