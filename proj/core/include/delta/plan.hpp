#pragma once

#include "delta/common.hpp"

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace delta {

/*======================================================================================================================
 * Catalog and queries
 *====================================================================================================================*/

struct Table
{
    TableId id;
    std::uint64_t rows;
};

struct JoinEdge
{
    TableId a;
    TableId b;
    double selectivity; ///< true selectivity in (0, 1]
};

/** Synthetic schema: dense table ids `0 .. n-1` with row counts, and undirected join edges with true selectivities. */
class Catalog
{
    public:
    Catalog() = default;
    Catalog(std::vector<Table> tables, std::vector<JoinEdge> edges);

    const std::vector<Table> & tables() const { return tables_; }
    const std::vector<JoinEdge> & edges() const { return edges_; }
    std::size_t table_count() const { return tables_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    bool has_table(TableId t) const { return t < tables_.size(); }
    std::uint64_t rows(TableId t) const { return tables_.at(t).rows; }

    /// Index of the edge joining `a` and `b` (either order).
    std::optional<std::size_t> find_edge(TableId a, TableId b) const;
    /// Tables adjacent to `t` over any catalog edge.
    RelSet neighbors(TableId t) const { return adjacency_.at(t); }
    RelSet all_tables() const;

    private:
    std::vector<Table> tables_;
    std::vector<JoinEdge> edges_;
    std::vector<RelSet> adjacency_;
};

/** A join query: relation set plus the catalog edges it uses as predicates. */
class Query
{
    public:
    Query() = default;
    Query(std::string id, RelSet relations, std::vector<std::size_t> predicates, const Catalog & catalog);

    /// Query over `relations` whose predicates are all catalog edges induced by the set.
    static Query induced(std::string id, RelSet relations, const Catalog & catalog);

    const std::string & id() const { return id_; }
    RelSet relations() const { return relations_; }
    int size() const { return cardinality_of(relations_); }
    /// Catalog edge indices, ascending.
    const std::vector<std::size_t> & predicates() const { return predicates_; }
    /// Tables of the query adjacent to `t` via a predicate.
    RelSet neighbors(TableId t) const { return adjacency_[t]; }
    /// True iff some predicate crosses between the two (disjoint) sets.
    bool joinable(RelSet left, RelSet right) const;
    /// True iff the predicate graph restricted to `s` is connected (and `s` is nonempty).
    bool connected(RelSet s) const;

    private:
    std::string id_;
    RelSet relations_ = 0;
    std::vector<std::size_t> predicates_;
    std::array<RelSet, kMaxTables> adjacency_{};
};

/*======================================================================================================================
 * Plan trees
 *====================================================================================================================*/

enum class Operator : std::uint8_t { SeqScan = 0, HashJoin = 1, NestLoopJoin = 2, MergeJoin = 3 };

inline constexpr std::size_t kOperatorCount = 4;
inline constexpr std::array<Operator, 3> kJoinOperators{ Operator::HashJoin, Operator::NestLoopJoin, Operator::MergeJoin };

std::string_view to_string(Operator op);
Operator parse_operator(std::string_view name);
constexpr int rank(Operator op) { return static_cast<int>(op); }
constexpr bool is_join(Operator op) { return op != Operator::SeqScan; }

struct Annotation
{
    double cardinality = 0.0;
    double cost = 0.0;
};

class PlanNode;
using NodePtr = std::shared_ptr<const PlanNode>;

/** Immutable plan-tree node. Subtrees are shared between plans and search states.
 *
 * The canonical key is computed at construction: the compact JSON of the structural fields (`children`, `op`, `rel`)
 * with keys in sorted order. Estimates are excluded, so structurally identical subplans share a key no matter who
 * annotated them. */
class PlanNode
{
    struct Private { };

    public:
    PlanNode(Private, Operator op, std::optional<TableId> rel, NodePtr left, NodePtr right, Annotation annotation);

    static NodePtr scan(TableId relation, Annotation annotation = {});
    static NodePtr join(Operator op, NodePtr left, NodePtr right, Annotation annotation = {});

    Operator op() const { return op_; }
    bool is_leaf() const { return op_ == Operator::SeqScan; }
    std::optional<TableId> relation() const { return relation_; }
    const NodePtr & left() const { return left_; }
    const NodePtr & right() const { return right_; }
    RelSet relations() const { return relations_; }
    double est_cardinality() const { return annotation_.cardinality; }
    double est_cost() const { return annotation_.cost; }
    const Annotation & annotation() const { return annotation_; }
    const std::string & key() const { return key_; }
    /// Number of nodes in the subtree.
    std::size_t size() const { return size_; }

    private:
    Operator op_;
    std::optional<TableId> relation_;
    NodePtr left_;
    NodePtr right_;
    RelSet relations_;
    Annotation annotation_;
    std::string key_;
    std::size_t size_;
};

/// Canonical key of a scan / join built from child keys, without materializing the node.
std::string scan_key(TableId relation);
std::string join_key(Operator op, std::string_view left_key, std::string_view right_key);

/** Supplies estimates for freshly built nodes; children are already annotated. */
class NodeAnnotator
{
    public:
    virtual ~NodeAnnotator() = default;
    virtual Annotation scan(TableId relation) const = 0;
    virtual Annotation join(Operator op, const PlanNode & left, const PlanNode & right) const = 0;
};

/// Leaves every estimate at zero.
class NullAnnotator final : public NodeAnnotator
{
    public:
    Annotation scan(TableId) const override { return {}; }
    Annotation join(Operator, const PlanNode &, const PlanNode &) const override { return {}; }
};

struct Plan
{
    std::string query_id;
    NodePtr root;

    const std::string & key() const { return root->key(); }
};

/// Throws InvariantViolation unless `plan` covers the query's relations exactly once and never joins unconnected
/// subtrees.
void validate_plan(const Plan & plan, const Query & query);
/// Structural checks of a (sub)tree against a query: disjoint children, leaf relations, connected joins.
void validate_subplan(const PlanNode & node, const Query & query);

/// Every node in pre-order (root first); each node roots one subplan.
std::vector<NodePtr> subplans(const Plan & plan);
std::vector<NodePtr> subplans(const NodePtr & root);

/*======================================================================================================================
 * Search states
 *====================================================================================================================*/

/** Partial plan: a forest of disjoint trees plus the tables not yet scanned. The forest is kept sorted by key, so
 * equal states compare and hash equal regardless of how they were reached. */
class SearchState
{
    public:
    SearchState() = default;
    SearchState(std::vector<NodePtr> forest, RelSet remaining);

    static SearchState initial(const Query & query) { return SearchState({}, query.relations()); }

    const std::vector<NodePtr> & forest() const { return forest_; }
    RelSet remaining() const { return remaining_; }
    RelSet built() const;
    bool is_initial() const { return forest_.empty(); }
    bool is_terminal() const { return forest_.size() == 1 && remaining_ == 0; }
    /// Canonical key of the whole state (forest keys + remaining set).
    const std::string & key() const { return key_; }

    /// Throws InvariantViolation unless trees and `remaining` partition the query's relations.
    void validate(const Query & query) const;

    private:
    std::vector<NodePtr> forest_;
    RelSet remaining_ = 0;
    std::string key_;
};

/** Every legal successor of `state`: a SeqScan of each remaining table, and every join of two predicate-connected
 * trees, once per join operator in `operators` and per orientation. Ordered by (operator rank, key of the left/only
 * input, key of the right input). Terminal states have no successors. */
std::vector<SearchState> expand(const SearchState & state, const Query & query, const Catalog & catalog,
                                const NodeAnnotator & annotator,
                                std::span<const Operator> operators = kJoinOperators);
std::vector<SearchState> expand(const SearchState & state, const Query & query, const Catalog & catalog);

struct EnumerationLimits
{
    int max_relations = 7;
    std::uint64_t max_plans = 5'000'000;
};

/// Number of complete plans `enumerate_all` would produce (fits in a double for any n <= 64).
double count_plans(const Query & query, std::span<const Operator> operators);

/** Every complete join-connected plan over the query using `operators`, each exactly once, sorted by key. Test
 * oracle only; refuses with a size estimate beyond `limits`. */
std::vector<Plan> enumerate_all(const Query & query, const Catalog & catalog, std::span<const Operator> operators,
                                const NodeAnnotator & annotator, EnumerationLimits limits = {});
std::vector<Plan> enumerate_all(const Query & query, const Catalog & catalog,
                                std::span<const Operator> operators = kJoinOperators);

/*======================================================================================================================
 * Serialization
 *====================================================================================================================*/

/// `{card, children:[...], cost, op, rel?}` with sorted keys, compact.
std::string plan_to_json(const PlanNode & node);
/// Parses the form written by `plan_to_json`; validates table ids against the catalog.
NodePtr plan_from_json(std::string_view text, const Catalog & catalog);

}
