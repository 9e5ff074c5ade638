#pragma once

#include "delta/plan.hpp"

#include <map>
#include <string>
#include <vector>

namespace delta {

struct CostConstants
{
    double scan = 1.0;
    double build = 2.0;
    double probe = 1.0;
    double nested_loop = 0.01;
    double merge = 1.5;
};

enum class CardinalityMode { True, Estimated };

/** Selectivity source. The estimated mode multiplies each edge's true selectivity by a log-normal error factor that is
 * a pure function of (seed, edge endpoints); the result is clamped to 1. */
class CardinalityModel
{
    public:
    CardinalityModel() = default;

    static CardinalityModel truth() { return {}; }
    static CardinalityModel estimated(double error_log_sd, std::uint64_t seed);

    CardinalityMode mode() const { return mode_; }
    double error_log_sd() const { return error_log_sd_; }
    std::uint64_t seed() const { return seed_; }

    double error_factor(const JoinEdge & edge) const;
    double selectivity(const JoinEdge & edge) const;

    private:
    CardinalityMode mode_ = CardinalityMode::True;
    double error_log_sd_ = 0.0;
    std::uint64_t seed_ = 0;
};

/// Rows produced by joining all tables of `s` with every catalog edge inside `s` applied. Computed from the set
/// alone (tables ascending, then edges ascending), so every tree over `s` gets the bit-identical value.
double cardinality(RelSet s, const CardinalityModel & model, const Catalog & catalog);
double cardinality(const PlanNode & node, const CardinalityModel & model, const Catalog & catalog);

double scan_cost(double rows, const CostConstants & c);
double join_cost(Operator op, double left_rows, double right_rows, const CostConstants & c);

/// Recursive cost of the subtree with cardinalities from `model`.
double analytic_cost(const PlanNode & node, const CardinalityModel & model, const Catalog & catalog,
                     const CostConstants & constants = {});

/** Annotates nodes with cardinality and cost under one cardinality model. */
class ModelAnnotator final : public NodeAnnotator
{
    public:
    ModelAnnotator(const Catalog & catalog, CardinalityModel model, CostConstants constants = {});

    Annotation scan(TableId relation) const override;
    Annotation join(Operator op, const PlanNode & left, const PlanNode & right) const override;

    /// Rebuilds `root` bottom-up with this annotator's estimates.
    NodePtr annotate(const NodePtr & root) const;
    /// Same value as `delta::cardinality(s, model, catalog)`, from cached selectivities.
    double cardinality(RelSet s) const;
    const CardinalityModel & model() const { return model_; }
    const CostConstants & constants() const { return constants_; }

    private:
    const Catalog * catalog_;
    CardinalityModel model_;
    CostConstants constants_;
    std::vector<double> selectivities_;
};

/*======================================================================================================================
 * Execution
 *====================================================================================================================*/

/** One simulated execution. Node latencies are cumulative (a node's time includes its inputs), keyed by canonical
 * key; the root's entry equals `latency`. */
struct ExecutedPlanRecord
{
    std::string query_id;
    Plan plan;
    double latency = 0.0;
    std::map<std::string, double> node_latencies;
    std::uint64_t repetition = 0;
};

struct ExecutionOptions
{
    CostConstants constants;
    double noise_log_sd = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t repetition = 0;
};

/// Each node's latency is its true analytic cost times exp(N(0, sd^2)), the draw keyed by (seed, query id, node key,
/// repetition), then raised to the maximum of its children's latencies.
ExecutedPlanRecord execute(const Plan & plan, const Catalog & catalog, const ExecutionOptions & options);

/// Throws InvariantViolation unless the record satisfies the cumulative-timing invariants.
void validate_record(const ExecutedPlanRecord & record);

/*======================================================================================================================
 * Native optimizer
 *====================================================================================================================*/

/** Exact bushy DP over connected subsets minimizing analytic cost under `estimated`. Ties go to the smaller canonical
 * key. Returned nodes carry the estimated annotations. */
Plan native_optimize(const Query & query, const Catalog & catalog, const CardinalityModel & estimated,
                     const CostConstants & constants = {}, int max_relations = 12);

/*======================================================================================================================
 * Workloads
 *====================================================================================================================*/

struct CatalogSpec
{
    int tables = 10;
    double min_rows = 1e2;
    double max_rows = 1e6;
    int extra_edges = 4;           ///< edges added on top of a random spanning tree
    double min_selectivity = 1e-4;
    double max_selectivity = 0.5;
};

struct Workload
{
    Catalog catalog;
    std::vector<Query> queries;

    const Query & query(const std::string & id) const;
};

/// Random catalog only.
Catalog gen_catalog(const CatalogSpec & spec, std::uint64_t seed);
/// Random connected subgraph queries over an existing catalog; ids are `prefix` + zero-padded index.
std::vector<Query> gen_queries(const Catalog & catalog, int count, int min_relations, int max_relations,
                               std::uint64_t seed, const std::string & prefix = "q");
Workload gen_workload(const CatalogSpec & spec, int count, int min_relations, int max_relations, std::uint64_t seed);

/// Same schema with every selectivity multiplied by `factor` (clamped into (0,1]).
Catalog scale_selectivities(const Catalog & catalog, double factor);

std::string workload_to_json(const Workload & workload);
Workload workload_from_json(std::string_view text);
void save_workload(const Workload & workload, const std::string & path);
Workload load_workload(const std::string & path);

std::string record_to_json(const ExecutedPlanRecord & record);
ExecutedPlanRecord record_from_json(std::string_view line, const Catalog & catalog, std::size_t line_no = 0);

}
