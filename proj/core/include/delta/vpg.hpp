#pragma once

#include "delta/plan.hpp"
#include "delta/simdb.hpp"
#include "delta/treenn.hpp"

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace delta {

/*======================================================================================================================
 * Value estimators
 *====================================================================================================================*/

/** Estimated overall latency of a search state. Beam entries sort by (`value`, `tiebreak`, push order). */
struct StateScore
{
    double value = 0.0;
    std::string tiebreak;
};

/// Per-search scoring session; may cache per-node work, so one session serves one query on one thread.
class StateScorer
{
    public:
    virtual ~StateScorer() = default;
    virtual StateScore score(const SearchState & state) = 0;
};

/** V(Q, s): finite nonnegative estimate of the best latency reachable from a state. */
class ValueEstimator
{
    public:
    virtual ~ValueEstimator() = default;
    virtual std::unique_ptr<StateScorer> begin_search(const Query & query) const = 0;
};

/// Scores every state 0; ties fall back to canonical successor order.
class ConstantEstimator final : public ValueEstimator
{
    public:
    std::unique_ptr<StateScorer> begin_search(const Query & query) const override;
};

/** Exact oracle: the minimum true analytic cost over every completion containing the state's forest (zero-noise
 * latency). The tiebreak is the key of the smallest-key optimal completion, so the best entry always lies on the path
 * to the smallest-key optimal plan. Refuses queries above `max_relations`. */
class OracleEstimator final : public ValueEstimator
{
    public:
    OracleEstimator(const Catalog & catalog, CostConstants constants = {}, int max_relations = 6);
    std::unique_ptr<StateScorer> begin_search(const Query & query) const override;

    private:
    const Catalog * catalog_;
    CostConstants constants_;
    int max_relations_;
};

/** Network mode: encode each tree of the forest, max-pool the encodings, append the query context, apply the value
 * head; the value is the predicted latency clamped at 0, and the initial state scores 0. */
class NetworkEstimator final : public ValueEstimator
{
    public:
    NetworkEstimator(const Model & model, const Catalog & catalog, CardinalityModel estimated);
    std::unique_ptr<StateScorer> begin_search(const Query & query) const override;
    const Model & model() const { return *model_; }

    private:
    const Model * model_;
    const Catalog * catalog_;
    CardinalityModel estimated_;
};

/// Convenience: one-off score through a fresh session.
double score_state(const ValueEstimator & estimator, const Query & query, const SearchState & state);

/*======================================================================================================================
 * Beam search
 *====================================================================================================================*/

struct BeamOptions
{
    std::size_t beam_width = 20;
    std::size_t k = 10;
    double epsilon = 0.0;   ///< probability that a random fresh successor is popped next
    std::uint64_t seed = 0; ///< exploration stream
    std::span<const Operator> operators = kJoinOperators;
};

struct BeamStats
{
    std::size_t pops = 0;
    std::size_t pushes = 0;
    std::size_t max_beam = 0; ///< largest |B| observed after a push phase
    std::size_t random_steps = 0;
};

/** Top-k beam search: pop the best state, emit it if complete, else push its scored successors and truncate the
 * beam to `beam_width`. States reached twice are merged by key, keeping the better score; popped states are not
 * pushed again. Plans come back in emission order. `annotator` supplies the node estimates the scorer sees. */
std::vector<Plan> top_k_plans(const Query & query, const Catalog & catalog, const NodeAnnotator & annotator,
                              const ValueEstimator & estimator, const BeamOptions & options,
                              BeamStats * stats = nullptr);

/*======================================================================================================================
 * Plan pool and best-seen table
 *====================================================================================================================*/

/** Append-only store of executed plans, unique on (query, root key). */
class PlanPool
{
    public:
    /// False (and nothing stored) when the (query, plan) pair is already present.
    bool append(ExecutedPlanRecord record);
    bool contains(const std::string & query_id, const std::string & plan_key) const;
    const std::vector<ExecutedPlanRecord> & records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    private:
    std::vector<ExecutedPlanRecord> records_;
    std::set<std::pair<std::string, std::string>> index_;
};

void save_pool(const PlanPool & pool, const std::string & path);
PlanPool load_pool(const std::string & path, const Catalog & catalog);

/** Best overall latency seen per (query, subplan). Entries only ever decrease. */
class BestSeenTable
{
    public:
    struct Entry
    {
        double latency;
        NodePtr subplan;
    };
    using Key = std::pair<std::string, std::string>;

    /// min(existing, latency); returns true when the entry was created or lowered.
    bool update(const std::string & query_id, const NodePtr & subplan, double latency);
    /// Every subplan of the record gets the record's total latency.
    void observe(const ExecutedPlanRecord & record);
    const Entry * find(const std::string & query_id, const std::string & key) const;
    const std::map<Key, Entry> & entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    private:
    std::map<Key, Entry> entries_;
};

/// JSON-lines of {query_id, key, latency, plan}.
void save_best_seen(const BestSeenTable & table, const std::string & path);
BestSeenTable load_best_seen(const std::string & path, const Catalog & catalog);

/*======================================================================================================================
 * Value-network training loop
 *====================================================================================================================*/

struct ValueTrainingOptions
{
    int iterations = 15;
    int explore_width = 5;
    std::size_t beam_width = 20;
    double epsilon = 0.2;
    CardinalityModel estimated;
    CostConstants constants;
    ExecutionOptions execution;
    NetConfig net;
    int epochs_per_iteration = 0; ///< 0 keeps `net.epochs` every iteration
    std::uint64_t seed = 1;
};

struct ValueTrainingResult
{
    Model model;
    std::size_t executed_plans = 0;
    std::vector<std::size_t> pool_size_per_iteration;
};

/** Iteration 0 seeds each query with its native plan plus explored plans from the initial network; every iteration
 * executes the new unique plans, folds them into `pool` and `table`, and refits the value network on every table entry
 * (squared error on log1p(best latency)), warm-starting from the previous fit. */
ValueTrainingResult train_value_network(const Catalog & catalog, std::span<const Query> queries,
                                        const ValueTrainingOptions & options, PlanPool & pool, BestSeenTable & table,
                                        const std::function<void(int, const PlanPool &)> & progress = {});

/// One value-network sample per table entry: featurized subplan, query context, log1p(best latency).
std::vector<TrainingSample> value_samples(const BestSeenTable & table, const Catalog & catalog,
                                          std::span<const Query> queries, const ModelAnnotator & annotator,
                                          const NormalizationStats & stats);

}
