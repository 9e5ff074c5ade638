#pragma once

#include "delta/cps.hpp"
#include "delta/cqd.hpp"
#include "delta/metrics.hpp"
#include "delta/simdb.hpp"
#include "delta/treenn.hpp"
#include "delta/vpg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace delta {

struct Ablations
{
    bool no_cps = false;   ///< emit the stage-I top-1 plan
    bool no_cqd = false;   ///< never route to the native optimizer
    bool no_da = false;    ///< train the cost model on whole plans only
    bool mse_loss = false; ///< train the cost model with squared error
};

/** Everything a reproducible experiment needs. Every random stream derives from `seed` by a fixed label. */
struct ExperimentConfig
{
    std::string workload_path = "workload.json";
    std::string pool_path = "pool.jsonl";
    std::string best_seen_path = "best_seen.jsonl";
    std::string value_model_path = "value_model.json";
    std::string cost_model_path = "cost_model.json";
    std::string detector_path = "detector.json";
    std::string results_path = "results.json";

    std::uint64_t seed = 1;
    CatalogSpec catalog;
    int train_queries = 100;
    int test_queries = 25;
    int min_relations = 4;
    int max_relations = 7;

    CostConstants constants;
    double error_log_sd = 1.0;
    double noise_log_sd = 0.1;

    int k = 10;
    std::size_t beam = 20;
    double gamma = 500.0;
    std::optional<double> gamma_quantile; ///< overrides `gamma` when set

    int iterations = 15;
    int explore_width = 5;
    double epsilon = 0.2;
    int value_epochs_per_iteration = 0;
    NetConfig value_net;
    NetConfig cost_net;

    Ablations ablate;
    std::vector<int> k_sweep{ 1, 2, 5, 10 };
    std::vector<double> gamma_sweep;

    CardinalityModel estimator() const;
    ExecutionOptions execution() const;
};

ExperimentConfig config_from_json(std::string_view text);
std::string config_to_json(const ExperimentConfig & config);
ExperimentConfig load_config(const std::string & path);

/// Catalog plus train and test queries for a config (ids `train####` / `test####`).
struct BenchWorkload
{
    Catalog catalog;
    std::vector<Query> train;
    std::vector<Query> test;
};
BenchWorkload make_bench_workload(const ExperimentConfig & config);

/// Detector rows of a query set: `encode_query` of each query with its native plan.
std::vector<Eigen::VectorXd> detector_rows(std::span<const Query> queries, const Catalog & catalog,
                                           const ExperimentConfig & config, const NormalizationStats & stats);
/// Fits the detector on `queries` and resolves gamma (quantile of the training distances when requested).
DetectorModel fit_query_detector(std::span<const Query> queries, const Catalog & catalog,
                                 const ExperimentConfig & config);

/*======================================================================================================================
 * Results
 *====================================================================================================================*/

struct BenchRow
{
    std::string query_id;
    int relations = 0;
    double native = 0.0;               ///< true latency of P0
    double top1 = 0.0;                 ///< true latency of the stage-I first plan
    double selected = 0.0;             ///< true latency of the emitted plan
    std::vector<double> candidates;    ///< true latencies of the top-k, in rank order
    std::vector<double> predicted;     ///< stage-II predicted labels of the candidates
    double distance = 0.0;
    bool accepted = true;
    bool compatible = true;
};

struct Aggregate
{
    double wrl = 0.0;
    double gmrl = 0.0;
    double speedup = 0.0;
};

struct SweepPoint
{
    double parameter;
    Aggregate delta;
};

struct BenchResults
{
    std::uint64_t seed = 0;
    int k = 0;
    std::size_t beam = 0;
    double gamma = 0.0;
    Ablations ablate;
    std::vector<BenchRow> rows; ///< sorted by query id
    std::size_t train_queries = 0;
    std::size_t executed_plans = 0;
    std::size_t cost_samples = 0;
    std::vector<SweepPoint> k_sweep;
    std::vector<SweepPoint> gamma_sweep;

    Aggregate delta() const;
    Aggregate top1() const;
    /// Mean over rows of R(P*), R(P^) and eta.
    CandidateQuality mean_quality() const;
    Confusion detector_confusion() const;
};

/// Selected-plan latencies under a decision rule: gate at `gamma`, first `k` candidates.
Aggregate aggregate_rows(std::span<const BenchRow> rows, std::size_t k, double gamma, const Ablations & ablate);

std::string results_to_json(const BenchResults & results);
std::string results_to_csv(const BenchResults & results);
BenchResults results_from_json(std::string_view text);
BenchResults load_results(const std::string & path);
/// Human-readable summary with k-sweep and gamma-sweep tables.
std::string format_report(const BenchResults & results);

/*======================================================================================================================
 * Pipeline
 *====================================================================================================================*/

struct TrainedSystem
{
    Model value_model;
    Model cost_model;
    DetectorModel detector;
    PlanPool pool;
    BestSeenTable best_seen;
    std::size_t executed_plans = 0;
    std::size_t cost_samples = 0;
};

/// Stage-I training, stage-II training and detector fitting on the training queries.
TrainedSystem train_system(const BenchWorkload & workload, const ExperimentConfig & config,
                           const std::function<void(const std::string &)> & log = {});

/// Samples for the stage-II model under the config's ablations.
std::vector<AugmentedSample> cost_samples(const PlanPool & pool, const ExperimentConfig & config);
NetConfig cost_net_config(const ExperimentConfig & config);

/// Delta on each test query: gate, top-k, select; with true-latency bookkeeping for every variant.
BenchResults evaluate(const BenchWorkload & workload, const TrainedSystem & system, const ExperimentConfig & config);

/// Full seeded benchmark: workload, training, evaluation.
BenchResults run_bench(const ExperimentConfig & config, const std::function<void(const std::string &)> & log = {});

/// Zero-noise true latency used for evaluation.
double true_latency(const Plan & plan, const Catalog & catalog, const CostConstants & constants);

}
