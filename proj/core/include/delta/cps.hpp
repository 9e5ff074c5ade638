#pragma once

#include "delta/simdb.hpp"
#include "delta/treenn.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace delta {

/** One training sample per executed plan node: the subplan and its recorded node latency. */
struct AugmentedSample
{
    NodePtr subplan;
    double latency;
    std::string query_id;
    std::string root_key;

    const std::string & node_key() const { return subplan->key(); }
};

/// Label bucket used for deduplication: the latency rounded to 3 significant digits, as text.
std::string label_bucket(double latency);

/** Every node of every record with its node latency, in record then pre-order. With `deduplicate`, a (node key,
 * label bucket) pair is kept once. */
std::vector<AugmentedSample> augment(std::span<const ExecutedPlanRecord> records, bool deduplicate = true);
/// Only each record's root (augmentation disabled).
std::vector<AugmentedSample> root_samples(std::span<const ExecutedPlanRecord> records);

/// Featurizes samples for the cost model: estimated annotations from `annotator`, no query context.
std::vector<TrainingSample> cost_training_samples(std::span<const AugmentedSample> samples, const Catalog & catalog,
                                                  const ModelAnnotator & annotator, const NormalizationStats & stats);

/** Trains the stage-II cost model M: P -> (latency, noise) with `config.loss` (heteroscedastic unless ablated).
 * Normalization statistics are fitted on the samples' subplans. Needs at least 10 samples. */
Model train_cost_model(std::span<const AugmentedSample> samples, const Catalog & catalog,
                       const ModelAnnotator & annotator, const NetConfig & config, TrainingReport * report = nullptr);

/// Predicted latency-label of a complete plan under the cost model.
double predict_label(const Model & model, const Plan & plan, const Catalog & catalog, const ModelAnnotator & annotator);

/// Index of the lowest predicted label; ties go to the earlier candidate.
std::size_t select_best_index(std::span<const Plan> candidates, const std::function<double(const Plan &)> & predict);
Plan select_best(std::span<const Plan> candidates, const std::function<double(const Plan &)> & predict);
Plan select_best(std::span<const Plan> candidates, const Model & model, const Catalog & catalog,
                 const ModelAnnotator & annotator);

/// JSON-lines audit dump: {query_id, root_key, node_key, latency}.
void save_samples(std::span<const AugmentedSample> samples, const std::string & path);

}
