#include "delta/cps.hpp"

#include "json_internal.hpp"

#include <cstdio>
#include <set>

namespace delta {

std::string label_bucket(double latency)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", latency);
    return buf;
}

std::vector<AugmentedSample> augment(std::span<const ExecutedPlanRecord> records, bool deduplicate)
{
    std::vector<AugmentedSample> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto & r : records) {
        for (const auto & n : subplans(r.plan)) {
            auto it = r.node_latencies.find(n->key());
            if (it == r.node_latencies.end())
                throw InvariantViolation("record of query " + r.query_id + " lacks a node latency");
            if (deduplicate && !seen.emplace(n->key(), label_bucket(it->second)).second)
                continue;
            out.push_back({ n, it->second, r.query_id, r.plan.key() });
        }
    }
    return out;
}

std::vector<AugmentedSample> root_samples(std::span<const ExecutedPlanRecord> records)
{
    std::vector<AugmentedSample> out;
    for (const auto & r : records)
        out.push_back({ r.plan.root, r.latency, r.query_id, r.plan.key() });
    return out;
}

std::vector<TrainingSample> cost_training_samples(std::span<const AugmentedSample> samples, const Catalog & catalog,
                                                  const ModelAnnotator & annotator, const NormalizationStats & stats)
{
    std::vector<TrainingSample> out;
    out.reserve(samples.size());
    for (const auto & s : samples)
        out.push_back({ featurize(*annotator.annotate(s.subplan), catalog, stats), {}, latency_to_label(s.latency) });
    return out;
}

Model train_cost_model(std::span<const AugmentedSample> samples, const Catalog & catalog,
                       const ModelAnnotator & annotator, const NetConfig & config, TrainingReport * report)
{
    if (samples.size() < 10)
        throw InvalidArgument("train_cost_model needs at least 10 samples, got " + std::to_string(samples.size()));
    std::vector<NodePtr> roots;
    roots.reserve(samples.size());
    for (const auto & s : samples)
        roots.push_back(annotator.annotate(s.subplan));
    Model model(config, node_feature_width(catalog.table_count()), 0);
    model.set_normalization(NormalizationStats::fit(roots));
    auto data = cost_training_samples(samples, catalog, annotator, model.normalization());
    return train(std::move(model), data, config, report);
}

double predict_label(const Model & model, const Plan & plan, const Catalog & catalog, const ModelAnnotator & annotator)
{
    return model.forward(featurize(*annotator.annotate(plan.root), catalog, model.normalization())).mean;
}

std::size_t select_best_index(std::span<const Plan> candidates, const std::function<double(const Plan &)> & predict)
{
    if (candidates.empty())
        throw InvalidArgument("select_best needs at least one candidate");
    std::size_t best = 0;
    double best_value = predict(candidates[0]);
    for (std::size_t i = 1; i != candidates.size(); ++i) {
        double v = predict(candidates[i]);
        if (v < best_value) {
            best = i;
            best_value = v;
        }
    }
    return best;
}

Plan select_best(std::span<const Plan> candidates, const std::function<double(const Plan &)> & predict)
{
    return candidates[select_best_index(candidates, predict)];
}

Plan select_best(std::span<const Plan> candidates, const Model & model, const Catalog & catalog,
                 const ModelAnnotator & annotator)
{
    return select_best(candidates, [&](const Plan & p) { return predict_label(model, p, catalog, annotator); });
}

void save_samples(std::span<const AugmentedSample> samples, const std::string & path)
{
    std::string text;
    for (const auto & s : samples) {
        detail::json j{ { "query_id", s.query_id }, { "root_key", s.root_key }, { "node_key", s.node_key() },
                        { "latency", s.latency } };
        text += j.dump() + "\n";
    }
    detail::write_text_file(path, text);
}

}
