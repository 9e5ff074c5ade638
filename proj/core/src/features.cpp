#include "delta/treenn.hpp"

#include <algorithm>
#include <cmath>

namespace delta {

NormalizationStats NormalizationStats::fit(std::span<const NodePtr> roots)
{
    NormalizationStats s;
    bool first = true;
    for (const auto & root : roots) {
        for (const auto & n : subplans(root)) {
            double c = std::log1p(n->est_cardinality());
            double k = std::log1p(n->est_cost());
            if (first) {
                s = { c, c, k, k };
                first = false;
            }
            s.card_min = std::min(s.card_min, c);
            s.card_max = std::max(s.card_max, c);
            s.cost_min = std::min(s.cost_min, k);
            s.cost_max = std::max(s.cost_max, k);
        }
    }
    return s;
}

namespace {

double min_max(double v, double lo, double hi)
{
    if (!(hi > lo))
        return v >= hi ? 1.0 : 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

}

double NormalizationStats::normalize_cardinality(double card) const
{
    return min_max(std::log1p(card), card_min, card_max);
}

double NormalizationStats::normalize_cost(double cost) const { return min_max(std::log1p(cost), cost_min, cost_max); }

FeatureTree FeatureTree::forest(std::span<const FeatureTree> trees)
{
    FeatureTree out;
    int width = trees.empty() ? 0 : trees.front().width();
    int total = 0;
    for (const auto & t : trees) {
        if (t.width() != width)
            throw InvalidArgument("forest trees have different feature widths");
        total += t.nodes();
    }
    out.features.resize(width, total);
    int offset = 0;
    for (const auto & t : trees) {
        out.features.middleCols(offset, t.nodes()) = t.features;
        for (int i = 0; i != t.nodes(); ++i) {
            out.left.push_back(t.left[i] < 0 ? -1 : t.left[i] + offset);
            out.right.push_back(t.right[i] < 0 ? -1 : t.right[i] + offset);
        }
        for (int r : t.roots)
            out.roots.push_back(r + offset);
        offset += t.nodes();
    }
    return out;
}

Eigen::VectorXd node_features(const PlanNode & node, const Catalog & catalog, const NormalizationStats & stats)
{
    const std::size_t tables = catalog.table_count();
    Eigen::VectorXd f = Eigen::VectorXd::Zero(node_feature_width(tables));
    f[rank(node.op())] = 1.0;
    f[kOperatorCount] = stats.normalize_cardinality(node.est_cardinality());
    f[kOperatorCount + 1] = stats.normalize_cost(node.est_cost());
    for (RelSet r = node.relations(); r; r &= r - 1) {
        TableId t = lowest(r);
        if (!catalog.has_table(t))
            throw InvalidArgument("featurize: unknown table id " + std::to_string(t));
        f[kOperatorCount + 2 + t] = 1.0;
    }
    return f;
}

namespace {

int featurize_into(const PlanNode & node, const Catalog & catalog, const NormalizationStats & stats,
                   FeatureTree & out, std::vector<Eigen::VectorXd> & columns)
{
    int l = -1, r = -1;
    if (!node.is_leaf()) {
        l = featurize_into(*node.left(), catalog, stats, out, columns);
        r = featurize_into(*node.right(), catalog, stats, out, columns);
    }
    columns.push_back(node_features(node, catalog, stats));
    out.left.push_back(l);
    out.right.push_back(r);
    return static_cast<int>(columns.size()) - 1;
}

}

FeatureTree featurize(const PlanNode & root, const Catalog & catalog, const NormalizationStats & stats)
{
    FeatureTree out;
    std::vector<Eigen::VectorXd> columns;
    columns.reserve(root.size());
    int r = featurize_into(root, catalog, stats, out, columns);
    out.roots.push_back(r);
    out.features.resize(node_feature_width(catalog.table_count()), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i != columns.size(); ++i)
        out.features.col(static_cast<Eigen::Index>(i)) = columns[i];
    return out;
}

Eigen::VectorXd query_context(const Query & query, const Catalog & catalog, const CardinalityModel & estimated)
{
    const std::size_t tables = catalog.table_count();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(context_width(catalog));
    for (RelSet r = query.relations(); r; r &= r - 1) {
        if (!catalog.has_table(lowest(r)))
            throw InvalidArgument("query context: query references a table outside the catalog");
        c[lowest(r)] = 1.0;
    }
    for (auto e : query.predicates()) {
        if (e >= catalog.edge_count())
            throw InvalidArgument("query context: predicate outside the catalog");
        c[static_cast<Eigen::Index>(tables + e)] = std::log10(estimated.selectivity(catalog.edges()[e]));
    }
    return c;
}

}
