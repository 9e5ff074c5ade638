#include "delta/cqd.hpp"

#include "json_internal.hpp"

#include <algorithm>
#include <cmath>

namespace delta {

using detail::field;
using detail::json;

Eigen::VectorXd encode_query(const Query & query, const Catalog & catalog, const Plan & native,
                             const ModelAnnotator & estimated, const NormalizationStats & stats)
{
    if (native.query_id != query.id())
        throw InvalidArgument("encode_query: plan belongs to " + native.query_id + ", not " + query.id());
    validate_plan(native, query);
    auto tree = featurize(*estimated.annotate(native.root), catalog, stats);
    Eigen::VectorXd ctx = query_context(query, catalog, estimated.model());
    Eigen::VectorXd x(tree.width() + ctx.size());
    x.head(tree.width()) = tree.features.rowwise().maxCoeff();
    x.tail(ctx.size()) = ctx;
    return x;
}

DetectorModel DetectorModel::from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance, double epsilon,
                                          double gamma)
{
    if (mean.size() == 0 || covariance.rows() != mean.size() || covariance.cols() != mean.size())
        throw InvalidArgument("detector moments have inconsistent widths");
    if (!(epsilon >= 0.0) || !(gamma >= 0.0))
        throw InvalidArgument("detector epsilon and gamma must be nonnegative");
    DetectorModel m;
    m.mean = std::move(mean);
    m.covariance = (covariance + covariance.transpose()) / 2.0;
    m.epsilon = epsilon;
    m.gamma = gamma;
    Eigen::LLT<Eigen::MatrixXd> llt(m.regularized());
    if (llt.info() != Eigen::Success)
        throw InvalidArgument("regularized covariance is not positive definite");
    m.inverse = llt.solve(Eigen::MatrixXd::Identity(m.width(), m.width()));
    m.inverse = (m.inverse + m.inverse.transpose()) / 2.0;
    return m;
}

Eigen::MatrixXd DetectorModel::regularized() const
{
    const double d = static_cast<double>(width());
    const double trace = covariance.trace();
    const double scale = trace > 0.0 ? trace / d : 1.0;
    return covariance + epsilon * scale * Eigen::MatrixXd::Identity(width(), width());
}

DetectorModel fit_detector(std::span<const Eigen::VectorXd> rows, double gamma, double epsilon)
{
    if (rows.size() < 2)
        throw InvalidArgument("fit_detector needs at least 2 rows, got " + std::to_string(rows.size()));
    const auto d = rows.front().size();
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i != rows.size(); ++i) {
        if (rows[i].size() != d)
            throw InvalidArgument("fit_detector rows have different widths");
        X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    Eigen::VectorXd mean = X.colwise().mean().transpose();
    Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.size() - 1);
    return DetectorModel::from_moments(std::move(mean), std::move(cov), epsilon, gamma);
}

double distance(const DetectorModel & model, const Eigen::VectorXd & x)
{
    if (x.size() != model.width())
        throw InvalidArgument("detector width " + std::to_string(model.width()) + " does not match encoding width " +
                              std::to_string(x.size()));
    Eigen::VectorXd d = x - model.mean;
    return std::sqrt(std::max(0.0, d.dot(model.inverse * d)));
}

GateDecision gate(const DetectorModel & model, const Eigen::VectorXd & x)
{
    return distance(model, x) <= model.gamma ? GateDecision::Accept : GateDecision::Reject;
}

GateDecision gate(const DetectorModel & model, const Query & query, const Catalog & catalog, const Plan & native,
                  const ModelAnnotator & estimated)
{
    return gate(model, encode_query(query, catalog, native, estimated, model.stats));
}

double sorted_quantile(std::span<const double> sorted, double q)
{
    if (sorted.empty())
        throw InvalidArgument("quantile of an empty set");
    if (!(q >= 0.0 && q <= 1.0))
        throw InvalidArgument("quantile must lie in [0,1]");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double distance_quantile(const DetectorModel & model, std::span<const Eigen::VectorXd> rows, double q)
{
    std::vector<double> d;
    d.reserve(rows.size());
    for (const auto & r : rows)
        d.push_back(distance(model, r));
    std::sort(d.begin(), d.end());
    return sorted_quantile(d, q);
}

Confusion confusion(std::span<const GateDecision> decisions, const std::vector<bool> & compatible)
{
    if (decisions.size() != compatible.size())
        throw InvalidArgument("confusion: decisions and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i != decisions.size(); ++i) {
        bool accept = decisions[i] == GateDecision::Accept;
        if (compatible[i])
            ++(accept ? c.accepted_compatible : c.rejected_compatible);
        else
            ++(accept ? c.accepted_incompatible : c.rejected_incompatible);
    }
    if (std::size_t n = c.accepted_compatible + c.rejected_compatible)
        c.recall = static_cast<double>(c.accepted_compatible) / static_cast<double>(n);
    if (std::size_t n = c.accepted_incompatible + c.rejected_incompatible)
        c.specificity = static_cast<double>(c.rejected_incompatible) / static_cast<double>(n);
    return c;
}

namespace {

constexpr const char * kFormat = "delta-cqd-detector";
constexpr int kVersion = 1;

}

std::string detector_to_json(const DetectorModel & m)
{
    std::vector<double> mean(m.mean.data(), m.mean.data() + m.mean.size());
    std::vector<std::vector<double>> cov;
    for (Eigen::Index r = 0; r != m.covariance.rows(); ++r) {
        const Eigen::VectorXd row = m.covariance.row(r).transpose();
        cov.emplace_back(row.data(), row.data() + row.size());
    }
    json j{ { "format", kFormat },
            { "version", kVersion },
            { "feature_width", m.width() },
            { "mean", mean },
            { "covariance", cov },
            { "epsilon", m.epsilon },
            { "gamma", detail::threshold_json(m.gamma) },
            { "normalization",
              { { "card_min", m.stats.card_min },
                { "card_max", m.stats.card_max },
                { "cost_min", m.stats.cost_min },
                { "cost_max", m.stats.cost_max } } },
            { "training_distances", m.training_distances } };
    return j.dump() + "\n";
}

DetectorModel detector_from_json(std::string_view text)
{
    auto j = detail::parse_json(text);
    if (!j.is_object() || j.value("format", std::string{}) != kFormat)
        throw SchemaError("not a delta detector checkpoint");
    if (field<int>(j, "version") != kVersion)
        throw SchemaError("unsupported detector version");
    const int d = field<int>(j, "feature_width");
    auto mean = field<std::vector<double>>(j, "mean");
    auto cov = field<std::vector<std::vector<double>>>(j, "covariance");
    if (d < 1 || mean.size() != static_cast<std::size_t>(d) || cov.size() != static_cast<std::size_t>(d))
        throw SchemaError("detector moments do not match feature_width");
    Eigen::VectorXd mu = Eigen::Map<Eigen::VectorXd>(mean.data(), d);
    Eigen::MatrixXd sigma(d, d);
    for (int r = 0; r != d; ++r) {
        if (cov[r].size() != static_cast<std::size_t>(d))
            throw SchemaError("detector covariance is not square");
        for (int c = 0; c != d; ++c)
            sigma(r, c) = cov[r][c];
    }
    DetectorModel m;
    try {
        m = DetectorModel::from_moments(std::move(mu), std::move(sigma), field<double>(j, "epsilon"),
                                        detail::threshold_from(field<json>(j, "gamma"), "gamma"));
    } catch (const InvalidArgument & e) {
        throw SchemaError(std::string("detector checkpoint is invalid: ") + e.what());
    }
    auto n = field<json>(j, "normalization");
    m.stats = { field<double>(n, "card_min"), field<double>(n, "card_max"), field<double>(n, "cost_min"),
                field<double>(n, "cost_max") };
    m.training_distances = j.value("training_distances", std::vector<double>{});
    if (!std::is_sorted(m.training_distances.begin(), m.training_distances.end()))
        throw SchemaError("detector training distances must be sorted");
    return m;
}

void save_detector(const DetectorModel & model, const std::string & path)
{
    detail::write_text_file(path, detector_to_json(model));
}

DetectorModel load_detector(const std::string & path, int expected_width)
{
    auto m = detector_from_json(detail::read_text_file(path));
    if (expected_width >= 0 && m.width() != expected_width)
        throw InvalidArgument("detector " + path + " has width " + std::to_string(m.width()) + " but the catalog needs " +
                              std::to_string(expected_width));
    return m;
}

}
