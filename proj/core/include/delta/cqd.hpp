#pragma once

#include "delta/simdb.hpp"
#include "delta/treenn.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace delta {

/** Encoding of a (query, native plan) pair: elementwise max over the featurized nodes of P0, then the query context.
 * Width is `node_feature_width + context_width`. */
Eigen::VectorXd encode_query(const Query & query, const Catalog & catalog, const Plan & native,
                             const ModelAnnotator & estimated, const NormalizationStats & stats);
inline int detector_width(const Catalog & catalog)
{
    return node_feature_width(catalog.table_count()) + context_width(catalog);
}

/** Mahalanobis gate state. `inverse` is the inverse of the regularized covariance. */
struct DetectorModel
{
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance; ///< sample covariance before regularization
    Eigen::MatrixXd inverse;
    double epsilon = 1e-6;
    double gamma = 500.0;
    NormalizationStats stats; ///< feature normalization used by `encode_query`
    std::vector<double> training_distances; ///< sorted; lets `--gamma-quantile` be resolved after fitting

    int width() const { return static_cast<int>(mean.size()); }

    /// Regularizes `covariance + epsilon * (trace / d) * I` (plain `epsilon * I` when the trace is 0) and inverts it
    /// through a Cholesky factorization. Throws InvalidArgument if the result is not positive definite.
    static DetectorModel from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance, double epsilon = 1e-6,
                                      double gamma = 500.0);
    Eigen::MatrixXd regularized() const;
};

/// Column mean and sample covariance (divisor N-1) of the rows. Needs at least 2 rows.
DetectorModel fit_detector(std::span<const Eigen::VectorXd> rows, double gamma = 500.0, double epsilon = 1e-6);

/// sqrt((x - mu)^T Sigma^-1 (x - mu)).
double distance(const DetectorModel & model, const Eigen::VectorXd & x);

enum class GateDecision { Accept, Reject };

/// Accept iff distance <= gamma.
GateDecision gate(const DetectorModel & model, const Eigen::VectorXd & x);
GateDecision gate(const DetectorModel & model, const Query & query, const Catalog & catalog, const Plan & native,
                  const ModelAnnotator & estimated);

/// The q-th quantile (linear interpolation) of the distances of `rows`.
double distance_quantile(const DetectorModel & model, std::span<const Eigen::VectorXd> rows, double q);
/// The q-th quantile (linear interpolation) of already sorted values.
double sorted_quantile(std::span<const double> sorted, double q);

struct Confusion
{
    std::size_t accepted_compatible = 0;
    std::size_t rejected_compatible = 0;
    std::size_t accepted_incompatible = 0;
    std::size_t rejected_incompatible = 0;
    std::optional<double> recall;      ///< accepted compatible / compatible; unset with no compatible query
    std::optional<double> specificity; ///< rejected incompatible / incompatible; unset with no incompatible query

    std::size_t total() const
    {
        return accepted_compatible + rejected_compatible + accepted_incompatible + rejected_incompatible;
    }
};

Confusion confusion(std::span<const GateDecision> decisions, const std::vector<bool> & compatible);

std::string detector_to_json(const DetectorModel & model);
DetectorModel detector_from_json(std::string_view text);
void save_detector(const DetectorModel & model, const std::string & path);
/// Throws InvalidArgument when `expected_width` is nonnegative and differs from the checkpoint.
DetectorModel load_detector(const std::string & path, int expected_width = -1);

}
