#pragma once

#include "delta/plan.hpp"
#include "delta/simdb.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace delta {

/*======================================================================================================================
 * Featurization
 *====================================================================================================================*/

/** Per-feature min/max of log(1+cardinality) and log(1+cost) over a set of plans. */
struct NormalizationStats
{
    double card_min = 0.0;
    double card_max = 1.0;
    double cost_min = 0.0;
    double cost_max = 1.0;

    /// Min/max over every node of every tree.
    static NormalizationStats fit(std::span<const NodePtr> roots);

    double normalize_cardinality(double card) const;
    double normalize_cost(double cost) const;
};

/// [one-hot operator | normalized cardinality | normalized cost | relation-set indicator]
constexpr int node_feature_width(std::size_t tables) { return static_cast<int>(kOperatorCount + 2 + tables); }
/// [relation membership | per-edge log10 estimated selectivity, 0 where the query lacks the edge]
inline int context_width(const Catalog & catalog)
{
    return static_cast<int>(catalog.table_count() + catalog.edge_count());
}

/** A featurized tree or forest. Nodes are stored children-before-parents; `left`/`right` index into the columns, -1
 * for an absent child. */
struct FeatureTree
{
    Eigen::MatrixXd features; ///< width x nodes
    std::vector<int> left;
    std::vector<int> right;
    std::vector<int> roots;

    int width() const { return static_cast<int>(features.rows()); }
    int nodes() const { return static_cast<int>(features.cols()); }

    /// Disjoint union; pooling over the result pools over every tree.
    static FeatureTree forest(std::span<const FeatureTree> trees);
};

Eigen::VectorXd node_features(const PlanNode & node, const Catalog & catalog, const NormalizationStats & stats);
FeatureTree featurize(const PlanNode & root, const Catalog & catalog, const NormalizationStats & stats);
Eigen::VectorXd query_context(const Query & query, const Catalog & catalog, const CardinalityModel & estimated);

/*======================================================================================================================
 * Network
 *====================================================================================================================*/

enum class LossKind { Heteroscedastic, SquaredError };

struct NetConfig
{
    std::vector<int> channels{ 64, 64, 64 }; ///< output width of each tree-conv block
    int head_hidden = 32;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 20;
    double validation_fraction = 0.1;
    double grad_clip = 5.0; ///< global gradient-norm clip, 0 disables
    std::uint64_t seed = 1;
    LossKind loss = LossKind::Heteroscedastic;

    void validate() const;
};

struct Prediction
{
    double mean;         ///< predicted label (log(1+latency) space)
    double variance;     ///< sigma^2 = exp(log_variance), always > 0
    double log_variance;
};

/** Cached encoding of one tree for incremental scoring: the root's activation after every block (index 0 is the raw
 * feature vector) and the max-pool over the whole tree. */
struct TreeEncoding
{
    std::vector<Eigen::VectorXd> root_layers;
    Eigen::VectorXd pooled;
};

/** Tree-convolution network: `channels.size()` blocks of (triangular tree conv -> per-node layer norm -> ReLU), with
 * dynamic max-pooling in place of the last ReLU, then two independent two-layer heads for the label and for
 * ln(sigma^2). Every parameter lives in one flat array split into named sections.
 *
 * Labels are standardized internally: `mean = shift + scale * raw`, `log_variance = s + 2 ln(scale)`. */
class Model
{
    public:
    struct Section
    {
        std::string name;
        std::size_t offset;
        int rows;
        int cols;
        std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
    };

    Model() = default;
    /// Glorot-uniform weights from `config.seed`, zero biases, unit layer-norm gains.
    Model(const NetConfig & config, int feature_width, int context_width);
    static Model zeros(const NetConfig & config, int feature_width, int context_width);

    const NetConfig & config() const { return config_; }
    void set_config(const NetConfig & config);
    int feature_width() const { return feature_width_; }
    int context_width() const { return context_width_; }
    int pooled_width() const { return config_.channels.back(); }
    int blocks() const { return static_cast<int>(config_.channels.size()); }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }
    const std::vector<Section> & sections() const { return sections_; }
    const Section & section(const std::string & name) const;

    double label_shift() const { return label_shift_; }
    double label_scale() const { return label_scale_; }
    bool label_stats_fitted() const { return label_fitted_; }
    void set_label_stats(double shift, double scale);

    const NormalizationStats & normalization() const { return stats_; }
    void set_normalization(const NormalizationStats & stats) { stats_ = stats; }

    Prediction forward(const FeatureTree & tree, const Eigen::VectorXd * context = nullptr) const;

    TreeEncoding encode_leaf(const Eigen::VectorXd & features) const;
    TreeEncoding encode_join(const Eigen::VectorXd & features, const TreeEncoding & left,
                             const TreeEncoding & right) const;
    /// Heads only, on an already pooled vector (for forests: elementwise max of the trees' `pooled`).
    Prediction head(const Eigen::VectorXd & pooled, const Eigen::VectorXd * context = nullptr) const;

    /** Loss of one sample (`target` in label space) under `kind`, and its gradient added into `grad` (same layout as
     * `parameters()`), unless `grad` is empty. The loss is evaluated on standardized labels. */
    double loss_and_gradient(const FeatureTree & tree, const Eigen::VectorXd * context, double target, LossKind kind,
                             std::span<double> grad) const;

    private:
    void layout();
    void check_inputs(const FeatureTree & tree, const Eigen::VectorXd * context) const;
    Eigen::VectorXd head_input(const Eigen::VectorXd & pooled, const Eigen::VectorXd * context) const;
    Eigen::Map<const Eigen::MatrixXd> mat(std::size_t section) const;
    Eigen::Map<Eigen::MatrixXd> mat(std::span<double> space, std::size_t section) const;

    NetConfig config_;
    int feature_width_ = 0;
    int context_width_ = 0;
    std::vector<double> params_;
    std::vector<Section> sections_;
    double label_shift_ = 0.0;
    double label_scale_ = 1.0;
    bool label_fitted_ = false;
    NormalizationStats stats_;
};

/// Label transform used for every latency target.
inline double latency_to_label(double latency) { return std::log1p(latency); }
inline double label_to_latency(double label) { return std::expm1(std::min(label, 700.0)); }

/*======================================================================================================================
 * Loss and training
 *====================================================================================================================*/

struct LossTerm
{
    double prediction; ///< y-hat
    double variance;   ///< sigma^2
    double target;     ///< y
};

/// (1/N) sum (y - y_hat)^2 / (2 sigma^2) + ln(sigma^2) / 2. Throws InvalidArgument on nonpositive variance.
double hetero_loss(std::span<const LossTerm> batch);

struct LossGradient
{
    double d_prediction; ///< (y_hat - y) / sigma^2
    double d_variance;   ///< 1 / (2 sigma^2) - (y - y_hat)^2 / (2 sigma^4)
};

/// Partial derivatives of one sample's term of `hetero_loss`.
LossGradient hetero_loss_gradient(const LossTerm & term);

struct TrainingSample
{
    FeatureTree tree;
    Eigen::VectorXd context; ///< empty when the model takes no context
    double target;           ///< label space
};

struct TrainingReport
{
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
    std::vector<double> validation_loss; ///< index 0 is before the first epoch
    int best_epoch = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
};

/// Mean loss of `model` over `samples`.
double evaluate_loss(const Model & model, std::span<const TrainingSample> samples, LossKind kind);

/** Mini-batch SGD with momentum, starting from `model`'s parameters. Label standardization is fitted on the
 * training split unless the model already carries it. Returns the parameters with the lowest validation loss
 * (a random `validation_fraction` split; the training split itself when fewer than 10 samples). */
Model train(Model model, std::span<const TrainingSample> samples, const NetConfig & config,
            TrainingReport * report = nullptr);

/// Worst relative error between the analytic gradient and central differences (step scaled by max(1, |theta|)).
double grad_check(const Model & model, const TrainingSample & sample, LossKind kind = LossKind::Heteroscedastic,
                  double step = 1e-4);

/*======================================================================================================================
 * Checkpoints
 *====================================================================================================================*/

void save_model(const Model & model, const std::string & path);
/// Throws IoError on a missing file, SchemaError on a bad one, and InvalidArgument when `expected_feature_width` is
/// nonnegative and differs from the checkpoint.
Model load_model(const std::string & path, int expected_feature_width = -1, int expected_context_width = -1);
std::string model_to_json(const Model & model);
Model model_from_json(std::string_view text);

}
