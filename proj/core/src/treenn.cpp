#include "delta/treenn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace delta {

namespace {

constexpr double kLayerNormEps = 1e-5;
/// ln(sigma^2) is clamped so that exp stays finite and positive in doubles.
constexpr double kMaxLogVariance = 700.0;

// Section order inside one block and inside one head.
enum BlockSection { kWSelf, kWLeft, kWRight, kBias, kGain, kBeta, kBlockSections };
enum HeadSection { kFc1W, kFc1B, kFc2W, kFc2B, kHeadSections };

std::size_t block_section(int block, int part) { return static_cast<std::size_t>(block) * kBlockSections + part; }

Eigen::MatrixXd gather(const Eigen::MatrixXd & h, const std::vector<int> & idx)
{
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(h.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t v = 0; v != idx.size(); ++v)
        if (idx[v] >= 0)
            g.col(static_cast<Eigen::Index>(v)) = h.col(idx[v]);
    return g;
}

/// Per-column layer norm; returns the normalized values and writes 1/std per column.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd & z, Eigen::RowVectorXd & inv_std)
{
    const double n = static_cast<double>(z.rows());
    Eigen::RowVectorXd mean = z.colwise().sum() / n;
    Eigen::MatrixXd centered = z.rowwise() - mean;
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
    inv_std = (var.array() + kLayerNormEps).rsqrt();
    return centered.array().rowwise() * inv_std.array();
}

}

void NetConfig::validate() const
{
    if (channels.empty())
        throw InvalidArgument("NetConfig needs at least one tree-conv block");
    for (int c : channels)
        if (c < 1)
            throw InvalidArgument("NetConfig channel widths must be >= 1");
    if (head_hidden < 1)
        throw InvalidArgument("NetConfig head width must be >= 1");
    if (batch_size < 1 || epochs < 0)
        throw InvalidArgument("NetConfig needs batch_size >= 1 and epochs >= 0");
    if (!(learning_rate > 0.0) || !(momentum >= 0.0 && momentum < 1.0))
        throw InvalidArgument("NetConfig needs learning_rate > 0 and momentum in [0,1)");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw InvalidArgument("NetConfig validation_fraction must lie in [0,1)");
}

/*======================================================================================================================
 * Construction and layout
 *====================================================================================================================*/

void Model::layout()
{
    config_.validate();
    sections_.clear();
    std::size_t offset = 0;
    auto add = [&](std::string name, int rows, int cols) {
        sections_.push_back({ std::move(name), offset, rows, cols });
        offset += static_cast<std::size_t>(rows) * cols;
    };
    int in = feature_width_;
    for (int b = 0; b != blocks(); ++b) {
        int out = config_.channels[b];
        std::string p = "block" + std::to_string(b) + ".";
        add(p + "w_self", out, in);
        add(p + "w_left", out, in);
        add(p + "w_right", out, in);
        add(p + "bias", out, 1);
        add(p + "ln_gain", out, 1);
        add(p + "ln_bias", out, 1);
        in = out;
    }
    const int head_in = pooled_width() + context_width_;
    for (const char * head : { "latency.", "noise." }) {
        std::string p = head;
        add(p + "fc1.w", config_.head_hidden, head_in);
        add(p + "fc1.b", config_.head_hidden, 1);
        add(p + "fc2.w", 1, config_.head_hidden);
        add(p + "fc2.b", 1, 1);
    }
    params_.assign(offset, 0.0);
}

Model::Model(const NetConfig & config, int feature_width, int context_width)
    : config_(config), feature_width_(feature_width), context_width_(context_width)
{
    if (feature_width < 1 || context_width < 0)
        throw InvalidArgument("model needs feature width >= 1 and context width >= 0");
    layout();
    std::mt19937_64 rng(config_.seed);
    for (const auto & s : sections_) {
        bool weight = s.name.ends_with(".w") || s.name.find(".w_") != std::string::npos;
        if (s.name.ends_with("ln_gain")) {
            std::fill_n(params_.begin() + s.offset, s.size(), 1.0);
        } else if (weight) {
            double fan_in = s.name.starts_with("block") ? 3.0 * s.cols : s.cols;
            double limit = std::sqrt(6.0 / (fan_in + s.rows));
            std::uniform_real_distribution<double> u(-limit, limit);
            for (std::size_t i = 0; i != s.size(); ++i)
                params_[s.offset + i] = u(rng);
        }
    }
}

Model Model::zeros(const NetConfig & config, int feature_width, int context_width)
{
    Model m(config, feature_width, context_width);
    std::fill(m.params_.begin(), m.params_.end(), 0.0);
    return m;
}

void Model::set_config(const NetConfig & config)
{
    if (config.channels != config_.channels || config.head_hidden != config_.head_hidden)
        throw InvalidArgument("set_config cannot change the network shape");
    config.validate();
    config_ = config;
}

const Model::Section & Model::section(const std::string & name) const
{
    for (const auto & s : sections_)
        if (s.name == name)
            return s;
    throw InvalidArgument("model has no section " + name);
}

void Model::set_label_stats(double shift, double scale)
{
    if (!(scale > 0.0) || !std::isfinite(shift))
        throw InvalidArgument("label scale must be positive and shift finite");
    label_shift_ = shift;
    label_scale_ = scale;
    label_fitted_ = true;
}

Eigen::Map<const Eigen::MatrixXd> Model::mat(std::size_t i) const
{
    const auto & s = sections_[i];
    return { params_.data() + s.offset, s.rows, s.cols };
}

Eigen::Map<Eigen::MatrixXd> Model::mat(std::span<double> space, std::size_t i) const
{
    const auto & s = sections_[i];
    return { space.data() + s.offset, s.rows, s.cols };
}

void Model::check_inputs(const FeatureTree & tree, const Eigen::VectorXd * context) const
{
    if (tree.width() != feature_width_)
        throw InvalidArgument("feature width " + std::to_string(tree.width()) + " does not match model width " +
                              std::to_string(feature_width_));
    if (tree.nodes() == 0)
        throw InvalidArgument("empty feature tree");
    int ctx = context ? static_cast<int>(context->size()) : 0;
    if (ctx != context_width_)
        throw InvalidArgument("context width " + std::to_string(ctx) + " does not match model context width " +
                              std::to_string(context_width_));
}

Eigen::VectorXd Model::head_input(const Eigen::VectorXd & pooled, const Eigen::VectorXd * context) const
{
    int ctx = context ? static_cast<int>(context->size()) : 0;
    if (ctx != context_width_)
        throw InvalidArgument("context width does not match the model");
    if (pooled.size() != pooled_width())
        throw InvalidArgument("pooled width does not match the model");
    Eigen::VectorXd x(pooled_width() + context_width_);
    x.head(pooled_width()) = pooled;
    if (ctx)
        x.tail(ctx) = *context;
    return x;
}

/*======================================================================================================================
 * Inference
 *====================================================================================================================*/

Prediction Model::head(const Eigen::VectorXd & pooled, const Eigen::VectorXd * context) const
{
    const Eigen::VectorXd x = head_input(pooled, context);
    const std::size_t base = static_cast<std::size_t>(blocks()) * kBlockSections;
    auto run = [&](std::size_t h) {
        std::size_t o = base + h * kHeadSections;
        Eigen::VectorXd hidden = (mat(o + kFc1W) * x + mat(o + kFc1B)).cwiseMax(0.0);
        return (mat(o + kFc2W) * hidden)(0, 0) + mat(o + kFc2B)(0, 0);
    };
    double raw = run(0);
    double s = run(1);
    double log_var = std::clamp(s + 2.0 * std::log(label_scale_), -kMaxLogVariance, kMaxLogVariance);
    return { label_shift_ + label_scale_ * raw, std::exp(log_var), log_var };
}

TreeEncoding Model::encode_leaf(const Eigen::VectorXd & features) const
{
    static const TreeEncoding none;
    return encode_join(features, none, none);
}

TreeEncoding Model::encode_join(const Eigen::VectorXd & features, const TreeEncoding & left,
                                const TreeEncoding & right) const
{
    if (features.size() != feature_width_)
        throw InvalidArgument("feature width does not match the model");
    TreeEncoding enc;
    enc.root_layers.reserve(blocks() + 1);
    enc.root_layers.push_back(features);
    for (int b = 0; b != blocks(); ++b) {
        const Eigen::VectorXd & h = enc.root_layers.back();
        Eigen::VectorXd z = mat(block_section(b, kWSelf)) * h + mat(block_section(b, kBias));
        if (!left.root_layers.empty())
            z.noalias() += mat(block_section(b, kWLeft)) * left.root_layers[b];
        if (!right.root_layers.empty())
            z.noalias() += mat(block_section(b, kWRight)) * right.root_layers[b];
        Eigen::RowVectorXd inv;
        Eigen::VectorXd u = layer_norm(z, inv);
        u = u.cwiseProduct(mat(block_section(b, kGain))) + mat(block_section(b, kBeta));
        if (b + 1 != blocks())
            u = u.cwiseMax(0.0);
        enc.root_layers.push_back(std::move(u));
    }
    enc.pooled = enc.root_layers.back();
    if (!left.root_layers.empty())
        enc.pooled = enc.pooled.cwiseMax(left.pooled);
    if (!right.root_layers.empty())
        enc.pooled = enc.pooled.cwiseMax(right.pooled);
    return enc;
}

/*======================================================================================================================
 * Forward / backward over a whole tree
 *====================================================================================================================*/

namespace {

struct Trace
{
    std::vector<Eigen::MatrixXd> h;  ///< h[0] input, h[b+1] output of block b
    std::vector<Eigen::MatrixXd> hl; ///< gathered left inputs of block b
    std::vector<Eigen::MatrixXd> hr;
    std::vector<Eigen::MatrixXd> xhat;
    std::vector<Eigen::RowVectorXd> inv_std;
    std::vector<Eigen::MatrixXd> u; ///< post-norm, pre-activation
    Eigen::VectorXd pooled;
    std::vector<int> argmax;
    Eigen::VectorXd x;
    Eigen::VectorXd hidden[2];
    double out[2] = { 0.0, 0.0 }; ///< raw label, s
};

}

double Model::loss_and_gradient(const FeatureTree & tree, const Eigen::VectorXd * context, double target,
                                LossKind kind, std::span<double> grad) const
{
    check_inputs(tree, context);
    if (!grad.empty() && grad.size() != params_.size())
        throw InvalidArgument("gradient buffer has the wrong size");
    const int L = blocks();
    const int N = tree.nodes();
    Trace t;
    t.h.resize(L + 1);
    t.hl.resize(L);
    t.hr.resize(L);
    t.xhat.resize(L);
    t.inv_std.resize(L);
    t.u.resize(L);
    t.h[0] = tree.features;

    for (int b = 0; b != L; ++b) {
        t.hl[b] = gather(t.h[b], tree.left);
        t.hr[b] = gather(t.h[b], tree.right);
        Eigen::MatrixXd z = mat(block_section(b, kWSelf)) * t.h[b];
        z.noalias() += mat(block_section(b, kWLeft)) * t.hl[b];
        z.noalias() += mat(block_section(b, kWRight)) * t.hr[b];
        z.colwise() += Eigen::VectorXd(mat(block_section(b, kBias)));
        t.xhat[b] = layer_norm(z, t.inv_std[b]);
        Eigen::VectorXd gain = mat(block_section(b, kGain));
        Eigen::VectorXd beta = mat(block_section(b, kBeta));
        t.u[b] = (t.xhat[b].array().colwise() * gain.array()).colwise() + beta.array();
        t.h[b + 1] = b + 1 == L ? t.u[b] : Eigen::MatrixXd(t.u[b].cwiseMax(0.0));
    }

    const Eigen::MatrixXd & top = t.h[L];
    t.pooled.resize(top.rows());
    t.argmax.assign(top.rows(), 0);
    for (Eigen::Index c = 0; c != top.rows(); ++c) {
        Eigen::Index arg;
        t.pooled[c] = top.row(c).maxCoeff(&arg);
        t.argmax[c] = static_cast<int>(arg);
    }
    t.x = head_input(t.pooled, context);
    const std::size_t base = static_cast<std::size_t>(L) * kBlockSections;
    for (int hd = 0; hd != 2; ++hd) {
        std::size_t o = base + hd * kHeadSections;
        t.hidden[hd] = (mat(o + kFc1W) * t.x + mat(o + kFc1B)).cwiseMax(0.0);
        t.out[hd] = (mat(o + kFc2W) * t.hidden[hd])(0, 0) + mat(o + kFc2B)(0, 0);
    }

    const double y = (target - label_shift_) / label_scale_;
    const double r = t.out[0];
    const double s = t.out[1];
    double loss, d_out[2];
    if (kind == LossKind::Heteroscedastic) {
        const double inv_var = std::exp(-s);
        loss = 0.5 * (y - r) * (y - r) * inv_var + 0.5 * s;
        d_out[0] = (r - y) * inv_var;
        d_out[1] = 0.5 - 0.5 * (y - r) * (y - r) * inv_var;
    } else {
        loss = (y - r) * (y - r);
        d_out[0] = 2.0 * (r - y);
        d_out[1] = 0.0;
    }
    if (grad.empty())
        return loss;

    // Heads.
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(t.x.size());
    for (int hd = 0; hd != 2; ++hd) {
        if (d_out[hd] == 0.0)
            continue;
        std::size_t o = base + hd * kHeadSections;
        mat(grad, o + kFc2W) += d_out[hd] * t.hidden[hd].transpose();
        mat(grad, o + kFc2B)(0, 0) += d_out[hd];
        Eigen::VectorXd dh = d_out[hd] * mat(o + kFc2W).transpose();
        dh = dh.cwiseProduct((t.hidden[hd].array() > 0.0).cast<double>().matrix());
        mat(grad, o + kFc1W).noalias() += dh * t.x.transpose();
        mat(grad, o + kFc1B) += dh;
        dx.noalias() += mat(o + kFc1W).transpose() * dh;
    }

    // Dynamic pooling routes each channel's gradient to its arg-max node.
    Eigen::MatrixXd da = Eigen::MatrixXd::Zero(top.rows(), N);
    for (Eigen::Index c = 0; c != top.rows(); ++c)
        da(c, t.argmax[c]) += dx[c];

    for (int b = L - 1; b >= 0; --b) {
        Eigen::MatrixXd du = b + 1 == L ? da : Eigen::MatrixXd(da.cwiseProduct((t.u[b].array() > 0.0).cast<double>().matrix()));
        Eigen::VectorXd gain = mat(block_section(b, kGain));
        mat(grad, block_section(b, kGain)) += du.cwiseProduct(t.xhat[b]).rowwise().sum();
        mat(grad, block_section(b, kBeta)) += du.rowwise().sum();
        Eigen::MatrixXd dxhat = du.array().colwise() * gain.array();
        const double n = static_cast<double>(dxhat.rows());
        Eigen::RowVectorXd mean_d = dxhat.colwise().sum() / n;
        Eigen::RowVectorXd mean_dx = dxhat.cwiseProduct(t.xhat[b]).colwise().sum() / n;
        Eigen::MatrixXd dz = dxhat.rowwise() - mean_d;
        dz.array() -= t.xhat[b].array().rowwise() * mean_dx.array();
        dz = dz.array().rowwise() * t.inv_std[b].array();

        mat(grad, block_section(b, kBias)) += dz.rowwise().sum();
        mat(grad, block_section(b, kWSelf)).noalias() += dz * t.h[b].transpose();
        mat(grad, block_section(b, kWLeft)).noalias() += dz * t.hl[b].transpose();
        mat(grad, block_section(b, kWRight)).noalias() += dz * t.hr[b].transpose();
        if (b == 0)
            break;
        Eigen::MatrixXd dh = mat(block_section(b, kWSelf)).transpose() * dz;
        Eigen::MatrixXd dl = mat(block_section(b, kWLeft)).transpose() * dz;
        Eigen::MatrixXd dr = mat(block_section(b, kWRight)).transpose() * dz;
        for (int v = 0; v != N; ++v) {
            if (tree.left[v] >= 0)
                dh.col(tree.left[v]) += dl.col(v);
            if (tree.right[v] >= 0)
                dh.col(tree.right[v]) += dr.col(v);
        }
        da = std::move(dh);
    }
    return loss;
}

Prediction Model::forward(const FeatureTree & tree, const Eigen::VectorXd * context) const
{
    check_inputs(tree, context);
    const int L = blocks();
    Eigen::MatrixXd h = tree.features;
    for (int b = 0; b != L; ++b) {
        Eigen::MatrixXd z = mat(block_section(b, kWSelf)) * h;
        z.noalias() += mat(block_section(b, kWLeft)) * gather(h, tree.left);
        z.noalias() += mat(block_section(b, kWRight)) * gather(h, tree.right);
        z.colwise() += Eigen::VectorXd(mat(block_section(b, kBias)));
        Eigen::RowVectorXd inv;
        Eigen::MatrixXd u = layer_norm(z, inv);
        Eigen::VectorXd gain = mat(block_section(b, kGain));
        Eigen::VectorXd beta = mat(block_section(b, kBeta));
        u = (u.array().colwise() * gain.array()).colwise() + beta.array();
        h = b + 1 == L ? u : Eigen::MatrixXd(u.cwiseMax(0.0));
    }
    Eigen::VectorXd pooled = h.rowwise().maxCoeff();
    return head(pooled, context);
}

}
