#include "delta/parallel.hpp"
#include "delta/treenn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace delta {

double hetero_loss(std::span<const LossTerm> batch)
{
    if (batch.empty())
        throw InvalidArgument("hetero_loss needs at least one sample");
    double total = 0.0;
    for (const auto & t : batch) {
        if (!(t.variance > 0.0))
            throw InvalidArgument("hetero_loss: variance must be positive");
        double r = t.target - t.prediction;
        total += r * r / (2.0 * t.variance) + 0.5 * std::log(t.variance);
    }
    return total / static_cast<double>(batch.size());
}

LossGradient hetero_loss_gradient(const LossTerm & t)
{
    if (!(t.variance > 0.0))
        throw InvalidArgument("hetero_loss_gradient: variance must be positive");
    const double r = t.prediction - t.target;
    return { r / t.variance, 0.5 / t.variance - r * r / (2.0 * t.variance * t.variance) };
}

double evaluate_loss(const Model & model, std::span<const TrainingSample> samples, LossKind kind)
{
    if (samples.empty())
        return 0.0;
    std::vector<double> losses(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const auto & s = samples[i];
        losses[i] = model.loss_and_gradient(s.tree, s.context.size() ? &s.context : nullptr, s.target, kind, {});
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(samples.size());
}

namespace {

std::vector<TrainingSample> pick(std::span<const TrainingSample> samples, std::span<const std::size_t> idx)
{
    std::vector<TrainingSample> out;
    out.reserve(idx.size());
    for (auto i : idx)
        out.push_back(samples[i]);
    return out;
}

void check_finite(double loss, int epoch, std::size_t batch)
{
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch
            << "; lower the learning rate or enable gradient clipping";
        throw TrainingError(msg.str());
    }
}

}

Model train(Model model, std::span<const TrainingSample> samples, const NetConfig & config, TrainingReport * report)
{
    if (samples.empty())
        throw InvalidArgument("train needs at least one sample");
    model.set_config(config);
    std::mt19937_64 rng(derive_seed(config.seed, "train"));

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> train_idx = order, val_idx = order;
    if (samples.size() >= 10 && config.validation_fraction > 0.0) {
        std::shuffle(order.begin(), order.end(), rng);
        auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.validation_fraction *
                                                                                     static_cast<double>(samples.size()))));
        val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
    }
    const auto train_set = pick(samples, train_idx);
    const auto val_set = pick(samples, val_idx);

    if (!model.label_stats_fitted()) {
        double mean = 0.0;
        for (const auto & s : train_set)
            mean += s.target;
        mean /= static_cast<double>(train_set.size());
        double var = 0.0;
        for (const auto & s : train_set)
            var += (s.target - mean) * (s.target - mean);
        var /= static_cast<double>(train_set.size());
        model.set_label_stats(mean, var > 1e-12 ? std::sqrt(var) : 1.0);
    }

    TrainingReport rep;
    rep.train_size = train_set.size();
    rep.validation_size = val_set.size();
    rep.initial_train_loss = evaluate_loss(model, train_set, config.loss);
    double best = evaluate_loss(model, val_set, config.loss);
    check_finite(best, 0, 0);
    rep.validation_loss.push_back(best);
    std::vector<double> best_params(model.parameters().begin(), model.parameters().end());

    const std::size_t P = model.parameters().size();
    std::vector<double> velocity(P, 0.0), grad(P);
    std::vector<std::vector<double>> per_sample;
    std::vector<double> per_loss;
    std::vector<std::size_t> shuffled(train_set.size());
    std::iota(shuffled.begin(), shuffled.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (std::size_t start = 0, batch = 0; start < shuffled.size(); start += config.batch_size, ++batch) {
            const std::size_t end = std::min(shuffled.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::size_t m = end - start;
            per_sample.resize(m);
            per_loss.assign(m, 0.0);
            parallel_for(m, [&](std::size_t j) {
                auto & g = per_sample[j];
                g.assign(P, 0.0);
                const auto & s = train_set[shuffled[start + j]];
                per_loss[j] =
                    model.loss_and_gradient(s.tree, s.context.size() ? &s.context : nullptr, s.target, config.loss, g);
            });
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            for (std::size_t j = 0; j != m; ++j) {
                loss += per_loss[j];
                for (std::size_t p = 0; p != P; ++p)
                    grad[p] += per_sample[j][p];
            }
            loss /= static_cast<double>(m);
            check_finite(loss, epoch, batch);
            double norm = 0.0;
            for (auto & g : grad) {
                g /= static_cast<double>(m);
                norm += g * g;
            }
            norm = std::sqrt(norm);
            if (!std::isfinite(norm))
                check_finite(norm, epoch, batch);
            const double clip = config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
            auto params = model.parameters();
            for (std::size_t p = 0; p != P; ++p) {
                velocity[p] = config.momentum * velocity[p] - config.learning_rate * clip * grad[p];
                params[p] += velocity[p];
            }
        }
        double v = evaluate_loss(model, val_set, config.loss);
        check_finite(v, epoch, 0);
        rep.validation_loss.push_back(v);
        if (v < best) {
            best = v;
            rep.best_epoch = epoch;
            best_params.assign(model.parameters().begin(), model.parameters().end());
        }
    }
    std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
    rep.final_train_loss = evaluate_loss(model, train_set, config.loss);
    if (report)
        *report = std::move(rep);
    return model;
}

double grad_check(const Model & model, const TrainingSample & sample, LossKind kind, double step)
{
    const Eigen::VectorXd * ctx = sample.context.size() ? &sample.context : nullptr;
    std::vector<double> analytic(model.parameters().size(), 0.0);
    model.loss_and_gradient(sample.tree, ctx, sample.target, kind, analytic);
    Model probe = model;
    auto params = probe.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i != params.size(); ++i) {
        const double theta = params[i];
        const double h = step * std::max(1.0, std::abs(theta));
        params[i] = theta + h;
        double up = probe.loss_and_gradient(sample.tree, ctx, sample.target, kind, {});
        params[i] = theta - h;
        double down = probe.loss_and_gradient(sample.tree, ctx, sample.target, kind, {});
        params[i] = theta;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max(1e-7, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}
