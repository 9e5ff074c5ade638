#include "fixtures.hpp"

#include "delta/simdb.hpp"
#include "delta/treenn.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace delta;
using namespace fixtures;

namespace {

NetConfig small_config(std::uint64_t seed = 3)
{
    NetConfig c;
    c.channels = { 6, 5, 4 };
    c.head_hidden = 5;
    c.seed = seed;
    return c;
}

/// Random annotated plan over a random 5-table catalog, with stats fitted on that plan.
struct RandomInstance
{
    Catalog catalog;
    Query query;
    Plan plan;
    NormalizationStats stats;
};

RandomInstance random_instance(std::uint64_t seed)
{
    CatalogSpec spec;
    spec.tables = 5;
    RandomInstance r;
    r.catalog = gen_catalog(spec, seed);
    r.query = gen_queries(r.catalog, 1, 3, 5, seed + 1).front();
    auto est = CardinalityModel::estimated(1.0, seed);
    auto plans = enumerate_all(r.query, r.catalog, kJoinOperators, ModelAnnotator(r.catalog, est));
    r.plan = plans[seed % plans.size()];
    std::vector<NodePtr> roots{ plans.front().root, plans.back().root, r.plan.root };
    r.stats = NormalizationStats::fit(roots);
    return r;
}

void perturb(Model & m, std::uint64_t seed, double scale)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto & p : m.parameters())
        p += u(rng);
}

Model zero_model_with_outputs(double y_hat, double log_var)
{
    auto m = Model::zeros(small_config(), node_feature_width(2), 0);
    auto params = m.parameters();
    params[m.section("latency.fc2.b").offset] = y_hat;
    params[m.section("noise.fc2.b").offset] = log_var;
    return m;
}

/// Golden-section minimisation of f on [lo, hi].
template<typename F>
double golden_min(F f, double lo, double hi)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    for (int i = 0; i != 200; ++i) {
        if (f(c) < f(d))
            b = d;
        else
            a = c;
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    return (a + b) / 2.0;
}

}

TEST_SUITE("treenn")
{
    TEST_CASE("leaf features: one-hot operator and a single relation bit")
    {
        Catalog c(tables({ 100, 10, 1000 }), { { 0, 1, 0.1 }, { 1, 2, 0.1 } });
        NormalizationStats stats;
        auto f = node_features(*PlanNode::scan(0, { 100, 100 }), c, stats);
        REQUIRE(f.size() == 4 + 2 + 3);
        CHECK(f.head(4) == Eigen::Vector4d(1, 0, 0, 0));
        CHECK(f.tail(3) == Eigen::Vector3d(1, 0, 0));
        CHECK(node_feature_width(3) == 9);
        CHECK_THROWS_AS(node_features(*PlanNode::scan(7), c, stats), InvalidArgument);
    }

    TEST_CASE("join indicator is the union of its children")
    {
        Catalog c(tables({ 100, 10, 1000, 5 }), { { 0, 1, 0.1 }, { 1, 2, 0.1 }, { 2, 3, 0.1 } });
        auto root = mj(hj(scan(0), scan(1)), scan(2));
        auto tree = featurize(*root, c, {});
        REQUIRE(tree.nodes() == 5);
        const int r = tree.roots.front();
        CHECK(r == 4);
        for (int i = 0; i != tree.nodes(); ++i) {
            if (tree.left[i] < 0) {
                CHECK(tree.right[i] < 0);
                continue;
            }
            Eigen::VectorXd l = tree.features.col(tree.left[i]).tail(4), rr = tree.features.col(tree.right[i]).tail(4);
            CHECK(tree.features.col(i).tail(4) == l.cwiseMax(rr));
            CHECK(tree.left[i] < i);
            CHECK(tree.right[i] < i);
        }
        CHECK(tree.features(rank(Operator::MergeJoin), r) == 1.0);
        CHECK(tree.features.col(r).tail(4) == Eigen::Vector4d(1, 1, 1, 0));
    }

    TEST_CASE("min-max normalization endpoints and clipping")
    {
        std::vector<NodePtr> roots{ PlanNode::join(Operator::HashJoin, PlanNode::scan(0, { 9, 99 }),
                                                   PlanNode::scan(1, { 999, 9999 }), { 99999, 999999 }) };
        auto stats = NormalizationStats::fit(roots);
        CHECK(stats.card_min == doctest::Approx(std::log1p(9.0)));
        CHECK(stats.card_max == doctest::Approx(std::log1p(99999.0)));
        CHECK(stats.normalize_cardinality(9) == 0.0);
        CHECK(stats.normalize_cardinality(99999) == doctest::Approx(1.0));
        CHECK(stats.normalize_cost(99) == 0.0);
        CHECK(stats.normalize_cost(999999) == doctest::Approx(1.0));
        CHECK(stats.normalize_cardinality(1e12) == 1.0);
        CHECK(stats.normalize_cardinality(0) == 0.0);
        Catalog c(tables({ 10, 10 }), { { 0, 1, 0.1 } });
        auto tree = featurize(*roots.front(), c, stats);
        CHECK(tree.features.minCoeff() >= 0.0);
        CHECK(tree.features.maxCoeff() <= 1.0);
    }

    TEST_CASE("query context: membership then log10 selectivity")
    {
        Catalog c(tables({ 10, 10, 10, 10 }), { { 0, 1, 0.01 }, { 1, 2, 0.1 }, { 2, 3, 0.5 } });
        auto q = Query::induced("q", 0b0111, c);
        auto ctx = query_context(q, c, CardinalityModel::truth());
        REQUIRE(ctx.size() == context_width(c));
        CHECK(ctx.size() == 7);
        CHECK(ctx.head(4) == Eigen::Vector4d(1, 1, 1, 0));
        CHECK(ctx[4] == doctest::Approx(-2.0));
        CHECK(ctx[5] == doctest::Approx(-1.0));
        CHECK(ctx[6] == 0.0);
        CHECK(query_context(q, c, CardinalityModel::truth()) == ctx);
    }

    TEST_CASE("zero network predicts 0 with unit variance")
    {
        auto inst = random_instance(11);
        auto tree = featurize(*inst.plan.root, inst.catalog, inst.stats);
        auto m = Model::zeros(small_config(), tree.width(), 0);
        auto p = m.forward(tree);
        CHECK(p.mean == 0.0);
        CHECK(p.variance == 1.0);
        CHECK(p.log_variance == 0.0);
        auto ctx = Eigen::VectorXd::Ones(3).eval();
        auto mc = Model::zeros(small_config(), tree.width(), 3);
        CHECK(mc.forward(tree, &ctx).mean == 0.0);
    }

    TEST_CASE("single leaf forward is finite and deterministic")
    {
        Catalog c(tables({ 10, 1000 }), { { 0, 1, 0.1 } });
        auto tree = featurize(*PlanNode::scan(1, { 1000, 1000 }), c, {});
        Model m(small_config(), tree.width(), 0);
        auto a = m.forward(tree), b = m.forward(tree);
        CHECK(std::isfinite(a.mean));
        CHECK(a.variance > 0.0);
        CHECK(a.mean == b.mean);
        CHECK(a.variance == b.variance);
    }

    TEST_CASE("sibling order matters")
    {
        Catalog c(tables({ 50, 5000 }), { { 0, 1, 0.01 } });
        ModelAnnotator ann(c, CardinalityModel::truth());
        auto ab = ann.annotate(hj(scan(0), scan(1)));
        auto ba = ann.annotate(hj(scan(1), scan(0)));
        std::vector<NodePtr> roots{ ab, ba };
        auto stats = NormalizationStats::fit(roots);
        Model m(small_config(9), node_feature_width(2), 0);
        perturb(m, 4, 0.3);
        CHECK(m.forward(featurize(*ab, c, stats)).mean != m.forward(featurize(*ba, c, stats)).mean);
    }

    TEST_CASE("width mismatches are rejected")
    {
        auto inst = random_instance(2);
        auto tree = featurize(*inst.plan.root, inst.catalog, inst.stats);
        Model m(small_config(), tree.width() + 1, 0);
        CHECK_THROWS_AS(m.forward(tree), InvalidArgument);
        Model mc(small_config(), tree.width(), 4);
        Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
        CHECK_THROWS_AS(mc.forward(tree, &bad), InvalidArgument);
        CHECK_THROWS_AS(mc.forward(tree), InvalidArgument);
    }

    TEST_CASE("variance is positive for extreme parameters")
    {
        auto inst = random_instance(6);
        auto tree = featurize(*inst.plan.root, inst.catalog, inst.stats);
        for (double scale : { 0.0, 1.0, 10.0, 100.0 }) {
            Model m(small_config(), tree.width(), 0);
            perturb(m, 77, scale);
            CHECK(m.forward(tree).variance > 0.0);
        }
    }

    TEST_CASE("incremental encodings match the full forward pass")
    {
        auto inst = random_instance(21);
        Model m(small_config(5), node_feature_width(inst.catalog.table_count()), 0);
        perturb(m, 8, 0.2);
        std::function<TreeEncoding(const PlanNode &)> enc = [&](const PlanNode & n) {
            auto f = node_features(n, inst.catalog, inst.stats);
            if (n.is_leaf())
                return m.encode_leaf(f);
            return m.encode_join(f, enc(*n.left()), enc(*n.right()));
        };
        auto e = enc(*inst.plan.root);
        auto a = m.head(e.pooled), b = m.forward(featurize(*inst.plan.root, inst.catalog, inst.stats));
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
        CHECK(a.log_variance == doctest::Approx(b.log_variance).epsilon(1e-12));
    }

    TEST_CASE("hetero_loss examples")
    {
        std::vector<LossTerm> exact{ { 2.0, 1.0, 2.0 } };
        CHECK(hetero_loss(exact) == 0.0);
        std::vector<LossTerm> one{ { 0.0, 1.0, 1.0 } };
        CHECK(hetero_loss(one) == 0.5);
        std::vector<LossTerm> batch{ { 0.0, 1.0, 1.0 }, { 3.0, 4.0, 1.0 } };
        CHECK(hetero_loss(batch) == doctest::Approx((0.5 + 4.0 / 8.0 + 0.5 * std::log(4.0)) / 2.0));
        std::vector<LossTerm> bad{ { 0.0, 0.0, 1.0 } };
        CHECK_THROWS_AS(hetero_loss(bad), InvalidArgument);
        std::vector<LossTerm> negative{ { 0.0, -1.0, 1.0 } };
        CHECK_THROWS_AS(hetero_loss(negative), InvalidArgument);
        CHECK_THROWS_AS(hetero_loss({}), InvalidArgument);
    }

    TEST_CASE("hetero_loss in sigma^2 is stationary at the squared residual")
    {
        for (auto [y, y_hat] : { std::pair{ 1.0, 0.0 }, { 3.5, 1.25 }, { -2.0, 0.5 } }) {
            auto f = [&](double v) {
                std::vector<LossTerm> t{ { y_hat, v, y } };
                return hetero_loss(t);
            };
            const double expected = (y - y_hat) * (y - y_hat);
            CHECK(golden_min(f, 1e-6, 50.0) == doctest::Approx(expected).epsilon(1e-6));
            CHECK(hetero_loss_gradient({ y_hat, expected, y }).d_variance == doctest::Approx(0.0).epsilon(1e-15));
        }
        CHECK(hetero_loss(std::vector<LossTerm>{ { 0.0, 1.0, 1.0 } }) == 0.5);
    }

    TEST_CASE("residual gradient is down-weighted by the variance")
    {
        auto g1 = hetero_loss_gradient({ 3.0, 4.0, 1.0 });
        CHECK(g1.d_prediction == 0.5);
        auto g2 = hetero_loss_gradient({ 3.0, 8.0, 1.0 });
        CHECK(g2.d_prediction == 0.25);
        CHECK(g2.d_prediction == g1.d_prediction / 2.0);
        CHECK(hetero_loss_gradient({ 1.0, 2.0, 1.0 }).d_prediction == 0.0);

        // The same identity through the network: the output bias of the latency head carries dL/dy_hat.
        auto m = zero_model_with_outputs(3.0, 0.0);
        Catalog c(tables({ 10, 10 }), { { 0, 1, 0.1 } });
        auto tree = featurize(*scan(0), c, {});
        std::vector<double> grad(m.parameters().size(), 0.0);
        m.loss_and_gradient(tree, nullptr, 1.0, LossKind::Heteroscedastic, grad);
        CHECK(grad[m.section("latency.fc2.b").offset] == 2.0);
        CHECK(grad[m.section("noise.fc2.b").offset] == 0.5 - 4.0 / 2.0);
    }

    TEST_CASE("gradient check on random models and samples")
    {
        double worst = 0.0;
        for (std::uint64_t i = 0; i != 20; ++i) {
            auto inst = random_instance(100 + i);
            TrainingSample s{ featurize(*inst.plan.root, inst.catalog, inst.stats), {}, 5.0 + static_cast<double>(i) };
            const bool with_context = i % 2 == 1;
            if (with_context)
                s.context = query_context(inst.query, inst.catalog, CardinalityModel::truth());
            Model m(small_config(i + 1), s.tree.width(), with_context ? static_cast<int>(s.context.size()) : 0);
            perturb(m, i, 0.1);
            m.set_label_stats(4.0, 1.5);
            const double err = grad_check(m, s);
            CAPTURE(i);
            CHECK(err <= 1e-3);
            worst = std::max(worst, err);
            CHECK(grad_check(m, s, LossKind::SquaredError) <= 1e-3);
        }
        MESSAGE("worst relative gradient error " << worst);
    }

    TEST_CASE("gradient check in a zero-gradient region")
    {
        auto m = zero_model_with_outputs(1.0, 0.0);
        Catalog c(tables({ 10, 10 }), { { 0, 1, 0.1 } });
        TrainingSample s{ featurize(*hj(scan(0), scan(1)), c, {}), {}, 1.0 };
        std::vector<double> grad(m.parameters().size(), 0.0);
        m.loss_and_gradient(s.tree, nullptr, s.target, LossKind::Heteroscedastic, grad);
        CHECK(std::abs(grad[m.section("latency.fc2.b").offset]) < 1e-12);
        // d/ds of s/2 survives even with a zero residual.
        CHECK(grad[m.section("noise.fc2.b").offset] == 0.5);
        CHECK(grad_check(m, s) <= 1e-3);
    }

    TEST_CASE("gradient check is sensitive to a coarse step")
    {
        auto inst = random_instance(41);
        TrainingSample s{ featurize(*inst.plan.root, inst.catalog, inst.stats), {}, 9.0 };
        Model m(small_config(2), s.tree.width(), 0);
        perturb(m, 3, 0.5);
        CHECK(grad_check(m, s, LossKind::Heteroscedastic, 1e-1) > grad_check(m, s));
    }

    TEST_CASE("training: constant labels, loss descent, determinism")
    {
        CatalogSpec spec;
        spec.tables = 6;
        auto catalog = gen_catalog(spec, 31);
        auto queries = gen_queries(catalog, 12, 2, 4, 32);
        ModelAnnotator ann(catalog, CardinalityModel::truth());
        std::vector<NodePtr> roots;
        for (const auto & q : queries)
            for (const auto & p : enumerate_all(q, catalog, std::array{ Operator::HashJoin }, ann))
                roots.push_back(p.root);
        roots.resize(std::min<std::size_t>(roots.size(), 60));
        auto stats = NormalizationStats::fit(roots);

        auto config = small_config(12);
        config.epochs = 40;
        config.learning_rate = 1e-2;

        std::vector<TrainingSample> constant, varied;
        for (const auto & r : roots) {
            auto tree = featurize(*r, catalog, stats);
            constant.push_back({ tree, {}, 12.0 });
            varied.push_back({ tree, {}, latency_to_label(analytic_cost(*r, CardinalityModel::truth(), catalog)) });
        }
        Model init(config, node_feature_width(catalog.table_count()), 0);
        auto fitted = train(init, constant, config);
        for (const auto & s : constant)
            CHECK(fitted.forward(s.tree).mean == doctest::Approx(12.0).epsilon(0.01));

        TrainingReport report;
        auto a = train(init, varied, config, &report);
        CHECK(report.final_train_loss <= report.initial_train_loss);
        CHECK(report.validation_size == 6);
        CHECK(report.train_size == varied.size() - 6);
        CHECK(report.validation_loss.size() == static_cast<std::size_t>(config.epochs) + 1);
        auto b = train(init, varied, config);
        CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
        CHECK(a.label_stats_fitted());

        config.loss = LossKind::SquaredError;
        TrainingReport mse;
        train(init, varied, config, &mse);
        CHECK(mse.final_train_loss <= mse.initial_train_loss);
    }

    TEST_CASE("training with few samples validates on the training split")
    {
        Catalog c(tables({ 10, 100, 1000 }), { { 0, 1, 0.1 }, { 1, 2, 0.01 } });
        std::vector<TrainingSample> few;
        for (TableId t = 0; t != 3; ++t)
            few.push_back({ featurize(*PlanNode::scan(t, { double(c.rows(t)), double(c.rows(t)) }), c, {}), {}, 1.0 + t });
        TrainingReport r;
        train(Model(small_config(), node_feature_width(3), 0), few, small_config(), &r);
        CHECK(r.train_size == 3);
        CHECK(r.validation_size == 3);
        CHECK_THROWS_AS(train(Model(small_config(), node_feature_width(3), 0), {}, small_config()), InvalidArgument);
    }

    TEST_CASE("non-finite loss aborts with a diagnostic")
    {
        Catalog c(tables({ 10, 100 }), { { 0, 1, 0.1 } });
        std::vector<TrainingSample> bad{ { featurize(*scan(0), c, {}), {}, std::nan("") },
                                         { featurize(*scan(1), c, {}), {}, 1.0 } };
        Model m(small_config(), node_feature_width(2), 0);
        m.set_label_stats(0.0, 1.0);
        try {
            train(m, bad, small_config());
            FAIL("expected TrainingError");
        } catch (const TrainingError & e) {
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        }
    }

    TEST_CASE("config validation")
    {
        auto c = small_config();
        c.channels = {};
        CHECK_THROWS_AS(Model(c, 5, 0), InvalidArgument);
        c = small_config();
        c.channels = { 4, 0 };
        CHECK_THROWS_AS(Model(c, 5, 0), InvalidArgument);
        c = small_config();
        c.head_hidden = 0;
        CHECK_THROWS_AS(Model(c, 5, 0), InvalidArgument);
        Model m(small_config(), 5, 0);
        auto wider = small_config();
        wider.channels = { 7, 5, 4 };
        CHECK_THROWS_AS(m.set_config(wider), InvalidArgument);
    }

    TEST_CASE("parameter layout and initialization")
    {
        Model m(small_config(), 9, 2);
        std::size_t total = 0;
        for (const auto & s : m.sections()) {
            CHECK(s.offset == total);
            total += s.size();
        }
        CHECK(total == m.parameters().size());
        const auto & w = m.section("block0.w_self");
        CHECK(w.rows == 6);
        CHECK(w.cols == 9);
        const double bound = std::sqrt(6.0 / (3.0 * 9 + 6));
        auto p = m.parameters();
        for (std::size_t i = w.offset; i != w.offset + w.size(); ++i)
            CHECK(std::abs(p[i]) <= bound);
        const auto & gain = m.section("block1.ln_gain");
        for (std::size_t i = gain.offset; i != gain.offset + gain.size(); ++i)
            CHECK(p[i] == 1.0);
        const auto & fc1 = m.section("latency.fc1.w");
        CHECK(fc1.cols == 4 + 2);
        Model same(small_config(), 9, 2), other(small_config(99), 9, 2);
        CHECK(std::equal(p.begin(), p.end(), same.parameters().begin()));
        CHECK_FALSE(std::equal(p.begin(), p.end(), other.parameters().begin()));
    }

    TEST_CASE("checkpoint round trip and width checks")
    {
        auto inst = random_instance(17);
        auto tree = featurize(*inst.plan.root, inst.catalog, inst.stats);
        Model m(small_config(), tree.width(), 3);
        perturb(m, 5, 0.1);
        m.set_label_stats(2.5, 0.75);
        m.set_normalization(inst.stats);
        auto path = (std::filesystem::temp_directory_path() / "delta_treenn_ckpt.json").string();
        save_model(m, path);
        auto back = load_model(path, tree.width(), 3);
        CHECK(std::equal(m.parameters().begin(), m.parameters().end(), back.parameters().begin()));
        CHECK(back.label_shift() == 2.5);
        CHECK(back.label_scale() == 0.75);
        CHECK(back.normalization().cost_max == inst.stats.cost_max);
        Eigen::VectorXd ctx = Eigen::VectorXd::Constant(3, 0.5);
        CHECK(back.forward(tree, &ctx).mean == m.forward(tree, &ctx).mean);
        CHECK(model_to_json(back) == model_to_json(m));
        CHECK_THROWS_AS(load_model(path, tree.width() + 1), InvalidArgument);
        CHECK_THROWS_AS(load_model(path, -1, 4), InvalidArgument);
        std::filesystem::remove(path);
        CHECK_THROWS_AS(load_model(path), IoError);
        CHECK_THROWS_AS(model_from_json(R"({"format":"something-else"})"), SchemaError);
        auto text = model_to_json(m);
        auto pos = text.find("\"block0.w_self\"");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 15, "\"block0.w_oops\"");
        CHECK_THROWS_AS(model_from_json(text), SchemaError);
    }
}
