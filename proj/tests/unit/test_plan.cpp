#include "fixtures.hpp"

#include <doctest.h>

#include <deque>
#include <map>
#include <set>
#include <unordered_map>

using namespace delta;
using namespace fixtures;

namespace {

/// Structural rendering independent of the library's key code.
std::string shape(const PlanNode & n)
{
    if (n.is_leaf())
        return "S" + std::to_string(*n.relation());
    return std::string(to_string(n.op())) + "(" + shape(*n.left()) + "," + shape(*n.right()) + ")";
}

/// Complete plans reachable from the initial state by repeated expansion, as shapes.
std::set<std::string> reachable_plans(const Query & q, const Catalog & c, std::span<const Operator> ops,
                                      std::size_t * states_checked = nullptr)
{
    std::set<std::string> plans;
    std::set<std::string> seen;
    std::deque<SearchState> todo{ SearchState::initial(q) };
    while (!todo.empty()) {
        auto s = std::move(todo.front());
        todo.pop_front();
        for (auto & next : expand(s, q, c, NullAnnotator{}, ops)) {
            next.validate(q);
            if (states_checked)
                ++*states_checked;
            if (!seen.insert(next.key()).second)
                continue;
            if (next.is_terminal())
                plans.insert(shape(*next.forest().front()));
            else
                todo.push_back(std::move(next));
        }
    }
    return plans;
}

}

TEST_SUITE("plan-core")
{
    TEST_CASE("catalog rejects malformed schemas")
    {
        CHECK_THROWS_AS(Catalog(tables({ 10, 0 }), {}), InvariantViolation);
        CHECK_THROWS_AS(Catalog(tables({ 10, 10 }), { { 0, 0, 0.5 } }), InvariantViolation);
        CHECK_THROWS_AS(Catalog(tables({ 10, 10 }), { { 0, 2, 0.5 } }), InvariantViolation);
        CHECK_THROWS_AS(Catalog(tables({ 10, 10 }), { { 0, 1, 0.5 }, { 1, 0, 0.1 } }), InvariantViolation);
        CHECK_THROWS_AS(Catalog(tables({ 10, 10 }), { { 0, 1, 0.0 } }), InvariantViolation);
        CHECK_THROWS_AS(Catalog(tables({ 10, 10 }), { { 0, 1, 1.5 } }), InvariantViolation);
        CHECK_NOTHROW(Catalog(tables({ 10, 10 }), { { 0, 1, 1.0 } }));
    }

    TEST_CASE("query needs two connected relations")
    {
        auto c = chain(3);
        CHECK_THROWS_AS(Query::induced("q", 0b001, c), InvariantViolation);
        CHECK_THROWS_AS(Query::induced("q", 0b101, c), InvariantViolation);
        CHECK_THROWS_AS(Query("q", 0b111, { 0 }, c), InvariantViolation);
        auto q = Query::induced("q", 0b111, c);
        CHECK(q.size() == 3);
        CHECK(q.predicates() == std::vector<std::size_t>{ 0, 1 });
        CHECK(q.joinable(0b001, 0b010));
        CHECK_FALSE(q.joinable(0b001, 0b100));
    }

    TEST_CASE("plan node invariants")
    {
        CHECK_THROWS_AS(PlanNode::join(Operator::HashJoin, scan(0), scan(0)), InvariantViolation);
        CHECK_THROWS_AS(PlanNode::join(Operator::SeqScan, scan(0), scan(1)), InvariantViolation);
        CHECK_THROWS_AS(PlanNode::join(Operator::HashJoin, scan(0), nullptr), InvariantViolation);
        auto j = hj(scan(0), scan(1));
        CHECK(j->relations() == 0b11);
        CHECK(j->size() == 3);
        CHECK_FALSE(j->relation().has_value());
        CHECK(scan(2)->relation() == TableId{ 2 });
    }

    TEST_CASE("plan validation rejects cross products and bad covers")
    {
        auto c = chain(3);
        auto q = whole(c);
        CHECK_NOTHROW(validate_plan({ "q", hj(hj(scan(0), scan(1)), scan(2)) }, q));
        CHECK_THROWS_AS(validate_plan({ "q", hj(hj(scan(0), scan(2)), scan(1)) }, q), InvariantViolation);
        CHECK_THROWS_AS(validate_plan({ "q", hj(scan(0), scan(1)) }, q), InvariantViolation);
        CHECK_THROWS_AS(validate_plan({ "other", hj(hj(scan(0), scan(1)), scan(2)) }, q), InvariantViolation);
    }

    TEST_CASE("expand: initial state of a 3-chain has 3 scan successors")
    {
        auto c = chain(3);
        auto q = whole(c);
        auto next = expand(SearchState::initial(q), q, c);
        REQUIRE(next.size() == 3);
        for (const auto & s : next) {
            CHECK(s.forest().size() == 1);
            CHECK(s.forest().front()->is_leaf());
        }
    }

    TEST_CASE("expand: two joinable trees give 1 scan and 6 joins")
    {
        auto c = chain(3);
        auto q = whole(c);
        SearchState s({ scan(0), scan(1) }, 0b100);
        auto next = expand(s, q, c);
        REQUIRE(next.size() == 7);
        int scans = 0, joins = 0;
        std::set<std::pair<Operator, TableId>> seen;
        for (const auto & n : next) {
            if (n.remaining() == 0) {
                ++scans;
                continue;
            }
            ++joins;
            REQUIRE(n.forest().size() == 1);
            const auto & root = n.forest().front();
            seen.insert({ root->op(), *root->left()->relation() });
        }
        CHECK(scans == 1);
        CHECK(joins == 6);
        CHECK(seen.size() == 6);
    }

    TEST_CASE("expand: a lone tree with no partner gives only scans")
    {
        auto c = chain(3);
        auto q = whole(c);
        SearchState s({ scan(0) }, 0b110);
        auto next = expand(s, q, c);
        CHECK(next.size() == 2);
        for (const auto & n : next)
            CHECK(n.forest().size() == 2);
    }

    TEST_CASE("expand: terminal is empty, inconsistent throws")
    {
        auto c = chain(2);
        auto q = whole(c);
        CHECK(expand(SearchState({ hj(scan(0), scan(1)) }, 0), q, c).empty());
        CHECK_THROWS_AS(expand(SearchState({ scan(0) }, 0b001), q, c), InvariantViolation);
        CHECK_THROWS_AS(expand(SearchState({ scan(0) }, 0), q, c), InvariantViolation);
    }

    TEST_CASE("expand: successors come in (operator rank, left key, right key) order")
    {
        auto c = clique(4);
        auto q = whole(c);
        SearchState s({ scan(0), scan(1), scan(2) }, 0b1000);
        auto next = expand(s, q, c);
        // 1 scan + 3 pairs x 3 operators x 2 orientations
        REQUIRE(next.size() == 19);
        std::vector<std::tuple<int, std::string, std::string>> order;
        for (const auto & n : next) {
            const NodePtr * added = nullptr;
            for (const auto & t : n.forest())
                if (t->size() > 1 || (n.remaining() == 0 && *t->relation() == 3))
                    added = &t;
            REQUIRE(added != nullptr);
            const auto & a = **added;
            if (a.is_leaf())
                order.emplace_back(0, a.key(), "");
            else
                order.emplace_back(rank(a.op()), a.left()->key(), a.right()->key());
        }
        CHECK(std::is_sorted(order.begin(), order.end()));
        CHECK(std::get<0>(order.front()) == 0);
    }

    TEST_CASE("expand: every reachable successor is a consistent state")
    {
        for (int n = 2; n <= 5; ++n) {
            CAPTURE(n);
            auto c = n <= 4 ? clique(n) : chain(n);
            std::size_t checked = 0;
            reachable_plans(whole(c), c, kJoinOperators, &checked);
            CHECK(checked > 0);
        }
        auto c5 = clique(5);
        std::array<Operator, 1> one{ Operator::HashJoin };
        std::size_t checked = 0;
        CHECK(reachable_plans(whole(c5), c5, one, &checked).size() == 1680);
    }

    TEST_CASE("enumerate_all: clique counts (2(n-1))!/(n-1)!")
    {
        std::array<Operator, 1> one{ Operator::HashJoin };
        const std::map<int, std::size_t> expected{ { 2, 2 }, { 3, 12 }, { 4, 120 }, { 5, 1680 } };
        for (auto [n, count] : expected) {
            CAPTURE(n);
            auto c = clique(n);
            auto plans = enumerate_all(whole(c), c, one);
            CHECK(plans.size() == count);
            CHECK(plans.size() == static_cast<std::size_t>(factorial(2 * (n - 1)) / factorial(n - 1)));
            CHECK(count_plans(whole(c), one) == doctest::Approx(static_cast<double>(count)));
        }
    }

    TEST_CASE("enumerate_all: chain A-B-C with one operator has 8 plans")
    {
        auto c = chain(3);
        std::array<Operator, 1> one{ Operator::NestLoopJoin };
        auto plans = enumerate_all(whole(c), c, one);
        CHECK(plans.size() == 8);
        for (const auto & p : plans)
            CHECK_NOTHROW(validate_plan(p, whole(c)));
    }

    TEST_CASE("enumerate_all matches exhaustive expansion")
    {
        for (auto c : { chain(3), chain(4), clique(3), clique(4) }) {
            auto q = whole(c);
            std::set<std::string> enumerated;
            for (const auto & p : enumerate_all(q, c))
                CHECK(enumerated.insert(shape(*p.root)).second);
            CHECK(enumerated == reachable_plans(q, c, kJoinOperators));
        }
    }

    TEST_CASE("enumerate_all refuses past its bound with a size estimate")
    {
        auto c = clique(8);
        try {
            enumerate_all(whole(c), c);
            FAIL("expected BoundExceeded");
        } catch (const BoundExceeded & e) {
            CHECK(std::string(e.what()).find("plans") != std::string::npos);
            CHECK(std::string(e.what()).find("8 relations") != std::string::npos);
        }
        auto c4 = clique(4);
        CHECK_THROWS_AS(enumerate_all(whole(c4), c4, kJoinOperators, NullAnnotator{}, { 7, 100 }), BoundExceeded);
    }

    TEST_CASE("canonical key examples")
    {
        CHECK(scan(0)->key() == scan(0)->key());
        CHECK(scan(3)->key() == R"({"children":[],"op":"SeqScan","rel":3})");
        CHECK(hj(scan(0), scan(1))->key() != hj(scan(1), scan(0))->key());
        CHECK(hj(scan(0), scan(1))->key() != mj(scan(0), scan(1))->key());
        CHECK(hj(scan(0), scan(1))->key() ==
              R"({"children":[{"children":[],"op":"SeqScan","rel":0},{"children":[],"op":"SeqScan","rel":1}],"op":"HashJoin"})");
        CHECK(scan_key(5) == scan(5)->key());
        CHECK(join_key(Operator::MergeJoin, scan(1)->key(), scan(2)->key()) == mj(scan(1), scan(2))->key());
    }

    TEST_CASE("canonical key ignores estimates")
    {
        auto a = PlanNode::scan(0, { 10.0, 20.0 });
        auto b = PlanNode::scan(0, { 99.0, 1.0 });
        CHECK(a->key() == b->key());
    }

    TEST_CASE("canonical key is collision-free over every enumerated subplan")
    {
        std::unordered_map<std::string, std::string> by_key;
        auto check_all = [&](const std::vector<Plan> & plans) {
            for (const auto & p : plans)
                for (const auto & node : subplans(p)) {
                    auto [it, fresh] = by_key.emplace(node->key(), shape(*node));
                    if (!fresh)
                        REQUIRE(it->second == shape(*node));
                }
        };
        for (int n = 2; n <= 4; ++n) {
            auto c = clique(n);
            check_all(enumerate_all(whole(c), c));
        }
        auto c5 = clique(5);
        std::array<Operator, 2> two{ Operator::HashJoin, Operator::MergeJoin };
        check_all(enumerate_all(whole(c5), c5, two));
        std::set<std::string> shapes;
        for (const auto & [k, s] : by_key)
            shapes.insert(s);
        CHECK(shapes.size() == by_key.size());
    }

    TEST_CASE("subplans: 2n-1 nodes, every leaf once")
    {
        auto c = chain(5);
        auto two = Plan{ "q", hj(scan(0), scan(1)) };
        CHECK(subplans(two).size() == 3);
        auto five = Plan{ "q", hj(nl(scan(0), scan(1)), mj(scan(2), hj(scan(3), scan(4)))) };
        auto nodes = subplans(five);
        CHECK(nodes.size() == 9);
        CHECK(nodes.front() == five.root);
        std::multiset<TableId> leaves;
        for (const auto & n : nodes)
            if (n->is_leaf())
                leaves.insert(*n->relation());
        CHECK(leaves == std::multiset<TableId>{ 0, 1, 2, 3, 4 });
    }

    TEST_CASE("search state key is order independent")
    {
        SearchState a({ scan(0), scan(1) }, 0b100);
        SearchState b({ scan(1), scan(0) }, 0b100);
        CHECK(a.key() == b.key());
        CHECK(a.forest().front()->key() == b.forest().front()->key());
        CHECK(SearchState({ scan(0), scan(1) }, 0).key() != a.key());
    }

    TEST_CASE("plan json round trip")
    {
        auto c = chain(3);
        auto root = PlanNode::join(Operator::HashJoin, PlanNode::join(Operator::MergeJoin, PlanNode::scan(0, { 1000, 1000 }),
                                                                      PlanNode::scan(1, { 1000, 1000 }), { 10000, 5000 }),
                                   PlanNode::scan(2, { 1000, 1000 }), { 100000, 9000 });
        auto text = plan_to_json(*root);
        auto back = plan_from_json(text, c);
        CHECK(back->key() == root->key());
        CHECK(back->est_cardinality() == 100000);
        CHECK(back->left()->est_cost() == 5000);
        CHECK(plan_to_json(*back) == text);
        CHECK_THROWS_AS(plan_from_json(R"({"card":1,"children":[],"cost":1,"op":"SeqScan","rel":9})", c), Error);
        CHECK_THROWS_AS(plan_from_json(R"({"card":1,"children":[],"cost":1,"op":"IndexScan","rel":0})", c), Error);
        CHECK_THROWS_AS(plan_from_json("{not json", c), SchemaError);
    }
}
