#pragma once

#include "delta/plan.hpp"

#include <vector>

namespace fixtures {

using namespace delta;

/// Tables 0..n-1 with the given row counts.
inline std::vector<Table> tables(std::vector<std::uint64_t> rows)
{
    std::vector<Table> out;
    for (std::size_t i = 0; i != rows.size(); ++i)
        out.push_back({ static_cast<TableId>(i), rows[i] });
    return out;
}

inline Catalog clique(int n, double sel = 0.01, std::uint64_t rows = 1000)
{
    std::vector<JoinEdge> edges;
    for (int a = 0; a != n; ++a)
        for (int b = a + 1; b != n; ++b)
            edges.push_back({ static_cast<TableId>(a), static_cast<TableId>(b), sel });
    return Catalog(tables(std::vector<std::uint64_t>(static_cast<std::size_t>(n), rows)), edges);
}

inline Catalog chain(int n, double sel = 0.01, std::uint64_t rows = 1000)
{
    std::vector<JoinEdge> edges;
    for (int a = 0; a + 1 < n; ++a)
        edges.push_back({ static_cast<TableId>(a), static_cast<TableId>(a + 1), sel });
    return Catalog(tables(std::vector<std::uint64_t>(static_cast<std::size_t>(n), rows)), edges);
}

inline RelSet first_n(int n) { return (RelSet{ 1 } << n) - 1; }

inline Query whole(const Catalog & c, std::string id = "q")
{
    return Query::induced(std::move(id), first_n(static_cast<int>(c.table_count())), c);
}

inline NodePtr scan(TableId t) { return PlanNode::scan(t); }
inline NodePtr hj(NodePtr l, NodePtr r) { return PlanNode::join(Operator::HashJoin, std::move(l), std::move(r)); }
inline NodePtr nl(NodePtr l, NodePtr r) { return PlanNode::join(Operator::NestLoopJoin, std::move(l), std::move(r)); }
inline NodePtr mj(NodePtr l, NodePtr r) { return PlanNode::join(Operator::MergeJoin, std::move(l), std::move(r)); }

/// n! computed in doubles.
inline double factorial(int n)
{
    double f = 1.0;
    for (int i = 2; i <= n; ++i)
        f *= i;
    return f;
}

}
