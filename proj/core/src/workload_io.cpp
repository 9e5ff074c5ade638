#include "delta/simdb.hpp"

#include "json_internal.hpp"

namespace delta {

using detail::field;
using detail::json;

std::string workload_to_json(const Workload & w)
{
    json tables = json::array();
    for (const auto & t : w.catalog.tables())
        tables.push_back({ { "id", t.id }, { "rows", t.rows } });
    json edges = json::array();
    for (const auto & e : w.catalog.edges())
        edges.push_back({ { "a", e.a }, { "b", e.b }, { "sel", e.selectivity } });
    json queries = json::array();
    for (const auto & q : w.queries) {
        json rels = json::array();
        for (RelSet r = q.relations(); r; r &= r - 1)
            rels.push_back(lowest(r));
        queries.push_back({ { "id", q.id() }, { "relations", rels }, { "predicates", q.predicates() } });
    }
    json j{ { "catalog", { { "tables", tables }, { "edges", edges } } }, { "queries", queries } };
    return j.dump(1) + "\n";
}

Workload workload_from_json(std::string_view text)
{
    auto j = detail::parse_json(text);
    auto cat = field<json>(j, "catalog");
    std::vector<Table> tables;
    for (const auto & t : field<json>(cat, "tables"))
        tables.push_back({ field<TableId>(t, "id"), field<std::uint64_t>(t, "rows") });
    std::vector<JoinEdge> edges;
    for (const auto & e : field<json>(cat, "edges"))
        edges.push_back({ field<TableId>(e, "a"), field<TableId>(e, "b"), field<double>(e, "sel") });
    Workload w;
    try {
        w.catalog = Catalog(std::move(tables), std::move(edges));
        for (const auto & q : field<json>(j, "queries")) {
            RelSet rels = 0;
            for (auto t : field<std::vector<TableId>>(q, "relations")) {
                if (t >= kMaxTables)
                    throw SchemaError("table id out of range");
                rels |= singleton(t);
            }
            w.queries.emplace_back(field<std::string>(q, "id"), rels,
                                   field<std::vector<std::size_t>>(q, "predicates"), w.catalog);
        }
    } catch (const InvariantViolation & e) {
        throw SchemaError(std::string("workload violates an invariant: ") + e.what());
    }
    return w;
}

void save_workload(const Workload & workload, const std::string & path)
{
    detail::write_text_file(path, workload_to_json(workload));
}

Workload load_workload(const std::string & path)
{
    return workload_from_json(detail::read_text_file(path));
}

std::string record_to_json(const ExecutedPlanRecord & r)
{
    json j{ { "query_id", r.query_id },
            { "plan", detail::node_to_json(*r.plan.root) },
            { "latency", r.latency },
            { "node_latencies", r.node_latencies },
            { "repetition", r.repetition } };
    return j.dump();
}

ExecutedPlanRecord record_from_json(std::string_view line, const Catalog & catalog, std::size_t line_no)
{
    try {
        auto j = detail::parse_json(line, line_no);
        ExecutedPlanRecord r;
        r.query_id = field<std::string>(j, "query_id");
        r.plan = { r.query_id, detail::node_from_json(field<json>(j, "plan"), catalog) };
        r.latency = field<double>(j, "latency");
        r.node_latencies = field<std::map<std::string, double>>(j, "node_latencies");
        r.repetition = j.value("repetition", std::uint64_t{ 0 });
        validate_record(r);
        return r;
    } catch (const SchemaError & e) {
        if (e.line())
            throw;
        throw SchemaError(e.what(), line_no);
    } catch (const Error & e) {
        throw SchemaError(e.what(), line_no);
    }
}

}
