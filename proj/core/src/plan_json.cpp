#include "json_internal.hpp"

#include <fstream>
#include <sstream>

namespace delta {

namespace detail {

json node_to_json(const PlanNode & node)
{
    json j;
    j["op"] = std::string(to_string(node.op()));
    j["card"] = node.est_cardinality();
    j["cost"] = node.est_cost();
    if (node.is_leaf()) {
        j["rel"] = *node.relation();
        j["children"] = json::array();
    } else {
        j["children"] = json::array({ node_to_json(*node.left()), node_to_json(*node.right()) });
    }
    return j;
}

NodePtr node_from_json(const json & j, const Catalog & catalog)
{
    if (!j.is_object())
        throw SchemaError("plan node must be an object");
    Operator op = parse_operator(field<std::string>(j, "op"));
    Annotation ann{ field<double>(j, "card"), field<double>(j, "cost") };
    auto children = j.contains("children") ? field<json>(j, "children") : json::array();
    if (op == Operator::SeqScan) {
        if (!children.empty())
            throw SchemaError("SeqScan node has children");
        auto rel = field<TableId>(j, "rel");
        if (!catalog.has_table(rel))
            throw SchemaError("unknown table id " + std::to_string(rel));
        return PlanNode::scan(rel, ann);
    }
    if (j.contains("rel"))
        throw SchemaError("join node carries a relation");
    if (!children.is_array() || children.size() != 2)
        throw SchemaError("join node needs exactly two children");
    auto left = node_from_json(children[0], catalog);
    auto right = node_from_json(children[1], catalog);
    if (!disjoint(left->relations(), right->relations()))
        throw SchemaError("join children overlap");
    return PlanNode::join(op, std::move(left), std::move(right), ann);
}

json parse_json(std::string_view text, std::size_t line)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error & e) {
        if (!line) {
            line = 1;
            for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
                line += text[i] == '\n';
        }
        throw SchemaError(std::string("malformed JSON: ") + e.what(), line);
    }
}

std::string read_text_file(const std::string & path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json_file(const std::string & path) { return parse_json(read_text_file(path)); }

void write_text_file(const std::string & path, const std::string & text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path);
    out << text;
    if (!out)
        throw IoError("short write to " + path);
}

}

std::string plan_to_json(const PlanNode & node) { return detail::node_to_json(node).dump(); }

NodePtr plan_from_json(std::string_view text, const Catalog & catalog)
{
    return detail::node_from_json(detail::parse_json(text), catalog);
}

}
