#pragma once

#include "delta/plan.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace delta::detail {

using json = nlohmann::json;

json node_to_json(const PlanNode & node);
NodePtr node_from_json(const json & j, const Catalog & catalog);

/// Typed field access that reports the missing or mistyped field instead of nlohmann's generic message.
template<typename T>
T field(const json & j, const char * name)
{
    if (!j.is_object())
        throw SchemaError(std::string("expected an object holding '") + name + "'");
    auto it = j.find(name);
    if (it == j.end())
        throw SchemaError(std::string("missing field '") + name + "'");
    try {
        return it->template get<T>();
    } catch (const json::exception &) {
        throw SchemaError(std::string("field '") + name + "' has the wrong type");
    }
}

/// Thresholds may be infinite; JSON has no infinity, so they travel as "inf" / "-inf".
inline json threshold_json(double v) { return std::isinf(v) ? json(v > 0 ? "inf" : "-inf") : json(v); }
inline double threshold_from(const json & j, const char * name)
{
    if (j.is_number())
        return j.get<double>();
    if (j == "inf")
        return std::numeric_limits<double>::infinity();
    if (j == "-inf")
        return -std::numeric_limits<double>::infinity();
    throw SchemaError(std::string("field '") + name + "' must be a number or \"inf\"");
}
inline json thresholds_json(const std::vector<double> & v)
{
    json out = json::array();
    for (double x : v)
        out.push_back(threshold_json(x));
    return out;
}

json parse_json(std::string_view text, std::size_t line = 0);
std::string read_text_file(const std::string & path);
json read_json_file(const std::string & path);
void write_text_file(const std::string & path, const std::string & text);

}
