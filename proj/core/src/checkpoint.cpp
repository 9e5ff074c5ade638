#include "delta/treenn.hpp"

#include "json_internal.hpp"

namespace delta {

using detail::field;
using detail::json;

namespace {

constexpr const char * kFormat = "delta-treenn-checkpoint";
constexpr int kVersion = 1;

const char * loss_name(LossKind k) { return k == LossKind::Heteroscedastic ? "heteroscedastic" : "squared_error"; }

LossKind parse_loss(const std::string & s)
{
    if (s == "heteroscedastic")
        return LossKind::Heteroscedastic;
    if (s == "squared_error")
        return LossKind::SquaredError;
    throw SchemaError("unknown loss kind '" + s + "'");
}

}

std::string model_to_json(const Model & model)
{
    const auto & c = model.config();
    json config{ { "channels", c.channels },
                 { "head_hidden", c.head_hidden },
                 { "learning_rate", c.learning_rate },
                 { "momentum", c.momentum },
                 { "batch_size", c.batch_size },
                 { "epochs", c.epochs },
                 { "validation_fraction", c.validation_fraction },
                 { "grad_clip", c.grad_clip },
                 { "seed", c.seed },
                 { "loss", loss_name(c.loss) } };
    const auto & n = model.normalization();
    json sections = json::array();
    auto params = model.parameters();
    for (const auto & s : model.sections()) {
        std::vector<double> values(params.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                   params.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
        sections.push_back({ { "name", s.name }, { "rows", s.rows }, { "cols", s.cols }, { "values", values } });
    }
    json j{ { "format", kFormat },
            { "version", kVersion },
            { "config", config },
            { "feature_width", model.feature_width() },
            { "context_width", model.context_width() },
            { "label", { { "shift", model.label_shift() }, { "scale", model.label_scale() }, { "fitted", model.label_stats_fitted() } } },
            { "normalization",
              { { "card_min", n.card_min }, { "card_max", n.card_max }, { "cost_min", n.cost_min }, { "cost_max", n.cost_max } } },
            { "sections", sections } };
    return j.dump() + "\n";
}

Model model_from_json(std::string_view text)
{
    auto j = detail::parse_json(text);
    if (!j.is_object() || j.value("format", std::string{}) != kFormat)
        throw SchemaError("not a delta tree-network checkpoint");
    if (field<int>(j, "version") != kVersion)
        throw SchemaError("unsupported checkpoint version " + std::to_string(field<int>(j, "version")));
    auto c = field<json>(j, "config");
    NetConfig config;
    config.channels = field<std::vector<int>>(c, "channels");
    config.head_hidden = field<int>(c, "head_hidden");
    config.learning_rate = field<double>(c, "learning_rate");
    config.momentum = field<double>(c, "momentum");
    config.batch_size = field<int>(c, "batch_size");
    config.epochs = field<int>(c, "epochs");
    config.validation_fraction = field<double>(c, "validation_fraction");
    config.grad_clip = field<double>(c, "grad_clip");
    config.seed = field<std::uint64_t>(c, "seed");
    config.loss = parse_loss(field<std::string>(c, "loss"));

    Model model;
    try {
        model = Model::zeros(config, field<int>(j, "feature_width"), field<int>(j, "context_width"));
    } catch (const InvalidArgument & e) {
        throw SchemaError(std::string("checkpoint config is invalid: ") + e.what());
    }
    auto label = field<json>(j, "label");
    if (field<bool>(label, "fitted"))
        model.set_label_stats(field<double>(label, "shift"), field<double>(label, "scale"));
    auto n = field<json>(j, "normalization");
    model.set_normalization({ field<double>(n, "card_min"), field<double>(n, "card_max"), field<double>(n, "cost_min"),
                              field<double>(n, "cost_max") });

    auto sections = field<json>(j, "sections");
    if (!sections.is_array() || sections.size() != model.sections().size())
        throw SchemaError("checkpoint has the wrong number of parameter sections");
    auto params = model.parameters();
    for (std::size_t i = 0; i != sections.size(); ++i) {
        const auto & expect = model.sections()[i];
        const auto & s = sections[i];
        if (field<std::string>(s, "name") != expect.name || field<int>(s, "rows") != expect.rows ||
            field<int>(s, "cols") != expect.cols)
            throw SchemaError("checkpoint section " + std::to_string(i) + " does not match layout '" + expect.name + "'");
        auto values = field<std::vector<double>>(s, "values");
        if (values.size() != expect.size())
            throw SchemaError("checkpoint section '" + expect.name + "' has the wrong size");
        std::copy(values.begin(), values.end(), params.begin() + static_cast<std::ptrdiff_t>(expect.offset));
    }
    return model;
}

void save_model(const Model & model, const std::string & path) { detail::write_text_file(path, model_to_json(model)); }

Model load_model(const std::string & path, int expected_feature_width, int expected_context_width)
{
    Model m = model_from_json(detail::read_text_file(path));
    if (expected_feature_width >= 0 && m.feature_width() != expected_feature_width)
        throw InvalidArgument("checkpoint " + path + " has feature width " + std::to_string(m.feature_width()) +
                              " but the catalog needs " + std::to_string(expected_feature_width));
    if (expected_context_width >= 0 && m.context_width() != expected_context_width)
        throw InvalidArgument("checkpoint " + path + " has context width " + std::to_string(m.context_width()) +
                              " but the catalog needs " + std::to_string(expected_context_width));
    return m;
}

}
