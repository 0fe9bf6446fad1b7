#pragma once

#include "../metaphorsim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace metaphorsim::harness {

using nlohmann::json;

inline constexpr std::size_t default_run_cap = 100'000;

struct SweepAxis {
    std::string path;  // dotted, starting with the model name
    std::vector<json> values;
};

struct Scenario {
    std::string id;
    std::string model;  // dataloss | recovery | trauma | path to a model document
    std::string base_dir;
    json params = json::object();
    std::vector<std::uint64_t> seeds;
    double horizon = 0.0;
    json properties = json::array();
    std::vector<SweepAxis> sweep;
    json metadata;
    std::size_t cap = default_run_cap;

    bool builtin() const { return model == "dataloss" || model == "recovery" || model == "trauma"; }
    std::size_t cells() const {
        std::size_t n = 1;
        for (const auto& a : sweep) n *= a.values.size();
        return n;
    }
};

namespace detail {

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

// Typos and abbreviations both count as near misses: "admns" should find "admins_per_large_office".
inline std::size_t closeness(std::string_view typed, std::string_view candidate) {
    std::size_t best = levenshtein(typed, candidate);
    for (std::size_t len = typed.size() > 0 ? typed.size() - 1 : 0; len <= typed.size() + 1 && len < candidate.size(); ++len)
        best = std::min(best, levenshtein(typed, candidate.substr(0, len)) + 1);
    return best;
}

inline std::string suggestion(std::string_view typed, const std::vector<std::string>& candidates) {
    const std::string* best = nullptr;
    std::size_t score = std::max<std::size_t>(2, typed.size() / 2) + 1;
    for (const auto& c : candidates) {
        std::size_t s = closeness(typed, c);
        if (s < score) score = s, best = &c;
    }
    return best ? *best : std::string{};
}

inline std::string join(const std::vector<std::string>& parts, std::size_t n, char sep = '.') {
    std::string out;
    for (std::size_t i = 0; i < n && i < parts.size(); ++i) out += (i ? std::string(1, sep) : "") + parts[i];
    return out;
}

inline bool is_distribution(const json& j) { return j.is_object() && j.contains("type"); }

} // namespace detail

/// Sets the dotted `path` (model name first) in the model's full parameter tree.
/// Objects merge key by key unless the target is a distribution, which is replaced whole.
inline void apply_override(json& params, const std::string& model, const std::string& path, const json& value) {
    auto parts = split(path, '.');
    auto unknown = [&](std::size_t depth, const std::vector<std::string>& siblings) {
        std::string msg = "unknown parameter '" + path + "'";
        std::string near = detail::suggestion(parts[depth], siblings);
        if (!near.empty()) {
            auto fixed = parts;
            fixed[depth] = near;
            msg += "; did you mean '" + detail::join(fixed, depth + 1) + "'?";
        }
        throw Error(ErrorCode::UnknownParameter, msg);
    };
    if (parts.empty() || parts[0] != model) unknown(0, {model});
    json* node = &params;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i])) {
            std::vector<std::string> keys;
            if (node->is_object())
                for (const auto& [k, v] : node->items()) keys.push_back(k);
            unknown(i, keys);
        }
        node = &(*node)[parts[i]];
    }
    if (value.is_object() && node->is_object() && !detail::is_distribution(*node)) {
        for (const auto& [k, v] : value.items()) apply_override(params, model, path + "." + k, v);
        return;
    }
    *node = value;
}

/// Nested or dotted `overrides` applied over `params`; keys are relative to the model name.
inline void apply_overrides(json& params, const std::string& model, const json& overrides) {
    for (const auto& [k, v] : overrides.items()) apply_override(params, model, k, v);
}

inline json default_params(const std::string& model) {
    if (model == "recovery") return recovery::params_to_json(recovery::RecoveryParams{});
    if (model == "dataloss") return dataloss::params_to_json(dataloss::DataLossParams{});
    if (model == "trauma") return trauma::params_to_json(trauma::default_params());
    return json::object();
}

using MetricHook = std::function<void(const RunResult&, MetricTable&)>;

struct BuiltModel {
    ModelSpec model;
    RuleRegistry registry;
    MetricHook extra_metrics;
};

/// The scenario's parameters with the base overrides and then one sweep cell's values applied.
inline json resolve_params(const Scenario& s, const std::vector<std::pair<std::string, json>>& cell = {}) {
    json p = default_params(s.model);
    if (!s.builtin()) {
        if (!s.params.empty() || !cell.empty())
            throw Error(ErrorCode::UnknownParameter, "model document '" + s.model + "' takes no parameters");
        return p;
    }
    apply_overrides(p, s.model, s.params);
    for (const auto& [path, v] : cell) apply_override(p, s.model, path, v);
    return p;
}

inline BuiltModel build_model(const Scenario& s, const json& params) {
    auto wrap = [&](auto&& f) {
        try {
            return f();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidParameter, s.model + " parameters: " + e.what());
        }
    };
    if (s.model == "recovery")
        return wrap([&] {
            auto p = recovery::params_from_json(params);
            recovery::validate_params(p);
            return BuiltModel{recovery::build_recovery_model(p), recovery::registry(), recovery::add_metrics};
        });
    if (s.model == "dataloss")
        return wrap([&] {
            auto p = dataloss::params_from_json(params);
            dataloss::validate_params(p);
            return BuiltModel{dataloss::build_model(p), dataloss::registry(), dataloss::add_metrics};
        });
    if (s.model == "trauma")
        return wrap([&] {
            auto p = trauma::params_from_json(params, s.base_dir);
            trauma::validate_params(p);
            return BuiltModel{trauma::build_model(p), trauma::registry(), trauma::add_metrics};
        });
    std::filesystem::path doc = s.model;
    if (doc.is_relative() && !s.base_dir.empty()) doc = std::filesystem::path(s.base_dir) / doc;
    std::ifstream in(doc);
    if (!in) throw Error(ErrorCode::ParseError, "cannot read model document '" + doc.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, doc.string() + ": " + e.what());
    }
    return BuiltModel{model_from_json(j), standard_registry(), nullptr};
}

inline std::vector<LocalProperty> scenario_properties(const Scenario& s, const ModelSpec& m) {
    std::vector<LocalProperty> out;
    for (const auto& p : s.properties) out.push_back(property_from_json(p, &m));
    return out;
}

/// Sweep cells in row-major order: the first axis varies slowest.
inline std::vector<std::vector<std::pair<std::string, json>>> grid(const Scenario& s) {
    std::vector<std::vector<std::pair<std::string, json>>> cells{{}};
    for (const auto& axis : s.sweep) {
        std::vector<std::vector<std::pair<std::string, json>>> next;
        for (const auto& c : cells)
            for (const auto& v : axis.values) {
                auto e = c;
                e.emplace_back(axis.path, v);
                next.push_back(std::move(e));
            }
        cells = std::move(next);
    }
    return cells;
}

/// Seed used when a scenario lists none: METAPHORSIM_SEED, else 1.
inline std::uint64_t default_seed() {
    if (const char* env = std::getenv("METAPHORSIM_SEED")) {
        char* end = nullptr;
        auto v = std::strtoull(env, &end, 10);
        if (end && *end == '\0' && end != env) return v;
        throw Error(ErrorCode::InvalidParameter, "METAPHORSIM_SEED is not an unsigned integer: '" + std::string(env) + "'");
    }
    return 1;
}

namespace detail {

inline std::string position(std::string_view text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') ++line, col = 1;
        else ++col;
    }
    return std::to_string(line) + ":" + std::to_string(col);
}

} // namespace detail

inline Scenario parse_scenario(std::string_view text, const std::string& origin = "<scenario>") {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, origin + ":" + detail::position(text, e.byte) + ": " + e.what());
    }
    auto fail = [&](const std::string& m) { throw Error(ErrorCode::ParseError, origin + ": " + m); };
    if (!j.is_object()) fail("top level must be an object");
    static const std::set<std::string> known = {"model", "params", "seeds", "horizon", "properties", "sweep", "metadata", "cap"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) fail("unknown field '" + k + "'");

    Scenario s;
    std::filesystem::path p(origin);
    s.id = p.stem().string();
    s.base_dir = p.parent_path().string();
    try {
        if (!j.contains("model")) fail("missing field 'model'");
        s.model = j.at("model").get<std::string>();
        if (!j.contains("horizon")) fail("missing field 'horizon'");
        s.horizon = j.at("horizon").get<double>();
        if (s.horizon < 0) fail("horizon must be >= 0");
        if (j.contains("params")) {
            s.params = j.at("params");
            if (!s.params.is_object()) fail("params must be an object");
        }
        if (j.contains("seeds")) {
            const auto& sd = j.at("seeds");
            if (sd.is_array()) s.seeds = sd.get<std::vector<std::uint64_t>>();
            else {
                auto base = sd.at("base").get<std::uint64_t>();
                auto count = sd.at("count").get<std::uint64_t>();
                for (std::uint64_t i = 0; i < count; ++i) s.seeds.push_back(base + i);
            }
            if (s.seeds.empty()) fail("seeds must not be empty");
        } else
            s.seeds = {default_seed()};
        if (j.contains("properties")) s.properties = j.at("properties");
        if (j.contains("sweep"))
            for (const auto& a : j.at("sweep")) {
                SweepAxis axis{a.at("param").get<std::string>(), a.at("values").get<std::vector<json>>()};
                if (axis.values.empty()) fail("sweep axis '" + axis.path + "' has no values");
                s.sweep.push_back(std::move(axis));
            }
        if (j.contains("metadata")) s.metadata = j.at("metadata");
        if (j.contains("cap")) s.cap = j.at("cap").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(e.what());
    }
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path);
}

/// Every problem that would stop the scenario from running, as "<Code>: message" lines.
inline std::vector<std::string> validate_scenario(const Scenario& s) {
    std::vector<std::string> out;
    auto note = [&](const Error& e) { out.push_back(e.what()); };
    std::size_t runs = s.cells() * s.seeds.size();
    if (runs > s.cap)
        out.push_back("InvalidParameter: " + std::to_string(runs) + " runs exceed the cap of " + std::to_string(s.cap));
    auto cells = grid(s);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        try {
            auto built = build_model(s, resolve_params(s, cells[i]));
            for (const auto& d : validate_model(built.model, built.registry)) out.push_back(format(d));
            scenario_properties(s, built.model);
        } catch (const Error& e) {
            note(e);
        }
        if (!out.empty()) break;
    }
    return out;
}

} // namespace metaphorsim::harness
