#pragma once

#include "model.hpp"

#include <json.hpp>

#include <string>

namespace metaphorsim {

namespace io {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::string& where, const std::string& msg) {
    throw Error(ErrorCode::ParseError, where + ": " + msg);
}

inline const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) fail(where, std::string("missing key '") + key + "'");
    return j.at(key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    return j.at(key).get<T>();
}

inline AttrValue attr_from_json(const json& j, const std::string& where) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number_float()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    fail(where, "attribute values must be scalars");
}

inline json attr_to_json(const AttrValue& v) {
    return std::visit([](const auto& x) { return json(x); }, v);
}

inline AttrMap attrs_from_json(const json& j, const std::string& where) {
    AttrMap out;
    if (j.is_null()) return out;
    if (!j.is_object()) fail(where, "expected an object of attributes");
    for (auto it = j.begin(); it != j.end(); ++it) out.emplace(it.key(), attr_from_json(it.value(), where + "." + it.key()));
    return out;
}

inline json attrs_to_json(const AttrMap& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[k] = attr_to_json(v);
    return j;
}

inline DistributionSpec distribution_from_json(const json& j, const std::string& where) {
    if (j.is_number()) return dist::Constant{j.get<double>()};
    std::string type = need(j, "type", where).get<std::string>();
    if (type == "constant") return dist::Constant{need(j, "value", where).get<double>()};
    if (type == "exponential") return dist::Exponential{need(j, "rate", where).get<double>()};
    if (type == "uniform") return dist::Uniform{need(j, "lo", where).get<double>(), need(j, "hi", where).get<double>()};
    if (type == "range") return dist::Range{need(j, "lo", where).get<double>(), need(j, "hi", where).get<double>()};
    if (type == "bernoulli") return dist::Bernoulli{need(j, "p", where).get<double>()};
    if (type == "empirical") {
        dist::Empirical e;
        for (const auto& p : need(j, "points", where)) e.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        return e;
    }
    fail(where, "unknown distribution type '" + type + "'");
}

inline json distribution_to_json(const DistributionSpec& d) {
    return std::visit(
        [](const auto& x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, dist::Constant>) return {{"type", "constant"}, {"value", x.v}};
            else if constexpr (std::is_same_v<T, dist::Exponential>) return {{"type", "exponential"}, {"rate", x.rate}};
            else if constexpr (std::is_same_v<T, dist::Uniform>) return {{"type", "uniform"}, {"lo", x.lo}, {"hi", x.hi}};
            else if constexpr (std::is_same_v<T, dist::Range>) return {{"type", "range"}, {"lo", x.lo}, {"hi", x.hi}};
            else if constexpr (std::is_same_v<T, dist::Bernoulli>) return {{"type", "bernoulli"}, {"p", x.p}};
            else {
                json pts = json::array();
                for (const auto& [v, w] : x.points) pts.push_back({v, w});
                return {{"type", "empirical"}, {"points", pts}};
            }
        },
        d);
}

inline ResourcePattern pattern_from_json(const json& j, const std::string& where) {
    ResourcePattern p;
    p.kind = need(j, "kind", where).get<std::string>();
    p.quantity = get_or<std::size_t>(j, "quantity", 1);
    p.binding = get_or<std::string>(j, "binding", "");
    p.self = get_or<bool>(j, "self", false);
    if (j.contains("constraints"))
        for (const auto& c : j.at("constraints")) {
            AttributeConstraint ac;
            ac.attribute = need(c, "attr", where).get<std::string>();
            ac.comparator = parse_comparator(get_or<std::string>(c, "op", "="));
            if (c.contains("ref")) {
                ac.ref = c.at("ref").get<std::string>();
                ac.value = std::string{};
            } else {
                ac.value = attr_from_json(need(c, "value", where), where);
            }
            p.constraints.push_back(std::move(ac));
        }
    return p;
}

inline json pattern_to_json(const ResourcePattern& p) {
    json j{{"kind", p.kind}, {"quantity", p.quantity}};
    if (!p.binding.empty()) j["binding"] = p.binding;
    if (p.self) j["self"] = true;
    if (!p.constraints.empty()) {
        json cs = json::array();
        for (const auto& c : p.constraints) {
            json x{{"attr", c.attribute}, {"op", std::string(to_string(c.comparator))}};
            if (!c.ref.empty()) x["ref"] = c.ref;
            else x["value"] = attr_to_json(c.value);
            cs.push_back(std::move(x));
        }
        j["constraints"] = std::move(cs);
    }
    return j;
}

inline Action action_from_json(const json& j, const std::string& where) {
    Action a;
    a.name = need(j, "name", where).get<std::string>();
    if (j.contains("params")) a.params = attrs_from_json(j.at("params"), where + ".params");
    if (j.contains("duration")) a.duration = distribution_from_json(j.at("duration"), where + ".duration");
    a.at = get_or<std::string>(j, "at", "@here");
    if (j.contains("event")) a.event = j.at("event").get<std::string>();
    if (j.contains("binds")) a.binds = j.at("binds").get<std::vector<std::string>>();
    return a;
}

inline json action_to_json(const Action& a) {
    json j{{"name", a.name}, {"at", a.at}, {"duration", distribution_to_json(a.duration)}};
    if (!a.params.empty()) j["params"] = attrs_to_json(a.params);
    if (a.event) j["event"] = *a.event;
    if (!a.binds.empty()) j["binds"] = a.binds;
    return j;
}

inline Condition condition_from_json(const json& j, const std::string& where) {
    Condition c;
    std::string type = need(j, "type", where).get<std::string>();
    if (type == "match") {
        c.type = Condition::Type::Match;
        c.pattern = pattern_from_json(need(j, "pattern", where), where);
        c.at = get_or<std::string>(j, "at", "@here");
    } else if (type == "guard") {
        c.type = Condition::Type::Guard;
        c.rule = need(j, "rule", where).get<std::string>();
        c.at = get_or<std::string>(j, "at", "@here");
        if (j.contains("params")) c.params = attrs_from_json(j.at("params"), where);
    } else if (type == "var") {
        c.type = Condition::Type::VarEquals;
        c.var = need(j, "var", where).get<std::string>();
        c.value = attr_from_json(need(j, "value", where), where);
    } else {
        fail(where, "unknown condition type '" + type + "'");
    }
    return c;
}

inline json condition_to_json(const Condition& c) {
    switch (c.type) {
    case Condition::Type::Match: return {{"type", "match"}, {"pattern", pattern_to_json(c.pattern)}, {"at", c.at}};
    case Condition::Type::Guard:
        return {{"type", "guard"}, {"rule", c.rule}, {"at", c.at}, {"params", attrs_to_json(c.params)}};
    case Condition::Type::VarEquals: return {{"type", "var"}, {"var", c.var}, {"value", attr_to_json(c.value)}};
    }
    return {};
}

inline TermPtr term_from_json(const json& j, const std::string& where) {
    using namespace dsl;
    if (j.is_null()) return nil();
    std::string op = need(j, "op", where).get<std::string>();
    auto next = [&](const char* key = "next") {
        return j.contains(key) ? term_from_json(j.at(key), where + "." + key) : nil();
    };
    auto list = [&](const char* key) {
        std::vector<TermPtr> out;
        std::size_t i = 0;
        for (const auto& t : need(j, key, where)) out.push_back(term_from_json(t, where + "." + key + "[" + std::to_string(i++) + "]"));
        return out;
    };
    if (op == "nil") return nil();
    if (op == "prefix") return prefix(action_from_json(need(j, "action", where), where + ".action"), next());
    if (op == "seq") return j.contains("terms") ? seq(list("terms")) : seq(next("first"), next("second"));
    if (op == "par") return j.contains("terms") ? par(list("terms")) : par(next("left"), next("right"));
    if (op == "choose") {
        std::vector<std::pair<double, TermPtr>> bs;
        for (const auto& b : need(j, "branches", where))
            bs.emplace_back(need(b, "weight", where).get<double>(), term_from_json(need(b, "term", where), where));
        return choose(std::move(bs));
    }
    if (op == "move")
        return move(pattern_from_json(need(j, "pattern", where), where), need(j, "from", where).get<std::string>(),
                    need(j, "to", where).get<std::string>(), next());
    if (op == "claim")
        return claim(pattern_from_json(need(j, "pattern", where), where), need(j, "at", where).get<std::string>(), next());
    if (op == "release")
        return release(need(j, "binding", where).get<std::string>(), need(j, "at", where).get<std::string>(), next());
    if (op == "spawn") return spawn(need(j, "process", where).get<std::string>(), next());
    if (op == "call") return call(need(j, "process", where).get<std::string>());
    if (op == "if")
        return when(condition_from_json(need(j, "condition", where), where), next("then"), next("else"));
    fail(where, "unknown term op '" + op + "'");
}

inline json term_to_json(const TermPtr& t) {
    if (!t) return json{{"op", "nil"}};
    return std::visit(
        [](const auto& n) -> json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, term::Nil>) return {{"op", "nil"}};
            else if constexpr (std::is_same_v<T, term::Prefix>)
                return {{"op", "prefix"}, {"action", action_to_json(n.action)}, {"next", term_to_json(n.next)}};
            else if constexpr (std::is_same_v<T, term::Seq>)
                return {{"op", "seq"}, {"first", term_to_json(n.first)}, {"second", term_to_json(n.second)}};
            else if constexpr (std::is_same_v<T, term::Par>)
                return {{"op", "par"}, {"left", term_to_json(n.left)}, {"right", term_to_json(n.right)}};
            else if constexpr (std::is_same_v<T, term::Choose>) {
                json bs = json::array();
                for (const auto& [w, b] : n.branches) bs.push_back({{"weight", w}, {"term", term_to_json(b)}});
                return {{"op", "choose"}, {"branches", bs}};
            } else if constexpr (std::is_same_v<T, term::Move>)
                return {{"op", "move"}, {"pattern", pattern_to_json(n.pattern)}, {"from", n.from}, {"to", n.to},
                        {"next", term_to_json(n.next)}};
            else if constexpr (std::is_same_v<T, term::Claim>)
                return {{"op", "claim"}, {"pattern", pattern_to_json(n.pattern)}, {"at", n.at}, {"next", term_to_json(n.next)}};
            else if constexpr (std::is_same_v<T, term::Release>)
                return {{"op", "release"}, {"binding", n.binding}, {"at", n.at}, {"next", term_to_json(n.next)}};
            else if constexpr (std::is_same_v<T, term::Spawn>)
                return {{"op", "spawn"}, {"process", n.process}, {"next", term_to_json(n.next)}};
            else if constexpr (std::is_same_v<T, term::Call>) return {{"op", "call"}, {"process", n.process}};
            else
                return {{"op", "if"}, {"condition", condition_to_json(n.condition)}, {"then", term_to_json(n.then_branch)},
                        {"else", term_to_json(n.else_branch)}};
        },
        t->node);
}

inline AtomTemplate template_from_json(const json& j, const std::string& where) {
    return AtomTemplate{need(j, "kind", where).get<std::string>(),
                        j.contains("attributes") ? attrs_from_json(j.at("attributes"), where) : AttrMap{}};
}

inline json template_to_json(const AtomTemplate& t) { return {{"kind", t.kind}, {"attributes", attrs_to_json(t.attributes)}}; }

inline MetricDecl::Type parse_metric_type(const std::string& s, const std::string& where) {
    if (s == "counter") return MetricDecl::Type::Counter;
    if (s == "duration") return MetricDecl::Type::Duration;
    if (s == "time_weighted") return MetricDecl::Type::TimeWeighted;
    fail(where, "unknown metric type '" + s + "'");
}

inline std::string_view to_string(MetricDecl::Type t) {
    switch (t) {
    case MetricDecl::Type::Counter: return "counter";
    case MetricDecl::Type::Duration: return "duration";
    case MetricDecl::Type::TimeWeighted: return "time_weighted";
    }
    return "?";
}

} // namespace io

inline ModelSpec model_from_json(const nlohmann::json& j) {
    using namespace io;
    ModelSpec m;
    m.name = get_or<std::string>(j, "name", "model");
    if (j.contains("locations"))
        for (const auto& l : j.at("locations")) {
            if (l.is_string()) {
                m.graph.add_node(LocationNode{l.get<std::string>(), LocationKind::Physical, {}});
                continue;
            }
            std::string name = need(l, "name", "locations").get<std::string>();
            if (m.graph.has_node(name)) fail("locations", "duplicate location '" + name + "'");
            m.graph.add_node(LocationNode{name, parse_location_kind(get_or<std::string>(l, "kind", "physical")),
                                          l.contains("attributes") ? attrs_from_json(l.at("attributes"), "locations." + name)
                                                                   : AttrMap{}});
        }
    if (j.contains("edges"))
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) fail("edges", "each edge is a [from, to] pair");
            m.graph.add_edge(e.at(0).get<std::string>(), e.at(1).get<std::string>());
        }
    if (j.contains("kinds"))
        for (const auto& k : j.at("kinds")) {
            ResourceKind rk;
            rk.name = need(k, "name", "kinds").get<std::string>();
            if (m.kinds.count(rk.name)) fail("kinds", "duplicate kind '" + rk.name + "'");
            if (k.contains("attributes"))
                for (auto it = k.at("attributes").begin(); it != k.at("attributes").end(); ++it)
                    rk.attribute_schema.emplace(it.key(), parse_value_type(it.value().get<std::string>()));
            if (k.contains("incompatible"))
                for (const auto& x : k.at("incompatible")) rk.incompatible.insert(x.get<std::string>());
            m.kinds.emplace(rk.name, std::move(rk));
        }
    if (j.contains("rules"))
        for (const auto& r : j.at("rules")) m.rules.insert(r.get<std::string>());
    if (j.contains("processes"))
        for (auto it = j.at("processes").begin(); it != j.at("processes").end(); ++it) {
            const auto& v = it.value();
            std::string where = "processes." + it.key();
            if (v.contains("body")) {
                m.add_process(it.key(), term_from_json(v.at("body"), where),
                              get_or<std::vector<std::string>>(v, "requires", {}));
            } else {
                m.add_process(it.key(), term_from_json(v, where));
            }
        }
    if (j.contains("agents"))
        for (const auto& a : j.at("agents")) {
            AgentSpec s;
            s.name = need(a, "name", "agents").get<std::string>();
            std::string where = "agents." + s.name;
            s.marker = template_from_json(need(a, "marker", where), where);
            s.start = get_or<std::string>(a, "start", "");
            s.behaviour = get_or<std::string>(a, "behaviour", "");
            s.carried = get_or<std::string>(a, "carried", "");
            s.memory = get_or<std::string>(a, "memory", "");
            s.autostart = get_or<bool>(a, "autostart", true);
            s.standing = get_or<bool>(a, "standing", false);
            m.agents.push_back(std::move(s));
        }
    if (j.contains("environments"))
        for (const auto& e : j.at("environments")) {
            EnvironmentSpec s;
            s.name = need(e, "name", "environments").get<std::string>();
            std::string where = "environments." + s.name;
            s.interface = need(e, "interface", where).get<std::string>();
            s.inter_arrival = distribution_from_json(need(e, "inter_arrival", where), where);
            s.process = get_or<std::string>(e, "process", "");
            if (e.contains("templates"))
                for (const auto& t : e.at("templates")) s.templates.push_back(template_from_json(t, where));
            s.emitted_event_types = get_or<std::vector<std::string>>(e, "emitted_event_types", {});
            s.event_type = get_or<std::string>(e, "event_type", "");
            if (e.contains("window")) {
                s.window_start = e.at("window").at(0).get<double>();
                s.window_end = e.at("window").at(1).get<double>();
            }
            s.batch = get_or<std::size_t>(e, "batch", 1);
            if (e.contains("max_occurrences")) s.max_occurrences = e.at("max_occurrences").get<std::size_t>();
            if (e.contains("first_at")) s.first_at = e.at("first_at").get<double>();
            s.agents = get_or<std::vector<std::string>>(e, "agents", {});
            m.environments.push_back(std::move(s));
        }
    if (j.contains("initial_placement"))
        for (auto it = j.at("initial_placement").begin(); it != j.at("initial_placement").end(); ++it)
            for (const auto& a : it.value()) {
                std::string where = "initial_placement." + it.key();
                ResourceAtom atom{need(a, "kind", where).get<std::string>(), AtomId{need(a, "id", where).get<std::uint64_t>()},
                                  a.contains("attributes") ? attrs_from_json(a.at("attributes"), where) : AttrMap{}};
                conform(atom, m.kinds);
                try {
                    m.place(it.key(), std::move(atom));
                } catch (const Error& err) {
                    fail(where, err.what());
                }
            }
    if (j.contains("interfaces"))
        for (const auto& i : j.at("interfaces")) {
            InterfacePoint p;
            p.location = need(i, "location", "interfaces").get<std::string>();
            for (const auto& x : get_or<std::vector<std::string>>(i, "accepted", {})) p.accepted_event_types.insert(x);
            for (const auto& x : get_or<std::vector<std::string>>(i, "emitted", {})) p.emitted_event_types.insert(x);
            m.interfaces.push_back(std::move(p));
        }
    if (j.contains("metrics"))
        for (const auto& d : j.at("metrics")) {
            MetricDecl md;
            md.name = need(d, "name", "metrics").get<std::string>();
            std::string where = "metrics." + md.name;
            md.type = parse_metric_type(need(d, "type", where).get<std::string>(), where);
            md.event_type = get_or<std::string>(d, "event", "");
            md.filter_key = get_or<std::string>(d, "filter_key", "");
            if (d.contains("filter_value")) md.filter_value = attr_from_json(d.at("filter_value"), where);
            md.start_type = get_or<std::string>(d, "start", "");
            md.end_type = get_or<std::string>(d, "end", "");
            md.key = get_or<std::string>(d, "key", "subject");
            md.scale = get_or<double>(d, "scale", 1.0);
            md.kind = get_or<std::string>(d, "kind", "");
            md.location = get_or<std::string>(d, "location", "");
            m.metrics.push_back(std::move(md));
        }
    m.startup = get_or<std::vector<std::string>>(j, "startup", {});
    normalize_kinds(m);
    return m;
}

inline nlohmann::json model_to_json(const ModelSpec& m) {
    using namespace io;
    json j;
    j["name"] = m.name;
    json locs = json::array();
    for (const auto& [name, n] : m.graph.nodes())
        locs.push_back({{"name", name}, {"kind", std::string(to_string(n.kind))}, {"attributes", attrs_to_json(n.attributes)}});
    j["locations"] = std::move(locs);
    json edges = json::array();
    for (const auto& [a, b] : m.graph.edges()) edges.push_back({a, b});
    j["edges"] = std::move(edges);
    json kinds = json::array();
    for (const auto& [name, k] : m.kinds) {
        json attrs = json::object();
        for (const auto& [a, t] : k.attribute_schema) attrs[a] = std::string(to_string(t));
        kinds.push_back({{"name", name}, {"attributes", attrs}, {"incompatible", std::vector<std::string>(k.incompatible.begin(), k.incompatible.end())}});
    }
    j["kinds"] = std::move(kinds);
    j["rules"] = std::vector<std::string>(m.rules.begin(), m.rules.end());
    json procs = json::object();
    for (const auto& [name, p] : m.processes) {
        if (p.requires_bindings.empty()) procs[name] = term_to_json(p.body);
        else procs[name] = {{"body", term_to_json(p.body)}, {"requires", p.requires_bindings}};
    }
    j["processes"] = std::move(procs);
    json agents = json::array();
    for (const auto& a : m.agents)
        agents.push_back({{"name", a.name}, {"marker", template_to_json(a.marker)}, {"start", a.start}, {"behaviour", a.behaviour},
                          {"carried", a.carried}, {"memory", a.memory}, {"autostart", a.autostart}, {"standing", a.standing}});
    j["agents"] = std::move(agents);
    json envs = json::array();
    for (const auto& e : m.environments) {
        json x{{"name", e.name}, {"interface", e.interface}, {"inter_arrival", distribution_to_json(e.inter_arrival)},
               {"process", e.process}, {"emitted_event_types", e.emitted_event_types}, {"event_type", e.event_type},
               {"batch", e.batch}, {"agents", e.agents}};
        json ts = json::array();
        for (const auto& t : e.templates) ts.push_back(template_to_json(t));
        x["templates"] = std::move(ts);
        if (e.window_start && e.window_end) x["window"] = {*e.window_start, *e.window_end};
        if (e.max_occurrences) x["max_occurrences"] = *e.max_occurrences;
        if (e.first_at) x["first_at"] = *e.first_at;
        envs.push_back(std::move(x));
    }
    j["environments"] = std::move(envs);
    json placement = json::object();
    for (const auto& [loc, b] : m.initial_placement) {
        json atoms = json::array();
        for (const auto& a : b) atoms.push_back({{"kind", a.kind}, {"id", a.id.value}, {"attributes", attrs_to_json(a.attributes)}});
        placement[loc] = std::move(atoms);
    }
    j["initial_placement"] = std::move(placement);
    json ifs = json::array();
    for (const auto& i : m.interfaces)
        ifs.push_back({{"location", i.location},
                       {"accepted", std::vector<std::string>(i.accepted_event_types.begin(), i.accepted_event_types.end())},
                       {"emitted", std::vector<std::string>(i.emitted_event_types.begin(), i.emitted_event_types.end())}});
    j["interfaces"] = std::move(ifs);
    json metrics = json::array();
    for (const auto& d : m.metrics) {
        json x{{"name", d.name}, {"type", std::string(io::to_string(d.type))}};
        switch (d.type) {
        case MetricDecl::Type::Counter:
            x["event"] = d.event_type;
            if (!d.filter_key.empty()) {
                x["filter_key"] = d.filter_key;
                x["filter_value"] = attr_to_json(d.filter_value);
            }
            break;
        case MetricDecl::Type::Duration:
            x["start"] = d.start_type;
            x["end"] = d.end_type;
            x["key"] = d.key;
            x["scale"] = d.scale;
            break;
        case MetricDecl::Type::TimeWeighted:
            x["kind"] = d.kind;
            x["location"] = d.location;
            break;
        }
        metrics.push_back(std::move(x));
    }
    j["metrics"] = std::move(metrics);
    j["startup"] = m.startup;
    return j;
}

} // namespace metaphorsim
