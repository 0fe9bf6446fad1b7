#pragma once

#include "model.hpp"
#include "trace.hpp"
#include "metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace metaphorsim {

/// Interface locations joined across two models, plus renaming of event types
/// from model B's vocabulary into model A's.
struct Binding {
    std::vector<std::pair<std::string, std::string>> locations;
    std::map<std::string, std::string> event_map;

    std::string map_event(const std::string& b_type) const {
        auto it = event_map.find(b_type);
        return it == event_map.end() ? b_type : it->second;
    }
};

namespace detail {

struct Renaming {
    std::map<std::string, std::string> locations, kinds, processes, agents, environments;

    static std::string apply(const std::map<std::string, std::string>& m, const std::string& s) {
        auto it = m.find(s);
        return it == m.end() ? s : it->second;
    }
    std::string loc(const std::string& s) const { return apply(locations, s); }
    std::string kind(const std::string& s) const { return apply(kinds, s); }
    std::string process(const std::string& s) const { return apply(processes, s); }
    std::string agent(const std::string& s) const { return apply(agents, s); }
};

inline AttrMap rename_params(const AttrMap& params, const Renaming& r) {
    AttrMap out;
    for (const auto& [k, v] : params) {
        auto s = std::get_if<std::string>(&v);
        if (!s) {
            out.emplace(k, v);
            continue;
        }
        bool kindish = k == "kind" || (k.size() > 5 && k.compare(k.size() - 5, 5, "_kind") == 0);
        out.emplace(k, kindish ? r.kind(*s) : r.loc(*s));
    }
    return out;
}

inline ResourcePattern rename_pattern(ResourcePattern p, const Renaming& r) {
    p.kind = r.kind(p.kind);
    return p;
}

inline Condition rename_condition(Condition c, const Renaming& r) {
    c.pattern = rename_pattern(std::move(c.pattern), r);
    c.at = r.loc(c.at);
    c.params = rename_params(c.params, r);
    return c;
}

inline TermPtr rename_term(const TermPtr& t, const Renaming& r) {
    using namespace dsl;
    if (!t) return t;
    return std::visit(
        [&](const auto& n) -> TermPtr {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, term::Nil>) return t;
            else if constexpr (std::is_same_v<T, term::Prefix>) {
                Action a = n.action;
                a.at = r.loc(a.at);
                a.params = rename_params(a.params, r);
                return prefix(std::move(a), rename_term(n.next, r));
            } else if constexpr (std::is_same_v<T, term::Seq>)
                return seq(rename_term(n.first, r), rename_term(n.second, r));
            else if constexpr (std::is_same_v<T, term::Par>)
                return par(rename_term(n.left, r), rename_term(n.right, r));
            else if constexpr (std::is_same_v<T, term::Choose>) {
                std::vector<std::pair<double, TermPtr>> bs;
                for (const auto& [w, b] : n.branches) bs.emplace_back(w, rename_term(b, r));
                return choose(std::move(bs));
            } else if constexpr (std::is_same_v<T, term::Move>)
                return move(rename_pattern(n.pattern, r), r.loc(n.from), r.loc(n.to), rename_term(n.next, r));
            else if constexpr (std::is_same_v<T, term::Claim>)
                return claim(rename_pattern(n.pattern, r), r.loc(n.at), rename_term(n.next, r));
            else if constexpr (std::is_same_v<T, term::Release>)
                return release(n.binding, r.loc(n.at), rename_term(n.next, r));
            else if constexpr (std::is_same_v<T, term::Spawn>)
                return spawn(r.process(n.process), rename_term(n.next, r));
            else if constexpr (std::is_same_v<T, term::Call>)
                return call(r.process(n.process));
            else
                return when(rename_condition(n.condition, r), rename_term(n.then_branch, r), rename_term(n.else_branch, r));
        },
        t->node);
}

inline bool same_kind(const ResourceKind& a, const ResourceKind& b) {
    return a.attribute_schema == b.attribute_schema && a.incompatible == b.incompatible;
}

inline std::string fresh(const std::string& prefix, const std::string& name,
                         const std::function<bool(const std::string&)>& taken) {
    std::string out = prefix + "." + name;
    for (int i = 2; taken(out); ++i) out = prefix + "." + name + "_" + std::to_string(i);
    return out;
}

inline std::set<std::string> mapped(const std::set<std::string>& types, const Binding& bind) {
    std::set<std::string> out;
    for (const auto& t : types) out.insert(bind.map_event(t));
    return out;
}

} // namespace detail

/// Merges `b` into `a`, joining each bound location pair into one node named as in `a`.
/// Colliding names from `b` get the prefix "<b.name>.".
inline ModelSpec compose_models(const ModelSpec& a, const ModelSpec& b, const Binding& bind) {
    detail::Renaming r;
    ModelSpec out = a;

    // Interfaces and merged locations.
    std::map<std::string, std::string> bound;  // b location -> a location
    for (const auto& [la, lb] : bind.locations) {
        if (!a.graph.has_node(la)) throw Error(ErrorCode::UnknownLocation, "binding location '" + la + "' not in " + a.name);
        if (!b.graph.has_node(lb)) throw Error(ErrorCode::UnknownLocation, "binding location '" + lb + "' not in " + b.name);
        const InterfacePoint* ia = a.interface_at(la);
        const InterfacePoint* ib = b.interface_at(lb);
        if (!ia || !ib) throw Error(ErrorCode::IncompatibleInterface, la + " <-> " + lb + ": no interface declared");
        auto be = detail::mapped({ib->emitted_event_types.begin(), ib->emitted_event_types.end()}, bind);
        auto ba = detail::mapped({ib->accepted_event_types.begin(), ib->accepted_event_types.end()}, bind);
        bool shared = false;
        for (const auto& t : ia->accepted_event_types) shared = shared || be.count(t);
        for (const auto& t : ia->emitted_event_types) shared = shared || ba.count(t);
        if (!shared) throw Error(ErrorCode::IncompatibleInterface, la + " <-> " + lb + ": no shared event types");
        const LocationNode* na = a.graph.node(la);
        const LocationNode* nb = b.graph.node(lb);
        if (na->kind != nb->kind)
            throw Error(ErrorCode::AttributeConflict, la + " <-> " + lb + ": location kinds differ");
        LocationNode merged = *na;
        for (const auto& [k, v] : nb->attributes) {
            auto it = merged.attributes.find(k);
            if (it != merged.attributes.end() && !(it->second == v))
                throw Error(ErrorCode::AttributeConflict, la + " <-> " + lb + ": attribute '" + k + "' differs");
            merged.attributes.emplace(k, v);
        }
        out.graph.add_node(std::move(merged));
        bound[lb] = la;
        r.locations[lb] = la;
    }

    auto loc_taken = [&](const std::string& n) { return out.graph.has_node(n) || b.graph.has_node(n); };
    for (const auto& [name, node] : b.graph.nodes()) {
        if (bound.count(name)) continue;
        std::string target = a.graph.has_node(name) ? detail::fresh(b.name, name, loc_taken) : name;
        r.locations[name] = target;
        LocationNode n = node;
        n.name = target;
        out.graph.add_node(std::move(n));
    }

    for (const auto& [name, k] : b.kinds) {
        auto it = a.kinds.find(name);
        if (it == a.kinds.end() || detail::same_kind(it->second, k)) continue;
        r.kinds[name] = detail::fresh(b.name, name, [&](const std::string& n) { return out.kinds.count(n) || b.kinds.count(n); });
    }
    for (const auto& [name, k] : b.kinds) {
        ResourceKind nk = k;
        nk.name = r.kind(name);
        std::set<std::string, std::less<>> inc;
        for (const auto& x : k.incompatible) inc.insert(r.kind(x));
        nk.incompatible = std::move(inc);
        out.kinds.emplace(nk.name, std::move(nk));
    }

    for (const auto& [name, p] : b.processes)
        if (a.processes.count(name))
            r.processes[name] = detail::fresh(b.name, name, [&](const std::string& n) {
                return out.processes.count(n) > 0 || b.processes.count(n) > 0;
            });
    for (const auto& ag : b.agents)
        if (a.agent(ag.name))
            r.agents[ag.name] = detail::fresh(b.name, ag.name, [&](const std::string& n) { return a.agent(n) || b.agent(n); });
    for (const auto& e : b.environments)
        if (a.environment(e.name))
            r.environments[e.name] =
                detail::fresh(b.name, e.name, [&](const std::string& n) { return a.environment(n) || b.environment(n); });

    for (const auto& [from, to] : b.graph.edges()) out.graph.add_edge(r.loc(from), r.loc(to));

    out.rules.insert(b.rules.begin(), b.rules.end());

    for (const auto& [name, p] : b.processes)
        out.processes[r.process(name)] = ProcessDef{detail::rename_term(p.body, r), p.requires_bindings};

    for (const auto& ag : b.agents) {
        AgentSpec n = ag;
        n.name = r.agent(ag.name);
        n.marker.kind = r.kind(ag.marker.kind);
        n.start = n.start.empty() ? n.start : r.loc(n.start);
        n.carried = n.carried.empty() ? n.carried : r.loc(n.carried);
        n.memory = n.memory.empty() ? n.memory : r.loc(n.memory);
        n.behaviour = n.behaviour.empty() ? n.behaviour : r.process(n.behaviour);
        out.agents.push_back(std::move(n));
    }

    for (const auto& e : b.environments) {
        EnvironmentSpec n = e;
        n.name = detail::Renaming::apply(r.environments, e.name);
        n.interface = r.loc(e.interface);
        n.process = n.process.empty() ? n.process : r.process(n.process);
        for (auto& t : n.templates) t.kind = r.kind(t.kind);
        for (auto& x : n.emitted_event_types) x = bind.map_event(x);
        if (!n.event_type.empty()) n.event_type = bind.map_event(n.event_type);
        for (auto& x : n.agents) x = r.agent(x);
        out.environments.push_back(std::move(n));
    }

    std::uint64_t offset = a.max_atom_id();
    for (const auto& [loc, bundle] : b.initial_placement)
        for (const auto& atom : bundle)
            out.place(r.loc(loc), ResourceAtom{r.kind(atom.kind), AtomId{atom.id.value + offset}, atom.attributes});

    for (const auto& i : b.interfaces) {
        std::string loc = r.loc(i.location);
        auto em = detail::mapped({i.emitted_event_types.begin(), i.emitted_event_types.end()}, bind);
        auto ac = detail::mapped({i.accepted_event_types.begin(), i.accepted_event_types.end()}, bind);
        auto it = std::find_if(out.interfaces.begin(), out.interfaces.end(),
                               [&](const InterfacePoint& p) { return p.location == loc; });
        if (it == out.interfaces.end()) {
            out.interfaces.push_back(InterfacePoint{loc, {ac.begin(), ac.end()}, {em.begin(), em.end()}});
        } else {
            it->accepted_event_types.insert(ac.begin(), ac.end());
            it->emitted_event_types.insert(em.begin(), em.end());
        }
    }

    for (const auto& d : b.metrics) {
        MetricDecl n = d;
        bool clash = std::any_of(a.metrics.begin(), a.metrics.end(), [&](const MetricDecl& x) { return x.name == d.name; });
        if (clash) {
            if (d == *std::find_if(a.metrics.begin(), a.metrics.end(), [&](const MetricDecl& x) { return x.name == d.name; }))
                continue;
            n.name = b.name + "." + d.name;
        }
        n.kind = n.kind.empty() ? n.kind : r.kind(n.kind);
        n.location = n.location.empty() ? n.location : r.loc(n.location);
        out.metrics.push_back(std::move(n));
    }

    for (const auto& s : b.startup) out.startup.push_back(r.process(s));
    return out;
}

/// Replaces environment `env_name` of `m` by the model `sub`, bound at the environment's interface.
inline ModelSpec substitute_environment(const ModelSpec& m, const std::string& env_name, const ModelSpec& sub,
                                        const Binding& bind) {
    const EnvironmentSpec* env = m.environment(env_name);
    if (!env) throw Error(ErrorCode::UnknownEnvironment, "environment '" + env_name + "'");
    auto pair = std::find_if(bind.locations.begin(), bind.locations.end(),
                             [&](const auto& p) { return p.first == env->interface; });
    if (pair == bind.locations.end())
        throw Error(ErrorCode::IncompatibleInterface, "binding does not cover interface '" + env->interface + "'");
    const InterfacePoint* ib = sub.interface_at(pair->second);
    std::set<std::string> emitted;
    if (ib) emitted = detail::mapped({ib->emitted_event_types.begin(), ib->emitted_event_types.end()}, bind);
    std::vector<std::string> missing;
    std::set<std::string> required(env->emitted_event_types.begin(), env->emitted_event_types.end());
    if (required.empty()) required.insert(env->logged_type());
    for (const auto& t : required)
        if (!emitted.count(t)) missing.push_back(t);
    if (!missing.empty()) {
        std::string list;
        for (const auto& t : missing) list += (list.empty() ? "" : ", ") + t;
        throw Error(ErrorCode::InsufficientEventCoverage, "missing " + list);
    }

    ModelSpec host = m;
    std::string payload = env->process;
    host.environments.erase(std::remove_if(host.environments.begin(), host.environments.end(),
                                           [&](const EnvironmentSpec& e) { return e.name == env_name; }),
                            host.environments.end());
    if (!payload.empty()) {
        bool used = std::any_of(host.environments.begin(), host.environments.end(),
                                [&](const EnvironmentSpec& e) { return e.process == payload; }) ||
                    std::any_of(host.agents.begin(), host.agents.end(),
                                [&](const AgentSpec& a) { return a.behaviour == payload; }) ||
                    std::find(host.startup.begin(), host.startup.end(), payload) != host.startup.end();
        std::function<bool(const TermPtr&)> refers = [&](const TermPtr& t) -> bool {
            if (!t) return false;
            return std::visit(
                [&](const auto& n) -> bool {
                    using T = std::decay_t<decltype(n)>;
                    if constexpr (std::is_same_v<T, term::Spawn>) return n.process == payload || refers(n.next);
                    else if constexpr (std::is_same_v<T, term::Call>) return n.process == payload;
                    else if constexpr (std::is_same_v<T, term::Prefix> || std::is_same_v<T, term::Move> ||
                                       std::is_same_v<T, term::Claim> || std::is_same_v<T, term::Release>)
                        return refers(n.next);
                    else if constexpr (std::is_same_v<T, term::Seq>) return refers(n.first) || refers(n.second);
                    else if constexpr (std::is_same_v<T, term::Par>) return refers(n.left) || refers(n.right);
                    else if constexpr (std::is_same_v<T, term::Choose>)
                        return std::any_of(n.branches.begin(), n.branches.end(), [&](const auto& b) { return refers(b.second); });
                    else if constexpr (std::is_same_v<T, term::If>) return refers(n.then_branch) || refers(n.else_branch);
                    else return false;
                },
                t->node);
        };
        for (const auto& [name, p] : host.processes)
            if (name != payload && refers(p.body)) used = true;
        if (!used) host.processes.erase(payload);
    }
    return compose_models(host, sub, bind);
}

struct Scope {
    std::set<std::string> locations;
    std::set<std::string> processes;

    bool empty() const { return locations.empty() && processes.empty(); }
    bool contains(const EventRecord& r) const {
        if (!r.loc.empty() && locations.count(r.loc)) return true;
        if (r.subject.empty()) return false;
        if (processes.count(r.subject)) return true;
        auto hash = r.subject.rfind('#');
        return hash != std::string::npos && processes.count(r.subject.substr(0, hash));
    }
    bool subset_of(const Scope& o) const {
        return std::includes(o.locations.begin(), o.locations.end(), locations.begin(), locations.end()) &&
               std::includes(o.processes.begin(), o.processes.end(), processes.begin(), processes.end());
    }
};

/// Checks that every scope name exists in `m` (processes may also name agents,
/// environments or startup services).
inline void check_scope(const Scope& s, const ModelSpec& m) {
    if (s.empty()) throw Error(ErrorCode::EmptyScope, "scope names no locations or processes");
    for (const auto& l : s.locations)
        if (!m.graph.has_node(l)) throw Error(ErrorCode::UnknownScopeName, "location '" + l + "'");
    for (const auto& p : s.processes)
        if (!m.processes.count(p) && !m.agent(p) && !m.environment(p))
            throw Error(ErrorCode::UnknownScopeName, "process '" + p + "'");
}

inline EventLog project_trace(const EventLog& log, const Scope& scope) {
    if (scope.empty()) throw Error(ErrorCode::EmptyScope, "scope names no locations or processes");
    EventLog out;
    for (const auto& r : log)
        if (scope.contains(r)) out.push_back(r);
    return out;
}

inline EventLog project_trace(const EventLog& log, const Scope& scope, const ModelSpec& m) {
    check_scope(scope, m);
    return project_trace(log, scope);
}

struct LocalProperty {
    enum class Type { Count, Ordering, DurationBound, Absence };
    std::string name;
    Scope scope;
    Type type = Type::Absence;
    std::string event_type;  // Count, Absence
    Comparator comparator = Comparator::Le;  // Count, DurationBound
    double value = 0.0;
    std::string before, after;  // Ordering: every `after` needs an earlier `before` with the same key
    std::string start, end;     // DurationBound: each paired duration must satisfy (comparator, value)
    std::string key = "subject";
};

struct Verdict {
    bool holds = true;
    std::vector<EventRecord> witness;
    std::string message;
};

namespace detail {

inline std::string key_of(const EventRecord& r, const std::string& key) {
    return key == "subject" ? r.subject : r.detail_text(key);
}

inline Verdict evaluate(const EventLog& trace, const LocalProperty& p) {
    Verdict v;
    switch (p.type) {
    case LocalProperty::Type::Absence:
        for (const auto& r : trace)
            if (r.type == p.event_type) {
                v.holds = false;
                v.witness = {r};
                v.message = p.event_type + " occurred";
                return v;
            }
        return v;
    case LocalProperty::Type::Count: {
        double n = 0;
        const EventRecord* crossing = nullptr;
        bool upper = p.comparator == Comparator::Le || p.comparator == Comparator::Lt || p.comparator == Comparator::Eq;
        for (const auto& r : trace) {
            if (r.type != p.event_type) continue;
            n += 1;
            if (upper && !crossing && !compare(n, p.comparator, p.value) && (p.comparator != Comparator::Eq || n > p.value))
                crossing = &r;
        }
        if (compare(n, p.comparator, p.value)) return v;
        v.holds = false;
        if (crossing) v.witness = {*crossing};
        v.message = "count " + format_real(n) + " fails " + std::string(to_string(p.comparator)) + " " + format_real(p.value);
        return v;
    }
    case LocalProperty::Type::Ordering: {
        std::set<std::string> seen;
        for (const auto& r : trace) {
            if (r.type == p.before) seen.insert(key_of(r, p.key));
            if (r.type == p.after && !seen.count(key_of(r, p.key))) {
                v.holds = false;
                v.witness = {r};
                v.message = p.after + " before any " + p.before + " for " + key_of(r, p.key);
                return v;
            }
        }
        return v;
    }
    case LocalProperty::Type::DurationBound: {
        std::map<std::string, std::deque<const EventRecord*>> open;
        for (const auto& r : trace) {
            if (r.type == p.end && p.end != p.start) {
                auto& q = open[key_of(r, p.key)];
                if (q.empty()) continue;
                const EventRecord* s = q.front();
                q.pop_front();
                if (!compare(r.t - s->t, p.comparator, p.value)) {
                    v.holds = false;
                    v.witness = {*s, r};
                    v.message = "duration " + format_real(r.t - s->t) + " for " + key_of(r, p.key);
                    return v;
                }
                continue;
            }
            if (r.type == p.start) open[key_of(r, p.key)].push_back(&r);
        }
        return v;
    }
    }
    return v;
}

} // namespace detail

/// Evaluates `p` on the projection of `trace` to `p.scope`; the witness is the earliest violating record(s).
inline Verdict check_local_property(const EventLog& trace, const LocalProperty& p) {
    return detail::evaluate(project_trace(trace, p.scope), p);
}

inline LocalProperty property_from_json(const nlohmann::json& j, const ModelSpec* m = nullptr) {
    auto get = [&](const char* k, const std::string& d = {}) {
        return j.contains(k) ? j.at(k).get<std::string>() : d;
    };
    LocalProperty p;
    p.name = get("name", "property");
    if (!j.contains("scope")) throw Error(ErrorCode::ParseError, "property '" + p.name + "': missing scope");
    const auto& s = j.at("scope");
    auto names = [&](const char* k) {
        std::set<std::string> out;
        if (!s.contains(k)) return out;
        if (s.at(k).is_string() && s.at(k).get<std::string>() == "*") {
            if (m && std::string(k) == "locations")
                for (const auto& [n, node] : m->graph.nodes()) out.insert(n);
            if (m && std::string(k) == "processes")
                for (const auto& [n, proc] : m->processes) out.insert(n);
            return out;
        }
        for (const auto& x : s.at(k)) out.insert(x.get<std::string>());
        return out;
    };
    p.scope.locations = names("locations");
    p.scope.processes = names("processes");
    std::string type = get("type");
    if (type == "absence") p.type = LocalProperty::Type::Absence;
    else if (type == "count") p.type = LocalProperty::Type::Count;
    else if (type == "ordering") p.type = LocalProperty::Type::Ordering;
    else if (type == "duration_bound") p.type = LocalProperty::Type::DurationBound;
    else throw Error(ErrorCode::ParseError, "property '" + p.name + "': unknown type '" + type + "'");
    p.event_type = get("event");
    if (j.contains("op")) p.comparator = parse_comparator(j.at("op").get<std::string>());
    if (j.contains("value")) p.value = j.at("value").get<double>();
    p.before = get("before");
    p.after = get("after");
    p.start = get("start");
    p.end = get("end");
    p.key = get("key", "subject");
    if (m) check_scope(p.scope, *m);
    return p;
}

} // namespace metaphorsim
