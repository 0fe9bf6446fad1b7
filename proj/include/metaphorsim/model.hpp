#pragma once

#include "calculus.hpp"
#include "distribution.hpp"
#include "process.hpp"
#include "rules.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace metaphorsim {

struct AtomTemplate {
    std::string kind;
    AttrMap attributes;
    bool operator==(const AtomTemplate&) const = default;
};

/// A person: marker resource + behaviour + private carried/memory locations.
struct AgentSpec {
    std::string name;
    AtomTemplate marker;
    std::string start;      // initial location of the marker
    std::string behaviour;  // process name; empty for a passive agent
    std::string carried;
    std::string memory;
    // Agents listed in an environment's pool start when that environment activates them.
    bool autostart = true;
    // Standing agents (a guard on post) loop forever and do not keep a run alive.
    bool standing = false;
    bool operator==(const AgentSpec&) const = default;
};

/// Stochastic boundary injecting events at an interface location.
struct EnvironmentSpec {
    std::string name;
    std::string interface;
    DistributionSpec inter_arrival = dist::Exponential{1.0};
    std::string process;                  // payload process, may be empty
    std::vector<AtomTemplate> templates;  // atoms created at the interface per event
    std::vector<std::string> emitted_event_types;
    std::string event_type;               // logged per event; defaults to the first emitted type
    std::optional<double> window_start;
    std::optional<double> window_end;
    std::size_t batch = 1;
    std::optional<std::size_t> max_occurrences;
    std::optional<double> first_at;
    std::vector<std::string> agents;      // pool of agents activated one per event

    std::string logged_type() const {
        if (!event_type.empty()) return event_type;
        if (!emitted_event_types.empty()) return emitted_event_types.front();
        return name;
    }
    bool operator==(const EnvironmentSpec&) const = default;
};

struct InterfacePoint {
    std::string location;
    std::set<std::string> accepted_event_types;
    std::set<std::string> emitted_event_types;
    bool operator==(const InterfacePoint&) const = default;
};

struct MetricDecl {
    enum class Type { Counter, Duration, TimeWeighted };
    std::string name;
    Type type = Type::Counter;
    std::string event_type;    // Counter
    std::string filter_key;    // Counter: optional detail filter
    AttrValue filter_value;
    std::string start_type;    // Duration
    std::string end_type;
    std::string key = "subject";  // Duration: "subject" or a detail key
    double scale = 1.0;        // Duration: divisor applied to hours (24 for days)
    std::string kind;          // TimeWeighted
    std::string location;
    bool operator==(const MetricDecl&) const = default;
};

struct ProcessDef {
    TermPtr body = dsl::nil();
    // Bindings that callers must have established before `Call`ing this process.
    std::vector<std::string> requires_bindings;
};

struct ModelSpec {
    std::string name;
    LocationGraph graph;
    KindTable kinds;
    std::set<std::string> rules;
    std::map<std::string, ProcessDef, std::less<>> processes;
    std::vector<AgentSpec> agents;
    std::vector<EnvironmentSpec> environments;
    std::map<std::string, ResourceBundle, std::less<>> initial_placement;
    std::vector<InterfacePoint> interfaces;
    std::vector<MetricDecl> metrics;
    // Processes started once at time 0 (standing services such as network forwarders).
    std::vector<std::string> startup;

    const EnvironmentSpec* environment(std::string_view n) const {
        for (const auto& e : environments)
            if (e.name == n) return &e;
        return nullptr;
    }
    const AgentSpec* agent(std::string_view n) const {
        for (const auto& a : agents)
            if (a.name == n) return &a;
        return nullptr;
    }
    const InterfacePoint* interface_at(std::string_view loc) const {
        for (const auto& i : interfaces)
            if (i.location == loc) return &i;
        return nullptr;
    }
    std::uint64_t max_atom_id() const {
        std::uint64_t m = 0;
        for (const auto& [loc, b] : initial_placement)
            for (const auto& a : b) m = std::max(m, a.id.value);
        return m;
    }
    void place(const std::string& location, ResourceAtom atom) { initial_placement[location].insert(std::move(atom)); }
    void add_process(const std::string& name, TermPtr body, std::vector<std::string> requires_bindings = {}) {
        processes[name] = ProcessDef{std::move(body), std::move(requires_bindings)};
    }
};

/// Event types the engine itself writes to the log.
inline const std::set<std::string, std::less<>>& reserved_event_types() {
    static const std::set<std::string, std::less<>> r{"move", "claim", "release", "create", "destroy", "run_end"};
    return r;
}

struct Diagnostic {
    enum class Code {
        UnknownLocation,
        MissingEdge,
        UnknownKind,
        UnknownAttribute,
        UnknownRule,
        UnknownProcess,
        UnknownBinding,
        UnknownAgent,
        DuplicateName,
        DuplicateId,
        NonPositiveWeights,
        InvalidDistribution,
        SchemaViolation,
        UnknownEventType,
        InvalidPattern,
        PrivateLocation,
        ReservedEventType,
        InvalidEnvironment,
        InvalidMetric,
    };
    Code code;
    std::string where;
    std::string message;
};

inline std::string_view to_string(Diagnostic::Code c) {
    using C = Diagnostic::Code;
    switch (c) {
    case C::UnknownLocation: return "UnknownLocation";
    case C::MissingEdge: return "MissingEdge";
    case C::UnknownKind: return "UnknownKind";
    case C::UnknownAttribute: return "UnknownAttribute";
    case C::UnknownRule: return "UnknownRule";
    case C::UnknownProcess: return "UnknownProcess";
    case C::UnknownBinding: return "UnknownBinding";
    case C::UnknownAgent: return "UnknownAgent";
    case C::DuplicateName: return "DuplicateName";
    case C::DuplicateId: return "DuplicateId";
    case C::NonPositiveWeights: return "NonPositiveWeights";
    case C::InvalidDistribution: return "InvalidDistribution";
    case C::SchemaViolation: return "SchemaViolation";
    case C::UnknownEventType: return "UnknownEventType";
    case C::InvalidPattern: return "InvalidPattern";
    case C::PrivateLocation: return "PrivateLocation";
    case C::ReservedEventType: return "ReservedEventType";
    case C::InvalidEnvironment: return "InvalidEnvironment";
    case C::InvalidMetric: return "InvalidMetric";
    }
    return "?";
}

inline std::string format(const Diagnostic& d) {
    return std::string(to_string(d.code)) + " at " + d.where + ": " + d.message;
}

/// Every event type a run of `m` can log.
inline std::set<std::string, std::less<>> event_types(const ModelSpec& m) {
    std::set<std::string, std::less<>> out(reserved_event_types().begin(), reserved_event_types().end());
    for (const auto& e : m.environments) {
        out.insert(e.logged_type());
        out.insert(e.emitted_event_types.begin(), e.emitted_event_types.end());
    }
    std::function<void(const TermPtr&)> walk = [&](const TermPtr& t) {
        if (!t) return;
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, term::Prefix>) {
                    if (auto ev = n.action.event_type(); !ev.empty()) out.insert(ev);
                    walk(n.next);
                } else if constexpr (std::is_same_v<T, term::Seq>) {
                    walk(n.first);
                    walk(n.second);
                } else if constexpr (std::is_same_v<T, term::Par>) {
                    walk(n.left);
                    walk(n.right);
                } else if constexpr (std::is_same_v<T, term::Choose>) {
                    for (const auto& b : n.branches) walk(b.second);
                } else if constexpr (std::is_same_v<T, term::If>) {
                    walk(n.then_branch);
                    walk(n.else_branch);
                } else if constexpr (std::is_same_v<T, term::Move> || std::is_same_v<T, term::Claim> ||
                                     std::is_same_v<T, term::Release> || std::is_same_v<T, term::Spawn>) {
                    walk(n.next);
                }
            },
            t->node);
    };
    for (const auto& [name, p] : m.processes) walk(p.body);
    return out;
}

namespace detail {

class Validator {
public:
    Validator(const ModelSpec& m, const RuleRegistry& reg) : m_(m), reg_(reg) {
        for (const auto& a : m.agents) {
            if (!a.carried.empty()) private_.insert(a.carried);
            if (!a.memory.empty()) private_.insert(a.memory);
        }
    }

    std::vector<Diagnostic> run() {
        check_graph();
        check_kinds();
        check_placement();
        check_rules();
        for (const auto& [name, def] : m_.processes) {
            std::set<std::string> bound(def.requires_bindings.begin(), def.requires_bindings.end());
            walk(def.body, bound, "process " + name);
        }
        check_agents();
        check_environments();
        check_interfaces();
        check_metrics();
        for (const auto& s : m_.startup)
            if (!m_.processes.count(s)) add(Diagnostic::Code::UnknownProcess, "startup", "process '" + s + "' not defined");
        return std::move(out_);
    }

private:
    using C = Diagnostic::Code;

    void add(C code, std::string where, std::string msg) { out_.push_back({code, std::move(where), std::move(msg)}); }

    void check_graph() {
        for (const auto& [a, b] : m_.graph.edges()) {
            if (!m_.graph.has_node(a)) add(C::UnknownLocation, "edge " + a + "->" + b, "unknown endpoint '" + a + "'");
            if (!m_.graph.has_node(b)) add(C::UnknownLocation, "edge " + a + "->" + b, "unknown endpoint '" + b + "'");
        }
    }

    void check_kinds() {
        for (const auto& [name, k] : m_.kinds) {
            if (k.name != name) add(C::DuplicateName, "kind " + name, "kind key and name differ");
            for (const auto& other : k.incompatible)
                if (!m_.kinds.count(other)) add(C::UnknownKind, "kind " + name, "incompatible with unknown kind '" + other + "'");
        }
    }

    void check_atom(const ResourceAtom& a, const std::string& where) {
        if (!m_.kinds.count(a.kind)) {
            add(C::UnknownKind, where, "unknown kind '" + a.kind + "'");
            return;
        }
        auto why = schema_violation(a, m_.kinds);
        if (!why.empty()) add(C::SchemaViolation, where, why);
    }

    void check_template(const AtomTemplate& t, const std::string& where) {
        check_atom(ResourceAtom{t.kind, AtomId{0}, t.attributes}, where);
    }

    void check_placement() {
        std::set<AtomId> seen;
        for (const auto& [loc, bundle] : m_.initial_placement) {
            if (!m_.graph.has_node(loc)) add(C::UnknownLocation, "initial_placement", "unknown location '" + loc + "'");
            for (const auto& a : bundle) {
                if (!seen.insert(a.id).second)
                    add(C::DuplicateId, "initial_placement " + loc, "atom id " + std::to_string(a.id.value) + " reused");
                check_atom(a, "initial_placement " + loc);
            }
        }
    }

    void check_rules() {
        for (const auto& r : m_.rules)
            if (!reg_.contains(r)) add(C::UnknownRule, "rules", "rule '" + r + "' is not registered");
    }

    void check_location(const std::string& ref, const std::string& where) {
        if (ref.empty()) {
            add(C::UnknownLocation, where, "empty location reference");
            return;
        }
        if (ref.front() == '$') return;
        if (ref.front() == '@') {
            if (ref != "@here" && ref != "@carried" && ref != "@memory")
                add(C::UnknownLocation, where, "unknown symbolic location '" + ref + "'");
            return;
        }
        if (!m_.graph.has_node(ref)) add(C::UnknownLocation, where, "unknown location '" + ref + "'");
        else if (private_.count(ref)) add(C::PrivateLocation, where, "private agent location '" + ref + "' referenced directly");
    }

    void check_pattern(const ResourcePattern& p, const std::set<std::string>& bound, const std::string& where) {
        auto k = m_.kinds.find(p.kind);
        if (k == m_.kinds.end()) {
            add(C::UnknownKind, where, "pattern kind '" + p.kind + "'");
            return;
        }
        if (p.quantity < 1) add(C::InvalidPattern, where, "quantity must be >= 1");
        for (const auto& c : p.constraints) {
            if (c.attribute != "id" && !k->second.attribute_schema.count(c.attribute))
                add(C::UnknownAttribute, where, "attribute '" + c.attribute + "' not in kind '" + p.kind + "'");
            if (!c.ref.empty() && c.ref.front() == '@') {
                if (c.attribute != "id") add(C::InvalidPattern, where, "binding references only apply to 'id'");
                if (!bound.count(c.ref.substr(1)))
                    add(C::UnknownBinding, where, "binding '" + c.ref.substr(1) + "' not established on this path");
            }
        }
    }

    void check_rule_use(const std::string& rule, const std::string& where) {
        if (!reg_.contains(rule)) add(C::UnknownRule, where, "rule '" + rule + "' is not registered");
        else if (!m_.rules.empty() && !m_.rules.count(rule) && rule != "noop")
            add(C::UnknownRule, where, "rule '" + rule + "' not declared in the model");
    }

    void check_move_edge(const std::string& from, const std::string& to, const std::string& where) {
        if (is_runtime_location(from) || is_runtime_location(to)) return;
        if (m_.graph.has_node(from) && m_.graph.has_node(to) && !m_.graph.has_edge(from, to))
            add(C::MissingEdge, where, "no edge " + from + " -> " + to);
    }

    std::set<std::string> walk(const TermPtr& t, std::set<std::string> bound, const std::string& where) {
        if (!t) return bound;
        return std::visit(
            [&](const auto& n) -> std::set<std::string> {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, term::Nil>) {
                    return bound;
                } else if constexpr (std::is_same_v<T, term::Prefix>) {
                    const Action& a = n.action;
                    std::string w = where + " action " + a.name;
                    check_rule_use(a.name, w);
                    if (!a.at.empty()) check_location(a.at, w);
                    if (auto p = distribution_problem(a.duration); !p.empty()) add(C::InvalidDistribution, w, p);
                    if (reserved_event_types().count(a.event_type()))
                        add(C::ReservedEventType, w, "event type '" + a.event_type() + "' is reserved");
                    for (const auto& [k, v] : a.params)
                        if (auto s = std::get_if<std::string>(&v); s && !s->empty() && s->front() == '@' &&
                                                                     !is_symbolic_location(*s) && *s != "@self" &&
                                                                     !bound.count(s->substr(1)))
                            add(C::UnknownBinding, w, "parameter '" + k + "' refers to unbound '" + *s + "'");
                    for (const auto& b : a.binds) bound.insert(b);
                    return walk(n.next, std::move(bound), where);
                } else if constexpr (std::is_same_v<T, term::Seq>) {
                    return walk(n.second, walk(n.first, std::move(bound), where), where);
                } else if constexpr (std::is_same_v<T, term::Par>) {
                    auto l = walk(n.left, bound, where);
                    auto r = walk(n.right, bound, where);
                    l.insert(r.begin(), r.end());
                    return l;
                } else if constexpr (std::is_same_v<T, term::Choose>) {
                    double sum = 0;
                    bool negative = false;
                    for (const auto& b : n.branches) {
                        if (b.first < 0) negative = true;
                        sum += b.first;
                    }
                    if (negative || !(sum > 0))
                        add(C::NonPositiveWeights, where, "choice weights must be nonnegative with a positive sum");
                    std::optional<std::set<std::string>> common;
                    for (const auto& b : n.branches) {
                        auto s = walk(b.second, bound, where);
                        if (!common) common = std::move(s);
                        else {
                            std::set<std::string> x;
                            std::set_intersection(common->begin(), common->end(), s.begin(), s.end(),
                                                  std::inserter(x, x.begin()));
                            common = std::move(x);
                        }
                    }
                    return common ? *common : bound;
                } else if constexpr (std::is_same_v<T, term::Move>) {
                    std::string w = where + " move";
                    check_pattern(n.pattern, bound, w);
                    check_location(n.from, w);
                    check_location(n.to, w);
                    check_move_edge(n.from, n.to, w);
                    if (!n.pattern.binding.empty()) bound.insert(n.pattern.binding);
                    return walk(n.next, std::move(bound), where);
                } else if constexpr (std::is_same_v<T, term::Claim>) {
                    std::string w = where + " claim";
                    check_pattern(n.pattern, bound, w);
                    check_location(n.at, w);
                    if (!n.pattern.binding.empty()) bound.insert(n.pattern.binding);
                    return walk(n.next, std::move(bound), where);
                } else if constexpr (std::is_same_v<T, term::Release>) {
                    std::string w = where + " release";
                    check_location(n.at, w);
                    if (!bound.count(n.binding))
                        add(C::UnknownBinding, w, "release of '" + n.binding + "' without an earlier claim on this path");
                    return walk(n.next, std::move(bound), where);
                } else if constexpr (std::is_same_v<T, term::Spawn>) {
                    auto it = m_.processes.find(n.process);
                    if (it == m_.processes.end())
                        add(C::UnknownProcess, where, "spawn of unknown process '" + n.process + "'");
                    else if (!it->second.requires_bindings.empty())
                        add(C::UnknownBinding, where, "spawned process '" + n.process + "' requires bindings");
                    return walk(n.next, std::move(bound), where);
                } else if constexpr (std::is_same_v<T, term::Call>) {
                    auto it = m_.processes.find(n.process);
                    if (it == m_.processes.end()) {
                        add(C::UnknownProcess, where, "call of unknown process '" + n.process + "'");
                    } else {
                        for (const auto& r : it->second.requires_bindings)
                            if (!bound.count(r))
                                add(C::UnknownBinding, where, "call of '" + n.process + "' requires binding '" + r + "'");
                    }
                    return bound;
                } else if constexpr (std::is_same_v<T, term::If>) {
                    const Condition& c = n.condition;
                    std::string w = where + " if";
                    if (c.type == Condition::Type::Match) {
                        check_pattern(c.pattern, bound, w);
                        check_location(c.at, w);
                    } else if (c.type == Condition::Type::Guard) {
                        check_rule_use(c.rule, w);
                        check_location(c.at, w);
                    }
                    auto a = walk(n.then_branch, bound, where);
                    auto b = walk(n.else_branch, bound, where);
                    std::set<std::string> x;
                    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(x, x.begin()));
                    return x;
                }
            },
            t->node);
    }

    static bool is_symbolic_location(const std::string& s) {
        return s == "@here" || s == "@carried" || s == "@memory";
    }

    void check_agents() {
        std::set<std::string> names;
        for (const auto& a : m_.agents) {
            std::string w = "agent " + a.name;
            if (!names.insert(a.name).second) add(C::DuplicateName, w, "agent name reused");
            check_template(a.marker, w);
            for (const auto* loc : {&a.start, &a.carried, &a.memory}) {
                if (loc->empty()) continue;
                if (!m_.graph.has_node(*loc)) add(C::UnknownLocation, w, "unknown location '" + *loc + "'");
            }
            if (!a.behaviour.empty() && !m_.processes.count(a.behaviour))
                add(C::UnknownProcess, w, "behaviour '" + a.behaviour + "' not defined");
        }
    }

    void check_environments() {
        std::set<std::string> names;
        for (const auto& e : m_.environments) {
            std::string w = "environment " + e.name;
            if (!names.insert(e.name).second) add(C::DuplicateName, w, "environment name reused");
            if (!m_.graph.has_node(e.interface)) add(C::UnknownLocation, w, "interface '" + e.interface + "' not in graph");
            if (auto p = distribution_problem(e.inter_arrival); !p.empty()) add(C::InvalidDistribution, w, p);
            else if (!strictly_positive(e.inter_arrival))
                add(C::InvalidDistribution, w, "inter-arrival samples must be strictly positive");
            if (!e.process.empty() && !m_.processes.count(e.process))
                add(C::UnknownProcess, w, "payload process '" + e.process + "' not defined");
            for (const auto& t : e.templates) check_template(t, w);
            if (!e.event_type.empty() && !e.emitted_event_types.empty() &&
                std::find(e.emitted_event_types.begin(), e.emitted_event_types.end(), e.event_type) ==
                    e.emitted_event_types.end())
                add(C::InvalidEnvironment, w, "event_type not among emitted event types");
            if (e.batch < 1) add(C::InvalidEnvironment, w, "batch must be >= 1");
            if (e.window_start && e.window_end && !(*e.window_start < *e.window_end))
                add(C::InvalidEnvironment, w, "window start must precede window end");
            for (const auto& a : e.agents)
                if (!m_.agent(a)) add(C::UnknownAgent, w, "pool agent '" + a + "' not defined");
        }
    }

    void check_interfaces() {
        for (const auto& i : m_.interfaces)
            if (!m_.graph.has_node(i.location))
                add(C::UnknownLocation, "interface " + i.location, "interface location not in graph");
    }

    void check_metrics() {
        auto types = event_types(m_);
        for (const auto& d : m_.metrics) {
            std::string w = "metric " + d.name;
            auto need = [&](const std::string& ev) {
                if (!types.count(ev)) add(C::UnknownEventType, w, "event type '" + ev + "' is never logged");
            };
            switch (d.type) {
            case MetricDecl::Type::Counter: need(d.event_type); break;
            case MetricDecl::Type::Duration:
                need(d.start_type);
                need(d.end_type);
                if (!(d.scale > 0)) add(C::InvalidMetric, w, "scale must be > 0");
                break;
            case MetricDecl::Type::TimeWeighted:
                if (!m_.kinds.count(d.kind)) add(C::UnknownKind, w, "kind '" + d.kind + "'");
                if (!m_.graph.has_node(d.location)) add(C::UnknownLocation, w, "location '" + d.location + "'");
                break;
            }
        }
    }

    const ModelSpec& m_;
    const RuleRegistry& reg_;
    std::set<std::string> private_;
    std::vector<Diagnostic> out_;
};

} // namespace detail

/// Checks every structural invariant of `m`; returns all failures (empty means ok).
inline std::vector<Diagnostic> validate_model(const ModelSpec& m, const RuleRegistry& registry) {
    return detail::Validator(m, registry).run();
}

inline bool has_code(const std::vector<Diagnostic>& ds, Diagnostic::Code c) {
    return std::any_of(ds.begin(), ds.end(), [c](const Diagnostic& d) { return d.code == c; });
}

/// Makes every declared incompatibility symmetric.
inline void normalize_kinds(ModelSpec& m) {
    for (auto& [name, k] : m.kinds)
        for (const auto& other : std::set<std::string, std::less<>>(k.incompatible))
            if (auto it = m.kinds.find(other); it != m.kinds.end()) it->second.incompatible.insert(name);
}

} // namespace metaphorsim
