#pragma once

#include "calculus.hpp"
#include "distribution.hpp"

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace metaphorsim {

// Location references inside process terms are either literal location names or
// resolved per instance at run time:
//   "@here"    location of the instance's own marker atom
//   "@carried" / "@memory"  the running agent's private locations
//   "$name"    value of the instance variable `name`
inline bool is_runtime_location(std::string_view ref) {
    return !ref.empty() && (ref.front() == '@' || ref.front() == '$');
}

/// A basic action: an invocation of a registered modification rule at a location.
struct Action {
    std::string name;  // registered rule name
    AttrMap params;    // text values "$v" / "@b" are resolved per instance
    DistributionSpec duration = dist::Constant{0.0};
    std::string at = "@here";  // empty: the action touches no location
    // Log record type; defaults to the rule name, empty string suppresses logging.
    std::optional<std::string> event;
    // Binding names the rule establishes (for path checking of later Releases).
    std::vector<std::string> binds;

    std::string event_type() const { return event ? *event : name; }
    bool operator==(const Action&) const = default;
};

/// Non-blocking test used by `If`.
struct Condition {
    enum class Type { Match, Guard, VarEquals };
    Type type = Type::Match;
    ResourcePattern pattern;  // Match
    std::string at = "@here"; // Match, Guard
    std::string rule;         // Guard
    AttrMap params;           // Guard
    std::string var;          // VarEquals
    AttrValue value;          // VarEquals

    bool operator==(const Condition&) const = default;
};

struct ProcessTerm;
using TermPtr = std::shared_ptr<const ProcessTerm>;

namespace term {
struct Nil { bool operator==(const Nil&) const = default; };
struct Prefix { Action action; TermPtr next; };
struct Seq { TermPtr first, second; };
struct Par { TermPtr left, right; };
struct Choose { std::vector<std::pair<double, TermPtr>> branches; };
struct Move { ResourcePattern pattern; std::string from, to; TermPtr next; };
struct Claim { ResourcePattern pattern; std::string at; TermPtr next; };
struct Release { std::string binding; std::string at; TermPtr next; };
struct Spawn { std::string process; TermPtr next; };
// Runs a named process inline in the current instance (shares variables and bindings).
struct Call { std::string process; };
struct If { Condition condition; TermPtr then_branch, else_branch; };
} // namespace term

struct ProcessTerm {
    using Node = std::variant<term::Nil, term::Prefix, term::Seq, term::Par, term::Choose, term::Move, term::Claim,
                              term::Release, term::Spawn, term::Call, term::If>;
    Node node;
};

bool terms_equal(const TermPtr& a, const TermPtr& b);

namespace detail {
inline bool node_equal(const term::Nil&, const term::Nil&) { return true; }
inline bool node_equal(const term::Prefix& a, const term::Prefix& b) {
    return a.action == b.action && terms_equal(a.next, b.next);
}
inline bool node_equal(const term::Seq& a, const term::Seq& b) {
    return terms_equal(a.first, b.first) && terms_equal(a.second, b.second);
}
inline bool node_equal(const term::Par& a, const term::Par& b) {
    return terms_equal(a.left, b.left) && terms_equal(a.right, b.right);
}
inline bool node_equal(const term::Choose& a, const term::Choose& b) {
    if (a.branches.size() != b.branches.size()) return false;
    for (std::size_t i = 0; i < a.branches.size(); ++i)
        if (a.branches[i].first != b.branches[i].first || !terms_equal(a.branches[i].second, b.branches[i].second))
            return false;
    return true;
}
inline bool node_equal(const term::Move& a, const term::Move& b) {
    return a.pattern == b.pattern && a.from == b.from && a.to == b.to && terms_equal(a.next, b.next);
}
inline bool node_equal(const term::Claim& a, const term::Claim& b) {
    return a.pattern == b.pattern && a.at == b.at && terms_equal(a.next, b.next);
}
inline bool node_equal(const term::Release& a, const term::Release& b) {
    return a.binding == b.binding && a.at == b.at && terms_equal(a.next, b.next);
}
inline bool node_equal(const term::Spawn& a, const term::Spawn& b) {
    return a.process == b.process && terms_equal(a.next, b.next);
}
inline bool node_equal(const term::Call& a, const term::Call& b) { return a.process == b.process; }
inline bool node_equal(const term::If& a, const term::If& b) {
    return a.condition == b.condition && terms_equal(a.then_branch, b.then_branch) &&
           terms_equal(a.else_branch, b.else_branch);
}
} // namespace detail

inline bool terms_equal(const TermPtr& a, const TermPtr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->node.index() != b->node.index()) return false;
    return std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            return detail::node_equal(x, std::get<T>(b->node));
        },
        a->node);
}

/// Builders for process terms.
namespace dsl {

inline TermPtr make(ProcessTerm::Node n) { return std::make_shared<const ProcessTerm>(ProcessTerm{std::move(n)}); }

inline TermPtr nil() {
    static const TermPtr n = make(term::Nil{});
    return n;
}

inline TermPtr prefix(Action a, TermPtr next = nil()) { return make(term::Prefix{std::move(a), std::move(next)}); }

inline TermPtr seq(TermPtr a, TermPtr b) { return make(term::Seq{std::move(a), std::move(b)}); }

/// Right-nested sequence of all terms.
inline TermPtr seq(std::vector<TermPtr> terms) {
    if (terms.empty()) return nil();
    TermPtr out = terms.back();
    for (std::size_t i = terms.size() - 1; i-- > 0;) out = seq(terms[i], out);
    return out;
}

inline TermPtr par(TermPtr a, TermPtr b) { return make(term::Par{std::move(a), std::move(b)}); }

inline TermPtr par(std::vector<TermPtr> terms) {
    if (terms.empty()) return nil();
    TermPtr out = terms.back();
    for (std::size_t i = terms.size() - 1; i-- > 0;) out = par(terms[i], out);
    return out;
}

inline TermPtr choose(std::vector<std::pair<double, TermPtr>> branches) {
    return make(term::Choose{std::move(branches)});
}

inline TermPtr move(ResourcePattern p, std::string from, std::string to, TermPtr next = nil()) {
    return make(term::Move{std::move(p), std::move(from), std::move(to), std::move(next)});
}

inline TermPtr claim(ResourcePattern p, std::string at, TermPtr next = nil()) {
    return make(term::Claim{std::move(p), std::move(at), std::move(next)});
}

inline TermPtr release(std::string binding, std::string at, TermPtr next = nil()) {
    return make(term::Release{std::move(binding), std::move(at), std::move(next)});
}

inline TermPtr spawn(std::string process, TermPtr next = nil()) {
    return make(term::Spawn{std::move(process), std::move(next)});
}

inline TermPtr call(std::string process) { return make(term::Call{std::move(process)}); }

inline TermPtr when(Condition c, TermPtr then_branch, TermPtr else_branch = nil()) {
    return make(term::If{std::move(c), std::move(then_branch), std::move(else_branch)});
}

/// Pattern helpers.
inline ResourcePattern pattern(std::string kind, std::size_t quantity = 1, std::string binding = {}) {
    ResourcePattern p;
    p.kind = std::move(kind);
    p.quantity = quantity;
    p.binding = std::move(binding);
    return p;
}

inline ResourcePattern self_pattern(std::string kind) {
    ResourcePattern p = pattern(std::move(kind));
    p.self = true;
    return p;
}

inline ResourcePattern with(ResourcePattern p, std::string attr, Comparator c, AttrValue v) {
    p.constraints.push_back({std::move(attr), c, std::move(v), {}});
    return p;
}

inline ResourcePattern with_ref(ResourcePattern p, std::string attr, Comparator c, std::string ref) {
    p.constraints.push_back({std::move(attr), c, AttrValue{std::string{}}, std::move(ref)});
    return p;
}

/// Atom whose id is held by binding `b` (kept even after release).
inline ResourcePattern bound(std::string kind, const std::string& b) {
    return with_ref(pattern(std::move(kind)), "id", Comparator::Eq, "@" + b);
}

/// Action helpers.
inline Action action(std::string rule, std::string at = "@here", AttrMap params = {}) {
    Action a;
    a.name = std::move(rule);
    a.at = std::move(at);
    a.params = std::move(params);
    return a;
}

inline Action named(Action a, std::string event) {
    a.event = std::move(event);
    return a;
}

inline Action lasting(Action a, DistributionSpec d) {
    a.duration = std::move(d);
    return a;
}

inline Action binding(Action a, std::string b) {
    a.binds.push_back(std::move(b));
    return a;
}

/// Silent wait.
inline TermPtr delay(DistributionSpec d, TermPtr next = nil()) {
    Action a = action("noop", "");
    a.event = std::string{};
    a.duration = std::move(d);
    return prefix(std::move(a), std::move(next));
}

/// Logs an event of type `event` at `at` without changing resources.
inline TermPtr emit(std::string event, std::string at = "@here", TermPtr next = nil()) {
    return prefix(named(action("noop", std::move(at)), std::move(event)), std::move(next));
}

inline Condition has(ResourcePattern p, std::string at) {
    Condition c;
    c.type = Condition::Type::Match;
    c.pattern = std::move(p);
    c.at = std::move(at);
    return c;
}

inline Condition guard(std::string rule, std::string at, AttrMap params = {}) {
    Condition c;
    c.type = Condition::Type::Guard;
    c.rule = std::move(rule);
    c.at = std::move(at);
    c.params = std::move(params);
    return c;
}

inline Condition var_is(std::string var, AttrValue v) {
    Condition c;
    c.type = Condition::Type::VarEquals;
    c.var = std::move(var);
    c.value = std::move(v);
    return c;
}

} // namespace dsl

} // namespace metaphorsim
