#pragma once

#include "value.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace metaphorsim {

struct ResourceKind {
    std::string name;
    std::map<std::string, ValueType, std::less<>> attribute_schema;
    // Kinds this kind may not be composed with at one location.
    std::set<std::string, std::less<>> incompatible;
};

using KindTable = std::map<std::string, ResourceKind, std::less<>>;

struct ResourceAtom {
    std::string kind;
    AtomId id;
    AttrMap attributes;

    bool operator==(const ResourceAtom&) const = default;

    /// Attribute value, or the schema-less default `fallback` when absent.
    AttrValue get(std::string_view attr, AttrValue fallback = std::int64_t{0}) const {
        auto it = attributes.find(attr);
        return it == attributes.end() ? fallback : it->second;
    }
    double real(std::string_view attr) const { return as_real(get(attr)); }
    std::int64_t integer(std::string_view attr) const { return as_integer(get(attr)); }
    bool flag(std::string_view attr) const { return as_bool(get(attr, false)); }
    std::string text(std::string_view attr) const { return to_text(get(attr, std::string{})); }
};

/// Returns an empty string when `atom` conforms to `kinds`, otherwise a reason.
inline std::string schema_violation(const ResourceAtom& atom, const KindTable& kinds) {
    auto it = kinds.find(atom.kind);
    if (it == kinds.end()) return "unknown kind '" + atom.kind + "'";
    for (const auto& [attr, value] : atom.attributes) {
        auto s = it->second.attribute_schema.find(attr);
        if (s == it->second.attribute_schema.end())
            return "attribute '" + attr + "' not in schema of kind '" + atom.kind + "'";
        if (type_of(value) != s->second)
            return "attribute '" + attr + "' of kind '" + atom.kind + "' must be " +
                   std::string(to_string(s->second));
    }
    return {};
}

/// Converts attribute values of `atom` to the types its kind declares (e.g. JSON 5 -> 5.0).
inline void conform(ResourceAtom& atom, const KindTable& kinds) {
    auto it = kinds.find(atom.kind);
    if (it == kinds.end()) return;
    for (auto& [attr, value] : atom.attributes) {
        auto s = it->second.attribute_schema.find(attr);
        if (s != it->second.attribute_schema.end()) value = coerce(value, s->second);
    }
}

/// Flat multiset of atoms, kept sorted by id.
class ResourceBundle {
public:
    ResourceBundle() = default;
    ResourceBundle(std::initializer_list<ResourceAtom> atoms) {
        for (const auto& a : atoms) insert(a);
    }

    const std::vector<ResourceAtom>& atoms() const noexcept { return atoms_; }
    std::size_t size() const noexcept { return atoms_.size(); }
    bool empty() const noexcept { return atoms_.empty(); }
    auto begin() const noexcept { return atoms_.begin(); }
    auto end() const noexcept { return atoms_.end(); }

    const ResourceAtom* find(AtomId id) const {
        auto it = lower(id);
        return it != atoms_.end() && it->id == id ? &*it : nullptr;
    }
    ResourceAtom* find(AtomId id) {
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), id,
                                   [](const ResourceAtom& a, AtomId v) { return a.id < v; });
        return it != atoms_.end() && it->id == id ? &*it : nullptr;
    }
    bool contains(AtomId id) const { return find(id) != nullptr; }

    void insert(ResourceAtom atom) {
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), atom.id,
                                   [](const ResourceAtom& a, AtomId v) { return a.id < v; });
        if (it != atoms_.end() && it->id == atom.id)
            throw Error(ErrorCode::DuplicateId, "atom id " + std::to_string(atom.id.value) + " already present");
        atoms_.insert(it, std::move(atom));
    }

    std::optional<ResourceAtom> take(AtomId id) {
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), id,
                                   [](const ResourceAtom& a, AtomId v) { return a.id < v; });
        if (it == atoms_.end() || it->id != id) return std::nullopt;
        ResourceAtom out = std::move(*it);
        atoms_.erase(it);
        return out;
    }

    std::size_t count(std::string_view kind) const {
        return static_cast<std::size_t>(
            std::count_if(atoms_.begin(), atoms_.end(), [&](const ResourceAtom& a) { return a.kind == kind; }));
    }

    std::set<std::string, std::less<>> kinds() const {
        std::set<std::string, std::less<>> out;
        for (const auto& a : atoms_) out.insert(a.kind);
        return out;
    }

    std::vector<AtomId> ids() const {
        std::vector<AtomId> out;
        out.reserve(atoms_.size());
        for (const auto& a : atoms_) out.push_back(a.id);
        return out;
    }

    bool operator==(const ResourceBundle&) const = default;

private:
    std::vector<ResourceAtom>::const_iterator lower(AtomId id) const {
        return std::lower_bound(atoms_.begin(), atoms_.end(), id,
                                [](const ResourceAtom& a, AtomId v) { return a.id < v; });
    }

    std::vector<ResourceAtom> atoms_;
};

/// Symmetric incompatibility relation between kinds; empty means fully commutative.
class CompatibilityRelation {
public:
    CompatibilityRelation() = default;

    static CompatibilityRelation from_kinds(const KindTable& kinds) {
        CompatibilityRelation rel;
        for (const auto& [name, kind] : kinds)
            for (const auto& other : kind.incompatible) rel.forbid(name, other);
        return rel;
    }

    void forbid(const std::string& a, const std::string& b) {
        pairs_.insert(ordered(a, b));
    }

    bool incompatible(std::string_view a, std::string_view b) const {
        return pairs_.count(ordered(std::string(a), std::string(b))) > 0;
    }

    bool empty() const noexcept { return pairs_.empty(); }

private:
    static std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
        return a <= b ? std::pair{a, b} : std::pair{b, a};
    }

    std::set<std::pair<std::string, std::string>> pairs_;
};

/// Multiset union of two bundles. Partial: fails on shared ids or on a declared
/// incompatible kind pair across the operands.
inline ResourceBundle compose_resources(const ResourceBundle& a, const ResourceBundle& b,
                                        const CompatibilityRelation& compat = {}) {
    if (!compat.empty()) {
        auto ka = a.kinds();
        auto kb = b.kinds();
        // Scan pairs in (min, max) order so the reported pair does not depend on operand order.
        std::set<std::pair<std::string, std::string>> hits;
        for (const auto& x : ka)
            for (const auto& y : kb)
                if (compat.incompatible(x, y)) hits.insert(x <= y ? std::pair{x, y} : std::pair{y, x});
        if (!hits.empty())
            throw Error(ErrorCode::IncompatibleKinds, hits.begin()->first + ", " + hits.begin()->second);
    }
    ResourceBundle out = a;
    for (const auto& atom : b) {
        if (out.contains(atom.id))
            throw Error(ErrorCode::DuplicateId, "atom id " + std::to_string(atom.id.value) + " in both operands");
        out.insert(atom);
    }
    return out;
}

/// Sub-multiset order over (kind, attributes); ids are ignored.
inline bool resource_leq(const ResourceBundle& a, const ResourceBundle& b) {
    std::map<std::pair<std::string, AttrMap>, long> need;
    for (const auto& atom : a) ++need[{atom.kind, atom.attributes}];
    for (const auto& atom : b) {
        auto it = need.find({atom.kind, atom.attributes});
        if (it != need.end() && --it->second == 0) need.erase(it);
    }
    return need.empty();
}

struct AttributeConstraint {
    std::string attribute;  // "id" compares the atom id
    Comparator comparator = Comparator::Eq;
    AttrValue value;
    // Runtime reference resolved by the engine: "$var" for an instance variable,
    // "@binding" for the ids of a binding (only with attribute "id").
    std::string ref;

    bool operator==(const AttributeConstraint&) const = default;
};

struct ResourcePattern {
    std::string kind;
    std::vector<AttributeConstraint> constraints;
    std::size_t quantity = 1;
    std::string binding;
    // Matches only the running instance's own marker atom.
    bool self = false;
    // Set by the engine when a constraint refers to a binding or to `self`.
    std::optional<std::vector<AtomId>> id_in;

    bool operator==(const ResourcePattern&) const = default;
};

inline bool atom_satisfies(const ResourcePattern& p, const ResourceAtom& atom) {
    if (atom.kind != p.kind) return false;
    if (p.id_in && std::find(p.id_in->begin(), p.id_in->end(), atom.id) == p.id_in->end()) return false;
    for (const auto& c : p.constraints) {
        if (!c.ref.empty() && c.ref.front() == '@') continue;  // folded into id_in
        if (c.attribute == "id") {
            if (!compare(static_cast<std::int64_t>(atom.id.value), c.comparator, c.value)) return false;
            continue;
        }
        auto it = atom.attributes.find(c.attribute);
        if (it == atom.attributes.end()) {
            // Absent attributes read as the default of the compared value's type.
            if (!compare(default_value(type_of(c.value)), c.comparator, c.value)) return false;
        } else if (!compare(it->second, c.comparator, c.value)) {
            return false;
        }
    }
    return true;
}

/// Selects exactly `p.quantity` satisfying atoms in ascending id order, or nothing.
inline std::optional<std::vector<AtomId>> match_pattern(const ResourcePattern& p, const ResourceBundle& b) {
    if (p.quantity == 0) return std::vector<AtomId>{};
    std::vector<AtomId> chosen;
    for (const auto& atom : b) {
        if (!atom_satisfies(p, atom)) continue;
        chosen.push_back(atom.id);
        if (chosen.size() == p.quantity) return chosen;
    }
    return std::nullopt;
}

inline std::optional<std::vector<AtomId>> match_pattern(const ResourcePattern& p, const ResourceBundle& b,
                                                        const KindTable& kinds) {
    if (!kinds.count(p.kind)) throw Error(ErrorCode::UnknownKind, "pattern kind '" + p.kind + "'");
    return match_pattern(p, b);
}

enum class LocationKind { Physical, Logical, Abstract };

inline std::string_view to_string(LocationKind k) {
    switch (k) {
    case LocationKind::Physical: return "physical";
    case LocationKind::Logical: return "logical";
    case LocationKind::Abstract: return "abstract";
    }
    return "?";
}

inline LocationKind parse_location_kind(std::string_view s) {
    if (s == "physical") return LocationKind::Physical;
    if (s == "logical") return LocationKind::Logical;
    if (s == "abstract") return LocationKind::Abstract;
    throw Error(ErrorCode::ParseError, "unknown location kind '" + std::string(s) + "'");
}

struct LocationNode {
    std::string name;
    LocationKind kind = LocationKind::Physical;
    AttrMap attributes;

    bool operator==(const LocationNode&) const = default;
};

class LocationGraph {
public:
    void add_node(LocationNode node) {
        std::string key = node.name;
        nodes_.insert_or_assign(std::move(key), std::move(node));
    }
    void add_edge(const std::string& from, const std::string& to) { edges_.insert({from, to}); }
    void add_edges_both(const std::string& a, const std::string& b) {
        add_edge(a, b);
        add_edge(b, a);
    }
    void remove_node(const std::string& name) {
        nodes_.erase(name);
        for (auto it = edges_.begin(); it != edges_.end();)
            it = (it->first == name || it->second == name) ? edges_.erase(it) : std::next(it);
    }

    bool has_node(std::string_view name) const { return nodes_.find(name) != nodes_.end(); }
    bool has_edge(const std::string& from, const std::string& to) const { return edges_.count({from, to}) > 0; }
    const LocationNode* node(std::string_view name) const {
        auto it = nodes_.find(name);
        return it == nodes_.end() ? nullptr : &it->second;
    }
    LocationNode* node(std::string_view name) {
        auto it = nodes_.find(name);
        return it == nodes_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, LocationNode, std::less<>>& nodes() const noexcept { return nodes_; }
    const std::set<std::pair<std::string, std::string>>& edges() const noexcept { return edges_; }

    bool operator==(const LocationGraph&) const = default;

private:
    std::map<std::string, LocationNode, std::less<>> nodes_;
    std::set<std::pair<std::string, std::string>> edges_;
};

} // namespace metaphorsim
