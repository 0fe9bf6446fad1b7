#pragma once

#include "calculus.hpp"
#include "distribution.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace metaphorsim {

/// Read-only view of simulation state offered to rules.
class WorldView {
public:
    virtual ~WorldView() = default;
    virtual double now() const = 0;
    virtual const KindTable& kinds() const = 0;
    virtual const LocationGraph& graph() const = 0;
    virtual const ResourceBundle& at(std::string_view location) const = 0;
    /// Location of an atom; nullopt when held by an instance or destroyed.
    virtual std::optional<std::string> locate(AtomId id) const = 0;
    /// Atom wherever it is (located or held); nullptr once destroyed.
    virtual const ResourceAtom* find_atom(AtomId id) const = 0;
    /// Visits every live atom of `kind`, including held ones, in ascending id order.
    virtual void for_each_atom(std::string_view kind, const std::function<void(const ResourceAtom&)>& f) const = 0;
    /// Number of instances queued on claims for `kind` at `location`.
    virtual std::size_t waiting(std::string_view location, std::string_view kind) const = 0;
    /// For a held atom, the location it was claimed at.
    virtual std::optional<std::string> claimed_at(AtomId id) const = 0;
};

/// A world with no state, for evaluating rules outside a run.
class EmptyWorld final : public WorldView {
public:
    double now() const override { return 0.0; }
    const KindTable& kinds() const override { return kinds_; }
    const LocationGraph& graph() const override { return graph_; }
    const ResourceBundle& at(std::string_view) const override { return empty_; }
    std::optional<std::string> locate(AtomId) const override { return std::nullopt; }
    const ResourceAtom* find_atom(AtomId) const override { return nullptr; }
    void for_each_atom(std::string_view, const std::function<void(const ResourceAtom&)>&) const override {}
    std::size_t waiting(std::string_view, std::string_view) const override { return 0; }
    std::optional<std::string> claimed_at(AtomId) const override { return std::nullopt; }

private:
    KindTable kinds_;
    LocationGraph graph_;
    ResourceBundle empty_;
};

/// Run-scoped monotone id counter; ids are never reused.
class AtomAllocator {
public:
    explicit AtomAllocator(std::uint64_t next = 1) : next_(next) {}
    AtomId allocate() { return AtomId{next_++}; }
    std::uint64_t peek() const noexcept { return next_; }

private:
    std::uint64_t next_;
};

struct BindingState {
    std::vector<AtomId> ids;
    bool held = false;
};

/// Per-instance state visible to rules: variables, bindings and agent identity.
struct InstanceScope {
    std::string subject;
    std::optional<AtomId> self;
    std::string carried;
    std::string memory;
    AttrMap vars;
    std::map<std::string, BindingState, std::less<>> bindings;

    std::optional<AtomId> first_bound(std::string_view name) const {
        auto it = bindings.find(name);
        if (it == bindings.end() || it->second.ids.empty()) return std::nullopt;
        return it->second.ids.front();
    }
};

class RuleContext {
public:
    RuleContext(std::string_view location, const ResourceBundle& local, const AttrMap& params,
                const WorldView& world, InstanceScope& scope, RngStream& rng, AtomAllocator& ids)
        : location(location), local(local), params(params), world(world), scope(scope), rng(rng), ids(ids) {}

    std::string_view location;
    const ResourceBundle& local;
    const AttrMap& params;
    const WorldView& world;
    InstanceScope& scope;
    RngStream& rng;
    AtomAllocator& ids;

    // Side effects beyond the replacement local bundle, applied by the engine afterwards.
    std::vector<std::pair<AtomId, std::string>> relocations;
    std::vector<AtomId> destroyed;
    std::vector<std::tuple<AtomId, std::string, AttrValue>> updates;  // attribute writes to atoms elsewhere
    Details details;
    std::optional<double> duration_override;

    bool has_param(std::string_view name) const { return params.find(name) != params.end(); }
    const AttrValue& param(std::string_view name) const {
        auto it = params.find(name);
        if (it == params.end()) throw Error(ErrorCode::InvalidParameter, "missing action parameter '" + std::string(name) + "'");
        return it->second;
    }
    std::string text(std::string_view name, std::string fallback = {}) const {
        auto it = params.find(name);
        return it == params.end() ? fallback : to_text(it->second);
    }
    double real(std::string_view name, double fallback = 0.0) const {
        auto it = params.find(name);
        return it == params.end() ? fallback : as_real(it->second);
    }
    std::int64_t integer(std::string_view name, std::int64_t fallback = 0) const {
        auto it = params.find(name);
        return it == params.end() ? fallback : as_integer(it->second);
    }
    bool flag(std::string_view name, bool fallback = false) const {
        auto it = params.find(name);
        return it == params.end() ? fallback : as_bool(it->second);
    }

    ResourceAtom make_atom(std::string kind, AttrMap attrs = {}) {
        return ResourceAtom{std::move(kind), ids.allocate(), std::move(attrs)};
    }
    void relocate(AtomId id, std::string to) { relocations.emplace_back(id, std::move(to)); }
    void destroy(AtomId id) { destroyed.push_back(id); }
    void update(AtomId id, std::string attr, AttrValue v) { updates.emplace_back(id, std::move(attr), std::move(v)); }
    void detail(std::string key, AttrValue v) { details.emplace_back(std::move(key), std::move(v)); }
    void bind(const std::string& name, std::vector<AtomId> ids_) { scope.bindings[name] = BindingState{std::move(ids_), false}; }
};

/// Partial modification function: defined exactly where `guard` holds.
struct ModificationRule {
    std::string name;
    std::function<bool(const RuleContext&)> guard;
    std::function<ResourceBundle(RuleContext&)> effect;
};

class RuleRegistry {
public:
    void add(ModificationRule rule) {
        std::string key = rule.name;
        rules_.insert_or_assign(std::move(key), std::move(rule));
    }
    const ModificationRule* find(std::string_view name) const {
        auto it = rules_.find(name);
        return it == rules_.end() ? nullptr : &it->second;
    }
    bool contains(std::string_view name) const { return find(name) != nullptr; }
    const std::map<std::string, ModificationRule, std::less<>>& all() const noexcept { return rules_; }

private:
    std::map<std::string, ModificationRule, std::less<>> rules_;
};

/// Checks that `after` only adds atoms freshly allocated in [first_new, allocator.peek())
/// and that every atom conforms to `kinds` (when given). Throws EffectViolatesSchema.
inline void verify_effect(const ResourceBundle& before, const ResourceBundle& after, std::uint64_t first_new,
                          const AtomAllocator& ids, const KindTable* kinds, std::string_view rule) {
    for (const auto& atom : after) {
        if (!before.contains(atom.id) && (atom.id.value < first_new || atom.id.value >= ids.peek()))
            throw Error(ErrorCode::EffectViolatesSchema,
                        "rule '" + std::string(rule) + "' introduced atom " + std::to_string(atom.id.value) +
                            " not allocated by the engine");
        if (kinds) {
            auto why = schema_violation(atom, *kinds);
            if (!why.empty())
                throw Error(ErrorCode::EffectViolatesSchema, "rule '" + std::string(rule) + "': " + why);
        }
    }
}

/// Applies `rule` to the bundle at one location. Returns nullopt (leaving `local`
/// untouched) where the rule is undefined.
inline std::optional<ResourceBundle> apply_modification(const ModificationRule& rule, const ResourceBundle& local,
                                                        const AttrMap& params, AtomAllocator& ids,
                                                        const KindTable* kinds = nullptr,
                                                        std::string_view location = {}) {
    EmptyWorld world;
    InstanceScope scope;
    RngStream rng(0, "apply:" + rule.name);
    RuleContext ctx(location, local, params, world, scope, rng, ids);
    if (rule.guard && !rule.guard(ctx)) return std::nullopt;
    std::uint64_t first_new = ids.peek();
    ResourceBundle out = rule.effect ? rule.effect(ctx) : local;
    verify_effect(local, out, first_new, ids, kinds, rule.name);
    return out;
}

namespace rules {

inline const ResourceAtom* first_of(const ResourceBundle& b, std::string_view kind) {
    for (const auto& a : b)
        if (a.kind == kind) return &a;
    return nullptr;
}

inline AttrMap prefixed_attributes(const AttrMap& params, std::string_view prefix = "attr.") {
    AttrMap out;
    for (const auto& [k, v] : params)
        if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
    return out;
}

/// Atoms selected by a "binding" parameter or, failing that, local atoms of "kind".
inline std::vector<const ResourceAtom*> selected(const RuleContext& ctx) {
    std::vector<const ResourceAtom*> out;
    if (ctx.has_param("binding")) {
        auto it = ctx.scope.bindings.find(ctx.text("binding"));
        if (it != ctx.scope.bindings.end())
            for (AtomId id : it->second.ids)
                if (auto a = ctx.world.find_atom(id)) out.push_back(a);
        if (out.empty())  // outside a run the world is empty; fall back to the local bundle
            if (it != ctx.scope.bindings.end())
                for (AtomId id : it->second.ids)
                    if (auto a = ctx.local.find(id)) out.push_back(a);
        return out;
    }
    std::string kind = ctx.text("kind");
    for (const auto& a : ctx.local)
        if (a.kind == kind) out.push_back(&a);
    return out;
}

/// Generic rules available to every model document.
inline void register_generic(RuleRegistry& reg) {
    reg.add({"noop", nullptr, nullptr});

    // create(kind, bind?, attr.<name>...): adds one fresh atom at the location.
    reg.add({"create", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 ResourceAtom atom = ctx.make_atom(ctx.text("kind"), prefixed_attributes(ctx.params));
                 if (ctx.has_param("bind")) ctx.bind(ctx.text("bind"), {atom.id});
                 ctx.detail("created", static_cast<std::int64_t>(atom.id.value));
                 out.insert(std::move(atom));
                 return out;
             }});

    // destroy(kind): removes the lowest-id atom of the kind.
    reg.add({"destroy", [](const RuleContext& ctx) { return first_of(ctx.local, ctx.text("kind")) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 out.take(first_of(ctx.local, ctx.text("kind"))->id);
                 return out;
             }});

    // set_attr(kind | target, attr, value): sets an attribute on a local atom.
    auto target = [](const RuleContext& ctx) -> const ResourceAtom* {
        if (ctx.has_param("target")) {
            auto id = ctx.scope.first_bound(ctx.text("target"));
            return id ? ctx.local.find(*id) : nullptr;
        }
        return first_of(ctx.local, ctx.text("kind"));
    };
    reg.add({"set_attr", [target](const RuleContext& ctx) { return target(ctx) != nullptr; },
             [target](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 AtomId id = target(ctx)->id;
                 out.find(id)->attributes[ctx.text("attr")] = ctx.param("value");
                 return out;
             }});

    // tally(binding | kind, attr): records the attribute sum and atom count as details.
    reg.add({"tally", nullptr, [](RuleContext& ctx) {
                 double sum = 0;
                 auto atoms = selected(ctx);
                 std::string attr = ctx.text("attr", "count");
                 for (const auto* a : atoms) sum += a->real(attr);
                 ctx.detail(attr, static_cast<std::int64_t>(std::llround(sum)));
                 ctx.detail("n", static_cast<std::int64_t>(atoms.size()));
                 return ctx.local;
             }});

    // set_var(name, value)
    reg.add({"set_var", nullptr, [](RuleContext& ctx) {
                 ctx.scope.vars[ctx.text("name")] = ctx.param("value");
                 return ctx.local;
             }});

    // note(...): logs every parameter as a detail.
    reg.add({"note", nullptr, [](RuleContext& ctx) {
                 for (const auto& [k, v] : ctx.params) ctx.detail(k, v);
                 return ctx.local;
             }});

    // var_from_binding(binding, attr, name): copies an attribute of the first bound atom into a variable.
    reg.add({"var_from_binding", nullptr, [](RuleContext& ctx) {
                 auto id = ctx.scope.first_bound(ctx.text("binding"));
                 const ResourceAtom* a = id ? ctx.world.find_atom(*id) : nullptr;
                 if (!a) throw Error(ErrorCode::UnknownBinding, "var_from_binding: '" + ctx.text("binding") + "' is empty");
                 std::string attr = ctx.text("attr");
                 ctx.scope.vars[ctx.text("name")] =
                     attr == "id" ? AttrValue{static_cast<std::int64_t>(a->id.value)} : a->get(attr);
                 return ctx.local;
             }});

    // discard(binding): destroys the atoms a binding holds.
    reg.add({"discard", nullptr, [](RuleContext& ctx) {
                 auto it = ctx.scope.bindings.find(ctx.text("binding"));
                 if (it != ctx.scope.bindings.end())
                     for (AtomId id : it->second.ids) ctx.destroy(id);
                 return ctx.local;
             }});

    // wait(hours): a silent pause whose length comes from a variable or parameter.
    reg.add({"wait", nullptr, [](RuleContext& ctx) {
                 ctx.duration_override = std::max(0.0, ctx.real("hours"));
                 return ctx.local;
             }});

    // require(kind, count): waits until the location holds at least `count` atoms of the kind.
    reg.add({"require",
             [](const RuleContext& ctx) {
                 return ctx.local.count(ctx.text("kind")) >= static_cast<std::size_t>(ctx.integer("count", 1));
             },
             nullptr});
}

} // namespace rules

} // namespace metaphorsim
