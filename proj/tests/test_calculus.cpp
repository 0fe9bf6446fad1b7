#include "metaphorsim/metaphorsim.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace metaphorsim;
using namespace metaphorsim::dsl;

namespace {

ResourceAtom atom(std::string kind, std::uint64_t id, AttrMap attrs = {}) {
    return ResourceAtom{std::move(kind), AtomId{id}, std::move(attrs)};
}

std::vector<std::uint64_t> id_values(const std::vector<AtomId>& ids) {
    std::vector<std::uint64_t> out;
    for (auto id : ids) out.push_back(id.value);
    return out;
}

// Random bundles over a small alphabet so that equal (kind, attributes) pairs recur.
struct BundleGen {
    std::mt19937_64 rng;
    std::uint64_t next_id = 1;
    std::vector<std::string> kinds = {"usb", "cd", "laptop", "document", "badge"};

    explicit BundleGen(std::uint64_t seed) : rng(seed) {}

    int below(int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

    ResourceBundle bundle(int max_size = 6) {
        ResourceBundle b;
        int n = below(max_size + 1);
        for (int i = 0; i < n; ++i) {
            AttrMap attrs;
            if (below(2)) attrs["label"] = std::string(1, static_cast<char>('a' + below(3)));
            if (below(3) == 0) attrs["size"] = static_cast<std::int64_t>(below(4));
            b.insert(atom(kinds[static_cast<std::size_t>(below(static_cast<int>(kinds.size())))], next_id++, attrs));
        }
        return b;
    }

    CompatibilityRelation relation(int pairs) {
        CompatibilityRelation rel;
        for (int i = 0; i < pairs; ++i) {
            auto a = kinds[static_cast<std::size_t>(below(static_cast<int>(kinds.size())))];
            auto b = kinds[static_cast<std::size_t>(below(static_cast<int>(kinds.size())))];
            rel.forbid(a, b);
        }
        return rel;
    }
};

bool fails(const ResourceBundle& a, const ResourceBundle& b, const CompatibilityRelation& rel) {
    try {
        compose_resources(a, b, rel);
        return false;
    } catch (const Error&) {
        return true;
    }
}

} // namespace

TEST(Compose, UnionOfMultisets) {
    ResourceBundle a{atom("usb", 1), atom("usb", 2)};
    ResourceBundle b{atom("usb", 3), atom("cd", 4)};
    auto c = compose_resources(a, b);
    EXPECT_EQ(c.count("usb"), 3u);
    EXPECT_EQ(c.count("cd"), 1u);
    EXPECT_EQ(c.size(), 4u);
}

TEST(Compose, EmptyIsIdentity) {
    ResourceBundle b{atom("usb", 7), atom("cd", 2)};
    EXPECT_EQ(compose_resources({}, b), b);
    EXPECT_EQ(compose_resources(b, {}), b);
}

TEST(Compose, DeclaredIncompatibilityFails) {
    CompatibilityRelation rel;
    rel.forbid("wet_document", "furnace");
    ResourceBundle a{atom("wet_document", 1)};
    ResourceBundle b{atom("furnace", 2)};
    try {
        compose_resources(a, b, rel);
        FAIL() << "expected IncompatibleKinds";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::IncompatibleKinds);
        EXPECT_NE(std::string(e.what()).find("furnace, wet_document"), std::string::npos);
    }
}

TEST(Compose, SharedIdFails) {
    ResourceBundle a{atom("usb", 1)};
    ResourceBundle b{atom("cd", 1)};
    try {
        compose_resources(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
    }
}

TEST(Compose, RelationFromKindTable) {
    KindTable kinds;
    kinds["wet_document"] = {"wet_document", {}, {"furnace"}};
    kinds["furnace"] = {"furnace", {}, {}};
    auto rel = CompatibilityRelation::from_kinds(kinds);
    EXPECT_TRUE(rel.incompatible("furnace", "wet_document"));
    EXPECT_FALSE(rel.incompatible("furnace", "furnace"));
}

TEST(PreOrder, Examples) {
    EXPECT_TRUE(resource_leq({atom("usb", 1)}, {atom("usb", 5), atom("usb", 6), atom("cd", 7)}));
    EXPECT_FALSE(resource_leq({atom("cd", 1), atom("cd", 2)}, {atom("cd", 3)}));
    EXPECT_FALSE(resource_leq({atom("usb", 1, {{"label", std::string("x")}})}, {atom("usb", 1)}));
    ResourceBundle b{atom("usb", 1), atom("cd", 2)};
    EXPECT_TRUE(resource_leq(b, b));
    EXPECT_TRUE(resource_leq({}, b));
}

TEST(MatchPattern, SingleSatisfier) {
    ResourceBundle staff{atom("staff", 1, {{"skill_airway", std::int64_t{2}}}),
                         atom("staff", 2, {{"skill_airway", std::int64_t{4}}})};
    auto got = match_pattern(with(pattern("staff"), "skill_airway", Comparator::Ge, std::int64_t{3}), staff);
    ASSERT_TRUE(got);
    EXPECT_EQ(id_values(*got), std::vector<std::uint64_t>{2});
}

TEST(MatchPattern, EmptyBundle) {
    EXPECT_FALSE(match_pattern(pattern("bay"), ResourceBundle{}));
}

TEST(MatchPattern, LeastIdsAmongAllSubsets) {
    ResourceBundle b{atom("usb", 3), atom("usb", 1), atom("usb", 2)};
    auto got = match_pattern(pattern("usb", 2), b);
    ASSERT_TRUE(got);
    // Enumerate every 2-subset and keep the lexicographically least id pair.
    std::vector<std::uint64_t> ids = {3, 1, 2};
    std::vector<std::uint64_t> best;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (i == j) continue;
            std::vector<std::uint64_t> pair = {std::min(ids[i], ids[j]), std::max(ids[i], ids[j])};
            if (best.empty() || pair < best) best = pair;
        }
    EXPECT_EQ(id_values(*got), best);
}

TEST(MatchPattern, UnknownKind) {
    KindTable kinds;
    kinds["usb"] = {"usb", {}, {}};
    try {
        match_pattern(pattern("usbb"), ResourceBundle{}, kinds);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownKind);
    }
}

TEST(MatchPattern, AbsentAttributeReadsAsDefault) {
    ResourceBundle b{atom("device", 4)};
    EXPECT_TRUE(match_pattern(with(pattern("device"), "infected", Comparator::Eq, false), b));
    EXPECT_FALSE(match_pattern(with(pattern("device"), "infected", Comparator::Eq, true), b));
}

namespace {

ModificationRule encrypt_device() {
    return {"encrypt_device",
            [](const RuleContext& ctx) { return ctx.local.count("device") == 1; },
            [](RuleContext& ctx) {
                ResourceBundle out = ctx.local;
                for (const auto& a : ctx.local)
                    if (a.kind == "device") out.find(a.id)->attributes["infected"] = true;
                return out;
            }};
}

ModificationRule issue_temp_badge() {
    return {"issue_temp_badge",
            [](const RuleContext& ctx) {
                return ctx.local.count("reception_desk") > 0 && ctx.local.count("employee_marker") > 0;
            },
            [](RuleContext& ctx) {
                ResourceBundle out = ctx.local;
                out.insert(ctx.make_atom("temp_badge"));
                return out;
            }};
}

} // namespace

TEST(ApplyModification, AttributeFlip) {
    AtomAllocator ids(10);
    ResourceBundle local{atom("device", 1, {{"infected", false}})};
    auto out = apply_modification(encrypt_device(), local, {}, ids);
    ASSERT_TRUE(out);
    EXPECT_EQ(*out, ResourceBundle{atom("device", 1, {{"infected", true}})});
}

TEST(ApplyModification, UndefinedOnEmpty) {
    AtomAllocator ids(10);
    ResourceBundle local;
    EXPECT_FALSE(apply_modification(encrypt_device(), local, {}, ids));
    EXPECT_TRUE(local.empty());
}

TEST(ApplyModification, FreshBadge) {
    AtomAllocator ids(10);
    ResourceBundle local{atom("reception_desk", 1), atom("employee_marker", 2)};
    auto out = apply_modification(issue_temp_badge(), local, {}, ids);
    ASSERT_TRUE(out);
    EXPECT_EQ(out->size(), local.size() + 1);
    EXPECT_EQ(out->count("temp_badge"), 1u);
    std::vector<AtomId> fresh;
    for (const auto& a : *out)
        if (!local.contains(a.id)) fresh.push_back(a.id);
    ASSERT_EQ(fresh.size(), 1u);
    EXPECT_EQ(fresh[0].value, 10u);
    EXPECT_EQ(ids.peek(), 11u);
}

TEST(ApplyModification, ForgedIdRejected) {
    ModificationRule forge{"forge", nullptr, [](RuleContext& ctx) {
                               ResourceBundle out = ctx.local;
                               out.insert(atom("usb", 99));
                               return out;
                           }};
    AtomAllocator ids(10);
    try {
        apply_modification(forge, {}, {}, ids);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EffectViolatesSchema);
    }
}

TEST(ApplyModification, SchemaChecked) {
    KindTable kinds;
    kinds["device"] = {"device", {{"infected", ValueType::Boolean}}, {}};
    ModificationRule bad{"bad", nullptr, [](RuleContext& ctx) {
                             ResourceBundle out = ctx.local;
                             out.find(AtomId{1})->attributes["infected"] = std::string("yes");
                             return out;
                         }};
    AtomAllocator ids(10);
    ResourceBundle local{atom("device", 1, {{"infected", false}})};
    EXPECT_THROW(apply_modification(bad, local, {}, ids, &kinds), Error);
}

namespace {

ModelSpec tiny_model() {
    ModelSpec m;
    m.name = "tiny";
    m.graph.add_node({"lobby"});
    m.graph.add_node({"atrium"});
    m.graph.add_edges_both("lobby", "atrium");
    m.kinds["person"] = {"person", {}, {}};
    m.rules = {"noop"};
    m.place("lobby", atom("person", 1));
    m.add_process("walk", move(pattern("person"), "lobby", "atrium"));
    m.startup = {"walk"};
    return m;
}

RuleRegistry generic() {
    RuleRegistry reg;
    rules::register_generic(reg);
    return reg;
}

} // namespace

TEST(Validate, TinyModelOk) {
    EXPECT_TRUE(validate_model(tiny_model(), generic()).empty());
}

TEST(Validate, DataLossFixtureOk) {
    std::ifstream in(std::string(METAPHORSIM_SOURCE_DIR) + "/tests/fixtures/dataloss_model.json");
    ASSERT_TRUE(in);
    auto m = model_from_json(nlohmann::json::parse(in));
    auto diags = validate_model(m, dataloss::registry());
    for (const auto& d : diags) ADD_FAILURE() << format(d);
    EXPECT_EQ(model_to_json(m), model_to_json(dataloss::build_model({})));
}

TEST(Validate, UnknownLocation) {
    auto m = tiny_model();
    m.add_process("walk", move(pattern("person"), "lobby", "atriumm"));
    auto diags = validate_model(m, generic());
    EXPECT_TRUE(has_code(diags, Diagnostic::Code::UnknownLocation));
}

TEST(Validate, NonPositiveWeights) {
    auto m = tiny_model();
    m.add_process("walk", choose({{0.0, emit("a", "lobby")}, {0.0, emit("b", "lobby")}}));
    EXPECT_TRUE(has_code(validate_model(m, generic()), Diagnostic::Code::NonPositiveWeights));
}

TEST(Validate, ReportsEveryFailure) {
    auto m = tiny_model();
    m.add_process("walk", seq({move(pattern("person"), "lobby", "atriumm"),
                               choose({{0.0, emit("a", "lobby")}, {0.0, emit("b", "lobby")}}),
                               prefix(action("no_such_rule", "lobby"))}));
    auto diags = validate_model(m, generic());
    EXPECT_TRUE(has_code(diags, Diagnostic::Code::UnknownLocation));
    EXPECT_TRUE(has_code(diags, Diagnostic::Code::NonPositiveWeights));
    EXPECT_TRUE(has_code(diags, Diagnostic::Code::UnknownRule));
}

TEST(Validate, MoveWithoutEdge) {
    auto m = tiny_model();
    m.graph.add_node({"office"});
    m.add_process("walk", move(pattern("person"), "lobby", "office"));
    EXPECT_TRUE(has_code(validate_model(m, generic()), Diagnostic::Code::MissingEdge));
}

TEST(Serialize, ModelRoundTrip) {
    for (const auto& m : {tiny_model(), dataloss::build_model({}), trauma::build_model(trauma::default_params())}) {
        auto j = model_to_json(m);
        EXPECT_EQ(model_to_json(model_from_json(j)), j) << m.name;
    }
}

TEST(Properties, MonoidLaws) {
    BundleGen g(0x5eed);
    for (int i = 0; i < 10000; ++i) {
        auto a = g.bundle(), b = g.bundle(), c = g.bundle();
        auto ab_c = compose_resources(compose_resources(a, b), c);
        auto a_bc = compose_resources(a, compose_resources(b, c));
        ASSERT_EQ(ab_c, a_bc);
        ASSERT_EQ(compose_resources(a, b), compose_resources(b, a));
        ASSERT_EQ(compose_resources(a, {}), a);
    }
}

TEST(Properties, PreOrderLaws) {
    BundleGen g(77);
    for (int i = 0; i < 10000; ++i) {
        auto a = g.bundle(), b = g.bundle(), c = g.bundle();
        ASSERT_TRUE(resource_leq(a, a));
        ASSERT_TRUE(resource_leq(a, compose_resources(a, b)));
        // Chains built by composition, plus random triples for the general case.
        auto ab = compose_resources(a, b);
        ASSERT_TRUE(resource_leq(a, compose_resources(ab, c)));
        if (resource_leq(a, b) && resource_leq(b, c)) ASSERT_TRUE(resource_leq(a, c));
    }
}

TEST(Properties, TransitivityOnSubBundles) {
    BundleGen g(91);
    for (int i = 0; i < 2000; ++i) {
        auto c = g.bundle(8);
        ResourceBundle b, a;
        for (const auto& x : c)
            if (g.below(3)) {
                b.insert(x);
                if (g.below(2)) a.insert(x);
            }
        ASSERT_TRUE(resource_leq(a, b));
        ASSERT_TRUE(resource_leq(b, c));
        ASSERT_TRUE(resource_leq(a, c));
    }
}

TEST(Properties, PartialitySymmetric) {
    BundleGen g(4242);
    for (int i = 0; i < 10000; ++i) {
        auto rel = g.relation(g.below(5));
        auto a = g.bundle(), b = g.bundle();
        if (g.below(10) == 0 && !a.empty()) {
            // Force a shared id now and then.
            b.insert(atom("usb", a.begin()->id.value));
        }
        ASSERT_EQ(fails(a, b, rel), fails(b, a, rel));
    }
}

TEST(Properties, UndefinedLeavesInputUntouched) {
    BundleGen g(5);
    auto rule = encrypt_device();
    for (int i = 0; i < 2000; ++i) {
        auto local = g.bundle();
        const auto copy = local;
        AtomAllocator ids(100000);
        auto out = apply_modification(rule, local, {}, ids);
        ASSERT_EQ(local, copy);
        if (!out) ASSERT_EQ(ids.peek(), 100000u);
    }
}

TEST(Properties, MatchDeterministic) {
    BundleGen g(11);
    for (int i = 0; i < 2000; ++i) {
        auto b = g.bundle(8);
        auto p = pattern(g.kinds[static_cast<std::size_t>(g.below(5))], static_cast<std::size_t>(g.below(3)));
        if (g.below(2)) p = with(p, "label", Comparator::Eq, std::string("a"));
        auto x = match_pattern(p, b), y = match_pattern(p, b);
        ASSERT_EQ(x, y);
        if (x) {
            ASSERT_EQ(x->size(), p.quantity);
            ASSERT_TRUE(std::is_sorted(x->begin(), x->end()));
            for (auto id : *x) ASSERT_TRUE(atom_satisfies(p, *b.find(id)));
        }
    }
}
