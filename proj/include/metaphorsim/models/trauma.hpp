#pragma once

#include "../engine.hpp"
#include "../metrics.hpp"
#include "../model.hpp"
#include "../serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace metaphorsim::trauma {

struct ProcedureDef {
    std::string name;
    std::string skill;
    int min_level = 1;
    dist::Range duration{0.1, 0.2};
    std::set<std::string> depends_on;
};

struct StaffSpec {
    std::string id;
    std::map<std::string, int> skills;
};

struct ArrivalPhase {
    double start = 0.0;
    double end = 0.0;
    double rate = 0.0;  // patients per hour; 0 disables the phase
};

struct InjuryTemplate {
    std::string name;
    double weight = 1.0;
    std::vector<std::string> procedures;
};

struct TraumaParams {
    int n_bays = 3;
    std::string roster_name = "day";
    std::vector<StaffSpec> roster;
    std::vector<ProcedureDef> procedures;
    std::vector<ArrivalPhase> arrivals;
    // Simultaneous arrivals at t=0 instead of the phases (used by the capacity search).
    std::size_t batch = 0;
    std::vector<InjuryTemplate> injury_mix;
    double quality_threshold = 0.25;
    bool thinning = true;
    int max_skill_level = 5;
    std::size_t k_max = 12;
    double capacity_horizon = 48.0;
};

inline std::vector<ProcedureDef> default_procedures() {
    // Synthetic ranges: no published figures exist.
    return {
        {"team_leader_oversight", "team_leader", 3, {0.5, 1.0}, {}},
        {"patient_assessment", "assessment", 2, {0.1, 0.25}, {}},
        {"airway_assessment", "airway", 2, {0.05, 0.15}, {}},
        {"iv", "iv", 2, {0.1, 0.2}, {"patient_assessment"}},
        {"advanced_airway", "airway", 4, {0.25, 0.5}, {"patient_assessment", "airway_assessment", "iv"}},
    };
}

inline std::vector<StaffSpec> day_roster() {
    return {
        {"consultant", {{"team_leader", 5}, {"assessment", 5}, {"airway", 4}, {"iv", 3}}},
        {"registrar", {{"team_leader", 3}, {"assessment", 4}, {"airway", 3}, {"iv", 3}}},
        {"anaesthetist", {{"airway", 5}, {"assessment", 3}, {"iv", 3}}},
        {"senior_nurse", {{"assessment", 3}, {"iv", 4}, {"airway", 4}}},
        {"nurse_1", {{"assessment", 2}, {"iv", 3}, {"airway", 2}}},
        {"nurse_2", {{"assessment", 2}, {"iv", 3}, {"airway", 2}}},
        {"odp", {{"airway", 3}, {"iv", 2}}},
        {"junior_doctor", {{"assessment", 3}, {"iv", 2}, {"airway", 2}}},
    };
}

inline std::vector<StaffSpec> night_roster() {
    std::vector<StaffSpec> out;
    for (auto& s : day_roster())
        if (s.id == "registrar" || s.id == "anaesthetist" || s.id == "senior_nurse" || s.id == "nurse_1" ||
            s.id == "junior_doctor")
            out.push_back(s);
    return out;
}

inline std::vector<StaffSpec> named_roster(const std::string& name) {
    if (name == "day") return day_roster();
    if (name == "night") return night_roster();
    throw Error(ErrorCode::UnknownParameter, "unknown roster '" + name + "' (day, night or a roster file)");
}

/// Mass-casualty burst: arrivals concentrated in the first hour.
inline std::vector<ArrivalPhase> synthetic_surge() { return {{0.0, 1.0, 8.0}}; }

inline std::vector<InjuryTemplate> default_injury_mix() {
    return {
        {"minor", 0.3, {"team_leader_oversight", "patient_assessment"}},
        {"moderate", 0.4, {"team_leader_oversight", "patient_assessment", "airway_assessment", "iv"}},
        {"major", 0.3, {"team_leader_oversight", "patient_assessment", "airway_assessment", "iv", "advanced_airway"}},
    };
}

inline TraumaParams default_params() {
    TraumaParams p;
    p.roster = day_roster();
    p.procedures = default_procedures();
    p.arrivals = {{0.0, 1e9, 0.5}};
    p.injury_mix = default_injury_mix();
    return p;
}

inline const ProcedureDef* find_procedure(const std::vector<ProcedureDef>& procs, std::string_view name) {
    for (const auto& p : procs)
        if (p.name == name) return &p;
    return nullptr;
}

inline void validate_params(const TraumaParams& p) {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidParameter, "trauma: " + m); };
    if (p.n_bays < 1) bad("n_bays must be >= 1");
    if (!(p.quality_threshold > 0)) bad("quality_threshold must be > 0");
    if (p.procedures.empty()) bad("no procedures");
    if (p.roster.empty()) bad("empty roster");
    std::set<std::string> names;
    for (const auto& pr : p.procedures) {
        if (!names.insert(pr.name).second) bad("duplicate procedure '" + pr.name + "'");
        if (!(pr.duration.lo > 0) || pr.duration.hi < pr.duration.lo)
            bad("procedure '" + pr.name + "' needs a positive duration range");
        if (pr.min_level < 0 || pr.min_level > p.max_skill_level)
            bad("procedure '" + pr.name + "' skill level out of range");
    }
    for (const auto& pr : p.procedures)
        for (const auto& d : pr.depends_on)
            if (!names.count(d)) bad("procedure '" + pr.name + "' depends on unknown '" + d + "'");
    // Kahn's algorithm: anything left over sits on a cycle.
    std::map<std::string, std::size_t> indeg;
    for (const auto& pr : p.procedures) indeg[pr.name] = pr.depends_on.size();
    std::vector<std::string> ready;
    for (const auto& [n, d] : indeg)
        if (d == 0) ready.push_back(n);
    std::size_t seen = 0;
    while (!ready.empty()) {
        std::string n = ready.back();
        ready.pop_back();
        ++seen;
        for (const auto& pr : p.procedures)
            if (pr.depends_on.count(n) && --indeg[pr.name] == 0) ready.push_back(pr.name);
    }
    if (seen != p.procedures.size()) bad("procedure dependencies contain a cycle");
    std::set<std::string> ids;
    for (const auto& s : p.roster) {
        if (!ids.insert(s.id).second) bad("duplicate staff id '" + s.id + "'");
        for (const auto& [skill, level] : s.skills)
            if (level < 0 || level > p.max_skill_level) bad("staff '" + s.id + "' skill '" + skill + "' out of range");
    }
    for (const auto& t : p.injury_mix) {
        if (!(t.weight > 0)) bad("injury template '" + t.name + "' needs a positive weight");
        for (const auto& n : t.procedures)
            if (!names.count(n)) bad("injury template '" + t.name + "' names unknown procedure '" + n + "'");
    }
    if (p.injury_mix.empty()) bad("empty injury mix");
    for (const auto& a : p.arrivals)
        if (a.rate < 0 || a.end < a.start) bad("invalid arrival phase");
}

// ------------------------------------------------------------------ team formation

struct PatientState {
    AtomId id;
    double admitted = 0.0;
    std::string bay;
    std::set<std::string> needs, done, running;
};

struct StaffState {
    AtomId id;
    std::map<std::string, int> skills;
    std::string location;  // for busy staff, the bay they were claimed at
    bool busy = false;

    int level(const std::string& skill) const {
        auto it = skills.find(skill);
        return it == skills.end() ? 0 : it->second;
    }
};

struct TeamPolicy {
    bool thinning = true;
    std::string pool = "lobby";
};

struct Assignment {
    AtomId staff;
    std::string from;
    std::string to;
    AtomId patient;
    std::string procedure;
    bool thinned = false;
    bool operator==(const Assignment&) const = default;
};

inline bool qualified(const StaffState& s, const ProcedureDef& p) { return s.level(p.skill) >= p.min_level; }

inline bool procedure_ready(const ProcedureDef& proc, const std::set<std::string>& completed,
                            const ResourceBundle& free_staff) {
    for (const auto& d : proc.depends_on)
        if (!completed.count(d)) return false;
    for (const auto& a : free_staff)
        if (a.kind == "staff" && a.integer("skill_" + proc.skill) >= proc.min_level) return true;
    return false;
}

/// Procedures the patient needs whose dependencies are complete and that have not started.
inline std::vector<const ProcedureDef*> ready_procedures(const PatientState& p, const std::vector<ProcedureDef>& procs) {
    std::vector<const ProcedureDef*> out;
    for (const auto& pr : procs) {
        if (!p.needs.count(pr.name) || p.done.count(pr.name) || p.running.count(pr.name)) continue;
        bool deps = true;
        for (const auto& d : pr.depends_on) deps = deps && p.done.count(d);
        if (deps) out.push_back(&pr);
    }
    return out;
}

namespace detail {

/// Index into `pool` of the least over-qualified candidate; lowest id breaks ties.
inline std::optional<std::size_t> best_fit(const std::vector<StaffState>& pool, const ProcedureDef& p) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!qualified(pool[i], p)) continue;
        if (!best) {
            best = i;
            continue;
        }
        int a = pool[i].level(p.skill), b = pool[*best].level(p.skill);
        if (a < b || (a == b && pool[i].id < pool[*best].id)) best = i;
    }
    return best;
}

/// Matches idle team members to ready procedures, hardest first. Returns the
/// uncovered procedures; `idle` keeps whoever was not needed.
inline std::vector<const ProcedureDef*> cover(std::vector<const ProcedureDef*> ready, std::vector<StaffState>& idle) {
    std::stable_sort(ready.begin(), ready.end(),
                     [](const ProcedureDef* a, const ProcedureDef* b) { return a->min_level > b->min_level; });
    std::vector<const ProcedureDef*> unmet;
    for (const auto* p : ready) {
        if (auto i = best_fit(idle, *p)) idle.erase(idle.begin() + static_cast<std::ptrdiff_t>(*i));
        else unmet.push_back(p);
    }
    return unmet;
}

} // namespace detail

/// Greedy team formation. Patients are served in arrival order; each gets the
/// smallest set of extra staff covering its ready procedures, first from the pool
/// and then, if the policy allows, from idle surplus members of the largest teams.
inline std::vector<Assignment> form_team(std::vector<PatientState> patients, const std::vector<StaffState>& staff,
                                         const std::vector<ProcedureDef>& procs, const TeamPolicy& policy) {
    std::sort(patients.begin(), patients.end(), [](const PatientState& a, const PatientState& b) {
        return a.admitted != b.admitted ? a.admitted < b.admitted : a.id < b.id;
    });
    std::vector<StaffState> pool;
    std::map<std::string, std::vector<StaffState>> idle;
    std::map<std::string, std::size_t> team_size, busy;
    for (const auto& s : staff) {
        if (s.location == policy.pool && !s.busy) pool.push_back(s);
        else {
            ++team_size[s.location];
            if (!s.busy) idle[s.location].push_back(s);
            else ++busy[s.location];
        }
    }
    std::sort(pool.begin(), pool.end(), [](const StaffState& a, const StaffState& b) { return a.id < b.id; });

    // Surplus: idle members a bay does not need for its own ready procedures.
    std::map<std::string, std::vector<StaffState>> surplus;
    for (const auto& p : patients) {
        auto spare = idle[p.bay];
        detail::cover(ready_procedures(p, procs), spare);
        surplus[p.bay] = spare;
    }

    std::vector<Assignment> out;
    for (const auto& p : patients) {
        // Staff claimed for a procedure that has not started yet: wait until the bay settles.
        if (busy[p.bay] > p.running.size()) continue;
        auto spare = idle[p.bay];
        auto unmet = detail::cover(ready_procedures(p, procs), spare);
        for (const auto* pr : unmet) {
            if (auto i = detail::best_fit(pool, *pr)) {
                StaffState s = pool[*i];
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(*i));
                out.push_back({s.id, policy.pool, p.bay, p.id, pr->name, false});
                ++team_size[p.bay];
                continue;
            }
            if (!policy.thinning) continue;
            std::vector<std::string> donors;
            for (const auto& [bay, members] : surplus)
                if (bay != p.bay && !members.empty()) donors.push_back(bay);
            std::stable_sort(donors.begin(), donors.end(), [&](const std::string& a, const std::string& b) {
                return team_size[a] > team_size[b];
            });
            for (const auto& bay : donors) {
                auto& members = surplus[bay];
                auto i = detail::best_fit(members, *pr);
                if (!i) continue;
                StaffState s = members[*i];
                members.erase(members.begin() + static_cast<std::ptrdiff_t>(*i));
                out.push_back({s.id, bay, p.bay, p.id, pr->name, true});
                --team_size[bay];
                ++team_size[p.bay];
                break;
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------ rule support

/// Procedure table carried as an action parameter so model documents stay self-contained.
inline std::string encode_procedures(const std::vector<ProcedureDef>& procs) {
    std::vector<std::string> rows;
    for (const auto& p : procs) {
        std::vector<std::string> deps(p.depends_on.begin(), p.depends_on.end());
        rows.push_back(p.name + "|" + p.skill + "|" + std::to_string(p.min_level) + "|" + format_real(p.duration.lo) +
                       "|" + format_real(p.duration.hi) + "|" + join(deps, '+'));
    }
    return join(rows, ';');
}

inline std::vector<ProcedureDef> decode_procedures(const std::string& s) {
    std::vector<ProcedureDef> out;
    for (const auto& row : split(s, ';')) {
        auto f = split(row, '|');
        if (f.size() != 6) throw Error(ErrorCode::ParseError, "bad procedure row '" + row + "'");
        ProcedureDef p;
        p.name = f[0];
        p.skill = f[1];
        p.min_level = std::stoi(f[2]);
        p.duration = {std::stod(f[3]), std::stod(f[4])};
        for (auto& d : split(f[5], '+')) p.depends_on.insert(d);
        out.push_back(std::move(p));
    }
    return out;
}

namespace detail {

inline const std::vector<ProcedureDef>& cached_procedures(const std::string& encoded) {
    thread_local std::map<std::string, std::vector<ProcedureDef>> cache;
    auto it = cache.find(encoded);
    if (it == cache.end()) it = cache.emplace(encoded, decode_procedures(encoded)).first;
    return it->second;
}

inline bool is_bay(const WorldView& w, const std::string& loc) {
    auto n = w.graph().node(loc);
    if (!n) return false;
    auto it = n->attributes.find("role");
    return it != n->attributes.end() && to_text(it->second) == "bay";
}

inline PatientState patient_state(const ResourceAtom& a, const std::string& bay, const std::vector<ProcedureDef>& procs) {
    PatientState p{a.id, a.real("admitted"), bay, {}, {}, {}};
    for (const auto& pr : procs) {
        if (a.flag("need_" + pr.name)) p.needs.insert(pr.name);
        if (a.flag("done_" + pr.name)) p.done.insert(pr.name);
        if (a.flag("running_" + pr.name)) p.running.insert(pr.name);
    }
    return p;
}

inline std::vector<Assignment> world_assignment(const RuleContext& ctx) {
    const auto& procs = cached_procedures(ctx.text("procedures"));
    std::vector<PatientState> patients;
    ctx.world.for_each_atom("patient", [&](const ResourceAtom& a) {
        auto loc = ctx.world.locate(a.id);
        if (loc && is_bay(ctx.world, *loc)) patients.push_back(patient_state(a, *loc, procs));
    });
    std::vector<StaffState> staff;
    ctx.world.for_each_atom("staff", [&](const ResourceAtom& a) {
        StaffState s{a.id, {}, {}, false};
        for (const auto& [k, v] : a.attributes)
            if (k.rfind("skill_", 0) == 0) s.skills[k.substr(6)] = static_cast<int>(as_integer(v));
        if (auto loc = ctx.world.locate(a.id)) s.location = *loc;
        else {
            s.busy = true;
            s.location = ctx.world.claimed_at(a.id).value_or("");
        }
        staff.push_back(std::move(s));
    });
    TeamPolicy policy{ctx.flag("thinning", true), ctx.text("pool", "lobby")};
    return form_team(std::move(patients), staff, procs, policy);
}

inline const ResourceAtom* local_patient(const RuleContext& ctx) {
    return ctx.local.find(AtomId{static_cast<std::uint64_t>(ctx.integer("patient"))});
}

} // namespace detail

inline void register_rules(RuleRegistry& reg) {
    // form_team(procedures, pool, thinning): moves staff to where the greedy assignment wants them.
    reg.add({"form_team", [](const RuleContext& ctx) { return !detail::world_assignment(ctx).empty(); },
             [](RuleContext& ctx) {
                 auto plan = detail::world_assignment(ctx);
                 std::int64_t thinned = 0;
                 for (const auto& a : plan) {
                     ctx.relocate(a.staff, a.to);
                     thinned += a.thinned;
                 }
                 ctx.detail("assigned", static_cast<std::int64_t>(plan.size()));
                 ctx.detail("thinned", thinned);
                 return ctx.local;
             }});

    // admit_patient(binding): stamps the admission time and remembers the patient id.
    reg.add({"admit_patient", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 auto id = ctx.scope.first_bound(ctx.text("binding"));
                 ResourceAtom* p = id ? out.find(*id) : nullptr;
                 if (!p) throw Error(ErrorCode::UnknownBinding, "admit_patient: patient not at " + std::string(ctx.location));
                 p->attributes["admitted"] = ctx.world.now();
                 auto pid = static_cast<std::int64_t>(id->value);
                 ctx.scope.vars["patient"] = pid;
                 ctx.detail("patient", pid);
                 return out;
             }});

    // set_needs(patient, procedures, template)
    reg.add({"set_needs", [](const RuleContext& ctx) { return detail::local_patient(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 ResourceAtom* p = out.find(detail::local_patient(ctx)->id);
                 for (const auto& n : split(ctx.text("procedures"), ',')) p->attributes["need_" + n] = true;
                 p->attributes["template"] = ctx.text("template");
                 ctx.detail("patient", ctx.integer("patient"));
                 ctx.detail("template", ctx.text("template"));
                 return out;
             }});

    // procedures_done(patient, procedures): holds once every listed procedure has ended.
    reg.add({"procedures_done",
             [](const RuleContext& ctx) {
                 const ResourceAtom* p = detail::local_patient(ctx);
                 if (!p) return false;
                 for (const auto& n : split(ctx.text("procedures"), ','))
                     if (!p->flag("done_" + n)) return false;
                 return true;
             },
             nullptr});

    // start_procedure(patient, procedure, staff, lo, hi): the duration comes from a stream
    // keyed by instance and procedure so that paired runs see the same draws.
    reg.add({"start_procedure", [](const RuleContext& ctx) { return detail::local_patient(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 std::string proc = ctx.text("procedure");
                 out.find(detail::local_patient(ctx)->id)->attributes["running_" + proc] = true;
                 RngStream draws(ctx.rng.master_seed(), ctx.scope.subject + ":" + proc);
                 ctx.duration_override = sample(dist::Range{ctx.real("lo"), ctx.real("hi")}, draws);
                 ctx.detail("patient", ctx.integer("patient"));
                 ctx.detail("procedure", proc);
                 ctx.detail("staff", ctx.integer("staff"));
                 return out;
             }});

    reg.add({"end_procedure", [](const RuleContext& ctx) { return detail::local_patient(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 std::string proc = ctx.text("procedure");
                 auto& attrs = out.find(detail::local_patient(ctx)->id)->attributes;
                 attrs["running_" + proc] = false;
                 attrs["done_" + proc] = true;
                 ctx.detail("patient", ctx.integer("patient"));
                 ctx.detail("procedure", proc);
                 return out;
             }});

    // discharge_staff(patient, pool): the team at the bay returns to the pool.
    reg.add({"discharge_staff", nullptr, [](RuleContext& ctx) {
                 std::int64_t n = 0;
                 for (const auto& a : ctx.local)
                     if (a.kind == "staff") {
                         ctx.relocate(a.id, ctx.text("pool", "lobby"));
                         ++n;
                     }
                 ctx.detail("patient", ctx.integer("patient"));
                 ctx.detail("staff_returned", n);
                 return ctx.local;
             }});
}

// ------------------------------------------------------------------ model

inline std::string bay_name(int i) { return "bay_" + std::to_string(i); }

inline ResourceKind patient_kind(const std::vector<ProcedureDef>& procs) {
    ResourceKind k{"patient", {{"admitted", ValueType::Real}, {"template", ValueType::Text}}, {}};
    for (const auto& p : procs)
        for (const char* prefix : {"need_", "done_", "running_"})
            k.attribute_schema[prefix + p.name] = ValueType::Boolean;
    return k;
}

namespace detail {

inline TermPtr treat(const ProcedureDef& p) {
    using namespace dsl;
    std::vector<TermPtr> steps;
    if (!p.depends_on.empty()) {
        std::vector<std::string> deps(p.depends_on.begin(), p.depends_on.end());
        steps.push_back(prefix(named(action("procedures_done", "$bay", {{"patient", std::string("$patient")},
                                                                         {"procedures", join(deps, ',')}}),
                                     "")));
    }
    std::string b = "staff_" + p.name;
    steps.push_back(claim(with(pattern("staff", 1, b), "skill_" + p.skill, Comparator::Ge,
                               static_cast<std::int64_t>(p.min_level)),
                          "$bay"));
    steps.push_back(prefix(named(action("start_procedure", "$bay",
                                        {{"patient", std::string("$patient")},
                                         {"procedure", p.name},
                                         {"staff", "@" + b},
                                         {"lo", p.duration.lo},
                                         {"hi", p.duration.hi}}),
                                 p.name + "_start")));
    steps.push_back(prefix(named(action("end_procedure", "$bay", {{"patient", std::string("$patient")}, {"procedure", p.name}}),
                                 p.name + "_end")));
    steps.push_back(release(b, "$bay"));
    return seq(steps);
}

inline ResourcePattern this_patient() {
    return dsl::with_ref(dsl::pattern("patient"), "id", Comparator::Eq, "$patient");
}

} // namespace detail

inline ModelSpec build_model(const TraumaParams& p) {
    using namespace dsl;
    validate_params(p);
    ModelSpec m;
    m.name = "trauma";
    for (const char* n : {"entrance", "emergency_department", "lobby", "rest_of_hospital"})
        m.graph.add_node({n, LocationKind::Physical, {}});
    m.graph.add_edge("entrance", "emergency_department");
    for (int i = 1; i <= p.n_bays; ++i) {
        std::string b = bay_name(i);
        m.graph.add_node({b, LocationKind::Physical, {{"role", std::string("bay")}}});
        m.graph.add_edge("emergency_department", b);
        m.graph.add_edge(b, "rest_of_hospital");
        m.graph.add_edges_both("lobby", b);
        for (int j = 1; j < i; ++j) m.graph.add_edges_both(bay_name(j), b);
    }

    m.kinds["patient"] = patient_kind(p.procedures);
    ResourceKind staff{"staff", {{"name", ValueType::Text}}, {}};
    for (const auto& pr : p.procedures) staff.attribute_schema["skill_" + pr.skill] = ValueType::Integer;
    for (const auto& s : p.roster)
        for (const auto& [skill, level] : s.skills) staff.attribute_schema["skill_" + skill] = ValueType::Integer;
    m.kinds["staff"] = staff;
    m.kinds["bay"] = ResourceKind{"bay", {{"location", ValueType::Text}}, {}};

    std::uint64_t next = 1;
    for (const auto& s : p.roster) {
        AttrMap attrs{{"name", s.id}};
        for (const auto& [skill, level] : s.skills) attrs["skill_" + skill] = static_cast<std::int64_t>(level);
        m.place("lobby", ResourceAtom{"staff", AtomId{next++}, attrs});
    }
    for (int i = 1; i <= p.n_bays; ++i)
        m.place("emergency_department", ResourceAtom{"bay", AtomId{next++}, {{"location", bay_name(i)}}});

    m.rules = {"noop", "note", "var_from_binding", "form_team", "admit_patient", "set_needs", "procedures_done",
               "start_procedure", "end_procedure", "discharge_staff"};

    m.add_process("admission",
                  seq({move(pattern("patient", 1, "arrived"), "entrance", "emergency_department"),
                       prefix(named(action("admit_patient", "emergency_department", {{"binding", std::string("arrived")}}),
                                    "patient_admitted")),
                       spawn("patient_journey"), call("admission")}));

    m.add_process("team_coordinator",
                  prefix(named(action("form_team", "lobby",
                                      {{"procedures", encode_procedures(p.procedures)},
                                       {"pool", std::string("lobby")},
                                       {"thinning", p.thinning}}),
                               "team_update"),
                         call("team_coordinator")));

    std::vector<std::pair<double, TermPtr>> templates;
    for (const auto& t : p.injury_mix)
        templates.emplace_back(t.weight, prefix(named(action("set_needs", "$bay",
                                                             {{"patient", std::string("$patient")},
                                                              {"procedures", join(t.procedures, ',')},
                                                              {"template", t.name}}),
                                                      "injuries_assessed")));
    std::vector<TermPtr> branches;
    for (const auto& pr : p.procedures)
        branches.push_back(
            when(has(with(detail::this_patient(), "need_" + pr.name, Comparator::Eq, true), "$bay"), detail::treat(pr)));

    AttrMap who{{"patient", std::string("$patient")}};
    m.add_process("patient_journey",
                  seq({claim(pattern("bay", 1, "bay"), "emergency_department"),
                       prefix(named(action("var_from_binding", "",
                                           {{"binding", std::string("bay")},
                                            {"attr", std::string("location")},
                                            {"name", std::string("bay")}}),
                                    "")),
                       move(detail::this_patient(), "emergency_department", "$bay"),
                       prefix(named(action("note", "$bay", who), "patient_in_bay")),
                       choose(templates),
                       par(branches),
                       prefix(named(action("discharge_staff", "$bay", {{"patient", std::string("$patient")},
                                                                       {"pool", std::string("lobby")}}),
                                    "treatment_complete")),
                       move(detail::this_patient(), "$bay", "rest_of_hospital"),
                       release("bay", "emergency_department"),
                       prefix(named(action("note", "rest_of_hospital", who), "patient_discharged"))}),
                  {});
    m.startup = {"admission", "team_coordinator"};

    auto arrival_env = [&](std::string name) {
        EnvironmentSpec e;
        e.name = std::move(name);
        e.interface = "entrance";
        e.templates = {AtomTemplate{"patient", {}}};
        e.emitted_event_types = {"patient_arrival"};
        e.event_type = "patient_arrival";
        return e;
    };
    if (p.batch > 0) {
        auto e = arrival_env("patient_arrival");
        e.inter_arrival = dist::Constant{1.0};
        e.first_at = 0.0;
        e.batch = p.batch;
        e.max_occurrences = p.batch;
        m.environments.push_back(e);
    } else {
        std::size_t i = 0;
        for (const auto& ph : p.arrivals) {
            if (!(ph.rate > 0) || !(ph.end > ph.start)) continue;
            auto e = arrival_env(i == 0 ? "patient_arrival" : "patient_arrival_" + std::to_string(i + 1));
            e.inter_arrival = dist::Exponential{ph.rate};
            e.window_start = ph.start;
            e.window_end = ph.end;
            m.environments.push_back(e);
            ++i;
        }
    }
    m.interfaces.push_back({"entrance", {"patient_arrival"}, {}});

    using T = MetricDecl::Type;
    auto counter = [](std::string n, std::string ev) {
        MetricDecl d;
        d.name = std::move(n);
        d.type = T::Counter;
        d.event_type = std::move(ev);
        return d;
    };
    auto duration = [](std::string n, std::string a, std::string b) {
        MetricDecl d;
        d.name = std::move(n);
        d.type = T::Duration;
        d.start_type = std::move(a);
        d.end_type = std::move(b);
        d.key = "patient";
        return d;
    };
    m.metrics.push_back(counter("patients_arrived", "patient_arrival"));
    m.metrics.push_back(counter("patients_discharged", "patient_discharged"));
    m.metrics.push_back(duration("treatment_hours", "patient_in_bay", "treatment_complete"));
    m.metrics.push_back(duration("stay_hours", "patient_admitted", "patient_discharged"));
    MetricDecl waiting;
    waiting.name = "patients_waiting";
    waiting.type = T::TimeWeighted;
    waiting.kind = "patient";
    waiting.location = "emergency_department";
    m.metrics.push_back(waiting);
    return m;
}

/// Stand-in triage unit that hands patients to the entrance after a short assessment.
inline ModelSpec build_triage_stub(const TraumaParams& p, double rate = 0.5) {
    using namespace dsl;
    ModelSpec m;
    m.name = "triage";
    m.graph.add_node({"triage", LocationKind::Physical, {}});
    m.graph.add_node({"entrance", LocationKind::Physical, {}});
    m.graph.add_edge("triage", "entrance");
    m.kinds["patient"] = patient_kind(p.procedures);
    m.rules = {"noop"};
    m.add_process("triage_transfer", delay(dist::Range{0.05, 0.15}, move(self_pattern("patient"), "triage", "entrance",
                                                                           emit("patient_arrival", "entrance"))));
    EnvironmentSpec e;
    e.name = "casualties";
    e.interface = "triage";
    e.inter_arrival = dist::Exponential{rate};
    e.process = "triage_transfer";
    e.templates = {AtomTemplate{"patient", {}}};
    e.emitted_event_types = {"casualty"};
    m.environments.push_back(e);
    m.interfaces.push_back({"entrance", {}, {"patient_arrival"}});
    return m;
}

// ------------------------------------------------------------------ measures

struct StartDelay {
    std::string patient;
    double admitted = 0.0;
    double delay = 0.0;
    bool started = false;
};

/// Time from admission to the first procedure start, per patient. Patients still
/// untreated at the end are censored at the run end.
inline std::vector<StartDelay> start_delays(const EventLog& log) {
    std::map<std::string, StartDelay> by;
    std::vector<std::string> order;
    double end = log.empty() ? 0.0 : log.back().t;
    for (const auto& r : log) {
        if (r.type == "patient_admitted") {
            auto k = r.detail_text("patient");
            if (!by.count(k)) order.push_back(k);
            by[k] = StartDelay{k, r.t, 0.0, false};
        } else if (r.type.size() > 6 && r.type.ends_with("_start") && r.detail("procedure")) {
            auto it = by.find(r.detail_text("patient"));
            if (it != by.end() && !it->second.started) {
                it->second.started = true;
                it->second.delay = r.t - it->second.admitted;
            }
        }
    }
    std::vector<StartDelay> out;
    for (const auto& k : order) {
        auto d = by[k];
        if (!d.started) d.delay = end - d.admitted;
        out.push_back(d);
    }
    return out;
}

inline void add_metrics(const RunResult& r, MetricTable& out) {
    std::vector<double> xs;
    for (const auto& d : start_delays(r.log)) xs.push_back(d.delay);
    out["mean_start_delay"] = stats::mean(xs);
    out["max_start_delay"] = stats::max(xs);
}

inline RuleRegistry registry() {
    RuleRegistry reg;
    rules::register_generic(reg);
    register_rules(reg);
    return reg;
}

struct CapacityRow {
    std::size_t k = 0;
    double mean_delay = 0.0;
    bool acceptable = false;
};

struct CapacityResult {
    std::size_t capacity = 0;
    std::vector<CapacityRow> rows;
    std::vector<std::string> warnings;
};

/// Batch delay of one run: the wait until every patient in the batch has started treatment.
inline double batch_delay(const RunResult& r) {
    double worst = 0;
    for (const auto& d : start_delays(r.log)) worst = std::max(worst, d.delay);
    return worst;
}

/// Escalates simultaneous arrivals k = 1..k_max. Capacity is the largest k before
/// the first batch whose delay, averaged over seeds, exceeds the threshold.
inline CapacityResult surge_capacity(const TraumaParams& base, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw Error(ErrorCode::InvalidParameter, "surge_capacity needs at least one seed");
    CapacityResult out;
    auto reg = registry();
    bool open = true;
    for (std::size_t k = 1; k <= base.k_max; ++k) {
        TraumaParams p = base;
        p.batch = k;
        ModelSpec m = build_model(p);
        std::vector<double> delays;
        for (auto seed : seeds) {
            RunConfig cfg;
            cfg.seed = seed;
            cfg.horizon = base.capacity_horizon;
            delays.push_back(batch_delay(run_model(m, reg, cfg)));
        }
        CapacityRow row{k, stats::mean(delays), false};
        row.acceptable = row.mean_delay <= base.quality_threshold;
        if (!out.rows.empty() && row.mean_delay < out.rows.back().mean_delay)
            out.warnings.push_back("NonMonotoneWarning: mean delay fell from " + format_real(out.rows.back().mean_delay) +
                                   " at k=" + std::to_string(k - 1) + " to " + format_real(row.mean_delay) +
                                   " at k=" + std::to_string(k));
        if (open && row.acceptable) out.capacity = k;
        else open = false;
        out.rows.push_back(row);
    }
    return out;
}

inline void write_capacity_csv(std::ostream& os, const CapacityResult& r) {
    os << "k,mean_delay,verdict\n";
    for (const auto& row : r.rows)
        os << row.k << ',' << format_real(row.mean_delay) << ',' << (row.acceptable ? "acceptable" : "unacceptable")
           << '\n';
}

// ------------------------------------------------------------------ parameters

inline nlohmann::json roster_to_json(const std::vector<StaffSpec>& roster) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : roster) out.push_back({{"id", s.id}, {"skills", s.skills}});
    return out;
}

inline std::vector<StaffSpec> roster_from_json(const nlohmann::json& j) {
    std::vector<StaffSpec> out;
    for (const auto& s : j) out.push_back({s.at("id").get<std::string>(), s.at("skills").get<std::map<std::string, int>>()});
    return out;
}

inline nlohmann::json params_to_json(const TraumaParams& p) {
    nlohmann::json procs = nlohmann::json::array();
    for (const auto& pr : p.procedures)
        procs.push_back({{"name", pr.name},
                         {"skill", pr.skill},
                         {"min_level", pr.min_level},
                         {"duration", {pr.duration.lo, pr.duration.hi}},
                         {"depends_on", pr.depends_on}});
    nlohmann::json arrivals = nlohmann::json::array();
    for (const auto& a : p.arrivals) arrivals.push_back({{"start", a.start}, {"end", a.end}, {"rate", a.rate}});
    nlohmann::json mix = nlohmann::json::array();
    for (const auto& t : p.injury_mix) mix.push_back({{"name", t.name}, {"weight", t.weight}, {"procedures", t.procedures}});
    return {{"n_bays", p.n_bays},
            {"roster", p.roster_name.empty() ? roster_to_json(p.roster) : nlohmann::json(p.roster_name)},
            {"procedures", procs},
            {"arrival", arrivals},
            {"batch", p.batch},
            {"injury_mix", mix},
            {"quality_threshold", p.quality_threshold},
            {"thinning", p.thinning},
            {"max_skill_level", p.max_skill_level},
            {"k_max", p.k_max},
            {"capacity_horizon", p.capacity_horizon}};
}

/// `roster` may be "day", "night", a roster file path (relative to `base_dir`) or an inline list.
/// `arrival` may be a rate, "synthetic_surge" or a list of {start, end, rate} phases.
inline TraumaParams params_from_json(const nlohmann::json& j, const std::string& base_dir = {}) {
    TraumaParams p;
    p.n_bays = j.at("n_bays").get<int>();
    const auto& r = j.at("roster");
    if (r.is_string()) {
        p.roster_name = r.get<std::string>();
        if (p.roster_name == "day" || p.roster_name == "night") p.roster = named_roster(p.roster_name);
        else {
            std::string path = base_dir.empty() || p.roster_name.front() == '/' ? p.roster_name : base_dir + "/" + p.roster_name;
            std::ifstream in(path);
            if (!in) throw Error(ErrorCode::UnknownParameter, "roster file '" + path + "' not found");
            p.roster = roster_from_json(nlohmann::json::parse(in));
        }
    } else {
        p.roster_name.clear();
        p.roster = roster_from_json(r);
    }
    p.procedures.clear();
    for (const auto& pr : j.at("procedures")) {
        ProcedureDef d;
        d.name = pr.at("name").get<std::string>();
        d.skill = pr.at("skill").get<std::string>();
        d.min_level = pr.at("min_level").get<int>();
        d.duration = {pr.at("duration").at(0).get<double>(), pr.at("duration").at(1).get<double>()};
        d.depends_on = pr.value("depends_on", std::set<std::string>{});
        p.procedures.push_back(d);
    }
    const auto& a = j.at("arrival");
    if (a.is_number()) p.arrivals = {{0.0, 1e9, a.get<double>()}};
    else if (a.is_string()) {
        if (a.get<std::string>() != "synthetic_surge")
            throw Error(ErrorCode::UnknownParameter, "unknown arrival profile '" + a.get<std::string>() + "'");
        p.arrivals = synthetic_surge();
    } else
        for (const auto& ph : a) p.arrivals.push_back({ph.at("start").get<double>(), ph.at("end").get<double>(), ph.at("rate").get<double>()});
    p.batch = j.value("batch", std::size_t{0});
    for (const auto& t : j.at("injury_mix"))
        p.injury_mix.push_back({t.at("name").get<std::string>(), t.at("weight").get<double>(),
                                t.at("procedures").get<std::vector<std::string>>()});
    p.quality_threshold = j.at("quality_threshold").get<double>();
    p.thinning = j.at("thinning").get<bool>();
    p.max_skill_level = j.at("max_skill_level").get<int>();
    p.k_max = j.at("k_max").get<std::size_t>();
    p.capacity_horizon = j.value("capacity_horizon", 48.0);
    return p;
}

} // namespace metaphorsim::trauma
