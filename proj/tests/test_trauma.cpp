#include "metaphorsim/metaphorsim.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace metaphorsim;
using trauma::Assignment;
using trauma::PatientState;
using trauma::StaffState;

namespace {

ResourceAtom staff_atom(std::uint64_t id, std::map<std::string, int> skills) {
    ResourceAtom a{"staff", AtomId{id}, {}};
    for (const auto& [k, v] : skills) a.attributes["skill_" + k] = static_cast<std::int64_t>(v);
    return a;
}

StaffState st(std::uint64_t id, std::map<std::string, int> skills, std::string loc, bool busy = false) {
    return {AtomId{id}, std::move(skills), std::move(loc), busy};
}

RunResult run(const trauma::TraumaParams& p, std::uint64_t seed, double horizon = 24.0) {
    RunConfig c;
    c.seed = seed;
    c.horizon = horizon;
    return run_model(trauma::build_model(p), trauma::registry(), c);
}

const trauma::ProcedureDef& proc(const std::string& name) {
    static const auto procs = trauma::default_procedures();
    return *trauma::find_procedure(procs, name);
}

} // namespace

TEST(ProcedureReady, DependenciesAndStaff) {
    ResourceBundle airway_nurse{staff_atom(1, {{"airway", 4}})};
    EXPECT_TRUE(trauma::procedure_ready(proc("advanced_airway"), {"patient_assessment", "airway_assessment", "iv"}, airway_nurse));
    EXPECT_FALSE(trauma::procedure_ready(proc("advanced_airway"), {"patient_assessment"}, airway_nurse));
    EXPECT_FALSE(trauma::procedure_ready(proc("airway_assessment"), {}, ResourceBundle{staff_atom(2, {{"iv", 5}})}));
    EXPECT_FALSE(trauma::procedure_ready(proc("airway_assessment"), {}, ResourceBundle{}));
    EXPECT_FALSE(trauma::procedure_ready(proc("advanced_airway"), {"patient_assessment", "airway_assessment", "iv"},
                                         ResourceBundle{staff_atom(3, {{"airway", 3}})}));
}

TEST(FormTeam, FullRosterIncludesLeader) {
    auto procs = trauma::default_procedures();
    PatientState p{AtomId{100}, 0.0, "bay_1", {"team_leader_oversight", "patient_assessment", "airway_assessment"}, {}, {}};
    std::vector<StaffState> staff;
    std::uint64_t id = 1;
    for (const auto& s : trauma::day_roster()) staff.push_back(st(id++, s.skills, "lobby"));
    auto plan = trauma::form_team({p}, staff, procs, {});
    ASSERT_EQ(plan.size(), 3u);
    bool leader = false;
    for (const auto& a : plan) {
        EXPECT_EQ(a.to, "bay_1");
        EXPECT_FALSE(a.thinned);
        for (const auto& s : staff)
            if (s.id == a.staff && a.procedure == "team_leader_oversight") leader = s.level("team_leader") >= 3;
    }
    EXPECT_TRUE(leader);
}

TEST(FormTeam, NoFreeStaff) {
    PatientState p{AtomId{100}, 0.0, "bay_1", {"patient_assessment"}, {}, {}};
    EXPECT_TRUE(trauma::form_team({p}, {}, trauma::default_procedures(), {}).empty());
    std::vector<StaffState> all_busy{st(1, {{"assessment", 5}}, "bay_2", true)};
    EXPECT_TRUE(trauma::form_team({p}, all_busy, trauma::default_procedures(), {}).empty());
}

namespace {

// Six staff: bay_1 runs oversight and assessment with three idle members; one registrar in the lobby.
std::vector<StaffState> six_staff() {
    return {st(1, {{"team_leader", 5}, {"assessment", 5}}, "bay_1", true),
            st(2, {{"team_leader", 3}, {"assessment", 3}}, "lobby"),
            st(3, {{"airway", 4}}, "bay_1"),
            st(4, {{"assessment", 2}, {"iv", 3}}, "bay_1", true),
            st(5, {{"assessment", 2}, {"airway", 2}}, "bay_1"),
            st(6, {{"airway", 3}}, "bay_1")};
}

std::vector<PatientState> two_patients() {
    std::set<std::string> needs{"team_leader_oversight", "patient_assessment", "airway_assessment"};
    return {{AtomId{101}, 1.0, "bay_2", needs, {}, {}},
            {AtomId{100}, 0.0, "bay_1", needs, {}, {"team_leader_oversight", "patient_assessment"}}};
}

} // namespace

TEST(FormTeam, ThinningDrawsIdleMembers) {
    auto plan = trauma::form_team(two_patients(), six_staff(), trauma::default_procedures(), {});
    std::vector<Assignment> want{{AtomId{2}, "lobby", "bay_2", AtomId{101}, "team_leader_oversight", false},
                                 {AtomId{6}, "bay_1", "bay_2", AtomId{101}, "airway_assessment", true}};
    EXPECT_EQ(plan, want);
    for (const auto& a : plan) {
        EXPECT_NE(a.staff, AtomId{1});
        EXPECT_NE(a.staff, AtomId{4});
        EXPECT_NE(a.staff, AtomId{5});
    }
}

TEST(FormTeam, ThinningDisabled) {
    trauma::TeamPolicy policy;
    policy.thinning = false;
    auto plan = trauma::form_team(two_patients(), six_staff(), trauma::default_procedures(), policy);
    std::vector<Assignment> want{{AtomId{2}, "lobby", "bay_2", AtomId{101}, "team_leader_oversight", false}};
    EXPECT_EQ(plan, want);
}

TEST(FormTeam, Deterministic) {
    auto staff = six_staff();
    auto a = trauma::form_team(two_patients(), staff, trauma::default_procedures(), {});
    std::reverse(staff.begin(), staff.end());
    auto pts = two_patients();
    std::reverse(pts.begin(), pts.end());
    EXPECT_EQ(trauma::form_team(pts, staff, trauma::default_procedures(), {}), a);
}

TEST(TraumaModel, BaysAndStaff) {
    auto p = trauma::default_params();
    ASSERT_EQ(p.n_bays, 3);
    ASSERT_EQ(p.roster.size(), 8u);
    auto m = trauma::build_model(p);
    EXPECT_TRUE(validate_model(m, trauma::registry()).empty());
    for (const auto& n : {"entrance", "emergency_department", "lobby", "bay_1", "bay_2", "bay_3", "rest_of_hospital"})
        EXPECT_TRUE(m.graph.has_node(n)) << n;
    EXPECT_FALSE(m.graph.has_node("bay_4"));
    std::size_t staff = 0, bays = 0;
    for (const auto& [loc, b] : m.initial_placement) {
        staff += b.count("staff");
        bays += b.count("bay");
    }
    EXPECT_EQ(staff, 8u);
    EXPECT_EQ(bays, 3u);
}

TEST(TraumaModel, RejectsCycle) {
    auto p = trauma::default_params();
    for (auto& pr : p.procedures)
        if (pr.name == "patient_assessment") pr.depends_on = {"iv"};
    EXPECT_THROW(trauma::build_model(p), Error);
    p = trauma::default_params();
    p.n_bays = 0;
    EXPECT_THROW(trauma::build_model(p), Error);
}

TEST(TraumaModel, SingleProcedurePatient) {
    auto p = trauma::default_params();
    p.injury_mix = {{"walking", 1.0, {"patient_assessment"}}};
    p.batch = 1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto r = run(p, seed);
        double in_bay = -1, complete = -1, start = -1, end = -1;
        for (const auto& e : r.log) {
            if (e.type == "patient_in_bay") in_bay = e.t;
            if (e.type == "treatment_complete") complete = e.t;
            if (e.type == "patient_assessment_start") start = e.t;
            if (e.type == "patient_assessment_end") end = e.t;
        }
        ASSERT_GE(in_bay, 0);
        EXPECT_EQ(start, in_bay);
        EXPECT_DOUBLE_EQ(complete - in_bay, end - start);
        EXPECT_GE(end - start, 0.1);
        EXPECT_LE(end - start, 0.25);
    }
}

TEST(TraumaModel, NoArrivalsLeavesStaffInLobby) {
    auto p = trauma::default_params();
    p.arrivals = {{0.0, 1e9, 0.0}};
    auto r = run(p, 1);
    ASSERT_EQ(r.log.size(), 1u);
    EXPECT_EQ(r.log[0].type, "run_end");
    EXPECT_EQ(r.initial.at("lobby").at("staff"), 8);
}

TEST(TraumaModel, ParamsRoundTripAndRosterFiles) {
    auto p = trauma::default_params();
    p.roster_name = "night";
    p.roster = trauma::night_roster();
    auto q = trauma::params_from_json(trauma::params_to_json(p));
    EXPECT_EQ(trauma::params_to_json(q), trauma::params_to_json(p));
    std::string dir = std::string(METAPHORSIM_SOURCE_DIR) + "/scenarios";
    auto j = trauma::params_to_json(p);
    j["roster"] = "rosters/night.json";
    auto n = trauma::params_from_json(j, dir);
    EXPECT_EQ(trauma::roster_to_json(n.roster), trauma::roster_to_json(trauma::night_roster()));
    j["roster"] = "rosters/day.json";
    EXPECT_EQ(trauma::roster_to_json(trauma::params_from_json(j, dir).roster), trauma::roster_to_json(trauma::day_roster()));
}

TEST(SurgeCapacity, SingleBayBound) {
    auto p = trauma::default_params();
    p.n_bays = 1;
    p.quality_threshold = 0.1;
    p.k_max = 4;
    auto c = trauma::surge_capacity(p, {1, 2, 3});
    EXPECT_EQ(c.capacity, 1u);
    ASSERT_EQ(c.rows.size(), 4u);
    EXPECT_TRUE(c.rows[0].acceptable);
    EXPECT_FALSE(c.rows[1].acceptable);
}

TEST(SurgeCapacity, BayBoundUnderTightThreshold) {
    for (int bays : {1, 2, 3}) {
        auto p = trauma::default_params();
        p.n_bays = bays;
        p.quality_threshold = 0.04;
        p.k_max = 6;
        EXPECT_LE(trauma::surge_capacity(p, {1, 2}).capacity, static_cast<std::size_t>(bays));
    }
}

TEST(SurgeCapacity, DayRosterAtLeastNight) {
    int strictly = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto day = trauma::default_params();
        day.n_bays = 6;
        auto night = day;
        night.roster = trauma::night_roster();
        night.roster_name = "night";
        auto cd = trauma::surge_capacity(day, {seed}).capacity;
        auto cn = trauma::surge_capacity(night, {seed}).capacity;
        EXPECT_GE(cd, cn) << "seed " << seed;
        strictly += cd > cn;
    }
    EXPECT_GT(strictly, 0);
}

TEST(SurgeCapacity, MoreBaysNeverHurt) {
    std::size_t last = 0;
    for (int bays = 1; bays <= 4; ++bays) {
        auto p = trauma::default_params();
        p.n_bays = bays;
        auto c = trauma::surge_capacity(p, {1, 2, 3}).capacity;
        EXPECT_GE(c, last) << bays << " bays";
        last = c;
    }
}

TEST(SurgeCapacity, CsvAndWarnings) {
    trauma::CapacityResult r;
    r.capacity = 1;
    r.rows = {{1, 0.0, true}, {2, 0.5, false}};
    std::ostringstream os;
    trauma::write_capacity_csv(os, r);
    EXPECT_EQ(os.str(), "k,mean_delay,verdict\n1,0,acceptable\n2,0.5,unacceptable\n");
    EXPECT_THROW(trauma::surge_capacity(trauma::default_params(), {}), Error);
}

namespace {

void check_invariants(const trauma::TraumaParams& p, const RunResult& r) {
    // Staff exclusivity and thinning safety.
    std::map<std::string, std::string> running;  // staff id -> patient/procedure
    std::map<std::string, std::string> staff_of;  // patient/procedure -> staff id
    int in_bays = 0;
    for (const auto& e : r.log) {
        auto dot = e.type.rfind('_');
        std::string suffix = dot == std::string::npos ? "" : e.type.substr(dot);
        if (e.detail("procedure") && suffix == "_start") {
            std::string s = e.detail_text("staff"), key = e.detail_text("patient") + "/" + e.detail_text("procedure");
            ASSERT_FALSE(running.count(s)) << "staff " << s << " double booked at " << e.t;
            running[s] = key;
            staff_of[key] = s;
        } else if (e.detail("procedure") && suffix == "_end") {
            std::string key = e.detail_text("patient") + "/" + e.detail_text("procedure");
            running.erase(staff_of.at(key));
        } else if (e.type == "move" && e.detail_text("kind") == "staff") {
            ASSERT_FALSE(running.count(e.detail_text("ids"))) << "staff " << e.detail_text("ids") << " moved mid-procedure";
        } else if (e.type == "patient_in_bay") {
            ASSERT_LT(in_bays, p.n_bays);
            ++in_bays;
        } else if (e.type == "treatment_complete") {
            --in_bays;
        }
    }
}

} // namespace

TEST(TraumaInvariants, SurgeRuns) {
    auto p = trauma::default_params();
    p.arrivals = trauma::synthetic_surge();
    std::vector<LocalProperty> dag;
    for (const auto& pr : p.procedures)
        for (const auto& d : pr.depends_on) {
            LocalProperty lp;
            lp.type = LocalProperty::Type::Ordering;
            lp.before = d + "_end";
            lp.after = pr.name + "_start";
            lp.key = "patient";
            lp.scope.locations = {"bay_1", "bay_2", "bay_3"};
            dag.push_back(lp);
        }
    ASSERT_EQ(dag.size(), 4u);
    std::size_t thinned = 0, advanced = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto r = run(p, seed, 48.0);
        for (const auto& lp : dag) {
            auto v = check_local_property(r.log, lp);
            EXPECT_TRUE(v.holds) << v.message;
        }
        check_invariants(p, r);
        for (const auto& e : r.log)
            if (e.type == "team_update") thinned += static_cast<std::size_t>(as_integer(*e.detail("thinned")));
        advanced += count_events(r.log, "advanced_airway_start");
        EXPECT_EQ(count_events(r.log, "patient_arrival"), count_events(r.log, "patient_discharged"));
    }
    EXPECT_GT(thinned, 0u);
    EXPECT_GT(advanced, 0u);
}

TEST(TraumaInvariants, TimeWeightedBayOccupancy) {
    auto p = trauma::default_params();
    p.arrivals = trauma::synthetic_surge();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto r = run(p, seed, 48.0);
        double occupied = 0;
        for (int i = 1; i <= p.n_bays; ++i) occupied += time_weighted_count(r, "patient", trauma::bay_name(i));
        EXPECT_LE(occupied, static_cast<double>(p.n_bays));
    }
}

TEST(TraumaMetrics, StartDelays) {
    EventLog log = {{0, "patient_admitted", "emergency_department", "admission", {{"patient", std::int64_t{1}}}},
                    {0, "patient_admitted", "emergency_department", "admission", {{"patient", std::int64_t{2}}}},
                    {0.5, "iv_start", "bay_1", "j", {{"patient", std::int64_t{1}}, {"procedure", std::string("iv")}}},
                    {2, "iv_start", "bay_1", "j", {{"patient", std::int64_t{1}}, {"procedure", std::string("iv")}}},
                    {3, "run_end", "", "", {}}};
    auto d = trauma::start_delays(log);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].delay, 0.5);
    EXPECT_TRUE(d[0].started);
    EXPECT_EQ(d[1].delay, 3.0);
    EXPECT_FALSE(d[1].started);
}
