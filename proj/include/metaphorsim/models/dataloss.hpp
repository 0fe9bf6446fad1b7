#pragma once

#include "../metrics.hpp"
#include "../model.hpp"
#include "common.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace metaphorsim::dataloss {

struct DataLossParams {
    int n_employees = 50;
    double employee_arrival = 15.0;  // per hour; the first hour runs at twice this rate
    double attacker_arrival = 0.5;
    int n_attackers = 3;
    double p_forget_badge = 0.1;
    double p_tailgate_given_forgot = 0.1;
    double p_challenge_employee = 0.1;
    double p_challenge_guard = 0.1;
    double p_lose_device_transit = 0.1;
    double p_share_drive_down = 0.1;
    std::array<double, 3> share_choice_weights{1.0, 1.0, 1.0};  // global share, email, portable media
    double p_attacker_finds_media = 0.1;
    double workday_length = 8.0;
    double p_public_transport = 0.5;
    int shares_per_day = 3;
    int device_docs = 1;
    int paper_docs = 10;
    int roam_steps = 4;
    double door_window = 0.1;  // how long an opened door stays followable (hours)
    int tailgate_patience = 4;  // door checks before a tailgater gives up
};

inline void validate_params(const DataLossParams& p) {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidParameter, "dataloss: " + m); };
    for (auto [name, v] : {std::pair{"p_forget_badge", p.p_forget_badge},
                           {"p_tailgate_given_forgot", p.p_tailgate_given_forgot},
                           {"p_challenge_employee", p.p_challenge_employee},
                           {"p_challenge_guard", p.p_challenge_guard},
                           {"p_lose_device_transit", p.p_lose_device_transit},
                           {"p_share_drive_down", p.p_share_drive_down},
                           {"p_attacker_finds_media", p.p_attacker_finds_media},
                           {"p_public_transport", p.p_public_transport}})
        if (!(v >= 0.0 && v <= 1.0)) bad(std::string(name) + " must be a probability");
    double w = 0;
    for (double x : p.share_choice_weights) {
        if (x < 0) bad("share_choice_weights must be nonnegative");
        w += x;
    }
    if (!(w > 0)) bad("share_choice_weights must have a positive sum");
    if (!(p.employee_arrival > 0)) bad("employee_arrival must be > 0");
    if (p.attacker_arrival < 0) bad("attacker_arrival must be >= 0");
    if (p.n_employees < 0 || p.n_attackers < 0) bad("agent counts must be >= 0");
    if (!(p.workday_length > 0)) bad("workday_length must be > 0");
    if (p.shares_per_day < 0 || p.device_docs < 0 || p.paper_docs < 0 || p.roam_steps < 0 || p.tailgate_patience < 0)
        bad("counts must be >= 0");
    if (!(p.door_window > 0)) bad("door_window must be > 0");
}

inline const std::vector<std::string>& public_locations() {
    static const std::vector<std::string> l{"home", "public_transport", "private_transport", "outside_lobby",
                                            "lobby", "entryway", "atrium", "office"};
    return l;
}

inline void register_rules(RuleRegistry& reg) {
    // open_door(challenged, observer): the door stays followable until the next opening.
    reg.add({"open_door", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out;
                 for (const auto& a : ctx.local)
                     if (a.kind != "door_pass") out.insert(a);
                 out.insert(ctx.make_atom("door_pass", {{"challenged", as_bool(ctx.param("challenged"))},
                                                        {"observer", ctx.integer("observer")},
                                                        {"opened_at", ctx.world.now()}}));
                 return out;
             }});

    // door_recent(window): an opening happened within the last `window` hours.
    reg.add({"door_recent",
             [](const RuleContext& ctx) {
                 for (const auto& a : ctx.local)
                     if (a.kind == "door_pass" && a.real("opened_at") >= ctx.world.now() - ctx.real("window"))
                         return true;
                 return false;
             },
             nullptr});

    // email_document: the emailed copy lands on the device the employee carries.
    reg.add({"email_document", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 for (const auto& a : ctx.local)
                     if (a.kind == "device") {
                         out.find(a.id)->attributes["docs"] = a.integer("docs") + 1;
                         break;
                     }
                 ctx.detail("docs", std::int64_t{1});
                 return out;
             }});
}

inline RuleRegistry registry() {
    RuleRegistry reg;
    rules::register_generic(reg);
    register_rules(reg);
    return reg;
}

namespace detail {

using namespace dsl;
using models::note;
using models::pick;
using models::quietly;

inline TermPtr step(const std::string& from, const std::string& to) { return move(self_pattern("employee"), from, to); }

inline TermPtr walk(const std::string& kind, std::vector<std::string> path, TermPtr next = nil()) {
    std::vector<TermPtr> s;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) s.push_back(move(self_pattern(kind), path[i], path[i + 1]));
    s.push_back(std::move(next));
    return seq(s);
}

inline TermPtr lose_chance(const DataLossParams& p, const std::string& where) {
    auto lose = when(has(pattern("device"), "@carried"),
                     seq(move(pattern("device", 1, "lost"), "@carried", where),
                         prefix(named(action("tally", where, {{"binding", std::string("lost")}, {"attr", std::string("docs")}}),
                                      "device_lost_transit"))));
    return pick(p.p_lose_device_transit, lose, nil());
}

/// Follow someone through the security door, facing the person who opened it and then the guard.
inline TermPtr tailgate(const DataLossParams& p, const std::string& kind, TermPtr on_fail, TermPtr on_success) {
    auto redirect = [&](AttrMap by) {
        return note("redirect_to_reception", "entryway", std::move(by),
                    seq(move(self_pattern(kind), "entryway", "lobby"), on_fail));
    };
    auto success = note("tailgate_success", "entryway", {}, seq(move(self_pattern(kind), "entryway", "atrium"), on_success));
    auto guard_check = seq({
        prefix(named(action("create", "entryway", {{"kind", std::string("tailgater_alert")}, {"attr.tailgater", std::string("$me")}}), "")),
        claim(with_ref(pattern("guard_verdict", 1, "verdict"), "tailgater", Comparator::Eq, "$me"), "entryway"),
        quietly("var_from_binding", "", {{"binding", std::string("verdict")}, {"attr", std::string("challenged")}, {"name", std::string("guard_challenged")}}),
        quietly("discard", "", {{"binding", std::string("verdict")}}),
        when(var_is("guard_challenged", true), redirect({{"by", std::string("guard")}}), success),
    });
    auto follow = seq({
        claim(pattern("door_pass", 1, "pass"), "entryway"),
        quietly("var_from_binding", "", {{"binding", std::string("pass")}, {"attr", std::string("challenged")}, {"name", std::string("observer_challenged")}}),
        quietly("var_from_binding", "", {{"binding", std::string("pass")}, {"attr", std::string("observer")}, {"name", std::string("observer")}}),
        quietly("discard", "", {{"binding", std::string("pass")}}),
        note("tailgate_attempt", "entryway", {{"observer", std::string("$observer")}}),
        when(var_is("observer_challenged", true), redirect({{"by", std::string("$observer")}}), guard_check),
    });
    auto give_up = note("tailgate_abandoned", "entryway", {}, seq(move(self_pattern(kind), "entryway", "lobby"), on_fail));
    TermPtr poll = give_up;
    for (int i = 0; i < p.tailgate_patience; ++i)
        poll = when(guard("door_recent", "entryway", {{"window", p.door_window}}), follow,
                    delay(dist::Uniform{0.05, 0.15}, poll));
    return when(guard("door_recent", "entryway", {{"window", p.door_window}}), follow, poll);
}

inline TermPtr open_door(const DataLossParams& p) {
    auto open = [](bool challenged) {
        return quietly("open_door", "entryway", {{"challenged", challenged}, {"observer", std::string("@self")}});
    };
    return pick(p.p_challenge_employee, open(true), open(false));
}

inline TermPtr share_document(const DataLossParams& p) {
    auto global = note("share_global", "office", {{"docs", std::int64_t{1}}});
    auto email = prefix(named(action("email_document", "@carried"), "email_document"));
    auto media = [](const char* kind) {
        return prefix(named(action("create", "office", {{"kind", std::string(kind)}, {"attr.docs", std::int64_t{1}}}),
                            "media_left"));
    };
    auto fallback = models::pick_weighted({{p.share_choice_weights[0], global},
                                           {p.share_choice_weights[1], email},
                                           {p.share_choice_weights[2], choose({{1.0, media("usb")}, {1.0, media("cd")}})}});
    return pick(p.p_share_drive_down, fallback, note("share_drive", "office"));
}

inline TermPtr employee_day(const DataLossParams& p) {
    double slice = p.workday_length / (p.shares_per_day + 1);
    auto temp_badge = seq({
        note("temp_badge_queued", "lobby"),
        claim(pattern("reception_desk", 1, "desk"), "lobby"),
        delay(dist::Range{0.05, 0.25}),
        prefix(named(action("create", "@carried", {{"kind", std::string("temp_badge")}}), "temp_badge_issued")),
        release("desk", "lobby"),
        step("lobby", "entryway"),
        open_door(p),
        step("entryway", "atrium"),
    });
    auto with_badge = seq({step("lobby", "entryway"), note("badge_verified", "entryway"), open_door(p),
                           step("entryway", "atrium")});
    auto without_badge = pick(p.p_tailgate_given_forgot,
                              seq(step("lobby", "entryway"), tailgate(p, "employee", temp_badge, nil())), temp_badge);
    std::vector<TermPtr> work;
    for (int i = 0; i < p.shares_per_day; ++i) work.push_back(delay(dist::Constant{slice}, share_document(p)));
    work.push_back(delay(dist::Constant{slice}));

    return seq({
        models::set_var("me", std::string("@self")),
        pick(p.p_forget_badge, seq(move(pattern("id_card"), "@carried", "home"), note("badge_forgotten", "home")), nil()),
        pick(p.p_public_transport, models::set_var("transport", std::string("public_transport")),
             models::set_var("transport", std::string("private_transport"))),
        step("home", "$transport"),
        delay(dist::Range{0.25, 1.0}),
        lose_chance(p, "$transport"),
        step("$transport", "outside_lobby"),
        step("outside_lobby", "lobby"),
        when(has(pattern("id_card"), "@carried"), with_badge, without_badge),
        step("atrium", "office"),
        note("enter_office", "office"),
        seq(work),
        walk("employee", {"office", "atrium", "entryway", "lobby", "outside_lobby", "$transport"}),
        delay(dist::Range{0.25, 1.0}),
        lose_chance(p, "$transport"),
        step("$transport", "home"),
        note("arrive_home", "home"),
    });
}

inline TermPtr take(const std::string& kind, const std::string& event) {
    return seq(move(pattern(kind, 1, "loot"), "office", "@carried"),
               prefix(named(action("tally", "@carried", {{"binding", std::string("loot")}, {"attr", std::string("docs")}}),
                            event)));
}

inline TermPtr attacker_visit(const DataLossParams& p) {
    auto find = when(has(pattern("usb"), "office"), take("usb", "media_theft"),
                     when(has(pattern("cd"), "office"), take("cd", "media_theft"),
                          when(has(pattern("document"), "office"), take("document", "tailgate_theft"))));
    std::vector<TermPtr> roam{move(self_pattern("attacker"), "atrium", "office")};
    for (int i = 0; i < p.roam_steps; ++i)
        roam.push_back(delay(dist::Range{0.05, 0.2}, pick(p.p_attacker_finds_media, find, nil())));
    roam.push_back(walk("attacker", {"office", "atrium", "entryway", "lobby", "outside_lobby"}, note("attacker_left", "outside_lobby")));
    auto leave = walk("attacker", {"lobby", "outside_lobby"}, note("attacker_left", "outside_lobby"));
    return seq({
        models::set_var("me", std::string("@self")),
        move(self_pattern("attacker"), "outside_lobby", "lobby"),
        move(self_pattern("attacker"), "lobby", "entryway"),
        tailgate(p, "attacker", leave, seq(roam)),
    });
}

inline TermPtr guard_watch(const DataLossParams& p) {
    auto verdict = [](bool challenged) {
        return prefix(named(action("create", "entryway",
                                   {{"kind", std::string("guard_verdict")},
                                    {"attr.tailgater", std::string("$who")},
                                    {"attr.challenged", challenged}}),
                            challenged ? "guard_challenge" : "guard_ignore"));
    };
    return seq({
        claim(pattern("tailgater_alert", 1, "alert"), "entryway"),
        quietly("var_from_binding", "", {{"binding", std::string("alert")}, {"attr", std::string("tailgater")}, {"name", std::string("who")}}),
        quietly("discard", "", {{"binding", std::string("alert")}}),
        pick(p.p_challenge_guard, verdict(true), verdict(false)),
        call("guard_watch"),
    });
}

} // namespace detail

inline ModelSpec build_model(const DataLossParams& p) {
    validate_params(p);
    ModelSpec m;
    m.name = "dataloss";
    for (const auto& l : public_locations()) m.graph.add_node({l, LocationKind::Physical, {}});
    const std::vector<std::pair<std::string, std::string>> paths{
        {"home", "public_transport"}, {"home", "private_transport"},  {"public_transport", "outside_lobby"},
        {"private_transport", "outside_lobby"}, {"outside_lobby", "lobby"}, {"lobby", "entryway"},
        {"entryway", "atrium"}, {"atrium", "office"}};
    for (const auto& [a, b] : paths) m.graph.add_edges_both(a, b);

    using VT = ValueType;
    m.kinds["employee"] = {"employee", {{"name", VT::Text}}, {}};
    m.kinds["guard"] = {"guard", {{"name", VT::Text}}, {}};
    m.kinds["attacker"] = {"attacker", {{"name", VT::Text}}, {}};
    m.kinds["device"] = {"device", {{"docs", VT::Integer}, {"owner", VT::Text}}, {}};
    m.kinds["id_card"] = {"id_card", {{"holder", VT::Text}}, {}};
    m.kinds["temp_badge"] = {"temp_badge", {}, {}};
    m.kinds["document"] = {"document", {{"docs", VT::Integer}}, {}};
    m.kinds["usb"] = {"usb", {{"docs", VT::Integer}}, {}};
    m.kinds["cd"] = {"cd", {{"docs", VT::Integer}}, {}};
    m.kinds["reception_desk"] = {"reception_desk", {}, {}};
    m.kinds["door_pass"] = {"door_pass", {{"challenged", VT::Boolean}, {"observer", VT::Integer}, {"opened_at", VT::Real}}, {}};
    m.kinds["tailgater_alert"] = {"tailgater_alert", {{"tailgater", VT::Integer}}, {}};
    m.kinds["guard_verdict"] = {"guard_verdict", {{"tailgater", VT::Integer}, {"challenged", VT::Boolean}}, {}};

    std::uint64_t next = 1;
    auto agent = [&](const std::string& name, const std::string& kind, const std::string& start,
                     const std::string& behaviour) {
        AgentSpec a;
        a.name = name;
        a.marker = AtomTemplate{kind, {{"name", name}}};
        a.start = start;
        a.behaviour = behaviour;
        a.carried = name + ".carried";
        a.memory = name + ".memory";
        for (const auto& loc : {a.carried, a.memory}) {
            m.graph.add_node({loc, LocationKind::Logical, {}});
            for (const auto& l : public_locations()) m.graph.add_edges_both(loc, l);
        }
        m.agents.push_back(a);
        return a;
    };

    std::vector<std::string> early, late;
    for (int i = 1; i <= p.n_employees; ++i) {
        std::string name = "employee_" + std::to_string(i);
        auto a = agent(name, "employee", "home", "employee_day");
        m.agents.back().autostart = false;
        m.place(a.carried, ResourceAtom{"device", AtomId{next++}, {{"docs", std::int64_t{p.device_docs}}, {"owner", name}}});
        m.place(a.carried, ResourceAtom{"id_card", AtomId{next++}, {{"holder", name}}});
        (i * 5 <= p.n_employees * 3 ? early : late).push_back(name);
    }
    std::vector<std::string> attackers;
    for (int i = 1; i <= p.n_attackers; ++i) {
        std::string name = "attacker_" + std::to_string(i);
        agent(name, "attacker", "outside_lobby", "attacker_visit");
        m.agents.back().autostart = false;
        attackers.push_back(name);
    }
    agent("guard", "guard", "entryway", "guard_watch");
    m.agents.back().standing = true;

    m.place("lobby", ResourceAtom{"reception_desk", AtomId{next++}, {}});
    for (int i = 0; i < p.paper_docs; ++i) m.place("office", ResourceAtom{"document", AtomId{next++}, {{"docs", std::int64_t{1}}}});

    m.add_process("employee_day", detail::employee_day(p));
    m.add_process("attacker_visit", detail::attacker_visit(p));
    m.add_process("guard_watch", detail::guard_watch(p));
    m.rules = {"noop", "note", "set_var", "create", "tally", "var_from_binding", "discard",
               "open_door", "door_recent", "email_document"};

    auto env = [](std::string name, std::string at, double rate, double from, double to, std::vector<std::string> pool,
                  std::string type) {
        EnvironmentSpec e;
        e.name = std::move(name);
        e.interface = std::move(at);
        e.inter_arrival = dist::Exponential{rate};
        e.window_start = from;
        e.window_end = to;
        e.agents = std::move(pool);
        e.emitted_event_types = {type};
        e.event_type = type;
        return e;
    };
    // Morning peak: most employees arrive in the first hour at twice the base rate.
    if (!early.empty()) m.environments.push_back(env("employee_arrivals_peak", "home", 2 * p.employee_arrival, 0.0, 1.0, early, "employee_arrival"));
    if (!late.empty()) m.environments.push_back(env("employee_arrivals_late", "home", p.employee_arrival, 1.0, 4.0, late, "employee_arrival"));
    if (p.attacker_arrival > 0 && !attackers.empty())
        m.environments.push_back(env("attacker_arrivals", "outside_lobby", p.attacker_arrival, 0.0, p.workday_length,
                                     attackers, "attacker_arrival"));
    m.interfaces.push_back({"home", {"employee_arrival"}, {}});
    m.interfaces.push_back({"outside_lobby", {"attacker_arrival"}, {}});

    m.metrics = {models::counter("tailgate_attempts", "tailgate_attempt"),
                 models::counter("tailgate_successes", "tailgate_success"),
                 models::counter("redirects", "redirect_to_reception"),
                 models::counter("devices_lost", "device_lost_transit"),
                 models::counter("temp_badges", "temp_badge_issued"),
                 models::duration("temp_badge_wait", "temp_badge_queued", "temp_badge_issued"),
                 models::occupancy("employees_in_office", "employee", "office")};
    return m;
}

/// Documents lost per channel plus tailgating counts.
inline MetricTable channel_counts(const EventLog& log) {
    MetricTable t;
    t["transit_loss"] = models::sum_detail(log, "device_lost_transit", "docs");
    t["tailgate_theft"] = models::sum_detail(log, "tailgate_theft", "docs");
    t["global_share_exposure"] = models::sum_detail(log, "share_global", "docs");
    t["media_theft"] = models::sum_detail(log, "media_theft", "docs");
    t["documents_lost"] = t["transit_loss"] + t["tailgate_theft"] + t["global_share_exposure"] + t["media_theft"];
    t["tailgate_attempts"] = static_cast<double>(count_events(log, "tailgate_attempt"));
    t["tailgate_successes"] = static_cast<double>(count_events(log, "tailgate_success"));
    return t;
}

inline MetricTable dataloss_metrics(const EventLog& log) {
    MetricTable t = channel_counts(log);
    std::vector<double> waits;
    for (const auto& d : pair_durations(log, "temp_badge_queued", "temp_badge_issued", "subject")) waits.push_back(d.end - d.start);
    put_duration_stats(t, "temp_badge_wait", waits);
    return t;
}

inline void add_metrics(const RunResult& r, MetricTable& out) {
    for (const auto& [k, v] : channel_counts(r.log)) out[k] = v;
}

inline nlohmann::json params_to_json(const DataLossParams& p) {
    return {{"n_employees", p.n_employees},
            {"employee_arrival", p.employee_arrival},
            {"attacker_arrival", p.attacker_arrival},
            {"n_attackers", p.n_attackers},
            {"p_forget_badge", p.p_forget_badge},
            {"p_tailgate_given_forgot", p.p_tailgate_given_forgot},
            {"p_challenge_employee", p.p_challenge_employee},
            {"p_challenge_guard", p.p_challenge_guard},
            {"p_lose_device_transit", p.p_lose_device_transit},
            {"p_share_drive_down", p.p_share_drive_down},
            {"share_choice_weights", p.share_choice_weights},
            {"p_attacker_finds_media", p.p_attacker_finds_media},
            {"workday_length", p.workday_length},
            {"p_public_transport", p.p_public_transport},
            {"shares_per_day", p.shares_per_day},
            {"device_docs", p.device_docs},
            {"paper_docs", p.paper_docs},
            {"roam_steps", p.roam_steps},
            {"door_window", p.door_window},
            {"tailgate_patience", p.tailgate_patience}};
}

inline DataLossParams params_from_json(const nlohmann::json& j) {
    DataLossParams p;
    p.n_employees = j.at("n_employees").get<int>();
    p.employee_arrival = j.at("employee_arrival").get<double>();
    p.attacker_arrival = j.at("attacker_arrival").get<double>();
    p.n_attackers = j.at("n_attackers").get<int>();
    p.p_forget_badge = j.at("p_forget_badge").get<double>();
    p.p_tailgate_given_forgot = j.at("p_tailgate_given_forgot").get<double>();
    p.p_challenge_employee = j.at("p_challenge_employee").get<double>();
    p.p_challenge_guard = j.at("p_challenge_guard").get<double>();
    p.p_lose_device_transit = j.at("p_lose_device_transit").get<double>();
    p.p_share_drive_down = j.at("p_share_drive_down").get<double>();
    p.share_choice_weights = j.at("share_choice_weights").get<std::array<double, 3>>();
    p.p_attacker_finds_media = j.at("p_attacker_finds_media").get<double>();
    p.workday_length = j.at("workday_length").get<double>();
    p.p_public_transport = j.at("p_public_transport").get<double>();
    p.shares_per_day = j.at("shares_per_day").get<int>();
    p.device_docs = j.at("device_docs").get<int>();
    p.paper_docs = j.at("paper_docs").get<int>();
    p.roam_steps = j.at("roam_steps").get<int>();
    p.door_window = j.at("door_window").get<double>();
    p.tailgate_patience = j.at("tailgate_patience").get<int>();
    return p;
}

} // namespace metaphorsim::dataloss
