#include "metaphorsim/metaphorsim.hpp"

#include <gtest/gtest.h>

using namespace metaphorsim;
using recovery::RecoveryParams;

namespace {

RunResult run(const RecoveryParams& p, std::uint64_t seed, double horizon = 2000.0) {
    RunConfig c;
    c.seed = seed;
    c.horizon = horizon;
    return run_model(recovery::build_recovery_model(p), recovery::registry(), c);
}

RecoveryParams stranding_fixture() {
    RecoveryParams p;
    p.fleet = {1, 3, 10, 8, 0, 0, 0};
    p.admins_per_large_office = 3;
    p.admin_redeploy_threshold = 1;
    p.infection_probability = 0.9;
    p.p_needs_admin = 1.0;
    return p;
}

EventRecord rec(double t, std::string type, std::int64_t device) {
    return {t, std::move(type), "x", "recovery#1", {{"device", device}}};
}

} // namespace

TEST(TransferDelay, Formula) {
    EXPECT_DOUBLE_EQ(recovery::transfer_delay(10, 10, 0), 1.0);
    EXPECT_DOUBLE_EQ(recovery::transfer_delay(10, 10, 3), 4.0);
    EXPECT_EQ(recovery::transfer_delay(0, 10, 3), 0.0);
    EXPECT_EQ(recovery::transfer_delay(0, 0.5, 0), 0.0);
    try {
        recovery::transfer_delay(10, 0, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonPositiveSpeed);
    }
}

TEST(TransferDelay, FourPacketsShareTransit) {
    RecoveryParams p;
    p.network.wired_bandwidth = 10;
    p.network.datacenter_bandwidth = 10;
    auto m = recovery::build_network_model(p);
    for (std::uint64_t i = 0; i < 4; ++i)
        m.place("large_office_1.wired",
                ResourceAtom{"packet", AtomId{100 + i},
                             {{"type", std::string("request")}, {"src", std::string("large_office_1.wired")},
                              {"dst", std::string("datacenter.wired")}, {"device", static_cast<std::int64_t>(i)},
                              {"size", 10.0}, {"state", std::string("outbound")}, {"image", std::string()}}});
    auto reg = recovery::registry();
    ASSERT_TRUE(validate_model(m, reg).empty());
    RunConfig c;
    c.seed = 1;
    c.horizon = 10;
    auto r = run_model(m, reg, c);
    std::vector<double> out;
    for (const auto& e : r.log)
        if (e.type == "packet_out") out.push_back(e.t);
    ASSERT_EQ(out.size(), 4u);
    EXPECT_DOUBLE_EQ(out.back(), recovery::transfer_delay(10, 10, 3));
    EXPECT_EQ(out, (std::vector<double>{1, 2, 3, 4}));
}

TEST(RecoveryModel, OrganisationOf120Devices) {
    RecoveryParams p;
    EXPECT_EQ(p.fleet.total(), 120);
    auto m = recovery::build_recovery_model(p);
    EXPECT_TRUE(validate_model(m, recovery::registry()).empty());
    std::size_t devices = 0;
    for (const auto& [loc, b] : m.initial_placement) devices += b.count("device");
    EXPECT_EQ(devices, 120u);
    EXPECT_TRUE(m.graph.has_node("network.transit"));
    EXPECT_TRUE(m.graph.has_node("server.store"));
    EXPECT_TRUE(m.graph.has_node("internet"));
}

TEST(RecoveryModel, HotelsAreWirelessOnly) {
    RecoveryParams p;
    p.fleet = {1, 0, 0, 0, 0, 10, 0};
    p.admins_per_large_office = 1;
    p.infection_probability = 1.0;
    p.p_needs_admin = 0.0;
    p.recovery_mix = {0, 1, 0, 0};
    auto m = recovery::build_recovery_model(p);
    EXPECT_FALSE(m.graph.has_node("hotel.wired"));
    EXPECT_TRUE(m.graph.has_node("hotel.wireless"));
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto r = run(p, seed, 500);
        std::size_t wireless = 0;
        for (const auto& e : r.log) {
            EXPECT_NE(e.loc, "hotel.wired");
            if (e.type == "packet_in" && e.loc == "hotel.wireless") ++wireless;
        }
        EXPECT_EQ(wireless, 10u);
        EXPECT_EQ(recovery::recovery_metrics(r.log).at("tickets"), 10.0);
    }
}

TEST(RecoveryModel, NoInfectionNoTickets) {
    RecoveryParams p;
    p.infection_probability = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto r = run(p, seed, 500);
        EXPECT_EQ(count_events(r.log, "device_infected"), 0u);
        EXPECT_EQ(recovery::recovery_metrics(r.log).at("tickets"), 0.0);
    }
}

TEST(RecoveryModel, RejectsBadParams) {
    RecoveryParams p;
    p.infection_probability = -0.1;
    EXPECT_THROW(recovery::build_recovery_model(p), Error);
    p = {};
    p.network.wired_bandwidth = 0;
    EXPECT_THROW(recovery::build_recovery_model(p), Error);
    p = {};
    p.recovery_mix = {0, 0, 0, 0};
    EXPECT_THROW(recovery::build_recovery_model(p), Error);
    p = {};
    p.network.availability["hotel"] = {false, false};
    EXPECT_THROW(recovery::build_recovery_model(p), Error);
    p = {};
    p.admin_spare_after = -1;
    EXPECT_THROW(recovery::build_recovery_model(p), Error);
}

TEST(RecoveryModel, ParamsRoundTrip) {
    RecoveryParams p;
    p.severity = {"exponential", 170};
    p.admin_spare_after = 48;
    p.helpdesk_service_time = dist::Range{2, 6};
    p.network.availability["home"] = {false, true};
    auto q = recovery::params_from_json(recovery::params_to_json(p));
    EXPECT_EQ(recovery::params_to_json(q), recovery::params_to_json(p));
    EXPECT_EQ(model_to_json(recovery::build_recovery_model(q)), model_to_json(recovery::build_recovery_model(p)));
}

TEST(RecoveryMetrics, TwoTickets) {
    EventLog log = {rec(0, "device_infected", 1), rec(0, "device_infected", 2), rec(1, "recover_start", 1),
                    rec(2, "recover_start", 2), rec(24, "recover_end", 1), rec(72, "recover_end", 2)};
    auto t = recovery::recovery_metrics(log);
    EXPECT_EQ(t.at("tickets"), 2.0);
    EXPECT_DOUBLE_EQ(t.at("mean_recovery_days"), 2.0);
}

TEST(RecoveryMetrics, UnpairedTicket) {
    EventLog log = {rec(0, "device_infected", 1), rec(5, "recover_end", 2)};
    try {
        recovery::recovery_metrics(log);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnpairedDurationEvent);
    }
    EXPECT_TRUE(recovery::tickets(log, false).empty());
}

TEST(RecoveryMetrics, StrandedEpisodesCounted) {
    EventLog log = {{1, "admin_redeployed", "a.helpdesk", "r", {}}, {2, "admin_redeployed", "a.helpdesk", "r", {}},
                    {2, "stranded_admin", "a.helpdesk", "r", {}}};
    auto t = recovery::recovery_metrics(log);
    EXPECT_EQ(t.at("redeployments"), 2.0);
    EXPECT_EQ(t.at("stranded_episodes"), 1.0);
}

TEST(Redeployment, DisabledMeansNone) {
    auto p = stranding_fixture();
    p.admin_redeploy_enabled = false;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto t = recovery::recovery_metrics(run(p, seed, 500).log);
        EXPECT_EQ(t.at("redeployments"), 0.0);
        EXPECT_EQ(t.at("stranded_episodes"), 0.0);
    }
}

TEST(Redeployment, StrandingFixture) {
    auto r = run(stranding_fixture(), 1, 500);
    auto t = recovery::recovery_metrics(r.log);
    EXPECT_EQ(t.at("stranded_episodes"), 2.0);
    EXPECT_EQ(t.at("redeployments"), 4.0);

    // Replay admin whereabouts from the log: each episode must leave exactly one admin at home.
    std::map<std::string, bool> home{{"large_office_1.admin_1", true}, {"large_office_1.admin_2", true},
                                     {"large_office_1.admin_3", true}};
    std::map<std::int64_t, std::string> by_id;
    for (const auto& [loc, b] : recovery::build_recovery_model(stranding_fixture()).initial_placement)
        for (const auto& a : b)
            if (a.kind == "admin") by_id[static_cast<std::int64_t>(a.id.value)] = a.text("name");
    std::size_t checked = 0;
    for (const auto& e : r.log) {
        if (e.type == "admin_redeployed") home[e.detail_text("admin")] = false;
        if (e.type == "admin_arrived" && e.loc == "large_office_1.helpdesk")
            home[by_id.at(as_integer(*e.detail("admin")))] = true;
        if (e.type == "stranded_admin") {
            int at_home = 0;
            for (const auto& [n, h] : home) at_home += h;
            EXPECT_EQ(at_home, 1) << "at " << e.t;
            ++checked;
        }
    }
    EXPECT_EQ(checked, 2u);
}

TEST(Redeployment, SpareAfterHoldsAdminsBack) {
    auto p = stranding_fixture();
    auto eager = recovery::recovery_metrics(run(p, 1, 500).log).at("redeployments");
    p.admin_spare_after = 1e6;
    auto never = recovery::recovery_metrics(run(p, 1, 500).log).at("redeployments");
    EXPECT_GT(eager, 0.0);
    EXPECT_EQ(never, 0.0);
}

TEST(Redeployment, SpareAfterDelaysFirstMove) {
    auto p = stranding_fixture();
    p.admin_spare_after = 48;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto r = run(p, seed, 500);
        // An admin leaves only after 48 idle hours since its last release at the home desk.
        for (const auto& e : r.log)
            if (e.type == "admin_redeployed" && e.subject.rfind("redeploy:", 0) == 0) EXPECT_GE(e.t, 48.0);
    }
}

TEST(RecoveryInvariants, TicketsAndTransit) {
    RecoveryParams p;
    p.infection_probability = 0.7;
    p.severity = {"exponential", 72};
    auto reg = recovery::registry();
    auto m = recovery::build_recovery_model(p);
    double min_image = p.image_size / std::max(p.network.wired_bandwidth, p.network.wireless_bandwidth);
    std::size_t network_tickets = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RunConfig c;
        c.seed = seed;
        c.horizon = 2000;
        auto r = run_model(m, reg, c);
        auto ts = recovery::tickets(r.log);
        EXPECT_EQ(ts.size(), count_events(r.log, "device_infected"));
        std::map<std::int64_t, int> requests, responses;
        for (const auto& e : r.log)
            if (e.type == "transit") {
                if (e.detail_text("type") == "request") ++requests[as_integer(*e.detail("device"))];
                if (e.detail_text("type") == "response") ++responses[as_integer(*e.detail("device"))];
            }
        std::map<std::int64_t, int> seen;
        for (const auto& k : ts) {
            EXPECT_LE(k.infect_time, k.recover_start);
            EXPECT_LE(k.recover_start, k.recover_end);
            ++seen[k.device];
            if (k.recovery_option == "network") {
                ++network_tickets;
                EXPECT_GE(requests[k.device], 1);
                EXPECT_GE(responses[k.device], 1);
                EXPECT_GE(k.recover_end - k.recover_start, min_image);
            }
        }
        // A device without any usb/network ticket never touches the network.
        for (const auto& k : ts)
            if (k.recovery_option == "embedded" && seen[k.device] == 1) {
                EXPECT_EQ(requests[k.device], 0);
                EXPECT_EQ(responses[k.device], 0);
            }
    }
    EXPECT_GT(network_tickets, 0u);
}

TEST(RecoveryInvariants, NoConcurrentRecovery) {
    RecoveryParams p;
    p.infection_probability = 1.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::set<std::int64_t> open;
        for (const auto& e : run(p, seed, 1000).log) {
            if (e.type == "device_infected") ASSERT_TRUE(open.insert(as_integer(*e.detail("device"))).second);
            if (e.type == "recover_end") ASSERT_EQ(open.erase(as_integer(*e.detail("device"))), 1u);
        }
        EXPECT_TRUE(open.empty());
    }
}

TEST(RecoveryStatistics, DurationGrowsWithInfection) {
    std::vector<double> xs, ys;
    for (double q : {0.1, 0.5, 0.9}) {
        RecoveryParams p;
        p.infection_probability = q;
        for (std::uint64_t seed = 1; seed <= 60; ++seed) {
            xs.push_back(q);
            ys.push_back(recovery::recovery_metrics(run(p, seed).log).at("mean_recovery_days"));
        }
    }
    EXPECT_LT(stats::trend_test(xs, ys).p_increasing, 0.05);
}

TEST(Simplified, SubstitutionRestoresAttacker) {
    RecoveryParams p;
    auto m = recovery::build_simplified_model(p);
    auto reg = recovery::registry();
    EXPECT_TRUE(validate_model(m, reg).empty());
    RunConfig c;
    c.seed = 3;
    c.horizon = 500;
    auto r = run_model(m, reg, c);
    EXPECT_GT(count_events(r.log, "device_infected"), 0u);
    EXPECT_NO_THROW(recovery::recovery_metrics(r.log));
}
