#pragma once

#include "../composition.hpp"
#include "../metrics.hpp"
#include "../model.hpp"
#include "../serialize.hpp"
#include "common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace metaphorsim::recovery {

struct Fleet {
    int n_large_offices = 2;
    int n_small_offices = 3;
    int large_office = 40;  // devices per large office
    int small_office = 8;   // devices per small office
    int home = 10;
    int hotel = 3;
    int coffee_shop = 3;

    int total() const {
        return n_large_offices * large_office + n_small_offices * small_office + home + hotel + coffee_shop;
    }
};

struct Severity {
    std::string profile = "uniform";  // or "exponential"
    double scale = 72.0;              // hours: window length, or mean delay
};

struct Availability {
    bool wired = true;
    bool wireless = true;
};

struct NetworkParams {
    double wired_bandwidth = 20.0;  // GB per hour
    double wireless_bandwidth = 5.0;
    double datacenter_bandwidth = 100.0;
    double internet_bandwidth = 100.0;
    int ports_per_endpoint = 8;
    std::map<std::string, Availability> availability{{"large_office", {true, true}},
                                                     {"small_office", {true, true}},
                                                     {"home", {true, true}},
                                                     {"hotel", {false, true}},
                                                     {"coffee_shop", {false, true}}};
};

struct RecoveryMix {
    double usb = 1.0, network = 1.0, embedded = 1.0, mixed = 1.0;
};

struct RecoveryParams {
    Fleet fleet;
    int admins_per_large_office = 3;
    bool admin_redeploy_enabled = true;
    int admin_redeploy_threshold = 1;
    // Redeployed admins otherwise stay until their small office is clean.
    bool admin_recall_enabled = false;
    // An admin is spare only after this many idle hours at the home desk.
    double admin_spare_after = 0.0;
    double infection_probability = 0.5;
    Severity severity;
    NetworkParams network;
    double image_size = 10.0;
    double request_size = 0.001;
    double malware_size = 0.01;
    RecoveryMix recovery_mix;
    DistributionSpec helpdesk_service_time = dist::Range{2.0, 8.0};
    int n_employees = 120;
    double p_needs_admin = 0.5;
    double p_usb_success = 0.5;
    DistributionSpec usb_time = dist::Range{2.0, 6.0};
    DistributionSpec embedded_time = dist::Range{1.0, 3.0};
    DistributionSpec install_time = dist::Range{1.0, 3.0};
    DistributionSpec device_travel_time = dist::Range{4.0, 24.0};
    DistributionSpec admin_travel_time = dist::Range{8.0, 24.0};
};

struct RecoveryTicket {
    std::int64_t device = 0;
    double infect_time = 0.0;
    std::string recovery_option;
    bool needs_admin = false;
    double recover_start = 0.0;
    double recover_end = 0.0;
};

inline double transfer_delay(double size, double segment_speed, double congestion) {
    if (!(segment_speed > 0)) throw Error(ErrorCode::NonPositiveSpeed, "segment speed must be > 0");
    if (congestion < 0) throw Error(ErrorCode::InvalidParameter, "congestion must be >= 0");
    if (size <= 0) return 0.0;
    return size / segment_speed * (1.0 + congestion);
}

inline void validate_params(const RecoveryParams& p) {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidParameter, "recovery: " + m); };
    for (auto [name, v] : {std::pair{"infection_probability", p.infection_probability},
                           {"p_needs_admin", p.p_needs_admin},
                           {"p_usb_success", p.p_usb_success}})
        if (!(v >= 0.0 && v <= 1.0)) bad(std::string(name) + " must be a probability");
    const auto& n = p.network;
    for (double b : {n.wired_bandwidth, n.wireless_bandwidth, n.datacenter_bandwidth, n.internet_bandwidth})
        if (!(b > 0)) bad("bandwidths must be > 0");
    if (n.ports_per_endpoint < 1) bad("ports_per_endpoint must be >= 1");
    for (const char* k : {"large_office", "small_office", "home", "hotel", "coffee_shop"}) {
        auto it = n.availability.find(k);
        if (it == n.availability.end()) bad(std::string("network.availability lacks '") + k + "'");
        if (!it->second.wired && !it->second.wireless) bad(std::string(k) + " needs a wired or wireless endpoint");
    }
    const auto& m = p.recovery_mix;
    for (double w : {m.usb, m.network, m.embedded, m.mixed})
        if (w < 0) bad("recovery_mix weights must be nonnegative");
    if (!(m.usb + m.network + m.embedded + m.mixed > 0)) bad("recovery_mix weights must have a positive sum");
    const auto& f = p.fleet;
    if (f.n_large_offices < 1) bad("fleet.n_large_offices must be >= 1");
    if (f.n_small_offices < 0 || f.large_office < 0 || f.small_office < 0 || f.home < 0 || f.hotel < 0 ||
        f.coffee_shop < 0)
        bad("fleet counts must be >= 0");
    if (p.admins_per_large_office < 0) bad("admins_per_large_office must be >= 0");
    if (p.admin_redeploy_threshold < 0) bad("admin_redeploy_threshold must be >= 0");
    if (!(p.admin_spare_after >= 0)) bad("admin_spare_after must be >= 0");
    if (p.severity.profile != "uniform" && p.severity.profile != "exponential")
        bad("severity.profile must be uniform or exponential");
    if (!(p.severity.scale > 0)) bad("severity.scale must be > 0");
    if (p.image_size < 0 || p.request_size < 0 || p.malware_size < 0) bad("sizes must be >= 0");
    if (p.n_employees < 0) bad("n_employees must be >= 0");
    for (const auto* d : {&p.helpdesk_service_time, &p.usb_time, &p.embedded_time, &p.install_time,
                          &p.device_travel_time, &p.admin_travel_time}) {
        auto why = distribution_problem(*d);
        if (!why.empty()) bad(why);
        if (distribution_min(*d) < 0) bad("durations must be nonnegative");
    }
}

// ------------------------------------------------------------------ sites

struct Site {
    std::string name;
    std::string kind;  // large_office, small_office, home, hotel, coffee_shop
    int devices = 0;
    Availability net;
    std::string parent;  // small offices: the large office that covers them
};

inline std::string helpdesk(const std::string& office) { return office + ".helpdesk"; }
inline const std::string& transit() {
    static const std::string t = "network.transit";
    return t;
}
inline const std::string& datacenter() {
    static const std::string d = "datacenter.wired";
    return d;
}
inline const std::string& road() {
    static const std::string r = "admins.road";
    return r;
}

inline std::vector<Site> sites(const RecoveryParams& p) {
    std::vector<Site> out;
    const auto& f = p.fleet;
    const auto& av = p.network.availability;
    for (int i = 1; i <= f.n_large_offices; ++i)
        out.push_back({"large_office_" + std::to_string(i), "large_office", f.large_office, av.at("large_office"), {}});
    for (int i = 1; i <= f.n_small_offices; ++i)
        out.push_back({"small_office_" + std::to_string(i), "small_office", f.small_office, av.at("small_office"),
                       "large_office_" + std::to_string((i - 1) % f.n_large_offices + 1)});
    out.push_back({"home", "home", f.home, av.at("home"), {}});
    out.push_back({"hotel", "hotel", f.hotel, av.at("hotel"), {}});
    out.push_back({"coffee_shop", "coffee_shop", f.coffee_shop, av.at("coffee_shop"), {}});
    return out;
}

inline bool is_office(const std::string& kind) { return kind == "large_office" || kind == "small_office"; }

inline std::vector<std::string> endpoints_of(const Site& s) {
    std::vector<std::string> e;
    if (s.net.wired) e.push_back(s.name + ".wired");
    if (s.net.wireless) e.push_back(s.name + ".wireless");
    return e;
}

inline LocationNode endpoint_node(const std::string& name, const std::string& site, const std::string& medium,
                                  double bandwidth) {
    return {name, LocationKind::Logical, {{"bandwidth", bandwidth}, {"site", site}, {"medium", medium}}};
}

inline std::vector<LocationNode> all_endpoints(const RecoveryParams& p) {
    std::vector<LocationNode> out;
    for (const auto& s : sites(p)) {
        if (s.net.wired) out.push_back(endpoint_node(s.name + ".wired", s.name, "wired", p.network.wired_bandwidth));
        if (s.net.wireless)
            out.push_back(endpoint_node(s.name + ".wireless", s.name, "wireless", p.network.wireless_bandwidth));
    }
    return out;
}

inline LocationNode datacenter_node(const RecoveryParams& p) {
    return endpoint_node(datacenter(), "datacenter", "wired", p.network.datacenter_bandwidth);
}
inline LocationNode internet_node(const RecoveryParams& p) {
    return endpoint_node("internet", "internet", "wired", p.network.internet_bandwidth);
}

inline ResourceKind packet_kind() {
    using VT = ValueType;
    return {"packet",
            {{"type", VT::Text}, {"src", VT::Text}, {"dst", VT::Text}, {"device", VT::Integer},
             {"size", VT::Real}, {"state", VT::Text}, {"image", VT::Text}},
            {}};
}

inline ResourceKind device_kind() {
    using VT = ValueType;
    return {"device",
            {{"name", VT::Text}, {"owner", VT::Text}, {"base", VT::Text}, {"infected", VT::Boolean},
             {"tickets", VT::Integer}},
            {}};
}

// ------------------------------------------------------------------ rules

namespace detail {

inline std::string node_text(const LocationGraph& g, const std::string& node, const std::string& attr) {
    const LocationNode* n = g.node(node);
    if (!n) return {};
    auto it = n->attributes.find(attr);
    return it == n->attributes.end() ? std::string{} : to_text(it->second);
}

inline bool node_flag(const LocationGraph& g, const std::string& node, const std::string& attr) {
    const LocationNode* n = g.node(node);
    if (!n) return false;
    auto it = n->attributes.find(attr);
    return it != n->attributes.end() && as_bool(it->second);
}

inline double node_real(const LocationGraph& g, const std::string& node, const std::string& attr) {
    const LocationNode* n = g.node(node);
    if (!n) return 0.0;
    auto it = n->attributes.find(attr);
    return it == n->attributes.end() ? 0.0 : as_real(it->second);
}

/// Wired where the site offers it, wireless otherwise.
inline std::pair<std::string, std::string> endpoint_for(const LocationGraph& g, const std::string& site) {
    if (node_flag(g, site, "wired")) return {site + ".wired", "wired"};
    return {site + ".wireless", "wireless"};
}

inline const ResourceAtom* local_device(const RuleContext& ctx) {
    return ctx.local.find(AtomId{static_cast<std::uint64_t>(ctx.integer("device"))});
}

inline DistributionSpec dist_param(const RuleContext& ctx, std::string_view name) {
    return io::distribution_from_json(nlohmann::json::parse(ctx.text(name)), std::string(name));
}

inline std::string dist_text(const DistributionSpec& d) { return io::distribution_to_json(d).dump(); }

inline bool home_admin(const ResourceAtom& a, const std::string& office) {
    return a.kind == "admin" && a.text("home") == office;
}

/// Home admins currently at their own desk, idle or serving.
inline int admins_present(const RuleContext& ctx, const std::string& office) {
    int n = 0;
    std::string desk = helpdesk(office);
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) {
        if (a.text("home") != office || a.text("posted") != desk) return;
        if (ctx.world.locate(a.id) == desk || ctx.world.claimed_at(a.id) == desk) ++n;
    });
    return n;
}

inline int admins_total(const RuleContext& ctx, const std::string& office) {
    int n = 0;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) { n += a.text("home") == office; });
    return n;
}

/// Admins posted to `desk`, whether there already or on the way.
inline std::size_t committed(const RuleContext& ctx, const std::string& desk) {
    std::size_t n = 0;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) { n += a.text("posted") == desk; });
    return n;
}

/// Infected devices based at `office`.
inline std::size_t open_infections(const RuleContext& ctx, const std::string& office) {
    std::size_t n = 0;
    ctx.world.for_each_atom("device", [&](const ResourceAtom& d) { n += d.text("base") == office && d.flag("infected"); });
    return n;
}

/// Small-office desk whose queue most exceeds the admins already posted there. With `uncovered`,
/// a desk nobody is posted to also counts its office's open infections.
inline std::optional<std::string> neediest_small_desk(const RuleContext& ctx, bool uncovered = false) {
    std::optional<std::string> best;
    std::size_t most = 0;
    for (const auto& [name, node] : ctx.world.graph().nodes()) {
        if (node_text(ctx.world.graph(), name, "tier") != "small") continue;
        std::size_t w = ctx.world.waiting(name, "admin"), c = committed(ctx, name);
        std::size_t need = w > c ? w - c : 0;
        if (uncovered && c == 0) need = std::max(need, open_infections(ctx, node_text(ctx.world.graph(), name, "office")));
        if (need > most) {
            most = need;
            best = name;
        }
    }
    return best;
}

/// The help desk that serves a device whose base office is `office`. A small office keeps its
/// tickets only while an admin is posted there.
inline std::string serving_office(const RuleContext& ctx, const std::string& office, bool redeploy) {
    const auto& g = ctx.world.graph();
    if (node_text(g, office, "kind") != "small_office") return office;
    if (redeploy && committed(ctx, helpdesk(office)) > 0) return office;
    return node_text(g, office, "parent");
}

inline const ResourceAtom* idle_home_admin(const RuleContext& ctx, const std::string& office) {
    for (const auto& a : ctx.local)
        if (home_admin(a, office)) return &a;
    return nullptr;
}

/// The home admin idle longest, if idle for at least `spare` hours.
inline const ResourceAtom* spare_home_admin(const RuleContext& ctx, const std::string& office, double spare) {
    const ResourceAtom* best = nullptr;
    for (const auto& a : ctx.local)
        if (home_admin(a, office) && ctx.world.now() - a.real("free_at") >= spare &&
            (!best || a.real("free_at") < best->real("free_at")))
            best = &a;
    return best;
}

/// Open tickets of the office's own devices, or the desk's queue plus tickets in service if larger.
inline std::size_t workload(const RuleContext& ctx, const std::string& office) {
    std::string desk = helpdesk(office);
    std::size_t busy = 0;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) { busy += ctx.world.claimed_at(a.id) == desk; });
    return std::max(open_infections(ctx, office), ctx.world.waiting(desk, "admin") + busy);
}

// An office never sends away its last admin.
inline bool redeploy_ready(const RuleContext& ctx) {
    std::string office = ctx.text("office");
    if (!spare_home_admin(ctx, office, ctx.real("spare"))) return false;
    if (workload(ctx, office) > static_cast<std::size_t>(ctx.integer("threshold"))) return false;
    if (admins_present(ctx, office) < 2) return false;
    return neediest_small_desk(ctx, true).has_value();
}

/// An idle home admin sitting at a small-office desk.
inline std::optional<std::pair<AtomId, std::string>> recallable(const RuleContext& ctx) {
    std::string office = ctx.text("office");
    std::size_t pending = ctx.world.waiting(helpdesk(office), "admin");
    bool unattended = pending > 0 && admins_present(ctx, office) == 0;
    if (pending <= static_cast<std::size_t>(ctx.integer("threshold")) && !unattended) return std::nullopt;
    std::optional<std::pair<AtomId, std::string>> out;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) {
        if (out || a.text("home") != office) return;
        auto loc = ctx.world.locate(a.id);
        if (loc && node_text(ctx.world.graph(), *loc, "tier") == "small") out = std::pair{a.id, *loc};
    });
    return out;
}

/// An idle home admin at a small desk whose office has nothing left to recover.
inline std::optional<std::pair<AtomId, std::string>> returnable(const RuleContext& ctx) {
    if (neediest_small_desk(ctx)) return std::nullopt;
    std::string office = ctx.text("office");
    std::optional<std::pair<AtomId, std::string>> out;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) {
        if (out || a.text("home") != office) return;
        auto loc = ctx.world.locate(a.id);
        if (!loc || node_text(ctx.world.graph(), *loc, "tier") != "small") return;
        if (ctx.world.waiting(*loc, "admin") == 0 && open_infections(ctx, node_text(ctx.world.graph(), *loc, "office")) == 0)
            out = std::pair{a.id, *loc};
    });
    return out;
}

/// An idle home admin at a small desk with an empty queue, and a different small desk that needs one.
inline std::optional<std::tuple<AtomId, std::string, std::string>> shiftable(const RuleContext& ctx) {
    auto target = neediest_small_desk(ctx);
    if (!target) return std::nullopt;
    std::string office = ctx.text("office");
    std::optional<std::tuple<AtomId, std::string, std::string>> out;
    ctx.world.for_each_atom("admin", [&](const ResourceAtom& a) {
        if (out || a.text("home") != office) return;
        auto loc = ctx.world.locate(a.id);
        if (loc && *loc != *target && node_text(ctx.world.graph(), *loc, "tier") == "small")
            out = std::tuple{a.id, *loc, *target};
    });
    return out;
}

} // namespace detail

inline void register_rules(RuleRegistry& reg) {
    // infectable(device): the device is here and not already being recovered.
    reg.add({"infectable",
             [](const RuleContext& ctx) {
                 const ResourceAtom* d = detail::local_device(ctx);
                 return d && !d->flag("infected");
             },
             nullptr});

    // locate_device(device): sets the variable `site` to where the device is.
    reg.add({"locate_device", nullptr, [](RuleContext& ctx) {
                 auto loc = ctx.world.locate(AtomId{static_cast<std::uint64_t>(ctx.integer("device"))});
                 if (!loc) throw Error(ErrorCode::Runtime, "locate_device: device is not placed");
                 ctx.scope.vars["site"] = *loc;
                 return ctx.local;
             }});

    // infect(device): marks the device and exposes site and base office to the ticket.
    reg.add({"infect", [](const RuleContext& ctx) { return detail::local_device(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 ResourceAtom* d = out.find(AtomId{static_cast<std::uint64_t>(ctx.integer("device"))});
                 d->attributes["infected"] = true;
                 d->attributes["tickets"] = d->integer("tickets") + 1;
                 ctx.scope.vars["device"] = ctx.integer("device");
                 ctx.scope.vars["site"] = std::string(ctx.location);
                 ctx.scope.vars["base"] = d->text("base");
                 ctx.detail("device", ctx.integer("device"));
                 ctx.detail("name", d->text("name"));
                 return out;
             }});

    // plan_ticket(device, mix, p_admin, p_usb, redeploy, *_time): draws every random choice of the
    // ticket from a stream keyed by device so that paired configurations share them.
    reg.add({"plan_ticket", [](const RuleContext& ctx) { return detail::local_device(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 const ResourceAtom* d = detail::local_device(ctx);
                 const auto& g = ctx.world.graph();
                 RngStream draws(ctx.rng.master_seed(),
                                 "ticket:" + std::to_string(d->id.value) + ":" + std::to_string(d->integer("tickets")));
                 auto w = split(ctx.text("mix"), ',');
                 std::vector<double> weights;
                 for (const auto& x : w) weights.push_back(std::stod(x));
                 static const char* options[] = {"usb", "network", "embedded", "mixed"};
                 std::string option = options[sample_index(weights, draws)];
                 bool needs_admin = draws.uniform01() < ctx.real("p_admin");
                 bool usb_ok = draws.uniform01() < ctx.real("p_usb");
                 auto& v = ctx.scope.vars;
                 v["option"] = option;
                 v["needs_admin"] = needs_admin;
                 v["usb_ok"] = usb_ok;
                 v["service_h"] = sample(detail::dist_param(ctx, "service_time"), draws);
                 v["travel_h"] = sample(detail::dist_param(ctx, "travel_time"), draws);
                 v["usb_h"] = sample(detail::dist_param(ctx, "usb_time"), draws);
                 v["embedded_h"] = sample(detail::dist_param(ctx, "embedded_time"), draws);
                 v["install_h"] = sample(detail::dist_param(ctx, "install_time"), draws);

                 std::string site(ctx.location);
                 std::string dest = site;
                 // Off-site devices come back to base for admin help or a USB image.
                 bool wants_desk = needs_admin || option == "usb" || option == "mixed";
                 if (!is_office(detail::node_text(g, site, "kind")) && wants_desk) dest = d->text("base");
                 std::string office = is_office(detail::node_text(g, dest, "kind")) ? dest : d->text("base");
                 std::string serving = detail::serving_office(ctx, office, ctx.flag("redeploy"));
                 if (needs_admin) dest = serving;
                 auto [endpoint, medium] = detail::endpoint_for(g, dest);
                 v["desk"] = helpdesk(serving);
                 v["dest"] = dest;
                 v["travel"] = dest != site;
                 v["endpoint"] = endpoint;
                 v["medium"] = medium;
                 ctx.detail("device", static_cast<std::int64_t>(d->id.value));
                 ctx.detail("option", option);
                 ctx.detail("needs_admin", needs_admin);
                 ctx.detail("dest", dest);
                 return ctx.local;
             }});

    reg.add({"recovered", [](const RuleContext& ctx) { return detail::local_device(ctx) != nullptr; },
             [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 out.find(AtomId{static_cast<std::uint64_t>(ctx.integer("device"))})->attributes["infected"] = false;
                 ctx.detail("device", ctx.integer("device"));
                 return out;
             }});

    // transit_plan(packet): fixes the transfer time from size, the slower endpoint and the
    // number of other packets already in flight.
    reg.add({"transit_plan", nullptr, [](RuleContext& ctx) {
                 const ResourceAtom* pkt = ctx.local.find(AtomId{static_cast<std::uint64_t>(ctx.integer("packet"))});
                 if (!pkt) throw Error(ErrorCode::Runtime, "transit_plan: packet not in transit");
                 const auto& g = ctx.world.graph();
                 double speed = std::min(detail::node_real(g, pkt->text("src"), "bandwidth"),
                                         detail::node_real(g, pkt->text("dst"), "bandwidth"));
                 double congestion = static_cast<double>(ctx.local.count("packet") - 1);
                 double delay = transfer_delay(pkt->real("size"), speed, congestion);
                 ctx.scope.vars["delay"] = delay;
                 ctx.scope.vars["dst"] = pkt->text("dst");
                 ctx.detail("packet", static_cast<std::int64_t>(pkt->id.value));
                 ctx.detail("type", pkt->text("type"));
                 ctx.detail("device", pkt->integer("device"));
                 ctx.detail("size", pkt->real("size"));
                 ctx.detail("congestion", static_cast<std::int64_t>(congestion));
                 ctx.detail("delay", delay);
                 return ctx.local;
             }});

    reg.add({"deliver", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 ResourceAtom* pkt = out.find(AtomId{static_cast<std::uint64_t>(ctx.integer("packet"))});
                 if (!pkt) throw Error(ErrorCode::Runtime, "deliver: packet missing");
                 pkt->attributes["state"] = std::string("delivered");
                 ctx.detail("packet", static_cast<std::int64_t>(pkt->id.value));
                 ctx.detail("type", pkt->text("type"));
                 ctx.detail("device", pkt->integer("device"));
                 return out;
             }});

    // serve_request(request, store): answers a valid image request with a response packet.
    reg.add({"serve_request", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 const ResourceAtom* req = ctx.world.find_atom(AtomId{static_cast<std::uint64_t>(ctx.integer("request"))});
                 if (!req) throw Error(ErrorCode::Runtime, "serve_request: request missing");
                 const ResourceAtom* image = nullptr;
                 for (const auto& a : ctx.world.at(ctx.text("store")))
                     if (a.kind == "image" && a.text("name") == req->text("image")) image = &a;
                 ctx.detail("device", req->integer("device"));
                 ctx.detail("valid", image != nullptr);
                 if (!image) return out;
                 out.insert(ctx.make_atom("packet", {{"type", std::string("response")},
                                                     {"src", std::string(ctx.location)},
                                                     {"dst", req->text("src")},
                                                     {"device", req->integer("device")},
                                                     {"size", image->real("size")},
                                                     {"state", std::string("outbound")},
                                                     {"image", image->text("name")}}));
                 return out;
             }});

    // plan_attack(p, profile, scale): each device is targeted with probability p at a sampled time.
    reg.add({"plan_attack", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 double p = ctx.real("p"), scale = ctx.real("scale");
                 bool expo = ctx.text("profile") == "exponential";
                 std::int64_t fleet = 0, targets = 0;
                 std::vector<AtomId> devices;
                 ctx.world.for_each_atom("device", [&](const ResourceAtom& a) { devices.push_back(a.id); });
                 for (AtomId id : devices) {
                     ++fleet;
                     if (!(ctx.rng.uniform01() < p)) continue;
                     double at = expo ? sample(dist::Exponential{1.0 / scale}, ctx.rng) : ctx.rng.uniform01() * scale;
                     out.insert(ctx.make_atom("attack_order", {{"target", static_cast<std::int64_t>(id.value)}, {"at", at}}));
                     ++targets;
                 }
                 ctx.detail("fleet", fleet);
                 ctx.detail("targets", targets);
                 return out;
             }});

    // wait_until(t)
    reg.add({"wait_until", nullptr, [](RuleContext& ctx) {
                 ctx.duration_override = std::max(0.0, ctx.real("t") - ctx.world.now());
                 return ctx.local;
             }});

    // inject(target, size): a malicious packet addressed to the endpoint serving the target's site.
    // target "random" picks a device that is not already infected.
    reg.add({"inject", nullptr, [](RuleContext& ctx) {
                 ResourceBundle out = ctx.local;
                 const ResourceAtom* device = nullptr;
                 if (ctx.text("target") == "random") {
                     std::vector<const ResourceAtom*> clean;
                     ctx.world.for_each_atom("device", [&](const ResourceAtom& a) {
                         if (!a.flag("infected")) clean.push_back(ctx.world.find_atom(a.id));
                     });
                     if (!clean.empty())
                         device = clean[static_cast<std::size_t>(ctx.rng.uniform01() * static_cast<double>(clean.size())) %
                                        clean.size()];
                 } else {
                     device = ctx.world.find_atom(AtomId{static_cast<std::uint64_t>(ctx.integer("target"))});
                 }
                 auto site = device ? ctx.world.locate(device->id) : std::nullopt;
                 if (!site) {
                     ctx.detail("device", std::int64_t{0});
                     return out;
                 }
                 auto [endpoint, medium] = detail::endpoint_for(ctx.world.graph(), *site);
                 out.insert(ctx.make_atom("packet", {{"type", std::string("ransomware")},
                                                     {"src", std::string(ctx.location)},
                                                     {"dst", endpoint},
                                                     {"device", static_cast<std::int64_t>(device->id.value)},
                                                     {"size", ctx.real("size")},
                                                     {"state", std::string("outbound")},
                                                     {"image", std::string{}}}));
                 ctx.detail("device", static_cast<std::int64_t>(device->id.value));
                 ctx.detail("dst", endpoint);
                 return out;
             }});

    // free_admin(binding): stamps the admin's release time.
    reg.add({"free_admin", nullptr, [](RuleContext& ctx) {
                 if (auto id = ctx.scope.first_bound(ctx.text("binding"))) ctx.update(*id, "free_at", ctx.world.now());
                 return ctx.local;
             }});

    // plan_redeploy(office, threshold, spare): sends an idle admin towards the small office with the
    // longest queue once the home queue is short enough.
    reg.add({"plan_redeploy", detail::redeploy_ready, [](RuleContext& ctx) {
                 std::string office = ctx.text("office");
                 const ResourceAtom* admin = detail::spare_home_admin(ctx, office, ctx.real("spare"));
                 std::string target = *detail::neediest_small_desk(ctx, true);
                 int left = detail::admins_present(ctx, office) - 1;
                 int away = detail::admins_total(ctx, office) - left;
                 ResourceBundle out = ctx.local;
                 out.find(admin->id)->attributes["posted"] = target;
                 ctx.relocate(admin->id, road());
                 ctx.scope.vars["admin"] = static_cast<std::int64_t>(admin->id.value);
                 ctx.scope.vars["target"] = target;
                 ctx.scope.vars["stranded"] = left == 1 && away >= 1;
                 ctx.detail("admin", admin->text("name"));
                 ctx.detail("to", target);
                 ctx.detail("pending", static_cast<std::int64_t>(ctx.world.waiting(target, "admin")));
                 return out;
             }});

    // plan_shift(office): moves an idle redeployed admin on to a small office that still waits.
    reg.add({"plan_shift", [](const RuleContext& ctx) { return detail::shiftable(ctx).has_value(); },
             [](RuleContext& ctx) {
                 auto [id, from, target] = *detail::shiftable(ctx);
                 ctx.update(id, "posted", target);
                 ctx.relocate(id, road());
                 ctx.scope.vars["admin"] = static_cast<std::int64_t>(id.value);
                 ctx.scope.vars["target"] = target;
                 ctx.detail("admin", ctx.world.find_atom(id)->text("name"));
                 ctx.detail("from", from);
                 ctx.detail("to", target);
                 return ctx.local;
             }});

    // plan_return(office): sends an admin home once the small office it helps is clean.
    reg.add({"plan_return", [](const RuleContext& ctx) { return detail::returnable(ctx).has_value(); },
             [](RuleContext& ctx) {
                 auto [id, from] = *detail::returnable(ctx);
                 ctx.update(id, "posted", helpdesk(ctx.text("office")));
                 ctx.relocate(id, road());
                 ctx.scope.vars["admin"] = static_cast<std::int64_t>(id.value);
                 ctx.scope.vars["target"] = helpdesk(ctx.text("office"));
                 ctx.detail("admin", ctx.world.find_atom(id)->text("name"));
                 ctx.detail("from", from);
                 return ctx.local;
             }});

    // plan_recall(office, threshold): brings an idle redeployed admin home when the home queue grows.
    reg.add({"plan_recall", [](const RuleContext& ctx) { return detail::recallable(ctx).has_value(); },
             [](RuleContext& ctx) {
                 auto [id, from] = *detail::recallable(ctx);
                 ctx.update(id, "posted", helpdesk(ctx.text("office")));
                 ctx.relocate(id, road());
                 ctx.scope.vars["admin"] = static_cast<std::int64_t>(id.value);
                 ctx.scope.vars["target"] = helpdesk(ctx.text("office"));
                 ctx.detail("admin", ctx.world.find_atom(id)->text("name"));
                 ctx.detail("from", from);
                 return ctx.local;
             }});
}

inline RuleRegistry registry() {
    RuleRegistry reg;
    rules::register_generic(reg);
    register_rules(reg);
    return reg;
}

// ------------------------------------------------------------------ sub-models

namespace detail {

using namespace dsl;
using models::note;
using models::quietly;

inline TermPtr wait_var(const std::string& var, TermPtr next = nil()) {
    return quietly("wait", "", {{"hours", "$" + var}}, std::move(next));
}

inline ResourcePattern packet(const std::string& type, const std::string& binding) {
    return with(with(pattern("packet", 1, binding), "type", Comparator::Eq, type), "state", Comparator::Eq,
                std::string("delivered"));
}

inline ResourcePattern admin_by_id() { return with_ref(pattern("admin", 1, "a"), "id", Comparator::Eq, "$admin"); }

inline TermPtr network_recovery() {
    return seq({
        claim(with_ref(pattern("port", 1, "port"), "medium", Comparator::Eq, "$medium"), "$site"),
        prefix(named(action("create", "$endpoint",
                            {{"kind", std::string("packet")},
                             {"attr.type", std::string("request")},
                             {"attr.src", std::string("$endpoint")},
                             {"attr.dst", datacenter()},
                             {"attr.device", std::string("$device")},
                             {"attr.size", std::string("$request_size")},
                             {"attr.state", std::string("outbound")},
                             {"attr.image", std::string("os_image")}}),
                     "packet_in")),
        claim(with_ref(packet("response", "resp"), "device", Comparator::Eq, "$device"), "$endpoint"),
        quietly("discard", "", {{"binding", std::string("resp")}}),
        wait_var("install_h"),
        release("port", "$site"),
    });
}

inline TermPtr recovery_process(const RecoveryParams& p) {
    const auto& m = p.recovery_mix;
    auto mix = std::to_string(m.usb) + "," + std::to_string(m.network) + "," + std::to_string(m.embedded) + "," +
               std::to_string(m.mixed);
    auto usb = wait_var("usb_h");
    auto mixed = when(var_is("usb_ok", true), usb,
                      wait_var("usb_h", note("usb_failed", "$site", {{"device", std::string("$device")}}, network_recovery())));
    auto work = when(var_is("option", std::string("usb")), usb,
                     when(var_is("option", std::string("embedded")), wait_var("embedded_h"),
                          when(var_is("option", std::string("network")), network_recovery(), mixed)));
    return seq({
        models::set_var("request_size", p.request_size),
        quietly("plan_ticket", "$site",
                {{"device", std::string("$device")},
                 {"mix", mix},
                 {"p_admin", p.p_needs_admin},
                 {"p_usb", p.p_usb_success},
                 {"redeploy", p.admin_redeploy_enabled},
                 {"service_time", dist_text(p.helpdesk_service_time)},
                 {"travel_time", dist_text(p.device_travel_time)},
                 {"usb_time", dist_text(p.usb_time)},
                 {"embedded_time", dist_text(p.embedded_time)},
                 {"install_time", dist_text(p.install_time)}}),
        when(var_is("travel", true),
             wait_var("travel_h", seq({move(with_ref(pattern("device"), "id", Comparator::Eq, "$device"), "$site", "$dest"),
                                       models::set_var("site", std::string("$dest")),
                                       note("device_relocated", "$site", {{"device", std::string("$device")}})}))),
        when(var_is("needs_admin", true),
             seq({claim(pattern("admin", 1, "admin"), "$desk"), wait_var("service_h"),
                  quietly("free_admin", "", {{"binding", std::string("admin")}}), release("admin", "$desk")})),
        note("recover_start", "$site",
             {{"device", std::string("$device")}, {"option", std::string("$option")},
              {"needs_admin", std::string("$needs_admin")}}),
        work,
        prefix(named(action("recovered", "$site", {{"device", std::string("$device")}}), "recover_end")),
    });
}

inline TermPtr receiver(const std::string& endpoint) {
    auto infect = prefix(named(action("infect", "$site", {{"device", std::string("$device")}}), "device_infected"),
                         spawn("recovery"));
    return seq({
        claim(packet("ransomware", "mal"), endpoint),
        quietly("var_from_binding", "", {{"binding", std::string("mal")}, {"attr", std::string("device")}, {"name", std::string("device")}}),
        quietly("discard", "", {{"binding", std::string("mal")}}),
        quietly("locate_device", "", {{"device", std::string("$device")}}),
        when(guard("infectable", "$site", {{"device", std::string("$device")}}), infect,
             note("infection_ignored", endpoint, {{"device", std::string("$device")}})),
        call("receive:" + endpoint),
    });
}

inline TermPtr redeploy(const std::string& office, int threshold, double spare) {
    return seq({
        prefix(named(action("plan_redeploy", helpdesk(office),
                            {{"office", office}, {"threshold", std::int64_t{threshold}}, {"spare", spare}}),
                     "admin_redeployed")),
        when(var_is("stranded", true), note("stranded_admin", helpdesk(office), {{"office", office}})),
        spawn("admin_travel"),
        call("redeploy:" + office),
    });
}

inline TermPtr recall(const std::string& office, int threshold) {
    return seq({
        prefix(named(action("plan_recall", "", {{"office", office}, {"threshold", std::int64_t{threshold}}}),
                     "admin_recalled")),
        spawn("admin_travel"),
        call("recall:" + office),
    });
}

inline TermPtr homecoming(const std::string& office) {
    return seq({
        prefix(named(action("plan_return", "", {{"office", office}}), "admin_returned")),
        spawn("admin_travel"),
        call("return:" + office),
    });
}

inline TermPtr shift(const std::string& office) {
    return seq({
        prefix(named(action("plan_shift", "", {{"office", office}}), "admin_redeployed")),
        spawn("admin_travel"),
        call("shift:" + office),
    });
}

inline TermPtr admin_travel(const RecoveryParams& p) {
    return delay(p.admin_travel_time, seq(move(admin_by_id(), road(), "$target"),
                                          note("admin_arrived", "$target", {{"admin", std::string("$admin")}})));
}

inline TermPtr router(const std::string& endpoint) {
    return seq({
        move(with(pattern("packet", 1, "pkt"), "state", Comparator::Eq, std::string("outbound")), endpoint, transit()),
        quietly("var_from_binding", "", {{"binding", std::string("pkt")}, {"attr", std::string("id")}, {"name", std::string("packet")}}),
        prefix(named(action("transit_plan", transit(), {{"packet", std::string("$packet")}}), "transit")),
        spawn("transfer"),
        call("route:" + endpoint),
    });
}

inline TermPtr transfer() {
    return wait_var("delay", seq(move(with_ref(pattern("packet"), "id", Comparator::Eq, "$packet"), transit(), "$dst"),
                                 prefix(named(action("deliver", "$dst", {{"packet", std::string("$packet")}}), "packet_out"))));
}

} // namespace detail

/// Physical sites with their endpoints, help desks, devices and admins; recovery and admin behaviour.
inline ModelSpec build_device_model(const RecoveryParams& p) {
    ModelSpec m;
    m.name = "device";
    auto all = sites(p);
    for (const auto& s : all) {
        AttrMap attrs{{"kind", s.kind}, {"wired", s.net.wired}, {"wireless", s.net.wireless},
                      {"has_helpdesk", is_office(s.kind)}};
        if (!s.parent.empty()) attrs["parent"] = s.parent;
        m.graph.add_node({s.name, LocationKind::Physical, attrs});
        if (is_office(s.kind))
            m.graph.add_node({helpdesk(s.name), LocationKind::Physical,
                              {{"office", s.name}, {"tier", std::string(s.kind == "large_office" ? "large" : "small")}}});
    }
    m.graph.add_node({road(), LocationKind::Abstract, {}});
    for (const auto& e : all_endpoints(p)) {
        m.graph.add_node(e);
        m.graph.add_edges_both(e.name, to_text(e.attributes.at("site")));
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) m.graph.add_edges_both(all[i].name, all[j].name);
        if (is_office(all[i].kind)) {
            m.graph.add_edges_both(all[i].name, helpdesk(all[i].name));
            m.graph.add_edges_both(helpdesk(all[i].name), road());
        }
    }

    using VT = ValueType;
    m.kinds["device"] = device_kind();
    m.kinds["packet"] = packet_kind();
    m.kinds["admin"] = {"admin", {{"name", VT::Text}, {"home", VT::Text}, {"posted", VT::Text}, {"free_at", VT::Real}}, {}};
    m.kinds["port"] = {"port", {{"medium", VT::Text}}, {}};

    std::vector<std::string> offices;
    for (const auto& s : all)
        if (is_office(s.kind)) offices.push_back(s.name);
    std::uint64_t next = 1;
    int owner = 0;
    std::size_t roaming = 0;
    for (const auto& s : all)
        for (int i = 0; i < s.devices; ++i) {
            std::string base = is_office(s.kind) ? s.name : offices[roaming++ % offices.size()];
            std::string who = p.n_employees > 0 ? "employee_" + std::to_string(owner++ % p.n_employees + 1) : std::string{};
            m.place(s.name, ResourceAtom{"device", AtomId{next}, {{"name", "device_" + std::to_string(next)},
                                                                  {"owner", who},
                                                                  {"base", base},
                                                                  {"infected", false},
                                                                  {"tickets", std::int64_t{0}}}});
            ++next;
        }
    for (const auto& s : all) {
        if (s.kind != "large_office") continue;
        for (int i = 1; i <= p.admins_per_large_office; ++i)
            m.place(helpdesk(s.name), ResourceAtom{"admin", AtomId{next++},
                                                   {{"name", s.name + ".admin_" + std::to_string(i)},
                                                    {"home", s.name},
                                                    {"posted", helpdesk(s.name)},
                                                    {"free_at", 0.0}}});
    }
    for (const auto& s : all)
        for (const auto& medium : {"wired", "wireless"}) {
            if ((std::string(medium) == "wired" ? s.net.wired : s.net.wireless) == false) continue;
            for (int i = 0; i < p.network.ports_per_endpoint; ++i)
                m.place(s.name, ResourceAtom{"port", AtomId{next++}, {{"medium", std::string(medium)}}});
        }

    m.add_process("recovery", detail::recovery_process(p));
    m.add_process("admin_travel", detail::admin_travel(p));
    m.add_process("census", models::note("organisation", "",
                                          {{"devices", std::int64_t{p.fleet.total()}},
                                           {"admins", std::int64_t{p.fleet.n_large_offices * p.admins_per_large_office}}}));
    m.startup.push_back("census");
    for (const auto& s : all)
        for (const auto& e : endpoints_of(s)) {
            m.add_process("receive:" + e, detail::receiver(e));
            m.startup.push_back("receive:" + e);
            m.interfaces.push_back({e, {"packet_out"}, {"packet_in"}});
        }
    if (p.admin_redeploy_enabled)
        for (const auto& s : all) {
            if (s.kind != "large_office") continue;
            m.add_process("redeploy:" + s.name, detail::redeploy(s.name, p.admin_redeploy_threshold, p.admin_spare_after));
            m.startup.push_back("redeploy:" + s.name);
            if (p.admin_recall_enabled) {
                m.add_process("recall:" + s.name, detail::recall(s.name, p.admin_redeploy_threshold));
                m.startup.push_back("recall:" + s.name);
            }
            m.add_process("return:" + s.name, detail::homecoming(s.name));
            m.startup.push_back("return:" + s.name);
            m.add_process("shift:" + s.name, detail::shift(s.name));
            m.startup.push_back("shift:" + s.name);
        }
    m.rules = {"noop", "note", "set_var", "create", "discard", "var_from_binding", "wait", "locate_device",
               "infectable", "infect", "plan_ticket", "recovered", "plan_redeploy", "plan_recall", "plan_shift", "plan_return", "free_admin"};
    return m;
}

/// Endpoints joined through one abstract transit location.
inline ModelSpec build_network_model(const RecoveryParams& p) {
    ModelSpec m;
    m.name = "network";
    m.graph.add_node({transit(), LocationKind::Abstract, {}});
    auto eps = all_endpoints(p);
    eps.push_back(datacenter_node(p));
    eps.push_back(internet_node(p));
    for (const auto& e : eps) {
        m.graph.add_node(e);
        m.graph.add_edges_both(e.name, transit());
        m.add_process("route:" + e.name, detail::router(e.name));
        m.startup.push_back("route:" + e.name);
        if (e.name == "internet")
            m.interfaces.push_back({e.name, {"ransomware_packet"}, {}});
        else
            m.interfaces.push_back({e.name, {"packet_in"}, {"packet_out"}});
    }
    m.kinds["packet"] = packet_kind();
    m.add_process("transfer", detail::transfer());
    m.rules = {"var_from_binding", "wait", "transit_plan", "deliver"};
    return m;
}

/// Image store answering recovery requests at the data centre.
inline ModelSpec build_server_model(const RecoveryParams& p) {
    using namespace dsl;
    ModelSpec m;
    m.name = "server";
    m.graph.add_node(datacenter_node(p));
    m.graph.add_node({"server.store", LocationKind::Logical, {}});
    m.graph.add_edges_both(datacenter(), "server.store");
    m.kinds["packet"] = packet_kind();
    m.kinds["image"] = {"image", {{"name", ValueType::Text}, {"size", ValueType::Real}}, {}};
    m.place("server.store", ResourceAtom{"image", AtomId{1}, {{"name", std::string("os_image")}, {"size", p.image_size}}});
    m.add_process("serve", seq({
                               claim(detail::packet("request", "req"), datacenter()),
                               prefix(named(action("serve_request", datacenter(),
                                                   {{"request", std::string("@req")}, {"store", std::string("server.store")}}),
                                            "response_sent")),
                               models::quietly("discard", "", {{"binding", std::string("req")}}),
                               call("serve"),
                           }));
    m.startup.push_back("serve");
    m.interfaces.push_back({datacenter(), {"packet_out"}, {"packet_in"}});
    m.rules = {"discard", "serve_request"};
    return m;
}

/// Target selection and timed injection of malicious packets from the internet.
inline ModelSpec build_ransomware_model(const RecoveryParams& p) {
    using namespace dsl;
    ModelSpec m;
    m.name = "ransomware";
    m.graph.add_node(internet_node(p));
    m.graph.add_node({"ransomware.staging", LocationKind::Abstract, {}});
    m.graph.add_edges_both("internet", "ransomware.staging");
    m.kinds["packet"] = packet_kind();
    m.kinds["attack_order"] = {"attack_order", {{"target", ValueType::Integer}, {"at", ValueType::Real}}, {}};
    auto var = [](const char* attr) {
        return models::quietly("var_from_binding", "",
                               {{"binding", std::string("order")}, {"attr", std::string(attr)}, {"name", std::string(attr)}});
    };
    m.add_process("campaign",
                  prefix(named(action("plan_attack", "ransomware.staging",
                                      {{"p", p.infection_probability},
                                       {"profile", p.severity.profile},
                                       {"scale", p.severity.scale}}),
                               "attack_planned"),
                         call("dispatch")));
    m.add_process("dispatch", when(has(pattern("attack_order"), "ransomware.staging"),
                                   seq({claim(pattern("attack_order", 1, "order"), "ransomware.staging"), var("target"),
                                        var("at"), models::quietly("discard", "", {{"binding", std::string("order")}}),
                                        spawn("injector"), call("dispatch")})));
    m.add_process("injector", models::quietly("wait_until", "", {{"t", std::string("$at")}},
                                              prefix(named(action("inject", "internet",
                                                                  {{"target", std::string("$target")}, {"size", p.malware_size}}),
                                                           "ransomware_packet"))));
    m.startup.push_back("campaign");
    m.interfaces.push_back({"internet", {}, {"ransomware_packet"}});
    m.rules = {"var_from_binding", "discard", "plan_attack", "wait_until", "inject"};
    return m;
}

inline Binding endpoint_binding(const ModelSpec& a, const ModelSpec& b) {
    Binding bind;
    for (const auto& i : b.interfaces)
        if (a.interface_at(i.location)) bind.locations.emplace_back(i.location, i.location);
    return bind;
}

inline void add_model_metrics(ModelSpec& m) {
    m.metrics = {models::counter("infections", "device_infected"),
                 models::counter("recoveries", "recover_end"),
                 models::counter("redeployments", "admin_redeployed"),
                 models::counter("stranded_episodes", "stranded_admin"),
                 models::duration("recovery_days", "device_infected", "recover_end", "device", 24.0)};
}

/// Device, network and server parts joined at their shared endpoints.
inline ModelSpec build_organisation(const RecoveryParams& p) {
    validate_params(p);
    auto device = build_device_model(p);
    auto network = build_network_model(p);
    auto dn = compose_models(device, network, endpoint_binding(device, network));
    auto server = build_server_model(p);
    auto out = compose_models(dn, server, endpoint_binding(dn, server));
    out.name = "recovery";
    return out;
}

inline ModelSpec build_recovery_model(const RecoveryParams& p) {
    auto org = build_organisation(p);
    auto rw = build_ransomware_model(p);
    auto out = compose_models(org, rw, endpoint_binding(org, rw));
    out.name = "recovery";
    add_model_metrics(out);
    return out;
}

/// The organisation with the attacker reduced to a stochastic environment at the internet edge.
inline ModelSpec build_simplified_model(const RecoveryParams& p) {
    auto out = build_organisation(p);
    EnvironmentSpec e;
    e.name = "ransomware";
    e.interface = "internet";
    double expected = p.infection_probability * p.fleet.total();
    e.inter_arrival = dist::Exponential{std::max(expected, 1e-9) / p.severity.scale};
    e.window_start = 0.0;
    e.window_end = p.severity.scale;
    e.process = "random_infection";
    e.emitted_event_types = {"ransomware_packet"};
    out.environments.push_back(e);
    out.add_process("random_infection",
                    dsl::prefix(dsl::named(dsl::action("inject", "internet", {{"target", std::string("random")}, {"size", p.malware_size}}),
                                           "")));
    out.rules.insert("inject");
    add_model_metrics(out);
    return out;
}

// ------------------------------------------------------------------ metrics

/// Pairs infection, start and end records per device in log order.
inline std::vector<RecoveryTicket> tickets(const EventLog& log, bool strict = true) {
    std::map<std::int64_t, RecoveryTicket> open;
    std::vector<RecoveryTicket> out;
    auto device = [](const EventRecord& r) { auto v = r.detail("device"); return v ? as_integer(*v) : std::int64_t{0}; };
    auto unpaired = [&](const std::string& m) {
        if (strict) throw Error(ErrorCode::UnpairedDurationEvent, m);
    };
    for (const auto& r : log) {
        if (r.type == "device_infected") {
            auto d = device(r);
            if (open.count(d)) unpaired("second infection of device " + std::to_string(d) + " during recovery");
            RecoveryTicket t;
            t.device = d;
            t.infect_time = r.t;
            open[d] = t;
        } else if (r.type == "recover_start") {
            auto it = open.find(device(r));
            if (it == open.end()) {
                unpaired("recover_start without infection for device " + std::to_string(device(r)));
                continue;
            }
            it->second.recover_start = r.t;
            it->second.recovery_option = r.detail_text("option");
            it->second.needs_admin = r.detail_text("needs_admin") == "true";
        } else if (r.type == "recover_end") {
            auto it = open.find(device(r));
            if (it == open.end()) {
                unpaired("recover_end without infection for device " + std::to_string(device(r)));
                continue;
            }
            it->second.recover_end = r.t;
            out.push_back(it->second);
            open.erase(it);
        }
    }
    if (!open.empty()) unpaired("device " + std::to_string(open.begin()->first) + " never recovered");
    return out;
}

inline MetricTable recovery_metrics(const EventLog& log) {
    auto ts = tickets(log);
    MetricTable t;
    std::vector<double> days;
    double down = 0;
    for (const auto& k : ts) {
        days.push_back((k.recover_end - k.infect_time) / 24.0);
        down += k.recover_end - k.infect_time;
    }
    t["tickets"] = static_cast<double>(ts.size());
    t["mean_recovery_days"] = stats::mean(days);
    t["median_recovery_days"] = stats::median(days);
    t["p90_recovery_days"] = stats::p90(days);

    double T = log.empty() ? 0.0 : log.back().t;
    double devices = 0, admins = 0;
    for (const auto& r : log)
        if (r.type == "organisation") {
            devices = as_real(*r.detail("devices"));
            admins = as_real(*r.detail("admins"));
            break;
        }
    t["downtime_fraction"] = T > 0 && devices > 0 ? down / (devices * T) : 0.0;

    // Admin hours spent on tickets, from claim/release pairs made by recovery instances.
    std::map<std::string, double> since;
    double busy = 0;
    for (const auto& r : log) {
        if (r.detail_text("kind") != "admin" || r.subject.rfind("recovery#", 0) != 0) continue;
        std::string key = r.subject + "/" + r.detail_text("ids");
        if (r.type == "claim") since[key] = r.t;
        else if (r.type == "release") {
            auto it = since.find(key);
            if (it != since.end()) {
                busy += r.t - it->second;
                since.erase(it);
            }
        }
    }
    t["admin_utilisation"] = T > 0 && admins > 0 ? busy / (admins * T) : 0.0;
    t["redeployments"] = static_cast<double>(count_events(log, "admin_redeployed"));
    t["recalls"] = static_cast<double>(count_events(log, "admin_recalled"));
    t["returns"] = static_cast<double>(count_events(log, "admin_returned"));
    t["stranded_episodes"] = static_cast<double>(count_events(log, "stranded_admin"));
    return t;
}

inline void add_metrics(const RunResult& r, MetricTable& out) {
    for (const auto& [k, v] : recovery_metrics(r.log)) out[k] = v;
}

// ------------------------------------------------------------------ json

inline nlohmann::json params_to_json(const RecoveryParams& p) {
    nlohmann::json avail = nlohmann::json::object();
    for (const auto& [k, a] : p.network.availability) avail[k] = {{"wired", a.wired}, {"wireless", a.wireless}};
    const auto& f = p.fleet;
    return {{"fleet",
             {{"n_large_offices", f.n_large_offices}, {"n_small_offices", f.n_small_offices},
              {"large_office", f.large_office}, {"small_office", f.small_office}, {"home", f.home},
              {"hotel", f.hotel}, {"coffee_shop", f.coffee_shop}}},
            {"admins_per_large_office", p.admins_per_large_office},
            {"admin_redeploy_enabled", p.admin_redeploy_enabled},
            {"admin_redeploy_threshold", p.admin_redeploy_threshold},
            {"admin_recall_enabled", p.admin_recall_enabled},
            {"admin_spare_after", p.admin_spare_after},
            {"infection_probability", p.infection_probability},
            {"severity", {{"profile", p.severity.profile}, {"scale", p.severity.scale}}},
            {"network",
             {{"wired_bandwidth", p.network.wired_bandwidth},
              {"wireless_bandwidth", p.network.wireless_bandwidth},
              {"datacenter_bandwidth", p.network.datacenter_bandwidth},
              {"internet_bandwidth", p.network.internet_bandwidth},
              {"ports_per_endpoint", p.network.ports_per_endpoint},
              {"availability", avail}}},
            {"image_size", p.image_size},
            {"request_size", p.request_size},
            {"malware_size", p.malware_size},
            {"recovery_mix",
             {{"usb", p.recovery_mix.usb}, {"network", p.recovery_mix.network},
              {"embedded", p.recovery_mix.embedded}, {"mixed", p.recovery_mix.mixed}}},
            {"helpdesk_service_time", io::distribution_to_json(p.helpdesk_service_time)},
            {"n_employees", p.n_employees},
            {"p_needs_admin", p.p_needs_admin},
            {"p_usb_success", p.p_usb_success},
            {"usb_time", io::distribution_to_json(p.usb_time)},
            {"embedded_time", io::distribution_to_json(p.embedded_time)},
            {"install_time", io::distribution_to_json(p.install_time)},
            {"device_travel_time", io::distribution_to_json(p.device_travel_time)},
            {"admin_travel_time", io::distribution_to_json(p.admin_travel_time)}};
}

inline RecoveryParams params_from_json(const nlohmann::json& j) {
    RecoveryParams p;
    const auto& f = j.at("fleet");
    p.fleet = {f.at("n_large_offices").get<int>(), f.at("n_small_offices").get<int>(), f.at("large_office").get<int>(),
               f.at("small_office").get<int>(),    f.at("home").get<int>(),            f.at("hotel").get<int>(),
               f.at("coffee_shop").get<int>()};
    p.admins_per_large_office = j.at("admins_per_large_office").get<int>();
    p.admin_redeploy_enabled = j.at("admin_redeploy_enabled").get<bool>();
    p.admin_redeploy_threshold = j.at("admin_redeploy_threshold").get<int>();
    p.admin_recall_enabled = j.at("admin_recall_enabled").get<bool>();
    p.admin_spare_after = j.at("admin_spare_after").get<double>();
    p.infection_probability = j.at("infection_probability").get<double>();
    p.severity = {j.at("severity").at("profile").get<std::string>(), j.at("severity").at("scale").get<double>()};
    const auto& n = j.at("network");
    p.network.wired_bandwidth = n.at("wired_bandwidth").get<double>();
    p.network.wireless_bandwidth = n.at("wireless_bandwidth").get<double>();
    p.network.datacenter_bandwidth = n.at("datacenter_bandwidth").get<double>();
    p.network.internet_bandwidth = n.at("internet_bandwidth").get<double>();
    p.network.ports_per_endpoint = n.at("ports_per_endpoint").get<int>();
    p.network.availability.clear();
    for (const auto& [k, a] : n.at("availability").items())
        p.network.availability[k] = {a.at("wired").get<bool>(), a.at("wireless").get<bool>()};
    p.image_size = j.at("image_size").get<double>();
    p.request_size = j.at("request_size").get<double>();
    p.malware_size = j.at("malware_size").get<double>();
    const auto& m = j.at("recovery_mix");
    p.recovery_mix = {m.at("usb").get<double>(), m.at("network").get<double>(), m.at("embedded").get<double>(),
                      m.at("mixed").get<double>()};
    p.helpdesk_service_time = io::distribution_from_json(j.at("helpdesk_service_time"), "recovery.helpdesk_service_time");
    p.n_employees = j.at("n_employees").get<int>();
    p.p_needs_admin = j.at("p_needs_admin").get<double>();
    p.p_usb_success = j.at("p_usb_success").get<double>();
    p.usb_time = io::distribution_from_json(j.at("usb_time"), "recovery.usb_time");
    p.embedded_time = io::distribution_from_json(j.at("embedded_time"), "recovery.embedded_time");
    p.install_time = io::distribution_from_json(j.at("install_time"), "recovery.install_time");
    p.device_travel_time = io::distribution_from_json(j.at("device_travel_time"), "recovery.device_travel_time");
    p.admin_travel_time = io::distribution_from_json(j.at("admin_travel_time"), "recovery.admin_travel_time");
    return p;
}

} // namespace metaphorsim::recovery
