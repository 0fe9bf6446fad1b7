#include "metaphorsim/harness/report.hpp"
#include "metaphorsim/harness/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace metaphorsim;
namespace fs = std::filesystem;

namespace {

const std::string kSource = METAPHORSIM_SOURCE_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int digits = 3) {
    std::ostringstream os;
    os.precision(digits);
    os << x;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("msim_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

RunResult run(const ModelSpec& m, const RuleRegistry& reg, std::uint64_t seed, double horizon) {
    RunConfig c;
    c.seed = seed;
    c.horizon = horizon;
    return run_model(m, reg, c);
}

struct BundleGen {
    std::mt19937_64 rng;
    std::uint64_t next_id = 1;
    std::vector<std::string> kinds = {"usb", "cd", "laptop", "document", "badge"};

    explicit BundleGen(std::uint64_t seed) : rng(seed) {}

    int below(int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }
    const std::string& kind() { return kinds[static_cast<std::size_t>(below(static_cast<int>(kinds.size())))]; }

    ResourceBundle bundle(int max_size = 6) {
        ResourceBundle b;
        int n = below(max_size + 1);
        for (int i = 0; i < n; ++i) {
            AttrMap attrs;
            if (below(2)) attrs["label"] = std::string(1, static_cast<char>('a' + below(3)));
            if (below(3) == 0) attrs["size"] = static_cast<std::int64_t>(below(4));
            b.insert(ResourceAtom{kind(), AtomId{next_id++}, attrs});
        }
        return b;
    }

    // Declarations are one-sided, may name a kind against itself, and may name unknown kinds.
    KindTable adversarial_table() {
        KindTable t;
        for (const auto& k : kinds) t[k] = {k, {}, {}};
        int n = below(7);
        for (int i = 0; i < n; ++i) {
            auto& entry = t[kind()];
            if (below(8) == 0) entry.incompatible.insert("ghost");
            else entry.incompatible.insert(kind());
        }
        return t;
    }
};

bool compose_fails(const ResourceBundle& a, const ResourceBundle& b, const CompatibilityRelation& rel) {
    try {
        compose_resources(a, b, rel);
        return false;
    } catch (const Error&) {
        return true;
    }
}

Outcome algebra() {
    auto t0 = Clock::now();
    BundleGen g(20240601);
    const int triples = 10000;
    for (int i = 0; i < triples; ++i) {
        auto a = g.bundle(), b = g.bundle(), c = g.bundle();
        auto ab = compose_resources(a, b);
        if (compose_resources(ab, c) != compose_resources(a, compose_resources(b, c)))
            return {false, "associativity broken at triple " + std::to_string(i)};
        if (ab != compose_resources(b, a)) return {false, "commutativity broken at triple " + std::to_string(i)};
        if (compose_resources(a, {}) != a || compose_resources({}, a) != a)
            return {false, "identity broken at triple " + std::to_string(i)};
        if (!resource_leq(a, a)) return {false, "reflexivity broken at triple " + std::to_string(i)};
        if (!resource_leq(a, ab) || !resource_leq(a, compose_resources(ab, c)))
            return {false, "composition not monotone at triple " + std::to_string(i)};
        if (resource_leq(a, b) && resource_leq(b, c) && !resource_leq(a, c))
            return {false, "transitivity broken at triple " + std::to_string(i)};
        // Sub-bundle chains make the transitivity premise non-vacuous.
        ResourceBundle sub, subsub;
        for (const auto& x : c)
            if (g.below(3)) {
                sub.insert(x);
                if (g.below(2)) subsub.insert(x);
            }
        if (!resource_leq(subsub, sub) || !resource_leq(sub, c) || !resource_leq(subsub, c))
            return {false, "sub-bundle chain broken at triple " + std::to_string(i)};
    }
    std::size_t undefined = 0;
    for (int i = 0; i < triples; ++i) {
        auto rel = CompatibilityRelation::from_kinds(g.adversarial_table());
        auto a = g.bundle(), b = g.bundle();
        if (g.below(10) == 0 && !a.empty()) b.insert(ResourceAtom{"usb", a.begin()->id, {}});
        bool ab = compose_fails(a, b, rel);
        if (ab != compose_fails(b, a, rel)) return {false, "partiality asymmetric at pair " + std::to_string(i)};
        undefined += ab;
    }
    double s = seconds_since(t0);
    if (undefined == 0) return {false, "adversarial tables never produced an undefined composition"};
    return {s < 10.0, std::to_string(triples) + " triples, " + std::to_string(undefined) + " undefined pairs, " + fmt(s) +
                          " s (budget 10 s)"};
}

Outcome determinism() {
    auto t0 = Clock::now();
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(kSource + "/scenarios")) {
        if (e.path().extension() != ".json") continue;
        auto s = harness::load_scenario(e.path().string());
        auto a = scratch("det_a"), b = scratch("det_b");
        harness::run_scenario(s, a, s.seeds.front());
        harness::run_scenario(s, b, s.seeds.front());
        auto ea = slurp(a / "events.jsonl");
        if (ea.empty()) return {false, s.id + " produced no events"};
        if (ea != slurp(b / "events.jsonl")) return {false, s.id + " event logs differ"};
        ++n;
    }
    auto s = harness::load_scenario(kSource + "/scenarios/admin_reversal.json");
    auto one = scratch("det_j1"), eight = scratch("det_j8");
    harness::sweep_scenario(s, one, 1);
    harness::sweep_scenario(s, eight, 8);
    if (slurp(one / "report.csv") != slurp(eight / "report.csv")) return {false, "report.csv differs between 1 and 8 jobs"};
    double secs = seconds_since(t0);
    return {secs < 120.0, std::to_string(n) + " scenarios byte-identical, sweep jobs 1 == 8, " + fmt(secs) + " s (budget 120 s)"};
}

LocalProperty random_property(std::mt19937_64& g, const std::vector<std::string>& types, const Scope& scope) {
    LocalProperty p;
    p.scope = scope;
    auto pick = [&] { return types[g() % types.size()]; };
    switch (g() % 4) {
    case 0:
        p.type = LocalProperty::Type::Absence;
        p.event_type = pick();
        break;
    case 1:
        p.type = LocalProperty::Type::Count;
        p.event_type = pick();
        p.comparator = static_cast<Comparator>(g() % 6);
        p.value = static_cast<double>(g() % 20);
        break;
    case 2:
        p.type = LocalProperty::Type::Ordering;
        p.before = pick();
        p.after = pick();
        p.key = g() % 2 ? "subject" : "patient";
        break;
    default:
        p.type = LocalProperty::Type::DurationBound;
        p.start = pick();
        p.end = pick();
        p.comparator = static_cast<Comparator>(g() % 6);
        p.value = 0.1 * static_cast<double>(g() % 30);
        p.key = g() % 2 ? "subject" : "patient";
    }
    return p;
}

Outcome local_reasoning() {
    auto tp = trauma::default_params();
    tp.arrivals = trauma::synthetic_surge();
    auto m = trauma::build_model(tp);
    auto log = run(m, trauma::registry(), 17, 48.0).log;
    std::vector<std::string> locs, procs, types;
    for (const auto& [n, node] : m.graph.nodes()) locs.push_back(n);
    for (const auto& [n, proc] : m.processes) procs.push_back(n);
    for (const auto& t : event_types(m)) types.push_back(t);
    std::mt19937_64 g(31337);
    std::size_t failing = 0;
    for (int i = 0; i < 100; ++i) {
        Scope outer;
        for (const auto& l : locs)
            if (g() % 2) outer.locations.insert(l);
        for (const auto& p : procs)
            if (g() % 2) outer.processes.insert(p);
        if (outer.empty()) outer.locations.insert(locs.front());
        Scope inner;
        for (const auto& l : outer.locations)
            if (g() % 2) inner.locations.insert(l);
        for (const auto& p : outer.processes)
            if (g() % 2) inner.processes.insert(p);
        if (inner.empty()) inner = outer;
        if (!inner.subset_of(outer)) return {false, "generator produced a non-subset scope"};
        auto p = random_property(g, types, inner);
        auto full = check_local_property(log, p);
        auto projected = check_local_property(project_trace(log, outer), p);
        if (full.holds != projected.holds || full.witness != projected.witness)
            return {false, "pair " + std::to_string(i) + " disagrees: " + full.message + " vs " + projected.message};
        failing += !full.holds;
    }
    return {true, "100 pairs agree on " + std::to_string(log.size()) + " records (" + std::to_string(failing) +
                      " failing verdicts among them)"};
}

std::vector<LocalProperty> dag_properties(const trauma::TraumaParams& p) {
    auto m = trauma::build_model(p);
    std::vector<LocalProperty> out;
    for (const auto& pr : p.procedures)
        for (const auto& d : pr.depends_on) {
            LocalProperty lp;
            lp.name = d + " before " + pr.name;
            lp.type = LocalProperty::Type::Ordering;
            lp.before = d + "_end";
            lp.after = pr.name + "_start";
            lp.key = "patient";
            for (const auto& [n, node] : m.graph.nodes()) lp.scope.locations.insert(n);
            out.push_back(lp);
        }
    return out;
}

Outcome substitution() {
    auto p = trauma::default_params();
    auto host = trauma::build_model(p);
    auto m = substitute_environment(host, "patient_arrival", trauma::build_triage_stub(p, 2.0),
                                    Binding{{{"entrance", "entrance"}}, {}});
    auto reg = trauma::registry();
    auto diags = validate_model(m, reg);
    if (!diags.empty()) return {false, "composed model invalid: " + format(diags.front())};
    std::vector<LocalProperty> dag;
    for (auto lp : dag_properties(p)) {
        lp.scope.locations.clear();
        for (const auto& [n, node] : m.graph.nodes()) lp.scope.locations.insert(n);
        dag.push_back(lp);
    }
    std::size_t arrivals = 0, airway = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto r = run(m, reg, seed, 24.0);
        for (const auto& lp : dag)
            if (auto v = check_local_property(r.log, lp); !v.holds) return {false, "seed " + std::to_string(seed) + ": " + v.message};
        arrivals += count_events(r.log, "patient_arrival");
        airway += count_events(r.log, "advanced_airway_start");
    }
    if (arrivals == 0) return {false, "triage stub admitted no patients"};
    return {true, std::to_string(dag.size()) + " dependency orderings hold over 20 runs, " + std::to_string(arrivals) +
                      " arrivals, " + std::to_string(airway) + " advanced airways"};
}

Outcome dataloss_forced() {
    auto t0 = Clock::now();
    auto reg = dataloss::registry();
    dataloss::DataLossParams challenged;
    challenged.p_challenge_employee = 1.0;
    challenged.p_challenge_guard = 1.0;
    // Make attempts frequent so the zero is not vacuous.
    challenged.p_forget_badge = 0.5;
    challenged.p_tailgate_given_forgot = 1.0;
    auto mc = dataloss::build_model(challenged);
    dataloss::DataLossParams safe_transit;
    safe_transit.p_lose_device_transit = 0.0;
    auto mt = dataloss::build_model(safe_transit);
    std::size_t attempts = 0, successes = 0, losses = 0, journeys = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto a = run(mc, reg, seed, 8.0);
        attempts += count_events(a.log, "tailgate_attempt");
        successes += count_events(a.log, "tailgate_success");
        auto b = run(mt, reg, seed, 8.0);
        losses += count_events(b.log, "device_lost_transit");
        for (const auto& e : b.log)
            if (e.type == "move" && (e.detail_text("to") == "public_transport" || e.detail_text("to") == "private_transport")) ++journeys;
    }
    double secs = seconds_since(t0);
    std::string detail = std::to_string(successes) + " tailgate_success in " + std::to_string(attempts) + " attempts, " +
                         std::to_string(losses) + " transit losses in " + std::to_string(journeys) + " journeys, " +
                         fmt(secs) + " s (budget 60 s)";
    return {successes == 0 && losses == 0 && attempts > 0 && journeys > 0 && secs < 60.0, detail};
}

Outcome trauma_dag() {
    std::mt19937_64 g(2023);
    std::uniform_real_distribution<double> rate(0.2, 6.0), span(1.0, 10.0);
    auto reg = trauma::registry();
    std::size_t violations = 0, airway = 0, patients = 0;
    std::string first;
    for (int i = 0; i < 500; ++i) {
        auto p = trauma::default_params();
        p.arrivals.clear();
        double t = 0;
        for (int k = 0, n = 1 + static_cast<int>(g() % 3); k < n; ++k) {
            double len = span(g);
            p.arrivals.push_back({t, t + len, rate(g)});
            t += len + span(g) / 2;
        }
        if (i % 5 == 0) p.roster = trauma::night_roster(), p.roster_name = "night";
        p.n_bays = 1 + static_cast<int>(g() % 4);
        auto r = run(trauma::build_model(p), reg, static_cast<std::uint64_t>(i) + 1, 48.0);
        for (const auto& lp : dag_properties(p)) {
            auto v = check_local_property(r.log, lp);
            if (!v.holds) {
                violations += v.witness.empty() ? 1 : v.witness.size();
                if (first.empty()) first = "run " + std::to_string(i) + ": " + v.message;
            }
        }
        airway += count_events(r.log, "advanced_airway_start");
        patients += count_events(r.log, "patient_arrival");
    }
    if (violations) return {false, std::to_string(violations) + " violations; " + first};
    return {airway > 0, "0 violations over 500 runs, " + std::to_string(patients) + " patients, " + std::to_string(airway) +
                            " advanced airways"};
}

Outcome desk_sweep() {
    auto t0 = Clock::now();
    auto s = harness::load_scenario(kSource + "/scenarios/recovery_desk_sweep.json");
    auto d = scratch("desk");
    auto sum = harness::sweep_scenario(s, d, std::max(1u, std::thread::hardware_concurrency()));
    double secs = seconds_since(t0);
    auto rows = harness::read_table(d / "report.csv").rows.size();
    std::string detail = std::to_string(sum.cells) + " cells x " + std::to_string(s.seeds.size()) + " seeds = " +
                         std::to_string(rows) + " rows, " + std::to_string(sum.failures) + " failures, " + fmt(secs, 4) +
                         " s (budget 1800 s)";
    return {sum.cells <= 180 && rows == sum.runs && sum.failures == 0 && secs < 1800.0, detail};
}

Outcome recovery_trend() {
    auto reg = recovery::registry();
    std::vector<double> xs, ys;
    std::vector<std::string> means;
    for (double q : {0.1, 0.5, 0.9}) {
        recovery::RecoveryParams p;
        p.infection_probability = q;
        auto m = recovery::build_recovery_model(p);
        double sum = 0;
        for (std::uint64_t seed = 1; seed <= 200; ++seed) {
            double y = recovery::recovery_metrics(run(m, reg, 7000 + seed, 2000.0).log).at("mean_recovery_days");
            xs.push_back(q);
            ys.push_back(y);
            sum += y;
        }
        means.push_back(fmt(sum / 200));
    }
    auto t = stats::trend_test(xs, ys);
    return {t.p_increasing < 0.05, "means " + means[0] + " / " + means[1] + " / " + means[2] + " days, slope " + fmt(t.slope) +
                                       ", p = " + fmt(t.p_increasing)};
}

Outcome admin_reversal() {
    auto s = harness::load_scenario(kSource + "/scenarios/admin_reversal.json");
    auto d = scratch("reversal");
    harness::sweep_scenario(s, d, std::max(1u, std::thread::hardware_concurrency()));
    auto t = harness::read_table(d / "report.csv");
    auto agg = harness::aggregate(t, {"admins_per_large_office"});
    auto key = agg.column("admins_per_large_office");
    auto mean = agg.column("mean_recovery_days");
    std::map<std::string, double> by;
    for (const auto& r : agg.rows) by[r[key]] = std::stod(r[mean]);
    double stranded = 0;
    auto sc = t.column("stranded_episodes");
    for (const auto& r : t.rows) stranded += std::stod(r[sc]);
    if (!by.count("2") || !by.count("3")) return {false, "sweep lacks the 2 and 3 admin cells"};
    return {by["2"] < by["3"] && stranded >= 1,
            "mean days 2 admins = " + fmt(by["2"], 4) + ", 3 admins = " + fmt(by["3"], 4) + ", stranded episodes " +
                fmt(stranded)};
}

Outcome surge() {
    std::vector<std::string> problems;
    std::size_t comparisons = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::size_t last = 0;
        for (int bays = 1; bays <= 4; ++bays) {
            auto p = trauma::default_params();
            p.n_bays = bays;
            auto c = trauma::surge_capacity(p, {seed}).capacity;
            if (c < last) problems.push_back("seed " + std::to_string(seed) + ": " + std::to_string(bays) + " bays lowered capacity");
            last = c;
            ++comparisons;
        }
        // Staff: grow the night roster one member at a time towards the day roster.
        auto night = trauma::night_roster();
        std::set<std::string> have;
        for (const auto& s : night) have.insert(s.id);
        std::vector<trauma::StaffSpec> roster = night;
        auto p = trauma::default_params();
        p.n_bays = 6;
        p.roster = roster;
        p.roster_name = "night";
        last = trauma::surge_capacity(p, {seed}).capacity;
        std::size_t night_cap = last;
        for (const auto& s : trauma::day_roster()) {
            if (have.count(s.id)) continue;
            roster.push_back(s);
            p.roster = roster;
            p.roster_name = "custom";
            auto c = trauma::surge_capacity(p, {seed}).capacity;
            if (c < last) problems.push_back("seed " + std::to_string(seed) + ": adding " + s.id + " lowered capacity");
            last = c;
            ++comparisons;
        }
        auto day = trauma::default_params();
        day.n_bays = 6;
        auto day_cap = trauma::surge_capacity(day, {seed}).capacity;
        if (day_cap < night_cap) problems.push_back("seed " + std::to_string(seed) + ": day below night");
        ++comparisons;
    }
    for (const auto& s : trauma::night_roster()) {
        bool found = false;
        for (const auto& d : trauma::day_roster()) found |= d.id == s.id && d.skills == s.skills;
        if (!found) problems.push_back("day roster is not a superset of night (" + s.id + ")");
    }
    if (!problems.empty()) return {false, problems.front() + " (" + std::to_string(problems.size()) + " problems)"};
    return {true, std::to_string(comparisons) + " paired comparisons, none decreasing"};
}

Outcome calibration() {
    std::string detail;
    bool ok = true;
    for (double lambda : {0.1, 1.0, 10.0}) {
        RngStream s(12345, "calibration/" + std::to_string(lambda));
        const int n = 100000;
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
            double x = sample(dist::Exponential{lambda}, s);
            sum += x;
            sq += x * x;
        }
        double mean = sum / n;
        double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
        double se = sd / std::sqrt(static_cast<double>(n));
        double z = (mean - 1.0 / lambda) / se;
        ok = ok && std::abs(z) <= 3.0;
        detail += (detail.empty() ? "" : ", ") + std::string("rate ") + fmt(lambda) + ": mean " + fmt(mean, 5) + " (" + fmt(z, 2) + " SE)";
    }
    return {ok, detail};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"algebra laws", algebra},
        {"determinism", determinism},
        {"local reasoning soundness", local_reasoning},
        {"triage substitution", substitution},
        {"data-loss forced branches", dataloss_forced},
        {"trauma dependency ordering", trauma_dag},
        {"recovery desk-scale sweep", desk_sweep},
        {"recovery duration trend", recovery_trend},
        {"admin reversal", admin_reversal},
        {"surge capacity ordering", surge},
        {"exponential calibration", calibration},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        auto t0 = Clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(t0)) << " s]"
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
