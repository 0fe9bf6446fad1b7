#include "metaphorsim/harness/report.hpp"
#include "metaphorsim/harness/runner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace metaphorsim;
namespace fs = std::filesystem;

namespace {

const std::string kSource = METAPHORSIM_SOURCE_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("msim_harness_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

harness::Scenario small_sweep() {
    return harness::parse_scenario(R"({
      "model": "recovery",
      "horizon": 300,
      "seeds": {"base": 3, "count": 5},
      "params": {"recovery.fleet.large_office": 4, "recovery.fleet.small_office": 2, "recovery.fleet.home": 2,
                 "recovery.fleet.hotel": 1, "recovery.fleet.coffee_shop": 1},
      "sweep": [
        {"param": "recovery.infection_probability", "values": [0.2, 0.5, 0.8]},
        {"param": "recovery.admins_per_large_office", "values": [1, 2, 3]}
      ],
      "properties": [{"name": "some_transit", "type": "count", "event": "transit", "op": ">=", "value": 0,
                      "scope": {"locations": ["network.transit"]}}]
    })", "/tmp/small_sweep.json");
}

int cli(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(METAPHORSIM_CLI) + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Scenario, ShippedFilesValidate) {
    for (const auto& e : fs::directory_iterator(kSource + "/scenarios")) {
        if (e.path().extension() != ".json") continue;
        auto s = harness::load_scenario(e.path().string());
        EXPECT_TRUE(harness::validate_scenario(s).empty()) << e.path();
    }
}

TEST(Scenario, SeedForms) {
    auto a = harness::parse_scenario(R"({"model": "trauma", "horizon": 1, "seeds": [4, 9]})");
    EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{4, 9}));
    auto b = harness::parse_scenario(R"({"model": "trauma", "horizon": 1, "seeds": {"base": 10, "count": 3}})");
    EXPECT_EQ(b.seeds, (std::vector<std::uint64_t>{10, 11, 12}));
}

TEST(Scenario, ParseErrors) {
    auto code = [](std::string_view text) {
        try {
            harness::parse_scenario(text);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InvalidParameter;
    };
    EXPECT_EQ(code(""), ErrorCode::ParseError);
    EXPECT_EQ(code("{\"model\": \"trauma\",\n \"horizon\": }"), ErrorCode::ParseError);
    EXPECT_EQ(code(R"({"horizon": 1})"), ErrorCode::ParseError);
    EXPECT_EQ(code(R"({"model": "trauma", "horizon": 1, "colour": 2})"), ErrorCode::ParseError);
    try {
        harness::parse_scenario("{\n  \"model\": ,\n}", "bad.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("bad.json:2:"), std::string::npos) << e.what();
    }
}

TEST(Scenario, UnknownParameterSuggestion) {
    auto s = harness::parse_scenario(R"({"model": "recovery", "horizon": 10, "params": {"recovery.admns": 2}})");
    auto d = harness::validate_scenario(s);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].rfind("UnknownParameter", 0), 0u) << d[0];
    EXPECT_NE(d[0].find("recovery.admins_per_large_office"), std::string::npos) << d[0];
}

TEST(Scenario, CapIsEnforced) {
    auto s = small_sweep();
    s.cap = 44;
    auto d = harness::validate_scenario(s);
    ASSERT_FALSE(d.empty());
    EXPECT_EQ(d[0].rfind("InvalidParameter", 0), 0u);
    EXPECT_THROW(harness::sweep_scenario(s, scratch("cap"), 1), Error);
}

TEST(Scenario, GridOrder) {
    auto g = harness::grid(small_sweep());
    ASSERT_EQ(g.size(), 9u);
    EXPECT_EQ(g[0][0].second, 0.2);
    EXPECT_EQ(g[0][1].second, 1);
    EXPECT_EQ(g[1][1].second, 2);
    EXPECT_EQ(g[3][0].second, 0.5);
}

TEST(Run, SameSeedSameBytes) {
    auto s = harness::load_scenario(kSource + "/scenarios/trauma_synthetic_surge.json");
    auto a = scratch("run_a"), b = scratch("run_b");
    harness::run_scenario(s, a, 2);
    harness::run_scenario(s, b, 2);
    auto ea = slurp(a / "events.jsonl");
    EXPECT_FALSE(ea.empty());
    EXPECT_EQ(ea, slurp(b / "events.jsonl"));
    EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
    EXPECT_EQ(slurp(a / "properties.csv"), slurp(b / "properties.csv"));
}

TEST(Run, TraumaDagProperty) {
    auto s = harness::load_scenario(kSource + "/scenarios/trauma_synthetic_surge.json");
    auto d = scratch("dag");
    harness::run_scenario(s, d, 1);
    auto t = harness::read_table(d / "properties.csv");
    bool found = false;
    for (const auto& r : t.rows)
        if (r[0] == "dag_order") {
            found = true;
            EXPECT_EQ(r[1], "holds");
        }
    EXPECT_TRUE(found);
    EXPECT_NE(slurp(d / "properties.csv").find("\ndag_order,holds,"), std::string::npos);
}

TEST(Run, HorizonZero) {
    auto s = harness::load_scenario(kSource + "/scenarios/recovery_baseline.json");
    s.horizon = 0;
    auto d = scratch("h0");
    harness::run_scenario(s, d);
    EXPECT_EQ(slurp(d / "events.jsonl"), "");
    auto m = harness::read_table(d / "metrics.csv");
    EXPECT_TRUE(m.rows.empty());
    EXPECT_EQ((std::vector<std::string>(m.header.begin(), m.header.begin() + 3)),
              (std::vector<std::string>{"scenario", "cell", "seed"}));
}

TEST(Run, MetricsHeader) {
    auto s = harness::load_scenario(kSource + "/scenarios/dataloss_default.json");
    auto d = scratch("mh");
    auto runs = harness::run_scenario(s, d, 5);
    ASSERT_EQ(runs.size(), 1u);
    auto m = harness::read_table(d / "metrics.csv");
    ASSERT_EQ(m.rows.size(), 1u);
    EXPECT_EQ(m.rows[0][0], "dataloss_default");
    EXPECT_EQ(m.rows[0][2], "5");
    EXPECT_NO_THROW(m.column("documents_lost"));
}

TEST(Sweep, RowCountAndParallelism) {
    auto s = small_sweep();
    auto one = scratch("j1"), eight = scratch("j8");
    auto sum = harness::sweep_scenario(s, one, 1);
    harness::sweep_scenario(s, eight, 8);
    EXPECT_EQ(sum.cells, 9u);
    EXPECT_EQ(sum.runs, 45u);
    EXPECT_EQ(sum.failures, 0u);
    auto t = harness::read_table(one / "report.csv");
    EXPECT_EQ(t.rows.size(), 45u);
    for (const char* f : {"report.csv", "cells.csv", "metrics.csv", "properties.csv", "failures.csv"})
        EXPECT_EQ(slurp(one / f), slurp(eight / f)) << f;
    EXPECT_EQ(t.header[0], "scenario");
    EXPECT_EQ(t.header[2], "infection_probability");
    EXPECT_EQ(t.header[3], "admins_per_large_office");
    EXPECT_EQ(t.header[4], "seed");
    EXPECT_EQ(t.header.back(), "property.some_transit");
    auto cells = harness::read_table(one / "cells.csv");
    EXPECT_EQ(cells.rows.size(), 9u);
}

TEST(Sweep, FailuresAreRecorded) {
    auto s = small_sweep();
    s.sweep[0].values = {0.5, 1.5};
    s.seeds = {1, 2};
    auto d = scratch("fail");
    auto sum = harness::sweep_scenario(s, d, 2);
    EXPECT_EQ(sum.failures, 6u);
    auto f = harness::read_table(d / "failures.csv");
    EXPECT_EQ(f.rows.size(), 6u);
    EXPECT_EQ(harness::read_table(d / "report.csv").rows.size(), sum.runs - sum.failures);
}

TEST(Report, GroupMeansMatchRecomputation) {
    auto s = small_sweep();
    auto d = scratch("agg");
    harness::sweep_scenario(s, d, 2);
    auto t = harness::read_table(d / "report.csv");
    auto agg = harness::aggregate(t, {"infection_probability"});
    ASSERT_EQ(agg.rows.size(), 3u);
    auto key = t.column("infection_probability");
    for (const char* metric : {"mean_recovery_days", "tickets", "downtime_fraction"}) {
        auto c = t.column(metric);
        auto ac = agg.column(metric);
        for (const auto& row : agg.rows) {
            double sum = 0;
            int n = 0;
            for (const auto& r : t.rows)
                if (r[key] == row[0] && !r[c].empty()) {
                    sum += std::stod(r[c]);
                    ++n;
                }
            ASSERT_GT(n, 0);
            EXPECT_NEAR(std::stod(row[ac]), sum / n, 1e-9) << metric << " @ " << row[0];
        }
    }
    for (const auto& row : agg.rows) EXPECT_EQ(row[agg.column("runs")], "15");
}

TEST(Report, NoGroupingIsOneRow) {
    harness::Table t{{"scenario", "cell", "seed", "x"}, {{"s", "0", "1", "1"}, {"s", "0", "2", "2"}, {"s", "1", "1", "6"}}};
    auto agg = harness::aggregate(t, {});
    ASSERT_EQ(agg.rows.size(), 1u);
    EXPECT_EQ(agg.header, (std::vector<std::string>{"runs", "x", "x_median", "x_p90"}));
    EXPECT_EQ(agg.rows[0][0], "3");
    EXPECT_DOUBLE_EQ(std::stod(agg.rows[0][1]), 3.0);
    EXPECT_DOUBLE_EQ(std::stod(agg.rows[0][2]), 2.0);
}

TEST(Report, UnknownColumn) {
    harness::Table t{{"scenario", "cell", "seed", "x"}, {{"s", "0", "1", "1"}}};
    try {
        harness::aggregate(t, {"y"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownColumn);
    }
}

TEST(Report, NonNumericColumnsAreSkipped) {
    harness::Table t{{"scenario", "cell", "seed", "p", "property.q"}, {{"s", "0", "1", "1", "holds"}}};
    auto agg = harness::aggregate(t, {});
    EXPECT_EQ(agg.header, (std::vector<std::string>{"runs", "p", "p_median", "p_p90"}));
}

TEST(Csv, RoundTrip) {
    std::ostringstream os;
    csv::write_row(os, {"a", "b,c", "say \"hi\"", ""});
    std::istringstream in(os.str());
    auto rows = csv::read(in);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "say \"hi\"", ""}));
    for (double x : {0.1, 1.0 / 3.0, 1e-12, 12345.678, -2.5})
        EXPECT_EQ(*csv::parse_number(csv::number(x)), x);
}

TEST(Cli, ExitCodes) {
    auto d = scratch("cli");
    EXPECT_EQ(cli("validate " + kSource + "/scenarios/recovery_baseline.json", d / "ok.txt"), 0);

    std::ofstream(d / "typo.json") << R"({"model": "recovery", "horizon": 10, "params": {"recovery.admns": 2}})";
    EXPECT_EQ(cli("validate " + (d / "typo.json").string(), d / "typo.txt"), 1);
    auto typo = slurp(d / "typo.txt");
    EXPECT_NE(typo.find("UnknownParameter"), std::string::npos) << typo;
    EXPECT_NE(typo.find("did you mean"), std::string::npos) << typo;

    std::ofstream(d / "empty.json") << "";
    EXPECT_EQ(cli("validate " + (d / "empty.json").string(), d / "empty.txt"), 2);
    EXPECT_NE(slurp(d / "empty.txt").find("ParseError"), std::string::npos);

    EXPECT_EQ(cli("report " + (d / "nowhere").string(), d / "report.txt"), 2);
}

TEST(Cli, RunAndReport) {
    auto d = scratch("cli_run");
    std::ofstream(d / "tiny.json") << R"({"model": "recovery", "horizon": 200, "seeds": [1, 2],
      "params": {"recovery.fleet.large_office": 3, "recovery.fleet.small_office": 2},
      "sweep": [{"param": "recovery.infection_probability", "values": [0.3, 0.6]}]})";
    EXPECT_EQ(cli("run " + (d / "tiny.json").string() + " --seed 4 --out " + (d / "run").string(), d / "run.txt"), 0);
    EXPECT_TRUE(fs::exists(d / "run" / "events.jsonl"));
    EXPECT_EQ(cli("sweep " + (d / "tiny.json").string() + " --jobs 2 --out " + (d / "sw").string(), d / "sw.txt"), 0);
    EXPECT_EQ(harness::read_table(d / "sw" / "report.csv").rows.size(), 4u);
    EXPECT_EQ(cli("report " + (d / "sw").string() + " --group-by infection_probability", d / "rep.txt"), 0);
    std::istringstream in(slurp(d / "rep.txt"));
    EXPECT_EQ(csv::read(in).size(), 3u);
    EXPECT_EQ(cli("report " + (d / "sw").string() + " --group-by nonsense", d / "bad.txt"), 2);
    EXPECT_NE(slurp(d / "bad.txt").find("UnknownColumn"), std::string::npos);
}
