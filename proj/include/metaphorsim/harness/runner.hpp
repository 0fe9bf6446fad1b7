#pragma once

#include "csv.hpp"
#include "scenario.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace metaphorsim::harness {

struct PropertyResult {
    std::string name;
    bool holds = true;
    std::string message;
};

struct CellRun {
    std::size_t cell = 0;
    std::uint64_t seed = 0;
    bool ran = false;  // false when the horizon admits no events
    MetricTable metrics;
    std::vector<PropertyResult> properties;
    EventLog log;
    std::string error;  // set when the run failed
};

inline std::string cell_value(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return csv::number(v.get<double>());
    return v.dump();
}

/// Axis paths without the leading model name, used as report column names.
inline std::vector<std::string> axis_columns(const Scenario& s) {
    std::vector<std::string> out;
    for (const auto& a : s.sweep) {
        auto dot = a.path.find('.');
        out.push_back(dot == std::string::npos ? a.path : a.path.substr(dot + 1));
    }
    return out;
}

/// Builds and executes one (cell, seed) pair; failures are captured, not thrown.
inline CellRun execute(const Scenario& s, const std::vector<std::pair<std::string, json>>& cell, std::size_t index,
                       std::uint64_t seed, bool keep_log) {
    CellRun out;
    out.cell = index;
    out.seed = seed;
    try {
        auto built = build_model(s, resolve_params(s, cell));
        auto props = scenario_properties(s, built.model);
        RunConfig cfg;
        cfg.seed = seed;
        cfg.horizon = s.horizon;
        RunResult r = run_model(built.model, built.registry, cfg);
        if (r.end_reason == "deadlock" || r.end_reason == "event_limit")
            throw Error(ErrorCode::Runtime, "run ended by " + r.end_reason + " at t=" + format_real(r.end_time));
        out.ran = !r.end_reason.empty();
        out.metrics = r.metrics;
        if (built.extra_metrics && out.ran) built.extra_metrics(r, out.metrics);
        for (const auto& p : props) {
            auto v = check_local_property(r.log, p);
            out.properties.push_back({p.name, v.holds, v.message});
        }
        if (keep_log) out.log = std::move(r.log);
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw Error(ErrorCode::Runtime, "cannot write " + (dir / name).string());
    return os;
}

inline std::vector<std::string> metric_columns(const std::vector<CellRun>& runs) {
    std::set<std::string> names;
    for (const auto& r : runs)
        for (const auto& [k, v] : r.metrics) names.insert(k);
    return {names.begin(), names.end()};
}

inline void write_metrics(std::ostream& os, const Scenario& s, const std::vector<CellRun>& runs,
                          const std::vector<std::string>& cols) {
    std::vector<std::string> header = {"scenario", "cell", "seed"};
    header.insert(header.end(), cols.begin(), cols.end());
    csv::write_row(os, header);
    for (const auto& r : runs) {
        if (!r.ran || !r.error.empty()) continue;
        std::vector<std::string> row = {s.id, std::to_string(r.cell), std::to_string(r.seed)};
        for (const auto& c : cols) {
            auto it = r.metrics.find(c);
            row.push_back(it == r.metrics.end() ? "" : csv::number(it->second));
        }
        csv::write_row(os, row);
    }
}

inline void write_properties(std::ostream& os, const Scenario& s, const std::vector<CellRun>& runs) {
    csv::write_row(os, {"property", "verdict", "scenario", "cell", "seed", "message"});
    for (const auto& r : runs)
        for (const auto& p : r.properties)
            csv::write_row(os, {p.name, p.holds ? "holds" : "fails", s.id, std::to_string(r.cell), std::to_string(r.seed), p.message});
}

inline void write_events(std::ostream& os, const std::vector<CellRun>& runs) {
    for (const auto& r : runs)
        for (const auto& e : r.log) {
            nlohmann::ordered_json j;
            j["seed"] = r.seed;
            auto rec = record_to_json(e);
            for (auto& [k, v] : rec.items()) j[k] = std::move(v);
            os << j.dump() << '\n';
        }
}

} // namespace detail

/// Mean of each metric over the runs, for the console summary.
inline void print_summary(std::ostream& os, const std::vector<CellRun>& runs) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    std::size_t ok = 0;
    for (const auto& r : runs) {
        if (!r.error.empty() || !r.ran) continue;
        ++ok;
        for (const auto& [k, v] : r.metrics) acc[k].first += v, ++acc[k].second;
    }
    os << "runs: " << ok << "/" << runs.size() << '\n';
    std::size_t width = 6;
    for (const auto& [k, v] : acc) width = std::max(width, k.size());
    for (const auto& [k, v] : acc) {
        os << k << std::string(width - k.size() + 2, ' ') << format_real(v.first / static_cast<double>(v.second)) << '\n';
    }
    for (const auto& r : runs)
        for (const auto& p : r.properties)
            if (!p.holds) os << "property " << p.name << " fails (seed " << r.seed << "): " << p.message << '\n';
    for (const auto& r : runs)
        if (!r.error.empty()) os << "seed " << r.seed << " failed: " << r.error << '\n';
}

/// Runs the scenario's base parameters (sweep ignored) for each seed and writes
/// events.jsonl, metrics.csv and properties.csv into `out_dir`.
inline std::vector<CellRun> run_scenario(const Scenario& s, const std::filesystem::path& out_dir,
                                         std::optional<std::uint64_t> seed = std::nullopt) {
    std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : s.seeds;
    std::vector<CellRun> runs;
    for (auto sd : seeds) runs.push_back(execute(s, {}, 0, sd, true));
    {
        auto os = detail::open_out(out_dir, "events.jsonl");
        detail::write_events(os, runs);
    }
    {
        auto os = detail::open_out(out_dir, "metrics.csv");
        detail::write_metrics(os, s, runs, detail::metric_columns(runs));
    }
    {
        auto os = detail::open_out(out_dir, "properties.csv");
        detail::write_properties(os, s, runs);
    }
    return runs;
}

struct SweepSummary {
    std::size_t cells = 0;
    std::size_t runs = 0;
    std::size_t failures = 0;
};

/// Executes every (cell, seed) pair on `jobs` threads and writes report.csv, cells.csv,
/// metrics.csv, properties.csv and failures.csv. Output bytes do not depend on `jobs`.
inline SweepSummary sweep_scenario(const Scenario& s, const std::filesystem::path& out_dir, unsigned jobs = 1) {
    auto cells = grid(s);
    std::size_t total = cells.size() * s.seeds.size();
    if (total > s.cap)
        throw Error(ErrorCode::InvalidParameter,
                    std::to_string(total) + " runs exceed the cap of " + std::to_string(s.cap));
    std::vector<CellRun> runs(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < total;) {
            std::size_t c = i / s.seeds.size();
            runs[i] = execute(s, cells[c], c, s.seeds[i % s.seeds.size()], false);
        }
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(total, 1))));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    auto cols = detail::metric_columns(runs);
    auto axes = axis_columns(s);
    std::vector<std::string> prop_names;
    for (const auto& p : s.properties) prop_names.push_back(p.value("name", std::string("property")));

    SweepSummary sum{cells.size(), total, 0};
    {
        auto os = detail::open_out(out_dir, "report.csv");
        std::vector<std::string> header = {"scenario", "cell"};
        header.insert(header.end(), axes.begin(), axes.end());
        header.push_back("seed");
        header.insert(header.end(), cols.begin(), cols.end());
        for (const auto& p : prop_names) header.push_back("property." + p);
        csv::write_row(os, header);
        for (const auto& r : runs) {
            if (!r.error.empty()) continue;
            std::vector<std::string> row = {s.id, std::to_string(r.cell)};
            for (const auto& [path, v] : cells[r.cell]) row.push_back(cell_value(v));
            row.push_back(std::to_string(r.seed));
            for (const auto& c : cols) {
                auto it = r.metrics.find(c);
                row.push_back(it == r.metrics.end() ? "" : csv::number(it->second));
            }
            for (const auto& p : r.properties) row.push_back(p.holds ? "holds" : "fails");
            csv::write_row(os, row);
        }
    }
    {
        auto os = detail::open_out(out_dir, "cells.csv");
        std::vector<std::string> header = {"scenario", "cell"};
        header.insert(header.end(), axes.begin(), axes.end());
        header.push_back("runs");
        header.insert(header.end(), cols.begin(), cols.end());
        csv::write_row(os, header);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::vector<double> acc(cols.size(), 0.0);
            std::vector<std::size_t> n(cols.size(), 0);
            std::size_t ok = 0;
            for (std::size_t k = 0; k < s.seeds.size(); ++k) {
                const auto& r = runs[c * s.seeds.size() + k];
                if (!r.error.empty()) continue;
                ++ok;
                for (std::size_t m = 0; m < cols.size(); ++m)
                    if (auto it = r.metrics.find(cols[m]); it != r.metrics.end()) acc[m] += it->second, ++n[m];
            }
            std::vector<std::string> row = {s.id, std::to_string(c)};
            for (const auto& [path, v] : cells[c]) row.push_back(cell_value(v));
            row.push_back(std::to_string(ok));
            for (std::size_t m = 0; m < cols.size(); ++m)
                row.push_back(n[m] ? csv::number(acc[m] / static_cast<double>(n[m])) : "");
            csv::write_row(os, row);
        }
    }
    {
        auto os = detail::open_out(out_dir, "metrics.csv");
        detail::write_metrics(os, s, runs, cols);
    }
    {
        auto os = detail::open_out(out_dir, "properties.csv");
        detail::write_properties(os, s, runs);
    }
    {
        auto os = detail::open_out(out_dir, "failures.csv");
        csv::write_row(os, {"scenario", "cell", "seed", "error"});
        for (const auto& r : runs)
            if (!r.error.empty()) {
                ++sum.failures;
                csv::write_row(os, {s.id, std::to_string(r.cell), std::to_string(r.seed), r.error});
            }
    }
    return sum;
}

} // namespace metaphorsim::harness
