#include "metaphorsim/harness/report.hpp"
#include "metaphorsim/harness/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>

using namespace metaphorsim;

namespace {

int cmd_validate(const std::string& path) {
    auto s = harness::load_scenario(path);
    auto diags = harness::validate_scenario(s);
    for (const auto& d : diags) std::cerr << path << ": " << d << '\n';
    if (diags.empty()) std::cout << path << ": ok (" << s.cells() << " cell(s) x " << s.seeds.size() << " seed(s))\n";
    return diags.empty() ? 0 : 1;
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out) {
    auto s = harness::load_scenario(path);
    auto diags = harness::validate_scenario(s);
    if (!diags.empty()) {
        for (const auto& d : diags) std::cerr << path << ": " << d << '\n';
        return 1;
    }
    auto runs = harness::run_scenario(s, out.empty() ? "out/" + s.id : out, seed);
    harness::print_summary(std::cout, runs);
    for (const auto& r : runs)
        if (!r.error.empty()) return 1;
    return 0;
}

int cmd_sweep(const std::string& path, unsigned jobs, const std::string& out) {
    auto s = harness::load_scenario(path);
    auto diags = harness::validate_scenario(s);
    if (!diags.empty()) {
        for (const auto& d : diags) std::cerr << path << ": " << d << '\n';
        return 1;
    }
    std::string dir = out.empty() ? "out/" + s.id : out;
    auto sum = harness::sweep_scenario(s, dir, jobs);
    std::cout << sum.cells << " cell(s), " << sum.runs << " run(s), " << sum.failures << " failure(s) -> " << dir << '\n';
    return sum.failures ? 1 : 0;
}

int cmd_report(const std::string& dir, const std::string& group_by, const std::string& out) {
    std::vector<std::string> cols;
    for (auto& c : split(group_by, ','))
        if (!c.empty()) cols.push_back(c);
    auto table = harness::aggregate(harness::read_table(std::filesystem::path(dir) / "report.csv"), cols);
    harness::write_table(std::cout, table);
    if (!out.empty()) {
        std::ofstream os(out, std::ios::binary);
        harness::write_table(os, table);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"metaphorsim: metaphor-calculus simulation runner"};
    app.require_subcommand(1);

    std::string file, out, group_by;
    std::optional<std::uint64_t> seed;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

    auto* validate = app.add_subcommand("validate", "parse a scenario, build its model and check it");
    validate->add_option("file", file, "scenario file")->required();

    auto* run = app.add_subcommand("run", "execute the scenario's seeds at its base parameters");
    run->add_option("file", file, "scenario file")->required();
    run->add_option("--seed", seed, "run this seed only");
    run->add_option("--out", out, "output directory (default out/<scenario>)");

    auto* sweep = app.add_subcommand("sweep", "execute every grid cell for every seed");
    sweep->add_option("file", file, "scenario file")->required();
    sweep->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sweep->add_option("--out", out, "output directory (default out/<scenario>)");

    auto* report = app.add_subcommand("report", "aggregate report.csv by columns");
    report->add_option("dir", file, "sweep output directory")->required();
    report->add_option("--group-by", group_by, "comma-separated columns; empty for one global row");
    report->add_option("--out", out, "also write the table to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) return cmd_validate(file);
        if (*run) return cmd_run(file, seed, out);
        if (*sweep) return cmd_sweep(file, jobs, out);
        if (*report) return cmd_report(file, group_by, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
