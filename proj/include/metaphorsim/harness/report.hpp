#pragma once

#include "csv.hpp"
#include "../metrics.hpp"
#include "../value.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace metaphorsim::harness {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw Error(ErrorCode::UnknownColumn, "no column '" + name + "'");
    }
};

inline Table read_table(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::ParseError, "cannot read " + file.string());
    auto rows = csv::read(in);
    if (rows.empty()) throw Error(ErrorCode::ParseError, file.string() + " has no header");
    Table t;
    t.header = std::move(rows.front());
    t.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
    return t;
}

inline void write_table(std::ostream& os, const Table& t) {
    csv::write_row(os, t.header);
    for (const auto& r : t.rows) csv::write_row(os, r);
}

/// Groups report rows by `group_by` (first-seen order) and summarises every numeric column
/// that is not a key: `<col>` is the group mean, then `<col>_median` and `<col>_p90`.
inline Table aggregate(const Table& report, const std::vector<std::string>& group_by) {
    std::vector<std::size_t> keys;
    for (const auto& g : group_by) keys.push_back(report.column(g));
    static const std::set<std::string> structural = {"scenario", "cell", "seed"};
    std::vector<std::size_t> values;
    for (std::size_t c = 0; c < report.header.size(); ++c) {
        if (structural.count(report.header[c]) || std::find(keys.begin(), keys.end(), c) != keys.end()) continue;
        bool numeric = !report.rows.empty();
        for (const auto& r : report.rows)
            if (c < r.size() && !r[c].empty() && !csv::parse_number(r[c])) numeric = false;
        if (numeric) values.push_back(c);
    }

    std::vector<std::vector<std::string>> order;
    std::map<std::vector<std::string>, std::vector<const std::vector<std::string>*>> groups;
    for (const auto& r : report.rows) {
        std::vector<std::string> k;
        for (auto c : keys) k.push_back(c < r.size() ? r[c] : "");
        auto [it, fresh] = groups.try_emplace(k);
        if (fresh) order.push_back(k);
        it->second.push_back(&r);
    }
    if (keys.empty() && order.empty()) order.push_back({});

    Table out;
    out.header = group_by;
    out.header.push_back("runs");
    for (auto c : values) {
        const auto& n = report.header[c];
        out.header.insert(out.header.end(), {n, n + "_median", n + "_p90"});
    }
    for (const auto& k : order) {
        const auto& members = groups[k];
        std::vector<std::string> row = k;
        row.push_back(std::to_string(members.size()));
        for (auto c : values) {
            std::vector<double> xs;
            for (const auto* r : members)
                if (c < r->size())
                    if (auto x = csv::parse_number((*r)[c])) xs.push_back(*x);
            if (xs.empty()) row.insert(row.end(), {"", "", ""});
            else row.insert(row.end(), {csv::number(stats::mean(xs)), csv::number(stats::median(xs)), csv::number(stats::p90(xs))});
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

} // namespace metaphorsim::harness
