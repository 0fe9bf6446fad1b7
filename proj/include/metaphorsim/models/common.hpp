#pragma once

#include "../model.hpp"
#include "../process.hpp"
#include "../trace.hpp"

#include <string>
#include <utility>
#include <vector>

namespace metaphorsim::models {

/// Bernoulli branch that collapses to one side at p = 0 or 1.
inline TermPtr pick(double p, TermPtr yes, TermPtr no) {
    if (p >= 1.0) return yes;
    if (p <= 0.0) return no;
    return dsl::choose({{p, std::move(yes)}, {1.0 - p, std::move(no)}});
}

/// Weighted choice that drops zero-weight branches.
inline TermPtr pick_weighted(const std::vector<std::pair<double, TermPtr>>& branches) {
    std::vector<std::pair<double, TermPtr>> kept;
    for (const auto& b : branches)
        if (b.first > 0) kept.push_back(b);
    if (kept.size() == 1) return kept.front().second;
    return dsl::choose(kept);
}

/// Logs `event` at `at` with the given details.
inline TermPtr note(std::string event, std::string at, AttrMap details = {}, TermPtr next = dsl::nil()) {
    return dsl::prefix(dsl::named(dsl::action("note", std::move(at), std::move(details)), std::move(event)), std::move(next));
}

/// Runs a rule without logging.
inline TermPtr quietly(std::string rule, std::string at, AttrMap params = {}, TermPtr next = dsl::nil()) {
    return dsl::prefix(dsl::named(dsl::action(std::move(rule), std::move(at), std::move(params)), ""), std::move(next));
}

inline TermPtr set_var(std::string name, AttrValue value) {
    return quietly("set_var", "", {{"name", std::move(name)}, {"value", std::move(value)}});
}

inline MetricDecl counter(std::string name, std::string event) {
    MetricDecl d;
    d.name = std::move(name);
    d.type = MetricDecl::Type::Counter;
    d.event_type = std::move(event);
    return d;
}

inline MetricDecl duration(std::string name, std::string start, std::string end, std::string key = "subject",
                           double scale = 1.0) {
    MetricDecl d;
    d.name = std::move(name);
    d.type = MetricDecl::Type::Duration;
    d.start_type = std::move(start);
    d.end_type = std::move(end);
    d.key = std::move(key);
    d.scale = scale;
    return d;
}

inline MetricDecl occupancy(std::string name, std::string kind, std::string location) {
    MetricDecl d;
    d.name = std::move(name);
    d.type = MetricDecl::Type::TimeWeighted;
    d.kind = std::move(kind);
    d.location = std::move(location);
    return d;
}

/// Sum of a numeric detail over records of `type`; records without it count as 1.
inline double sum_detail(const EventLog& log, std::string_view type, std::string_view key) {
    double s = 0;
    for (const auto& r : log)
        if (r.type == type) {
            auto v = r.detail(key);
            s += v ? as_real(*v) : 1.0;
        }
    return s;
}

} // namespace metaphorsim::models
