#pragma once

#include "value.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace metaphorsim {

struct RunConfig {
    std::uint64_t seed = 0;
    double horizon = 0.0;  // simulated hours
    AttrMap overrides;     // echoed; applied by model builders before the run
    std::vector<std::string> metrics;  // empty selects every declared metric
    // Keep executing in-flight processes after the horizon; new arrivals stop either way.
    bool drain = true;
    std::size_t max_events = 20'000'000;
    bool check_conservation = false;
};

struct EventRecord {
    double t = 0.0;
    std::string type;
    std::string loc;
    std::string subject;
    Details details;

    bool operator==(const EventRecord&) const = default;

    const AttrValue* detail(std::string_view key) const { return find_detail(details, key); }
    std::string detail_text(std::string_view key) const {
        auto v = detail(key);
        return v ? to_text(*v) : std::string{};
    }
};

using EventLog = std::vector<EventRecord>;

using MetricTable = std::map<std::string, double, std::less<>>;

/// location -> kind -> atom count
using PlacementCounts = std::map<std::string, std::map<std::string, std::int64_t, std::less<>>, std::less<>>;

struct RunResult {
    RunConfig config;
    EventLog log;
    MetricTable metrics;
    PlacementCounts initial;
    std::string end_reason;   // horizon | drained | deadlock | event_limit; empty when nothing ran
    std::size_t blocked = 0;  // instances still blocked at the end
    double end_time = 0.0;
    double wall_time = 0.0;   // seconds; excluded from determinism comparisons
    std::vector<std::string> warnings;
};

} // namespace metaphorsim
