#pragma once

#include "model.hpp"
#include "trace.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <string>
#include <vector>

namespace metaphorsim {

namespace stats {

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Linear interpolation between closest ranks: q in [0,1].
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    double pos = q * static_cast<double>(xs.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(const std::vector<double>& xs) { return quantile(xs, 0.5); }
inline double p90(const std::vector<double>& xs) { return quantile(xs, 0.9); }
inline double max(const std::vector<double>& xs) { return xs.empty() ? 0.0 : *std::max_element(xs.begin(), xs.end()); }

inline double variance(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean(xs), s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct TrendResult {
    double slope = 0.0;
    double stderr_ = 0.0;
    double z = 0.0;
    double p_increasing = 1.0;  // one-sided p-value for slope > 0
};

/// Least-squares slope of y on x with a normal-approximation one-sided test.
inline TrendResult trend_test(const std::vector<double>& x, const std::vector<double>& y) {
    TrendResult r;
    std::size_t n = x.size();
    if (n < 3 || y.size() != n) return r;
    double mx = mean(x), my = mean(y), sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0) return r;
    r.slope = sxy / sxx;
    double intercept = my - r.slope * mx, sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = y[i] - intercept - r.slope * x[i];
        sse += e * e;
    }
    double s2 = sse / static_cast<double>(n - 2);
    r.stderr_ = std::sqrt(s2 / sxx);
    if (r.stderr_ == 0) {
        r.z = r.slope > 0 ? INFINITY : (r.slope < 0 ? -INFINITY : 0.0);
        r.p_increasing = r.slope > 0 ? 0.0 : (r.slope < 0 ? 1.0 : 0.5);
        return r;
    }
    r.z = r.slope / r.stderr_;
    r.p_increasing = 1.0 - normal_cdf(r.z);
    return r;
}

} // namespace stats

struct DurationSample {
    std::string key;
    double start = 0.0;
    double end = 0.0;
};

/// Pairs start/end records FIFO per key. Unpaired records are appended to `warnings`.
inline std::vector<DurationSample> pair_durations(const EventLog& log, const std::string& start_type,
                                                  const std::string& end_type, const std::string& key,
                                                  std::vector<std::string>* warnings = nullptr) {
    std::map<std::string, std::deque<double>> open;
    std::vector<DurationSample> out;
    auto key_of = [&](const EventRecord& r) { return key == "subject" ? r.subject : r.detail_text(key); };
    for (const auto& r : log) {
        if (r.type == end_type && end_type != start_type) {
            auto& q = open[key_of(r)];
            if (q.empty()) {
                if (warnings) warnings->push_back("UnpairedDurationEvent: '" + end_type + "' without '" + start_type +
                                                  "' for " + key_of(r));
                continue;
            }
            out.push_back({key_of(r), q.front(), r.t});
            q.pop_front();
            continue;
        }
        if (r.type == start_type) open[key_of(r)].push_back(r.t);
    }
    if (warnings)
        for (const auto& [k, q] : open)
            for (std::size_t i = 0; i < q.size(); ++i)
                warnings->push_back("UnpairedDurationEvent: '" + start_type + "' without '" + end_type + "' for " + k);
    return out;
}

inline double run_end_time(const RunResult& r) {
    for (auto it = r.log.rbegin(); it != r.log.rend(); ++it)
        if (it->type == "run_end") return it->t;
    return r.end_time > 0 ? r.end_time : r.config.horizon;
}

/// Time-average over [0, T] of the number of `kind` atoms at `location`, rebuilt
/// from the initial counts and the engine's movement records.
inline double time_weighted_count(const RunResult& r, const std::string& kind, const std::string& location) {
    double count = 0;
    if (auto l = r.initial.find(location); l != r.initial.end())
        if (auto k = l->second.find(kind); k != l->second.end()) count = static_cast<double>(k->second);
    double T = run_end_time(r);
    if (!(T > 0)) return count;
    double area = 0, last = 0;
    for (const auto& e : r.log) {
        if (e.t > T) break;
        if (e.detail_text("kind") != kind) continue;
        double delta = 0;
        auto nv = e.detail("n");
        double n = nv ? as_real(*nv) : 1.0;
        if (e.type == "move") {
            if (e.detail_text("from") == location) delta -= n;
            if (e.detail_text("to") == location) delta += n;
        } else if (e.loc == location) {
            if (e.type == "claim" || e.type == "destroy") delta = -n;
            else if (e.type == "release" || e.type == "create") delta = n;
        }
        if (delta == 0) continue;
        area += count * (e.t - last);
        last = e.t;
        count += delta;
    }
    area += count * (T - last);
    return area / T;
}

inline std::size_t count_events(const EventLog& log, std::string_view type, std::string_view filter_key = {},
                                const AttrValue* filter_value = nullptr) {
    std::size_t n = 0;
    for (const auto& r : log) {
        if (r.type != type) continue;
        if (!filter_key.empty() && filter_value) {
            auto v = r.detail(filter_key);
            if (!v || !compare(*v, Comparator::Eq, *filter_value)) continue;
        }
        ++n;
    }
    return n;
}

/// Adds mean_/median_/p90_/max_/n_ columns for `name`.
inline void put_duration_stats(MetricTable& out, const std::string& name, const std::vector<double>& xs) {
    out["mean_" + name] = stats::mean(xs);
    out["median_" + name] = stats::median(xs);
    out["p90_" + name] = stats::p90(xs);
    out["max_" + name] = stats::max(xs);
    out["n_" + name] = static_cast<double>(xs.size());
}

/// Evaluates metric declarations over a run. With `strict`, the first unpaired
/// duration record throws UnpairedDurationEvent instead of becoming a warning.
inline MetricTable summarize_run(const RunResult& r, const std::vector<MetricDecl>& decls,
                                 std::vector<std::string>* warnings = nullptr, bool strict = false) {
    MetricTable out;
    for (const auto& d : decls) {
        if (!r.config.metrics.empty() &&
            std::find(r.config.metrics.begin(), r.config.metrics.end(), d.name) == r.config.metrics.end())
            continue;
        switch (d.type) {
        case MetricDecl::Type::Counter:
            out[d.name] = static_cast<double>(
                count_events(r.log, d.event_type, d.filter_key, d.filter_key.empty() ? nullptr : &d.filter_value));
            break;
        case MetricDecl::Type::Duration: {
            std::vector<std::string> local;
            auto pairs = pair_durations(r.log, d.start_type, d.end_type, d.key, &local);
            if (strict && !local.empty()) throw Error(ErrorCode::UnpairedDurationEvent, local.front());
            if (warnings) warnings->insert(warnings->end(), local.begin(), local.end());
            std::vector<double> xs;
            for (const auto& p : pairs) xs.push_back((p.end - p.start) / d.scale);
            put_duration_stats(out, d.name, xs);
            break;
        }
        case MetricDecl::Type::TimeWeighted: out[d.name] = time_weighted_count(r, d.kind, d.location); break;
        }
    }
    return out;
}

inline nlohmann::ordered_json attr_to_ordered_json(const AttrValue& v) {
    return std::visit([](const auto& x) { return nlohmann::ordered_json(x); }, v);
}

inline nlohmann::ordered_json record_to_json(const EventRecord& r) {
    nlohmann::ordered_json j;
    j["t"] = r.t;
    j["type"] = r.type;
    j["loc"] = r.loc;
    j["subject"] = r.subject;
    nlohmann::ordered_json d = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.details) d[k] = attr_to_ordered_json(v);
    j["details"] = std::move(d);
    return j;
}

inline void write_jsonl(std::ostream& os, const EventLog& log) {
    for (const auto& r : log) os << record_to_json(r).dump() << '\n';
}

} // namespace metaphorsim
