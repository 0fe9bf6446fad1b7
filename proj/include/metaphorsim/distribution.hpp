#pragma once

#include "value.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace metaphorsim {

// All times are simulated hours; rates are events per simulated hour.
namespace dist {
struct Exponential { double rate = 1.0; bool operator==(const Exponential&) const = default; };
struct Uniform { double lo = 0.0, hi = 1.0; bool operator==(const Uniform&) const = default; };
// Staff-estimated range, sampled uniformly.
struct Range { double lo = 0.0, hi = 1.0; bool operator==(const Range&) const = default; };
struct Bernoulli { double p = 0.5; bool operator==(const Bernoulli&) const = default; };
struct Constant { double v = 0.0; bool operator==(const Constant&) const = default; };
struct Empirical {
    std::vector<std::pair<double, double>> points;  // (value, weight)
    bool operator==(const Empirical&) const = default;
};
} // namespace dist

using DistributionSpec =
    std::variant<dist::Constant, dist::Exponential, dist::Uniform, dist::Range, dist::Bernoulli, dist::Empirical>;

/// Empty when valid, otherwise the reason.
inline std::string distribution_problem(const DistributionSpec& d) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, dist::Exponential>) {
                if (!(x.rate > 0) || !std::isfinite(x.rate)) return "exponential rate must be > 0";
            } else if constexpr (std::is_same_v<T, dist::Uniform> || std::is_same_v<T, dist::Range>) {
                if (!(x.lo <= x.hi)) return "range requires lo <= hi";
            } else if constexpr (std::is_same_v<T, dist::Bernoulli>) {
                if (!(x.p >= 0 && x.p <= 1)) return "bernoulli p must lie in [0,1]";
            } else if constexpr (std::is_same_v<T, dist::Empirical>) {
                if (x.points.empty()) return "empirical distribution needs at least one point";
                for (const auto& [v, w] : x.points)
                    if (!(w > 0)) return "empirical weights must be positive";
            } else {
                if (!std::isfinite(x.v)) return "constant must be finite";
            }
            return {};
        },
        d);
}

/// Lower bound of the support; used to reject non-positive inter-arrival times.
inline double distribution_min(const DistributionSpec& d) {
    return std::visit(
        [](const auto& x) -> double {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, dist::Exponential>) return 0.0;  // open at 0
            else if constexpr (std::is_same_v<T, dist::Uniform> || std::is_same_v<T, dist::Range>) return x.lo;
            else if constexpr (std::is_same_v<T, dist::Bernoulli>) return 0.0;
            else if constexpr (std::is_same_v<T, dist::Empirical>) {
                double m = x.points.front().first;
                for (const auto& p : x.points) m = std::min(m, p.first);
                return m;
            } else return x.v;
        },
        d);
}

inline bool strictly_positive(const DistributionSpec& d) {
    if (std::holds_alternative<dist::Exponential>(d)) return true;
    if (std::holds_alternative<dist::Bernoulli>(d)) return false;
    return distribution_min(d) > 0;
}

inline double distribution_mean(const DistributionSpec& d) {
    return std::visit(
        [](const auto& x) -> double {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, dist::Exponential>) return 1.0 / x.rate;
            else if constexpr (std::is_same_v<T, dist::Uniform> || std::is_same_v<T, dist::Range>) return 0.5 * (x.lo + x.hi);
            else if constexpr (std::is_same_v<T, dist::Bernoulli>) return x.p;
            else if constexpr (std::is_same_v<T, dist::Empirical>) {
                double sw = 0, s = 0;
                for (const auto& [v, w] : x.points) { sw += w; s += v * w; }
                return s / sw;
            } else return x.v;
        },
        d);
}

/// Named random stream: (master seed, key) fully determines the sequence.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view key)
        : master_seed_(master_seed), key_(key), engine_(seeded(derive(master_seed, key))) {}

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    const std::string& key() const noexcept { return key_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    static std::uint64_t derive(std::uint64_t seed, std::string_view key) {
        std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the key
        for (unsigned char c : key) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return splitmix(seed ^ splitmix(h));
    }

private:
    // A single-integer seed leaves nearby streams correlated in their first draws.
    static std::mt19937_64 seeded(std::uint64_t x) {
        std::uint64_t y = splitmix(x);
        std::seed_seq seq{static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(x >> 32),
                          static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(y >> 32)};
        return std::mt19937_64(seq);
    }

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t master_seed_;
    std::string key_;
    std::mt19937_64 engine_;
};

/// Draws one variate and advances the stream. Exponential uses -ln(u)/rate, u in (0,1).
inline double sample(const DistributionSpec& d, RngStream& s) {
    return std::visit(
        [&s](const auto& x) -> double {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, dist::Exponential>) {
                return -std::log(s.uniform_open()) / x.rate;
            } else if constexpr (std::is_same_v<T, dist::Uniform> || std::is_same_v<T, dist::Range>) {
                return x.lo + s.uniform01() * (x.hi - x.lo);
            } else if constexpr (std::is_same_v<T, dist::Bernoulli>) {
                return s.uniform01() < x.p ? 1.0 : 0.0;
            } else if constexpr (std::is_same_v<T, dist::Empirical>) {
                double total = 0;
                for (const auto& p : x.points) total += p.second;
                double u = s.uniform01() * total, acc = 0;
                for (const auto& [v, w] : x.points) {
                    acc += w;
                    if (u < acc) return v;
                }
                return x.points.back().first;
            } else {
                return x.v;
            }
        },
        d);
}

/// Picks an index with probability proportional to its weight; zero weights are never chosen.
inline std::size_t sample_index(const std::vector<double>& weights, RngStream& s) {
    double total = 0;
    for (double w : weights) total += std::max(0.0, w);
    double u = s.uniform01() * total, acc = 0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0)) continue;
        acc += weights[i];
        last = i;
        if (u < acc) return i;
    }
    return last;
}

} // namespace metaphorsim
