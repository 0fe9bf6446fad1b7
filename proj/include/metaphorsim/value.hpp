#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace metaphorsim {

/// Scalar attribute value carried by resources, action parameters and log details.
using AttrValue = std::variant<std::int64_t, double, std::string, bool>;
using AttrMap = std::map<std::string, AttrValue, std::less<>>;

enum class ValueType { Integer, Real, Text, Boolean };

/// Identifier of a resource atom. Allocated by a run-scoped monotone counter.
struct AtomId {
    std::uint64_t value = 0;

    friend constexpr auto operator<=>(AtomId, AtomId) = default;
};

enum class ErrorCode {
    DuplicateId,
    IncompatibleKinds,
    UnknownKind,
    EffectViolatesSchema,
    NonPositiveSpeed,
    UnknownLocation,
    MoveWithoutEdge,
    UnknownRule,
    UnknownProcess,
    UnknownBinding,
    InvalidModel,
    IncompatibleInterface,
    AttributeConflict,
    InsufficientEventCoverage,
    UnknownEnvironment,
    UnknownScopeName,
    EmptyScope,
    UnpairedDurationEvent,
    UnknownColumn,
    UnknownParameter,
    ParseError,
    InvalidParameter,
    Runtime,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IncompatibleKinds: return "IncompatibleKinds";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::EffectViolatesSchema: return "EffectViolatesSchema";
    case ErrorCode::NonPositiveSpeed: return "NonPositiveSpeed";
    case ErrorCode::UnknownLocation: return "UnknownLocation";
    case ErrorCode::MoveWithoutEdge: return "MoveWithoutEdge";
    case ErrorCode::UnknownRule: return "UnknownRule";
    case ErrorCode::UnknownProcess: return "UnknownProcess";
    case ErrorCode::UnknownBinding: return "UnknownBinding";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::IncompatibleInterface: return "IncompatibleInterface";
    case ErrorCode::AttributeConflict: return "AttributeConflict";
    case ErrorCode::InsufficientEventCoverage: return "InsufficientEventCoverage";
    case ErrorCode::UnknownEnvironment: return "UnknownEnvironment";
    case ErrorCode::UnknownScopeName: return "UnknownScopeName";
    case ErrorCode::EmptyScope: return "EmptyScope";
    case ErrorCode::UnpairedDurationEvent: return "UnpairedDurationEvent";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::UnknownParameter: return "UnknownParameter";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::Runtime: return "Runtime";
    }
    return "Unknown";
}

inline ValueType type_of(const AttrValue& v) {
    return static_cast<ValueType>(v.index());
}

inline std::string_view to_string(ValueType t) {
    switch (t) {
    case ValueType::Integer: return "integer";
    case ValueType::Real: return "real";
    case ValueType::Text: return "text";
    case ValueType::Boolean: return "boolean";
    }
    return "?";
}

inline ValueType parse_value_type(std::string_view s) {
    if (s == "integer" || s == "int") return ValueType::Integer;
    if (s == "real" || s == "double") return ValueType::Real;
    if (s == "text" || s == "string") return ValueType::Text;
    if (s == "boolean" || s == "bool") return ValueType::Boolean;
    throw Error(ErrorCode::ParseError, "unknown value type '" + std::string(s) + "'");
}

inline AttrValue default_value(ValueType t) {
    switch (t) {
    case ValueType::Integer: return std::int64_t{0};
    case ValueType::Real: return 0.0;
    case ValueType::Text: return std::string{};
    case ValueType::Boolean: return false;
    }
    return false;
}

inline bool is_numeric(const AttrValue& v) {
    return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
}

inline double as_real(const AttrValue& v) {
    if (auto i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    if (auto d = std::get_if<double>(&v)) return *d;
    if (auto b = std::get_if<bool>(&v)) return *b ? 1.0 : 0.0;
    throw Error(ErrorCode::InvalidParameter, "expected a numeric value, got text");
}

inline std::int64_t as_integer(const AttrValue& v) {
    if (auto i = std::get_if<std::int64_t>(&v)) return *i;
    if (auto d = std::get_if<double>(&v)) return static_cast<std::int64_t>(std::llround(*d));
    if (auto b = std::get_if<bool>(&v)) return *b ? 1 : 0;
    throw Error(ErrorCode::InvalidParameter, "expected an integer value, got text");
}

inline bool as_bool(const AttrValue& v) {
    if (auto b = std::get_if<bool>(&v)) return *b;
    if (auto i = std::get_if<std::int64_t>(&v)) return *i != 0;
    if (auto d = std::get_if<double>(&v)) return *d != 0.0;
    return !std::get<std::string>(v).empty();
}

/// Shortest round-trip formatting; stable across platforms with the same libstdc++.
inline std::string format_real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc{}) return "nan";
    return std::string(buf, ptr);
}

inline std::string to_text(const AttrValue& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::string>) return x;
            else if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
            else if constexpr (std::is_same_v<T, double>) return format_real(x);
            else return std::to_string(x);
        },
        v);
}

/// Converts `v` to type `t` where a lossless-enough conversion exists (integer <-> real).
inline AttrValue coerce(const AttrValue& v, ValueType t) {
    if (type_of(v) == t) return v;
    if (t == ValueType::Real && is_numeric(v)) return as_real(v);
    if (t == ValueType::Integer && std::holds_alternative<double>(v)) {
        double d = std::get<double>(v);
        if (std::floor(d) == d) return static_cast<std::int64_t>(d);
    }
    return v;
}

enum class Comparator { Eq, Ne, Lt, Le, Gt, Ge };

inline std::string_view to_string(Comparator c) {
    switch (c) {
    case Comparator::Eq: return "=";
    case Comparator::Ne: return "!=";
    case Comparator::Lt: return "<";
    case Comparator::Le: return "<=";
    case Comparator::Gt: return ">";
    case Comparator::Ge: return ">=";
    }
    return "?";
}

inline Comparator parse_comparator(std::string_view s) {
    if (s == "=" || s == "==") return Comparator::Eq;
    if (s == "!=" || s == "≠") return Comparator::Ne;
    if (s == "<") return Comparator::Lt;
    if (s == "<=" || s == "≤") return Comparator::Le;
    if (s == ">") return Comparator::Gt;
    if (s == ">=" || s == "≥") return Comparator::Ge;
    throw Error(ErrorCode::ParseError, "unknown comparator '" + std::string(s) + "'");
}

/// Compares two values; numbers compare numerically across integer/real, other
/// types compare only against the same type (ordering comparisons on booleans are false).
inline bool compare(const AttrValue& lhs, Comparator cmp, const AttrValue& rhs) {
    int order = 0;
    if (is_numeric(lhs) && is_numeric(rhs)) {
        double a = as_real(lhs), b = as_real(rhs);
        order = a < b ? -1 : (a > b ? 1 : 0);
    } else if (lhs.index() != rhs.index()) {
        return cmp == Comparator::Ne;
    } else if (auto s = std::get_if<std::string>(&lhs)) {
        int c = s->compare(std::get<std::string>(rhs));
        order = c < 0 ? -1 : (c > 0 ? 1 : 0);
    } else {
        bool a = std::get<bool>(lhs), b = std::get<bool>(rhs);
        if (cmp == Comparator::Eq) return a == b;
        if (cmp == Comparator::Ne) return a != b;
        return false;
    }
    switch (cmp) {
    case Comparator::Eq: return order == 0;
    case Comparator::Ne: return order != 0;
    case Comparator::Lt: return order < 0;
    case Comparator::Le: return order <= 0;
    case Comparator::Gt: return order > 0;
    case Comparator::Ge: return order >= 0;
    }
    return false;
}

/// Ordered key/value details attached to log records.
using Details = std::vector<std::pair<std::string, AttrValue>>;

inline const AttrValue* find_detail(const Details& d, std::string_view key) {
    for (const auto& [k, v] : d)
        if (k == key) return &v;
    return nullptr;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string join_ids(const std::vector<AtomId>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(ids[i].value);
    }
    return out;
}

} // namespace metaphorsim
