#pragma once

#include "calculus.hpp"
#include "composition.hpp"
#include "distribution.hpp"
#include "engine.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "process.hpp"
#include "rules.hpp"
#include "serialize.hpp"
#include "trace.hpp"
#include "value.hpp"

#include "models/dataloss.hpp"
#include "models/recovery.hpp"
#include "models/trauma.hpp"

namespace metaphorsim {

/// Generic rules plus every shipped model's rules; custom model documents run against this.
inline RuleRegistry standard_registry() {
    RuleRegistry reg;
    rules::register_generic(reg);
    dataloss::register_rules(reg);
    recovery::register_rules(reg);
    trauma::register_rules(reg);
    return reg;
}

} // namespace metaphorsim
