#pragma once

#include "metrics.hpp"
#include "model.hpp"
#include "rules.hpp"
#include "trace.hpp"

#include <chrono>
#include <functional>
#include <set>
#include <deque>
#include <list>
#include <memory>
#include <queue>
#include <unordered_map>

namespace metaphorsim {

namespace detail {

struct Join {
    int remaining = 2;
    std::vector<std::variant<TermPtr, std::size_t>> stack;
};

// A continuation is either a term still to run or a join point (index into joins_).
using Cont = std::variant<TermPtr, std::size_t>;

struct Instance {
    std::size_t id = 0;
    std::string process;
    bool daemon = false;
    InstanceScope scope;
    RngStream rng;
    int threads = 1;
    bool finished = false;
    std::string origin;  // fallback for @here when the instance has no marker
};

struct Thread {
    std::size_t id = 0;
    std::size_t instance = 0;
    TermPtr current;
    std::vector<Cont> stack;
};

struct Scheduled {
    double t;
    std::uint64_t seq;
    enum class Kind { Thread, Arrival } kind;
    std::size_t ref;
    bool operator>(const Scheduled& o) const { return t != o.t ? t > o.t : seq > o.seq; }
};

struct ClaimWaiter {
    std::size_t thread;
    double since;
    std::uint64_t seq;
    ResourcePattern pattern;  // resolved
    std::string kind;
};

struct EnvState {
    const EnvironmentSpec* spec = nullptr;
    RngStream rng{0, ""};
    std::size_t occurrences = 0;
    std::size_t next_agent = 0;
};

} // namespace detail

/// Discrete-event executor for one run. Single-threaded; construct one per run.
class Engine final : public WorldView {
public:
    Engine(const ModelSpec& m, const RuleRegistry& rules, RunConfig cfg)
        : m_(m), rules_(rules), cfg_(std::move(cfg)) {}

    RunResult run() {
        auto wall0 = std::chrono::steady_clock::now();
        RunResult out;
        out.config = cfg_;
        initialise();
        out.initial = counts();
        if (cfg_.horizon > 0) {
            start();
            loop();
            finish();
        }
        out.log = std::move(log_);
        out.end_reason = end_reason_;
        out.blocked = blocked_at_end_;
        out.end_time = end_time_;
        out.metrics = summarize_run(out, m_.metrics, &out.warnings);
        out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
        return out;
    }

    // WorldView
    double now() const override { return now_; }
    const KindTable& kinds() const override { return m_.kinds; }
    const LocationGraph& graph() const override { return m_.graph; }
    const ResourceBundle& at(std::string_view location) const override {
        auto it = bundles_.find(location);
        return it == bundles_.end() ? empty_ : it->second;
    }
    std::optional<std::string> claimed_at(AtomId id) const override {
        auto it = where_.find(id.value);
        if (it == where_.end() || !it->second.held) return std::nullopt;
        return it->second.location;
    }
    std::optional<std::string> locate(AtomId id) const override {
        auto it = where_.find(id.value);
        if (it == where_.end() || it->second.held) return std::nullopt;
        return it->second.location;
    }
    const ResourceAtom* find_atom(AtomId id) const override {
        auto it = where_.find(id.value);
        if (it == where_.end()) return nullptr;
        if (it->second.held) {
            auto h = held_.find(id.value);
            return h == held_.end() ? nullptr : &h->second;
        }
        return at(it->second.location).find(id);
    }
    void for_each_atom(std::string_view kind, const std::function<void(const ResourceAtom&)>& f) const override {
        auto it = by_kind_.find(kind);
        if (it == by_kind_.end()) return;
        for (auto id : it->second)
            if (auto a = find_atom(AtomId{id})) f(*a);
    }
    std::size_t waiting(std::string_view location, std::string_view kind) const override {
        std::size_t n = 0;
        auto it = claim_waiters_.find(location);
        if (it == claim_waiters_.end()) return 0;
        for (const auto& [sig, q] : it->second)
            for (const auto& w : q)
                if (w.kind == kind) ++n;
        return n;
    }

private:
    struct Where {
        bool held = false;
        std::string location;
    };

    // ---------------------------------------------------------------- state

    void index_add(const ResourceAtom& a, const std::string& loc, bool held) {
        where_[a.id.value] = Where{held, loc};
        by_kind_[a.kind].insert(a.id.value);
    }
    void index_remove(const ResourceAtom& a) {
        where_.erase(a.id.value);
        auto it = by_kind_.find(a.kind);
        if (it != by_kind_.end()) it->second.erase(a.id.value);
    }

    void put(const std::string& loc, ResourceAtom a) {
        index_add(a, loc, false);
        bundles_[loc].insert(std::move(a));
        touch(loc);
    }

    std::optional<ResourceAtom> take_from(const std::string& loc, AtomId id) {
        auto it = bundles_.find(loc);
        if (it == bundles_.end()) return std::nullopt;
        auto a = it->second.take(id);
        if (a) {
            where_.erase(id.value);
            touch(loc);
        }
        return a;
    }

    void touch(const std::string& loc) {
        dirty_.insert(loc);
        changed_ = true;
    }

    PlacementCounts counts() const {
        PlacementCounts out;
        for (const auto& [loc, b] : bundles_)
            for (const auto& a : b) ++out[loc][a.kind];
        return out;
    }

    std::size_t live_atoms() const {
        std::size_t n = held_.size();
        for (const auto& [loc, b] : bundles_) n += b.size();
        return n;
    }

    void log(std::string type, std::string loc, std::string subject, Details details = {}) {
        log_.push_back(EventRecord{now_, std::move(type), std::move(loc), std::move(subject), std::move(details)});
    }

    static Details movement_details(const std::string& kind, const std::vector<AtomId>& ids) {
        return Details{{"kind", kind}, {"n", static_cast<std::int64_t>(ids.size())}, {"ids", join_ids(ids)}};
    }

    // ---------------------------------------------------------------- setup

    void initialise() {
        for (const auto& [name, node] : m_.graph.nodes()) bundles_[name];
        for (const auto& [loc, bundle] : m_.initial_placement) {
            if (!m_.graph.has_node(loc)) throw Error(ErrorCode::UnknownLocation, "initial placement at '" + loc + "'");
            for (const auto& a : bundle) {
                if (where_.count(a.id.value)) throw Error(ErrorCode::DuplicateId, "initial atom " + std::to_string(a.id.value));
                put(loc, a);
            }
        }
        ids_ = AtomAllocator(m_.max_atom_id() + 1);
        for (const auto& a : m_.agents) {
            if (a.start.empty()) continue;
            if (!m_.graph.has_node(a.start)) throw Error(ErrorCode::UnknownLocation, "agent start '" + a.start + "'");
            ResourceAtom marker{a.marker.kind, ids_.allocate(), a.marker.attributes};
            agent_marker_[a.name] = marker.id;
            put(a.start, std::move(marker));
        }
        expected_atoms_ = live_atoms();
        dirty_.clear();
        changed_ = false;
    }

    void start() {
        for (const auto& p : m_.startup) {
            auto& inst = new_instance(p, p, true);
            inst.scope.vars["process"] = p;
            launch(inst.id, body(p));
        }
        std::set<std::string> pooled;
        for (const auto& e : m_.environments) pooled.insert(e.agents.begin(), e.agents.end());
        for (const auto& a : m_.agents)
            if (a.autostart && !pooled.count(a.name) && !a.behaviour.empty()) start_agent(a);
        for (const auto& e : m_.environments) {
            auto& st = envs_.emplace_back();
            st.spec = &e;
            st.rng = RngStream(cfg_.seed, "env:" + e.name);
            double t0 = e.first_at ? *e.first_at : e.window_start.value_or(0.0) + sample(e.inter_arrival, st.rng);
            schedule_arrival(envs_.size() - 1, t0);
        }
    }

    void start_agent(const AgentSpec& a) {
        auto& inst = new_instance(a.behaviour, a.name, a.standing);
        if (auto it = agent_marker_.find(a.name); it != agent_marker_.end()) inst.scope.self = it->second;
        inst.scope.carried = a.carried;
        inst.scope.memory = a.memory;
        inst.rng = RngStream(cfg_.seed, "agent:" + a.name);
        launch(inst.id, body(a.behaviour));
    }

    TermPtr body(const std::string& process) const {
        auto it = m_.processes.find(process);
        if (it == m_.processes.end()) throw Error(ErrorCode::UnknownProcess, "process '" + process + "'");
        return it->second.body;
    }

    detail::Instance& new_instance(const std::string& process, std::string subject, bool daemon) {
        auto inst = std::make_unique<detail::Instance>(detail::Instance{
            instances_.size(), process, daemon, InstanceScope{}, RngStream(cfg_.seed, subject), 0, false, {}});
        inst->scope.subject = std::move(subject);
        if (!daemon) ++live_nondaemon_;
        instances_.push_back(std::move(inst));
        return *instances_.back();
    }

    std::string next_subject(const std::string& process) { return process + "#" + std::to_string(++spawn_count_[process]); }

    void launch(std::size_t instance, TermPtr term) {
        ++instances_[instance]->threads;
        auto& th = new_thread(instance, std::move(term));
        schedule_thread(th.id, now_);
    }

    detail::Thread& new_thread(std::size_t instance, TermPtr term) {
        threads_.push_back(std::make_unique<detail::Thread>(detail::Thread{threads_.size(), instance, std::move(term), {}}));
        return *threads_.back();
    }

    void schedule_thread(std::size_t thread, double t) {
        queue_.push({t, seq_++, detail::Scheduled::Kind::Thread, thread});
    }
    void schedule_arrival(std::size_t env, double t) {
        if (!(t < cfg_.horizon)) return;
        const auto& e = *envs_[env].spec;
        if (e.window_end && !(t < *e.window_end)) return;
        queue_.push({t, seq_++, detail::Scheduled::Kind::Arrival, env});
    }

    // ---------------------------------------------------------------- main loop

    void loop() {
        std::size_t processed = 0;
        while (!queue_.empty()) {
            auto ev = queue_.top();
            if (ev.t > cfg_.horizon && (!cfg_.drain || live_nondaemon_ == 0)) {
                end_reason_ = cfg_.drain ? "drained" : "horizon";
                return;
            }
            if (processed >= cfg_.max_events) {
                end_reason_ = "event_limit";
                return;
            }
            queue_.pop();
            ++processed;
            now_ = ev.t;
            if (ev.kind == detail::Scheduled::Kind::Arrival) arrival(ev.ref);
            else step(*threads_[ev.ref]);
            wake();
            if (cfg_.check_conservation && live_atoms() != expected_atoms_)
                throw Error(ErrorCode::Runtime, "conservation violated at t=" + format_real(now_));
        }
        end_reason_ = blocked_nondaemon() > 0 ? "deadlock" : "drained";
    }

    std::size_t blocked_nondaemon() const {
        std::set<std::size_t> inst;
        auto add = [&](std::size_t th) {
            auto i = threads_[th]->instance;
            if (!instances_[i]->daemon) inst.insert(i);
        };
        for (const auto& [loc, qs] : claim_waiters_)
            for (const auto& [sig, q] : qs)
                for (const auto& w : q) add(w.thread);
        for (auto th : guard_waiters_) add(th);
        return inst.size();
    }

    void finish() {
        end_time_ = std::max(now_, cfg_.horizon);
        if (end_reason_ == "horizon") end_time_ = cfg_.horizon;
        now_ = end_time_;
        blocked_at_end_ = blocked_nondaemon();
        log("run_end", "", "",
            {{"reason", end_reason_}, {"blocked", static_cast<std::int64_t>(blocked_at_end_)}});
    }

    // ---------------------------------------------------------------- environments

    void arrival(std::size_t env) {
        auto& st = envs_[env];
        const auto& e = *st.spec;
        for (std::size_t b = 0; b < e.batch; ++b) {
            if (e.max_occurrences && st.occurrences >= *e.max_occurrences) break;
            if (!e.agents.empty() && st.next_agent >= e.agents.size()) break;
            ++st.occurrences;
            if (!e.agents.empty()) {
                const AgentSpec* a = m_.agent(e.agents[st.next_agent++]);
                if (!a) throw Error(ErrorCode::Runtime, "pool agent missing");
                log(e.logged_type(), e.interface, a->name, {{"environment", e.name}});
                start_agent(*a);
                continue;
            }
            std::optional<AtomId> self;
            std::string subject = e.process.empty() ? e.name + "#" + std::to_string(st.occurrences) : next_subject(e.process);
            log(e.logged_type(), e.interface, subject, {{"environment", e.name}});
            for (const auto& t : e.templates) {
                ResourceAtom atom{t.kind, ids_.allocate(), t.attributes};
                if (!self) self = atom.id;
                log("create", e.interface, subject, movement_details(atom.kind, {atom.id}));
                ++expected_atoms_;
                put(e.interface, std::move(atom));
            }
            if (!e.process.empty()) {
                auto& inst = new_instance(e.process, subject, false);
                inst.scope.self = self;
                inst.origin = e.interface;
                inst.scope.vars["process"] = e.process;
                launch(inst.id, body(e.process));
            }
        }
        bool pool_left = e.agents.empty() || st.next_agent < e.agents.size();
        if (pool_left && (!e.max_occurrences || st.occurrences < *e.max_occurrences))
            schedule_arrival(env, now_ + sample(e.inter_arrival, st.rng));
    }

    // ---------------------------------------------------------------- resolution

    detail::Instance& inst_of(const detail::Thread& th) { return *instances_[th.instance]; }

    std::string resolve_location(const std::string& ref, const detail::Instance& inst) const {
        if (ref.empty()) throw Error(ErrorCode::UnknownLocation, "empty location reference");
        if (ref.front() == '$') {
            auto it = inst.scope.vars.find(std::string_view(ref).substr(1));
            if (it == inst.scope.vars.end())
                throw Error(ErrorCode::UnknownBinding, inst.scope.subject + ": variable '" + ref.substr(1) + "' unset");
            return to_text(it->second);
        }
        if (ref == "@here") {
            if (!inst.scope.self) {
                if (!inst.origin.empty()) return inst.origin;
                throw Error(ErrorCode::Runtime, inst.scope.subject + ": @here without a marker");
            }
            auto loc = locate(*inst.scope.self);
            if (!loc) throw Error(ErrorCode::Runtime, inst.scope.subject + ": marker is not at a location");
            return *loc;
        }
        if (ref == "@carried" || ref == "@memory") {
            const auto& s = ref == "@carried" ? inst.scope.carried : inst.scope.memory;
            if (s.empty()) throw Error(ErrorCode::Runtime, inst.scope.subject + ": no " + ref.substr(1) + " location");
            return s;
        }
        if (!m_.graph.has_node(ref)) throw Error(ErrorCode::UnknownLocation, "unknown location '" + ref + "'");
        return ref;
    }

    AttrValue resolve_value(const AttrValue& v, const detail::Instance& inst) const {
        auto s = std::get_if<std::string>(&v);
        if (!s || s->size() < 2) return v;
        if (s->front() == '$') {
            auto it = inst.scope.vars.find(std::string_view(*s).substr(1));
            return it == inst.scope.vars.end() ? v : it->second;
        }
        if (s->front() == '@') {
            if (*s == "@here" || *s == "@carried" || *s == "@memory") return resolve_location(*s, inst);
            if (*s == "@self") return inst.scope.self ? AttrValue{static_cast<std::int64_t>(inst.scope.self->value)} : v;
            auto id = inst.scope.first_bound(std::string_view(*s).substr(1));
            return id ? AttrValue{static_cast<std::int64_t>(id->value)} : v;
        }
        return v;
    }

    AttrMap resolve_params(const AttrMap& params, const detail::Instance& inst) const {
        AttrMap out;
        for (const auto& [k, v] : params) out.emplace(k, resolve_value(v, inst));
        return out;
    }

    ResourcePattern resolve_pattern(const ResourcePattern& p, const detail::Instance& inst) const {
        ResourcePattern out = p;
        auto restrict = [&](std::vector<AtomId> ids) {
            if (!out.id_in) {
                out.id_in = std::move(ids);
                return;
            }
            std::vector<AtomId> keep;
            for (auto id : *out.id_in)
                if (std::find(ids.begin(), ids.end(), id) != ids.end()) keep.push_back(id);
            out.id_in = std::move(keep);
        };
        if (p.self) {
            if (!inst.scope.self) throw Error(ErrorCode::Runtime, inst.scope.subject + ": self pattern without a marker");
            restrict({*inst.scope.self});
        }
        for (auto& c : out.constraints) {
            if (c.ref.empty()) continue;
            if (c.ref.front() == '@') {
                auto it = inst.scope.bindings.find(std::string_view(c.ref).substr(1));
                if (it == inst.scope.bindings.end())
                    throw Error(ErrorCode::UnknownBinding, inst.scope.subject + ": binding '" + c.ref.substr(1) + "'");
                restrict(it->second.ids);
            } else if (c.ref.front() == '$') {
                auto it = inst.scope.vars.find(std::string_view(c.ref).substr(1));
                if (it == inst.scope.vars.end())
                    throw Error(ErrorCode::UnknownBinding, inst.scope.subject + ": variable '" + c.ref.substr(1) + "'");
                c.value = it->second;
                c.ref.clear();
            }
        }
        return out;
    }

    static std::string signature(const ResourcePattern& p) {
        std::string s = p.kind + "|" + std::to_string(p.quantity);
        for (const auto& c : p.constraints) {
            if (!c.ref.empty()) continue;
            s += "|" + c.attribute + std::string(to_string(c.comparator)) + to_text(c.value);
        }
        if (p.id_in) s += "|in:" + join_ids(*p.id_in);
        return s;
    }

    // ---------------------------------------------------------------- execution

    void step(detail::Thread& th) {
        while (true) {
            const TermPtr t = th.current;
            bool keep_going = std::visit([&](const auto& n) { return exec(th, n); }, t->node);
            if (!keep_going) return;
        }
    }

    bool exec(detail::Thread& th, const term::Nil&) { return pop_continuation(th); }

    bool pop_continuation(detail::Thread& th) {
        while (true) {
            if (th.stack.empty()) {
                end_thread(th);
                return false;
            }
            detail::Cont c = std::move(th.stack.back());
            th.stack.pop_back();
            if (auto t = std::get_if<TermPtr>(&c)) {
                th.current = *t;
                return true;
            }
            auto& j = joins_[std::get<std::size_t>(c)];
            if (--j.remaining > 0) {
                end_thread(th);
                return false;
            }
            th.stack = std::move(j.stack);
        }
    }

    void end_thread(detail::Thread& th) {
        th.current = nullptr;
        auto& inst = inst_of(th);
        if (--inst.threads == 0 && !inst.finished) {
            inst.finished = true;
            if (!inst.daemon) --live_nondaemon_;
        }
    }

    bool exec(detail::Thread& th, const term::Seq& n) {
        th.stack.push_back(n.second);
        th.current = n.first;
        return true;
    }

    bool exec(detail::Thread& th, const term::Par& n) {
        std::size_t j = joins_.size();
        joins_.push_back(detail::Join{2, std::move(th.stack)});
        th.stack = {detail::Cont{j}};
        th.current = n.left;
        auto& other = new_thread(th.instance, n.right);
        other.stack = {detail::Cont{j}};
        ++inst_of(th).threads;
        schedule_thread(other.id, now_);
        return true;
    }

    bool exec(detail::Thread& th, const term::Choose& n) {
        std::vector<double> w;
        w.reserve(n.branches.size());
        for (const auto& b : n.branches) w.push_back(b.first);
        th.current = n.branches[sample_index(w, inst_of(th).rng)].second;
        return true;
    }

    bool exec(detail::Thread& th, const term::Call& n) {
        th.current = body(n.process);
        return true;
    }

    bool exec(detail::Thread& th, const term::Spawn& n) {
        auto& p = inst_of(th);
        // Work spawned by a standing service is ordinary work, not part of the service.
        auto& child = new_instance(n.process, next_subject(n.process), false);
        child.scope.vars = p.scope.vars;
        child.scope.vars["process"] = n.process;
        child.scope.self = p.scope.self;
        child.scope.carried = p.scope.carried;
        child.scope.memory = p.scope.memory;
        child.origin = p.origin;
        launch(child.id, body(n.process));
        th.current = n.next;
        return true;
    }

    bool exec(detail::Thread& th, const term::If& n) {
        th.current = test(th, n.condition) ? n.then_branch : n.else_branch;
        return true;
    }

    bool test(detail::Thread& th, const Condition& c) {
        auto& inst = inst_of(th);
        switch (c.type) {
        case Condition::Type::Match: {
            auto loc = resolve_location(c.at, inst);
            return match_pattern(resolve_pattern(c.pattern, inst), at(loc), m_.kinds).has_value();
        }
        case Condition::Type::Guard: {
            auto rule = find_rule(c.rule);
            if (!rule->guard) return true;
            auto loc = resolve_location(c.at, inst);
            auto params = resolve_params(c.params, inst);
            RuleContext ctx(loc, at(loc), params, *this, inst.scope, inst.rng, ids_);
            return rule->guard(ctx);
        }
        case Condition::Type::VarEquals: {
            auto it = inst.scope.vars.find(c.var);
            return it != inst.scope.vars.end() && compare(it->second, Comparator::Eq, c.value);
        }
        }
        return false;
    }

    const ModificationRule* find_rule(const std::string& name) const {
        auto r = rules_.find(name);
        if (!r) throw Error(ErrorCode::UnknownRule, "rule '" + name + "' is not registered");
        return r;
    }

    bool exec(detail::Thread& th, const term::Prefix& n) {
        auto d = try_prefix(th, n);
        if (!d) {
            guard_waiters_.push_back(th.id);
            return false;
        }
        th.current = n.next;
        if (*d > 0) {
            schedule_thread(th.id, now_ + *d);
            return false;
        }
        return true;
    }

    /// Runs the action if its guard holds; returns the sampled duration, nullopt if blocked.
    std::optional<double> try_prefix(detail::Thread& th, const term::Prefix& n) {
        auto& inst = inst_of(th);
        const Action& a = n.action;
        const ModificationRule* rule = find_rule(a.name);
        std::string loc = a.at.empty() ? std::string{} : resolve_location(a.at, inst);
        AttrMap params = resolve_params(a.params, inst);
        ResourceBundle before = at(loc);
        RuleContext ctx(loc, before, params, *this, inst.scope, inst.rng, ids_);
        if (rule->guard && !rule->guard(ctx)) return std::nullopt;
        std::uint64_t first_new = ids_.peek();
        try {
            if (rule->effect) {
                ResourceBundle after = rule->effect(ctx);
                verify_effect(before, after, first_new, ids_, &m_.kinds, a.name);
                apply_local(loc, before, std::move(after), inst.scope.subject);
            }
        } catch (const Error& e) {
            throw Error(e.code(), std::string(e.what()) + " [t=" + format_real(now_) + ", subject " + inst.scope.subject +
                                      ", action " + a.name + " at " + loc + "]");
        }
        double d = ctx.duration_override ? *ctx.duration_override : sample(a.duration, inst.rng);
        if (d < 0) throw Error(ErrorCode::Runtime, "negative duration for action " + a.name);
        std::string type = a.event_type();
        if (!type.empty()) log(type, loc, inst.scope.subject, std::move(ctx.details));
        for (const auto& [id, attr, v] : ctx.updates) update_attribute(id, attr, v, a.name);
        for (auto id : ctx.destroyed) destroy_anywhere(id, inst.scope.subject);
        for (const auto& [id, to] : ctx.relocations) relocate(id, to, inst.scope.subject);
        return d;
    }

    void apply_local(const std::string& loc, const ResourceBundle& before, ResourceBundle after, const std::string& subject) {
        for (const auto& a : before)
            if (!after.contains(a.id)) {
                index_remove(a);
                --expected_atoms_;
                log("destroy", loc, subject, movement_details(a.kind, {a.id}));
            }
        for (const auto& a : after)
            if (!before.contains(a.id)) {
                index_add(a, loc, false);
                ++expected_atoms_;
                log("create", loc, subject, movement_details(a.kind, {a.id}));
            }
        if (!(before == after)) {
            bundles_[loc] = std::move(after);
            touch(loc);
        }
    }

    void update_attribute(AtomId id, const std::string& attr, const AttrValue& v, const std::string& rule) {
        auto w = where_.find(id.value);
        if (w == where_.end()) throw Error(ErrorCode::Runtime, "rule '" + rule + "' updated a destroyed atom");
        ResourceAtom* a = nullptr;
        if (w->second.held) {
            a = &held_.find(id.value)->second;
        } else {
            a = bundles_[w->second.location].find(id);
            touch(w->second.location);
        }
        a->attributes[attr] = v;
        auto why = schema_violation(*a, m_.kinds);
        if (!why.empty()) throw Error(ErrorCode::EffectViolatesSchema, "rule '" + rule + "': " + why);
        changed_ = true;
    }

    void destroy_anywhere(AtomId id, const std::string& subject) {
        auto w = where_.find(id.value);
        if (w == where_.end()) return;
        if (w->second.held) {
            auto h = held_.find(id.value);
            auto kind = h->second.kind;
            index_remove(h->second);
            held_.erase(h);
            --expected_atoms_;
            changed_ = true;
            log("destroy", "", subject, movement_details(kind, {id}));
            return;
        }
        std::string loc = w->second.location;
        auto a = take_from(loc, id);
        index_remove(*a);
        --expected_atoms_;
        log("destroy", loc, subject, movement_details(a->kind, {id}));
    }

    void relocate(AtomId id, const std::string& to, const std::string& subject) {
        auto from = locate(id);
        if (!from) throw Error(ErrorCode::Runtime, "relocation of atom " + std::to_string(id.value) + " that is not placed");
        if (!m_.graph.has_node(to)) throw Error(ErrorCode::UnknownLocation, "relocation to '" + to + "'");
        if (*from == to) return;
        if (!m_.graph.has_edge(*from, to)) throw Error(ErrorCode::MoveWithoutEdge, *from + " -> " + to);
        auto a = take_from(*from, id);
        auto d = movement_details(a->kind, {id});
        d.emplace_back("from", *from);
        d.emplace_back("to", to);
        put(to, std::move(*a));
        log("move", to, subject, std::move(d));
    }

    bool exec(detail::Thread& th, const term::Claim& n) {
        auto& inst = inst_of(th);
        std::string loc = resolve_location(n.at, inst);
        auto p = resolve_pattern(n.pattern, inst);
        if (auto ids = match_pattern(p, at(loc), m_.kinds)) {
            complete_claim(th, n, loc, *ids, 0.0);
            th.current = n.next;
            return true;
        }
        enqueue_claim(th, loc, std::move(p));
        return false;
    }

    void complete_claim(detail::Thread& th, const term::Claim& n, const std::string& loc, const std::vector<AtomId>& ids,
                        double wait) {
        auto& inst = inst_of(th);
        for (auto id : ids) {
            auto a = take_from(loc, id);
            index_add(*a, loc, true);
            held_.emplace(id.value, std::move(*a));
        }
        if (!n.pattern.binding.empty()) inst.scope.bindings[n.pattern.binding] = BindingState{ids, true};
        auto d = movement_details(n.pattern.kind, ids);
        d.emplace_back("wait", wait);
        log("claim", loc, inst.scope.subject, std::move(d));
    }

    bool exec(detail::Thread& th, const term::Move& n) {
        auto& inst = inst_of(th);
        std::string from = resolve_location(n.from, inst);
        std::string to = resolve_location(n.to, inst);
        if (!m_.graph.has_edge(from, to))
            throw Error(ErrorCode::MoveWithoutEdge, inst.scope.subject + ": " + from + " -> " + to);
        auto p = resolve_pattern(n.pattern, inst);
        if (auto ids = match_pattern(p, at(from), m_.kinds)) {
            complete_move(th, n, from, to, *ids);
            th.current = n.next;
            return true;
        }
        enqueue_claim(th, from, std::move(p));
        return false;
    }

    void complete_move(detail::Thread& th, const term::Move& n, const std::string& from, const std::string& to,
                       const std::vector<AtomId>& ids) {
        auto& inst = inst_of(th);
        for (auto id : ids) put(to, std::move(*take_from(from, id)));
        if (!n.pattern.binding.empty()) inst.scope.bindings[n.pattern.binding] = BindingState{ids, false};
        auto d = movement_details(n.pattern.kind, ids);
        d.emplace_back("from", from);
        d.emplace_back("to", to);
        log("move", to, inst.scope.subject, std::move(d));
    }

    bool exec(detail::Thread& th, const term::Release& n) {
        auto& inst = inst_of(th);
        auto it = inst.scope.bindings.find(n.binding);
        if (it == inst.scope.bindings.end() || !it->second.held)
            throw Error(ErrorCode::UnknownBinding, inst.scope.subject + ": release of '" + n.binding + "' which is not held");
        std::string loc = resolve_location(n.at, inst);
        std::string kind;
        std::vector<AtomId> released;
        for (auto id : it->second.ids) {
            auto h = held_.find(id.value);
            if (h == held_.end()) continue;  // destroyed while held
            kind = h->second.kind;
            ResourceAtom a = std::move(h->second);
            held_.erase(h);
            where_.erase(id.value);
            released.push_back(id);
            put(loc, std::move(a));
        }
        it->second.held = false;
        log("release", loc, inst.scope.subject, movement_details(kind.empty() ? std::string{} : kind, released));
        th.current = n.next;
        return true;
    }

    // ---------------------------------------------------------------- waiting

    void enqueue_claim(detail::Thread& th, const std::string& loc, ResourcePattern p) {
        std::string sig = signature(p);
        std::string kind = p.kind;
        claim_waiters_[loc][sig].push_back(detail::ClaimWaiter{th.id, now_, seq_++, std::move(p), std::move(kind)});
        changed_ = true;
    }

    // Serves claim queues at changed locations (heads only, FIFO), then re-tests
    // guard waiters in enqueue order, until nothing more can proceed.
    void wake() {
        while (changed_) {
            changed_ = false;
            auto dirty = std::move(dirty_);
            dirty_.clear();
            bool progressed = false;
            for (const auto& loc : dirty) {
                auto qit = claim_waiters_.find(loc);
                if (qit == claim_waiters_.end()) continue;
                while (serve_one(loc, qit->second)) progressed = true;
                if (qit->second.empty()) claim_waiters_.erase(qit);
            }
            for (auto it = guard_waiters_.begin(); it != guard_waiters_.end();) {
                auto& th = *threads_[*it];
                const auto& n = std::get<term::Prefix>(th.current->node);
                auto d = try_prefix(th, n);
                if (!d) {
                    ++it;
                    continue;
                }
                it = guard_waiters_.erase(it);
                th.current = n.next;
                schedule_thread(th.id, now_ + *d);
                progressed = true;
                if (changed_) break;  // re-serve claim queues before later guards
            }
            if (!progressed && dirty_.empty()) changed_ = false;
        }
    }

    bool serve_one(const std::string& loc, std::map<std::string, std::deque<detail::ClaimWaiter>>& queues) {
        // Among queue heads, the earliest enqueued that can be satisfied goes first.
        std::vector<std::pair<std::uint64_t, std::string>> heads;
        for (const auto& [sig, q] : queues)
            if (!q.empty()) heads.emplace_back(q.front().seq, sig);
        std::sort(heads.begin(), heads.end());
        for (const auto& [seq, sig] : heads) {
            auto& q = queues[sig];
            auto& w = q.front();
            auto ids = match_pattern(w.pattern, at(loc));
            if (!ids) continue;
            auto& th = *threads_[w.thread];
            double wait = now_ - w.since;
            q.pop_front();
            if (q.empty()) queues.erase(sig);
            if (auto c = std::get_if<term::Claim>(&th.current->node)) {
                complete_claim(th, *c, loc, *ids, wait);
                th.current = c->next;
            } else {
                const auto& mv = std::get<term::Move>(th.current->node);
                auto& inst = inst_of(th);
                complete_move(th, mv, loc, resolve_location(mv.to, inst), *ids);
                th.current = mv.next;
            }
            schedule_thread(th.id, now_);
            return true;
        }
        return false;
    }

    const ModelSpec& m_;
    const RuleRegistry& rules_;
    RunConfig cfg_;

    double now_ = 0.0;
    std::uint64_t seq_ = 0;
    AtomAllocator ids_;
    std::map<std::string, ResourceBundle, std::less<>> bundles_;
    std::unordered_map<std::uint64_t, Where> where_;
    std::map<std::string, std::set<std::uint64_t>, std::less<>> by_kind_;
    std::map<std::uint64_t, ResourceAtom> held_;
    std::map<std::string, AtomId> agent_marker_;
    ResourceBundle empty_;

    std::vector<std::unique_ptr<detail::Instance>> instances_;
    std::vector<std::unique_ptr<detail::Thread>> threads_;
    std::vector<detail::Join> joins_;
    std::map<std::string, std::size_t> spawn_count_;
    std::vector<detail::EnvState> envs_;
    std::priority_queue<detail::Scheduled, std::vector<detail::Scheduled>, std::greater<>> queue_;

    std::map<std::string, std::map<std::string, std::deque<detail::ClaimWaiter>>, std::less<>> claim_waiters_;
    std::list<std::size_t> guard_waiters_;
    std::set<std::string> dirty_;
    bool changed_ = false;

    std::size_t live_nondaemon_ = 0;
    std::size_t expected_atoms_ = 0;
    EventLog log_;
    std::string end_reason_;
    std::size_t blocked_at_end_ = 0;
    double end_time_ = 0.0;
};

/// Executes one seeded run of `m`. The model should already pass validate_model.
inline RunResult run_model(const ModelSpec& m, const RuleRegistry& rules, const RunConfig& cfg) {
    return Engine(m, rules, cfg).run();
}

} // namespace metaphorsim
