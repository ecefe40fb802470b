#include "m2i/orchestrator.hpp"

#include <algorithm>

namespace m2i::orchestrator {

using protocol::Reason;

void MethodCatalog::add_method(Method m)
{
    const std::string id = m.spec.method_id;
    if (!methods_.emplace(id, std::move(m)).second)
        throw OrchestratorError("duplicate method " + id);
}

const Method* MethodCatalog::method(const std::string& id) const
{
    auto it = methods_.find(id);
    return it == methods_.end() ? nullptr : &it->second;
}

loa::InstanceAggregate MethodCatalog::aggregate(const Combination& combo) const
{
    std::vector<loa::AuthMethodSpec> specs;
    std::size_t weighted = 0;
    for (const auto& id : combo) {
        const Method* m = method(id);
        if (!m)
            throw OrchestratorError("unknown method " + id);
        specs.push_back(m->spec);
        weighted += m->weighted ? 1 : 0;
    }
    if (weighted == 0)
        specs = loa::with_equal_weights(std::move(specs));
    else if (weighted != specs.size())
        throw OrchestratorError("combination mixes weighted and unweighted methods");
    return loa::agg_dloa_instance(specs);
}

void MethodCatalog::add_combination(loa::LoaValue rloa, protocol::Mode mode, Combination combo)
{
    if (combo.empty())
        throw OrchestratorError("empty method combination");
    const auto agg = aggregate(combo);
    if (agg.floored < rloa)
        throw OrchestratorError("combination aggregates to " + agg.raw.str() + ", below LoA " +
                                std::to_string(rloa.value()));
    combos_[{rloa.value(), mode}].push_back(std::move(combo));
}

const std::vector<Combination>& MethodCatalog::combinations(loa::LoaValue rloa, protocol::Mode mode) const
{
    static const std::vector<Combination> none;
    auto it = combos_.find({rloa.value(), mode});
    return it == combos_.end() ? none : it->second;
}

void AuthzPolicy::allow(std::uint32_t client, std::uint32_t target, std::uint8_t restrictions)
{
    entries_[{client, target}] = {true, restrictions};
}

void AuthzPolicy::deny(std::uint32_t client, std::uint32_t target) { entries_[{client, target}] = {false, 0}; }

AdfResult adf_check(std::uint32_t client, std::uint32_t target, const AuthzPolicy& policy)
{
    auto it = policy.entries_.find({client, target});
    return it == policy.entries_.end() ? AdfResult{} : it->second;
}

loa::LoaValue required_loa(const AuthRequest& req, const protocol::Registry& registry)
{
    if (req.targets.empty())
        throw OrchestratorError("request names no targets");
    loa::LoaValue out;
    for (auto t : req.targets) {
        const auto* d = registry.device(t);
        if (!d)
            throw OrchestratorError("unknown target " + std::to_string(t));
        out = std::max(out, d->rloa());
    }
    return out;
}

std::vector<Combination> negotiate(const AuthRequest& req, const MethodCatalog& catalog,
                                   const protocol::Registry& registry)
{
    const loa::LoaValue need = required_loa(req, registry);
    std::vector<Combination> out;
    // a combination listed under a higher LoA also satisfies a lower one
    for (int level = need.value(); level <= loa::LoaValue::kMax; ++level)
        for (const auto& combo : catalog.combinations(loa::LoaValue(level), req.mode)) {
            const bool offered = std::all_of(combo.begin(), combo.end(), [&](const std::string& id) {
                return std::find(req.offered.begin(), req.offered.end(), id) != req.offered.end();
            });
            if (offered && std::find(out.begin(), out.end(), combo) == out.end())
                out.push_back(combo);
        }
    return out;
}

const char* verdict_code(Verdict v)
{
    switch (v) {
    case Verdict::Granted: return "GRANTED";
    case Verdict::DeniedLoa: return "DENIED(loa)";
    case Verdict::DeniedAuthz: return "DENIED(authz)";
    case Verdict::Failed: return "FAILED";
    }
    return "?";
}

Coordinator::Coordinator(std::shared_ptr<const protocol::Registry> registry,
                         std::shared_ptr<const MethodCatalog> catalog, std::shared_ptr<const AuthzPolicy> policy,
                         FactorVerifier verifier, CoordinatorSettings settings)
    : registry_(std::move(registry)),
      catalog_(std::move(catalog)),
      policy_(std::move(policy)),
      verifier_(std::move(verifier)),
      settings_(settings)
{
    if (!verifier_)
        verifier_ = [](std::uint32_t, const std::string&) { return true; };
}

protocol::IssuePolicy Coordinator::issue_policy()
{
    return [this](const protocol::IssueRequest& r) { return decide(r); };
}

protocol::IssueDecision Coordinator::decide(const protocol::IssueRequest& r) const
{
    protocol::IssueDecision d;
    d.allowed = false;
    std::lock_guard lock(mu_);
    auto it = grants_.find(r.client);
    if (it == grants_.end())
        return d;
    const Grant& g = it->second;
    if (!g.factors.count(r.factor_index)) {
        d.deny_reason = Reason::LoaInsufficient;
        return d;
    }
    std::optional<std::uint8_t> restrictions;
    for (auto t : r.targets) {
        if (!g.targets.count(t))
            return d;
        const std::uint8_t rt = g.restrictions.at(t);
        if (restrictions && *restrictions != rt)
            return d;
        restrictions = rt;
    }
    d.allowed = true;
    d.loa = g.loa;
    d.restrictions = restrictions.value_or(0);
    return d;
}

SessionOutcome Coordinator::coordinate(const AuthRequest& req, protocol::ClientEnv env, protocol::Channel& ch)
{
    SessionOutcome out;
    out.rloa = required_loa(req, *registry_);
    const protocol::ClientRecord* client = registry_->client(req.client);
    if (!client) {
        out.detail = "unknown client";
        return out;
    }

    const auto offers = negotiate(req, *catalog_, *registry_);
    if (offers.empty()) {
        out.verdict = Verdict::DeniedLoa;
        out.detail = "no offered method combination reaches LoA " + std::to_string(out.rloa.value());
        return out;
    }

    // factor checks and LoADM, with a bounded number of further attempts
    for (unsigned attempt = 0; attempt <= settings_.retry_budget && !out.combination; ++attempt) {
        ++out.attempts;
        for (const auto& combo : offers) {
            Combination passed;
            for (const auto& id : combo)
                if (verifier_(req.client, id))
                    passed.push_back(id);
            if (passed.empty())
                continue;
            auto agg = catalog_->aggregate(passed);
            if (!out.instance || agg.raw > out.instance->raw)
                out.instance = agg;
            if (loa::access_decision(agg.floored, out.rloa)) {
                out.combination = passed;
                out.instance = agg;
                break;
            }
        }
    }
    if (!out.combination) {
        out.verdict = Verdict::DeniedLoa;
        out.detail = "authenticated methods fall short of the required LoA";
        return out;
    }

    // LoAAM, only for sessions with earlier instances
    out.session_loa = out.instance->floored;
    if (!req.history.prior.empty()) {
        loa::SessionAggregationInput in{req.history.mode, req.history.prior};
        in.instance_values.push_back(out.instance->raw);
        out.session_loa = req.history.mode == loa::AggregationMode::SingleClient ? loa::agg_dloa_session_single(in)
                                                                                 : loa::agg_dloa_session_chain(in);
        if (!loa::access_decision(*out.session_loa, out.rloa)) {
            out.verdict = Verdict::DeniedLoa;
            out.detail = "session aggregate below the required LoA";
            return out;
        }
    }

    Grant grant;
    grant.loa = static_cast<std::uint8_t>(out.session_loa->value());
    std::optional<std::uint8_t> shared;
    for (auto t : req.targets) {
        const AdfResult a = adf_check(req.client, t, *policy_);
        if (!a.allowed) {
            out.verdict = Verdict::DeniedAuthz;
            out.detail = "client not authorized for target " + std::to_string(t);
            return out;
        }
        if (req.mode == protocol::Mode::O2M && shared && *shared != a.restrictions) {
            out.verdict = Verdict::DeniedAuthz;
            out.detail = "targets of one group ticket carry different restrictions";
            return out;
        }
        shared = a.restrictions;
        grant.targets.insert(t);
        grant.restrictions[t] = a.restrictions;
    }
    out.restrictions = req.mode == protocol::Mode::O2M ? shared.value_or(0) : grant.restrictions.begin()->second;

    std::vector<protocol::Client> factors;
    std::vector<loa::AuthMethodSpec> specs;
    for (const auto& id : *out.combination) {
        const Method* m = catalog_->method(id);
        if (m->factor >= client->factor_keys.size()) {
            out.detail = "client has no key for method " + id;
            return out;
        }
        grant.factors.insert(m->factor);
        factors.emplace_back(protocol::ClientIdentity{req.client, client->factor_keys[m->factor]}, env);
        specs.push_back(m->spec);
    }

    {
        std::lock_guard lock(mu_);
        if (!grants_.emplace(req.client, grant).second)
            throw OrchestratorError("client already has a session in progress");
    }
    try {
        out.run = protocol::run_two_factor(factors, specs, req.mode, req.targets, ch);
    } catch (...) {
        std::lock_guard lock(mu_);
        grants_.erase(req.client);
        throw;
    }
    {
        std::lock_guard lock(mu_);
        grants_.erase(req.client);
    }
    out.verdict = out.run->ok ? Verdict::Granted : Verdict::Failed;
    if (!out.run->ok)
        for (const auto& f : out.run->factors)
            if (f.reason) {
                out.detail = protocol::reason_name(*f.reason);
                break;
            }
    return out;
}

}  // namespace m2i::orchestrator
