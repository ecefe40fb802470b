#pragma once

#include "m2i/loa.hpp"
#include "m2i/protocol.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace m2i::orchestrator {

class OrchestratorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A client-side authentication method. `factor` selects the client's long-term key that realizes it.
struct Method {
    loa::AuthMethodSpec spec;
    std::size_t factor = 0;
    /// false: spec.weight is ignored and a combination of such methods is weighted 1/n.
    bool weighted = true;
};

using Combination = std::vector<std::string>;  // method ids

/// Acceptable method combinations per required LoA and interaction mode.
class MethodCatalog {
public:
    void add_method(Method m);
    /// Throws when the combination's aggregate falls below `rloa` or names an unknown method.
    void add_combination(loa::LoaValue rloa, protocol::Mode mode, Combination combo);

    const Method* method(const std::string& id) const;
    const std::vector<Combination>& combinations(loa::LoaValue rloa, protocol::Mode mode) const;
    /// Weighted sum over the listed methods.
    loa::InstanceAggregate aggregate(const Combination& combo) const;

private:
    std::map<std::string, Method> methods_;
    std::map<std::pair<int, protocol::Mode>, std::vector<Combination>> combos_;
};

struct AdfResult {
    bool allowed = false;
    std::uint8_t restrictions = 0;
};

/// (client, target) authorization; anything not listed is denied.
class AuthzPolicy {
public:
    void allow(std::uint32_t client, std::uint32_t target, std::uint8_t restrictions = 0);
    void deny(std::uint32_t client, std::uint32_t target);
    const std::map<std::pair<std::uint32_t, std::uint32_t>, AdfResult>& entries() const { return entries_; }

private:
    friend AdfResult adf_check(std::uint32_t client, std::uint32_t target, const AuthzPolicy& policy);
    std::map<std::pair<std::uint32_t, std::uint32_t>, AdfResult> entries_;
};

AdfResult adf_check(std::uint32_t client, std::uint32_t target, const AuthzPolicy& policy);

/// Earlier instances of the same session, for the session aggregate.
struct SessionHistory {
    loa::AggregationMode mode = loa::AggregationMode::SingleClient;
    std::vector<loa::Rational> prior;  // pre-floor aggregates, oldest first
};

struct AuthRequest {
    std::uint32_t client = 0;
    std::vector<std::uint32_t> targets;
    protocol::Mode mode = protocol::Mode::P2P;
    std::vector<std::string> offered;  // method ids
    SessionHistory history;
};

/// Highest RLoA among the targets. Throws on an unknown target.
loa::LoaValue required_loa(const AuthRequest& req, const protocol::Registry& registry);

/// Combinations from the catalog that meet the targets' RLoA and use only offered methods.
std::vector<Combination> negotiate(const AuthRequest& req, const MethodCatalog& catalog,
                                   const protocol::Registry& registry);

/// Local stand-in for an identity provider: did the client pass this method?
using FactorVerifier = std::function<bool(std::uint32_t client, const std::string& method_id)>;

enum class Verdict { Granted, DeniedLoa, DeniedAuthz, Failed };

const char* verdict_code(Verdict v);  // "GRANTED", "DENIED(loa)", ...

struct SessionOutcome {
    Verdict verdict = Verdict::Failed;
    std::string detail;
    loa::LoaValue rloa;
    std::optional<Combination> combination;
    std::optional<loa::InstanceAggregate> instance;
    std::optional<loa::LoaValue> session_loa;
    std::uint8_t restrictions = 0;
    unsigned attempts = 0;
    std::optional<protocol::MultiFactorOutcome> run;

    bool granted() const { return verdict == Verdict::Granted; }
};

struct CoordinatorSettings {
    unsigned retry_budget = 1;
};

/// Drives negotiation, assurance checks, authorization and the protocol runs for one request at a time
/// per client. Install issue_policy() on the AuthServer so tickets are only issued for approved sessions.
class Coordinator {
public:
    Coordinator(std::shared_ptr<const protocol::Registry> registry, std::shared_ptr<const MethodCatalog> catalog,
                std::shared_ptr<const AuthzPolicy> policy, FactorVerifier verifier = {},
                CoordinatorSettings settings = {});

    protocol::IssuePolicy issue_policy();

    SessionOutcome coordinate(const AuthRequest& req, protocol::ClientEnv env, protocol::Channel& ch);

private:
    struct Grant {
        std::set<std::uint32_t> targets;
        std::set<std::size_t> factors;
        std::uint8_t loa = 1;
        std::map<std::uint32_t, std::uint8_t> restrictions;
    };

    protocol::IssueDecision decide(const protocol::IssueRequest& r) const;

    std::shared_ptr<const protocol::Registry> registry_;
    std::shared_ptr<const MethodCatalog> catalog_;
    std::shared_ptr<const AuthzPolicy> policy_;
    FactorVerifier verifier_;
    CoordinatorSettings settings_;
    mutable std::mutex mu_;
    std::map<std::uint32_t, Grant> grants_;
};

}  // namespace m2i::orchestrator
