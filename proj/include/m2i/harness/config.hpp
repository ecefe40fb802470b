#pragma once

#include "m2i/cost_model.hpp"
#include "m2i/orchestrator.hpp"
#include "m2i/protocol.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2i::harness {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Registry file contents: principals plus the server identities.
struct Topology {
    std::shared_ptr<protocol::Registry> registry;
    std::uint32_t as_id = 1;
    std::uint32_t tgs_id = 2;
    std::uint8_t realm = 1;
    crypto::SymKey tgs_key;
};

struct Policy {
    std::shared_ptr<orchestrator::MethodCatalog> catalog = std::make_shared<orchestrator::MethodCatalog>();
    std::shared_ptr<orchestrator::AuthzPolicy> authz = std::make_shared<orchestrator::AuthzPolicy>();
    std::map<std::uint32_t, loa::CloaAttributes> cloa;  // device id -> attribute levels
};

Topology parse_registry(const std::string& json_text);
Topology load_registry(const std::filesystem::path& file);
Policy parse_policy(const std::string& json_text);
Policy load_policy(const std::filesystem::path& file);

/// Overrides device CLoA attributes with the policy's values.
void apply_cloa(protocol::Registry& registry, const Policy& policy);

enum class TransportKind { InProcess, Tcp };

struct RunSpec {
    cost::Protocol protocol = cost::Protocol::P2P;  // initial protocol; reauth adds a second phase
    bool reauth = false;
    std::uint32_t client = 0;
    std::vector<std::uint32_t> targets;
    unsigned factors = 1;
    /// Go through negotiation, LoA and authorization before the protocol run.
    bool coordinate = false;
    std::vector<std::string> offered;
    /// Verdict a coordinated run must reach ("GRANTED", "DENIED(loa)", "DENIED(authz)").
    std::optional<std::string> expect;
    /// Flip this bit of the frame with this index in the run (both directions counted).
    std::optional<std::pair<std::size_t, std::size_t>> tamper;
};

struct ScenarioSpec {
    std::string name;
    std::filesystem::path registry;
    std::optional<std::filesystem::path> policy;
    std::uint64_t seed = 1;
    TransportKind transport = TransportKind::InProcess;
    std::size_t chain_length = 1;
    std::optional<std::uint32_t> fixed_time;
    std::vector<RunSpec> runs;
};

/// Relative registry/policy paths resolve against `base`.
ScenarioSpec parse_scenario(const std::string& json_text, const std::filesystem::path& base = {});
ScenarioSpec load_scenario(const std::filesystem::path& file);

/// Builds a registry in memory: `clients` clients with `factors` keys each and `devices` devices
/// in one group, ids from 101 (devices) and 11 (clients). Keys come from `seed`.
Topology synthetic_topology(std::size_t devices, std::size_t clients = 1, std::size_t factors = 2,
                            std::uint64_t seed = 7);

}  // namespace m2i::harness
