#pragma once

#include "m2i/cost_model.hpp"
#include "m2i/harness/config.hpp"
#include "m2i/harness/transport.hpp"
#include "m2i/orchestrator.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace m2i::harness {

/// Closed-form op counts for a run whose clients derive `chain_length` links per target.
/// The closed forms assume one hash per target in the initial run.
cost::OpCounts expected_ops(cost::Protocol p, unsigned nt, unsigned factors, std::size_t chain_length);

struct LiveResult {
    cost::Protocol protocol = cost::Protocol::P2P;  // the reauth variant for a re-authentication phase
    std::uint32_t client = 0;
    unsigned nt = 1;
    unsigned factors = 1;
    bool ok = false;
    std::optional<protocol::Reason> reason;
    std::string verdict;  // set for coordinated runs
    std::optional<std::string> expected_verdict;
    std::size_t live_bits = 0;
    std::optional<cost::OpCounts> live_ops;  // only when every party ran in this process
    cost::OpCounts expected;
    cost::CostReport oracle;
    std::size_t server_rejections = 0;
    bool tampered = false;
    std::vector<protocol::TranscriptEntry> transcript;

    bool bits_match() const { return live_bits == oracle.comm_bits; }
    bool ops_match() const { return !live_ops || *live_ops == expected; }
    /// An honest run must succeed and agree with the closed forms; a tampered one must be stopped somewhere.
    bool passed() const;
};

std::string to_json(const std::vector<LiveResult>& results);

struct LiveSettings {
    protocol::Config config;
    std::uint64_t seed = 1;
    std::optional<std::uint32_t> fixed_time;
    TransportKind transport = TransportKind::InProcess;
};

/// A complete deployment (servers, transport, clients) in this process.
class LiveHarness {
public:
    LiveHarness(Topology topo, LiveSettings settings, std::optional<Policy> policy = std::nullopt);
    ~LiveHarness();

    /// The initial phase, followed by the re-authentication phase when requested.
    std::vector<LiveResult> run(const RunSpec& spec);

    Servers& servers() { return *servers_; }
    const Topology& topology() const { return topo_; }
    protocol::Clock clock() const { return clock_; }

private:
    protocol::Channel& base_channel();
    std::size_t refused() const;

    Topology topo_;
    LiveSettings settings_;
    std::optional<Policy> policy_;
    std::unique_ptr<crypto::DeterministicRandom> rng_;         // client side
    std::unique_ptr<crypto::DeterministicRandom> server_rng_;  // server threads must not share the client's
    protocol::Clock clock_;
    std::unique_ptr<Servers> servers_;
    crypto::OpCounter counter_;
    std::unique_ptr<InProcessChannel> inproc_;
    std::unique_ptr<TcpServer> tcp_server_;
    std::unique_ptr<TcpChannel> tcp_channel_;
    std::unique_ptr<orchestrator::Coordinator> coordinator_;
};

struct ScenarioResult {
    std::string name;
    std::vector<LiveResult> results;
    bool passed() const;
};

ScenarioResult run_scenario(const ScenarioSpec& spec);

/// Live runs of every protocol for NT 1..max_nt and 1 or 2 factors, initial and re-authentication,
/// each checked against the closed forms.
std::vector<LiveResult> verify_grid(unsigned max_nt = 10, std::uint64_t seed = 1);

}  // namespace m2i::harness
