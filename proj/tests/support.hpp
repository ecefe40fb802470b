#pragma once

#include "m2i/harness/config.hpp"
#include "m2i/harness/transport.hpp"
#include "m2i/protocol.hpp"

#include <filesystem>
#include <memory>

namespace m2i::test {

inline constexpr std::uint32_t kNow = 1700000000;

inline std::filesystem::path fixture(const std::string& name)
{
    return std::filesystem::path(M2I_FIXTURE_DIR) / name;
}

/// A full in-process deployment with a settable clock.
struct Deployment {
    harness::Topology topo;
    protocol::Config config;
    std::shared_ptr<std::uint32_t> server_now = std::make_shared<std::uint32_t>(kNow);
    std::shared_ptr<std::uint32_t> client_now = std::make_shared<std::uint32_t>(kNow);
    crypto::DeterministicRandom server_rng{0x5eed};
    crypto::DeterministicRandom client_rng{1};
    crypto::OpCounter server_ops;
    crypto::OpCounter client_ops;
    std::unique_ptr<harness::Servers> servers;
    std::unique_ptr<harness::InProcessChannel> channel;

    explicit Deployment(harness::Topology t, protocol::Config cfg = {}) : topo(std::move(t)), config(cfg)
    {
        auto sn = server_now;
        servers = std::make_unique<harness::Servers>(topo, config, server_rng, [sn] { return *sn; });
        channel = std::make_unique<harness::InProcessChannel>(*servers, &server_ops);
    }

    protocol::Clock client_clock() const
    {
        auto cn = client_now;
        return [cn] { return *cn; };
    }

    protocol::ClientEnv env()
    {
        return {topo.as_id, config, &client_rng, client_clock(), &client_ops};
    }

    protocol::Client client(std::uint32_t id = 11, std::size_t factor = 0)
    {
        return protocol::Client({id, topo.registry->client(id)->factor_keys.at(factor)}, env());
    }

    crypto::OpCounter total_ops() const
    {
        crypto::OpCounter all = client_ops;
        all += server_ops;
        return all;
    }
};

}  // namespace m2i::test
