#pragma once

#include "m2i/protocol.hpp"
#include "m2i/wire.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

namespace m2i::kerberos {

using protocol::Bytes;
using protocol::Channel;
using protocol::Clock;
using protocol::OpCounter;
using protocol::RandomSource;
using protocol::RunOutcome;
using protocol::SymKey;

/// Deployment constants shared by the AS and the TGS.
struct KdcConfig {
    std::uint8_t realm = 1;
    std::uint32_t as_id = 0;
    std::uint32_t tgs_id = 0;
    SymKey tgs_key;
    std::uint32_t delta_t = 60;
    std::uint32_t lifetime = 3600;
    std::uint8_t address = 10;  // AD_C stub
};

/// Issues TGTs (Msg1 -> Msg2).
class KerberosAs {
public:
    KerberosAs(KdcConfig cfg, std::shared_ptr<const protocol::Registry> registry, RandomSource& rng, Clock clock);
    std::uint32_t id() const { return cfg_.as_id; }
    Bytes handle(std::span<const std::uint8_t> frame, OpCounter* counter = nullptr);

private:
    KdcConfig cfg_;
    std::shared_ptr<const protocol::Registry> registry_;
    protocol::LockedRandom rng_;
    Clock clock_;
};

/// Issues SGTs (Msg3 -> Msg4).
class Tgs {
public:
    Tgs(KdcConfig cfg, std::shared_ptr<const protocol::Registry> registry, RandomSource& rng, Clock clock);
    std::uint32_t id() const { return cfg_.tgs_id; }
    Bytes handle(std::span<const std::uint8_t> frame, OpCounter* counter = nullptr);

private:
    KdcConfig cfg_;
    std::shared_ptr<const protocol::Registry> registry_;
    protocol::LockedRandom rng_;
    Clock clock_;
};

/// Target side of Msg5 -> Msg6.
class KerberosDevice {
public:
    KerberosDevice(protocol::DeviceRecord record, std::uint8_t realm, std::uint32_t delta_t, RandomSource& rng,
                   Clock clock);
    std::uint32_t id() const { return record_.id; }
    Bytes handle(std::span<const std::uint8_t> frame, OpCounter* counter = nullptr);
    /// Number of Msg5 this device accepted.
    std::size_t accepted() const;

private:
    protocol::DeviceRecord record_;
    std::uint8_t realm_;
    std::uint32_t delta_t_;
    protocol::LockedRandom rng_;
    Clock clock_;
    mutable std::mutex mu_;
    std::size_t accepted_ = 0;
};

struct KerberosClientEnv {
    std::uint32_t as_id = 0;
    std::uint32_t tgs_id = 0;
    std::uint8_t realm = 1;
    std::uint32_t lifetime = 3600;
    protocol::Config config;
    RandomSource* rng = nullptr;
    Clock clock;
    OpCounter* counter = nullptr;
};

class KerberosClient {
public:
    KerberosClient(std::uint32_t id, SymKey key, KerberosClientEnv env);

    /// One TGT, then `factors` service tickets per target, each used once.
    RunOutcome run(Channel& ch, const std::vector<std::uint32_t>& targets, unsigned factors = 1);
    /// Msg5/Msg6 again with every service ticket held.
    RunOutcome reauth(Channel& ch);

    std::size_t service_tickets() const { return sgts_.size(); }

private:
    struct ServiceTicket {
        std::uint32_t target = 0;
        SymKey key;
        crypto::SealedBox sgt;
    };

    void get_tgt(protocol::Exchanger& ex);
    ServiceTicket get_sgt(protocol::Exchanger& ex, std::uint32_t target);
    void use_sgt(protocol::Exchanger& ex, const ServiceTicket& st);
    wire::KrbTimes request_times() const;

    std::uint32_t id_;
    SymKey key_;
    KerberosClientEnv env_;
    std::optional<SymKey> tgs_session_key_;
    std::optional<crypto::SealedBox> tgt_;
    std::vector<ServiceTicket> sgts_;
};

}  // namespace m2i::kerberos
