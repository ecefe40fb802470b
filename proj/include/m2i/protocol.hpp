#pragma once

#include "m2i/crypto.hpp"
#include "m2i/loa.hpp"
#include "m2i/wire.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2i::protocol {

using crypto::Bytes;
using crypto::Digest;
using crypto::EnNonce;
using crypto::OpCounter;
using crypto::RandomSource;
using crypto::SymKey;

enum class Reason {
    StaleTimestamp,
    IdentityMismatch,
    NonceMismatch,
    TicketInvalid,
    IntegrityFailure,
    ChainMismatch,
    ChainExhausted,
    UnexpectedMessage,
    NotEligible,
    NotAuthorized,
    LoaInsufficient,
    UnknownPrincipal,
    Timeout,
    Malformed,
};

const char* reason_name(Reason r);

class ProtocolError : public std::runtime_error {
public:
    ProtocolError(Reason reason, const std::string& what) : std::runtime_error(what), reason_(reason) {}
    Reason reason() const { return reason_; }

private:
    Reason reason_;
};

ProtocolError from_crypto_error(const crypto::CryptoError& e);

/// Runs f, turning codec and cipher failures into protocol rejections.
template <class F>
auto guarded(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const crypto::CryptoError& e) {
        throw from_crypto_error(e);
    } catch (const wire::WireError& e) {
        throw ProtocolError(Reason::Malformed, e.what());
    } catch (const bits::BitError& e) {
        throw ProtocolError(Reason::Malformed, e.what());
    }
}

// --- registry ---------------------------------------------------------------

enum class DeviceClass { C0, C1, C2, C2Plus };

const char* class_name(DeviceClass c);
DeviceClass parse_device_class(const std::string& s);
/// Which ticket types a requestor of this class may obtain.
bool may_request(DeviceClass c, wire::TicketType t);

struct DeviceRecord {
    std::uint32_t id = 0;
    SymKey long_term_key;
    std::optional<std::uint32_t> group_id;
    std::optional<SymKey> group_key;
    DeviceClass device_class = DeviceClass::C2;
    loa::CloaAttributes attributes;

    loa::LoaValue rloa() const { return loa::rloa(attributes); }
};

/// A requesting device; each factor is a separate long-term key shared with the AS.
struct ClientRecord {
    std::uint32_t id = 0;
    DeviceClass device_class = DeviceClass::C2;
    std::vector<SymKey> factor_keys;
};

struct Group {
    std::uint32_t id = 0;
    SymKey key;
    std::vector<std::uint32_t> members;
};

/// Provisioned once, then shared read-only between roles.
class Registry {
public:
    void add_device(DeviceRecord d);
    void add_client(ClientRecord c);
    void add_group(Group g);

    const DeviceRecord* device(std::uint32_t id) const;
    const ClientRecord* client(std::uint32_t id) const;
    const Group* group(std::uint32_t id) const;

    const std::map<std::uint32_t, DeviceRecord>& devices() const { return devices_; }
    const std::map<std::uint32_t, ClientRecord>& clients() const { return clients_; }
    const std::map<std::uint32_t, Group>& groups() const { return groups_; }

private:
    std::map<std::uint32_t, DeviceRecord> devices_;
    std::map<std::uint32_t, ClientRecord> clients_;
    std::map<std::uint32_t, Group> groups_;
};

// --- configuration ----------------------------------------------------------

struct Config {
    std::uint32_t delta_t = 60;  // seconds
    std::chrono::milliseconds client_timeout{2000};
    unsigned retries = 1;
    std::size_t max_chain = std::size_t{1} << 16;
    std::uint32_t ticket_lifetime = 3600;  // seconds
    /// Links the client derives per target; 0 sends a plain nonce authenticator.
    std::size_t chain_length = 2;
    /// Abort every O2M target on the first failing one.
    bool o2m_strict = false;
};

/// Seconds since the epoch, injectable for tests.
using Clock = std::function<std::uint32_t()>;
Clock system_clock();

/// Serialises access to a RandomSource shared by concurrent sessions.
class LockedRandom final : public RandomSource {
public:
    explicit LockedRandom(RandomSource& inner) : inner_(inner) {}
    void fill(std::span<std::uint8_t> out) override
    {
        std::lock_guard lock(mu_);
        inner_.fill(out);
    }

private:
    RandomSource& inner_;
    std::mutex mu_;
};

// --- verification algorithms ------------------------------------------------

bool ts_veri(std::uint32_t ts, std::uint32_t now, std::uint32_t delta_t);
bool id_veri(std::uint32_t id_s, std::uint32_t id_c);
bool en_veri(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Reason TI-Veri fails, or nullopt when the ticket is acceptable.
std::optional<Reason> ti_check(std::uint32_t sender_id, const wire::TicketInfo& info, std::uint32_t now,
                               loa::LoaValue rloa);
inline bool ti_veri(std::uint32_t sender_id, const wire::TicketInfo& info, std::uint32_t now, loa::LoaValue rloa)
{
    return !ti_check(sender_id, info, now, rloa);
}

struct TauthGenResult {
    crypto::SealedBox authenticator;
    std::optional<crypto::HashChain> chain;
};

/// n > 0 builds a chain from en_nonce and proves with h_n; n == 0 proves with en_nonce itself.
TauthGenResult tauth_gen(std::uint32_t client_id, const EnNonce& en_nonce, const SymKey& sk, std::size_t n,
                         RandomSource& rng, OpCounter* counter = nullptr);

enum class AuthType { Initial, Reauth };

struct TauthVeriResult {
    bool ok = false;
    std::optional<Digest> stored;  // link to keep after this instance
};

/// Initial: ID match, and a presented link becomes the stored one when the ticket is reusable.
/// Re-auth: accept r iff H(r) equals the stored link, then r replaces it.
TauthVeriResult tauth_veri(const wire::TicketInfo& info, const wire::Authenticator& auth, AuthType type,
                           const std::optional<Digest>& stored, OpCounter* counter = nullptr);

// --- authentication server --------------------------------------------------

struct IssueRequest {
    std::uint32_t client = 0;
    std::vector<std::uint32_t> targets;
    wire::TicketType type = wire::TicketType::P2P;
    std::size_t factor_index = 0;
};

struct IssueDecision {
    bool allowed = true;
    Reason deny_reason = Reason::NotAuthorized;
    std::uint8_t loa = 3;
    std::uint8_t restrictions = 0;
    std::uint8_t flags = wire::kReusable;
    std::uint32_t lifetime = 0;  // 0: configured default
};

/// Authorization and LoA hook consulted before a ticket is issued.
using IssuePolicy = std::function<IssueDecision(const IssueRequest&)>;

struct IssuedTicket {
    IssueRequest request;
    wire::TicketInfo info;
};

class AuthServer {
public:
    /// Without a policy every eligible request is granted at the highest RLoA among its targets.
    AuthServer(std::uint32_t id, std::shared_ptr<const Registry> registry, Config config, RandomSource& rng,
               Clock clock, IssuePolicy policy = {});

    std::uint32_t id() const { return id_; }
    void set_policy(IssuePolicy policy);

    /// Msg1 in, Msg2 out. Throws ProtocolError when the request is refused.
    Bytes handle(std::span<const std::uint8_t> frame, OpCounter* counter = nullptr);

    std::vector<IssuedTicket> issued() const;

private:
    std::uint32_t id_;
    std::shared_ptr<const Registry> registry_;
    Config config_;
    LockedRandom rng_;
    Clock clock_;
    IssuePolicy policy_;
    mutable std::mutex mu_;
    std::vector<IssuedTicket> issued_;
};

// --- target device ----------------------------------------------------------

enum class DeviceSessionState { AwaitingConfirm, Authenticated, Terminated };

class TargetDevice {
public:
    TargetDevice(DeviceRecord record, Config config, RandomSource& rng, Clock clock);

    std::uint32_t id() const { return record_.id; }
    const DeviceRecord& record() const { return record_; }

    /// Msg3 -> Msg4, Msg5 -> nothing, Msg6 -> Msg7. Throws ProtocolError on rejection.
    std::optional<Bytes> handle(std::span<const std::uint8_t> frame, OpCounter* counter = nullptr);

    std::optional<DeviceSessionState> state(std::uint32_t client) const;
    std::optional<Digest> stored_link(std::uint32_t client, const EnNonce& ticket_nonce) const;

private:
    struct Pending {
        SymKey sk;
        EnNonce nonce3;
        EnNonce ticket_nonce;
        std::optional<Digest> link;
    };
    using ChainKey = std::pair<std::uint32_t, EnNonce>;

    wire::TicketInfo open_ticket(const wire::Ticket& t, std::uint32_t sender, OpCounter* counter) const;
    std::optional<Bytes> on_ap_req(const wire::Frame& f, OpCounter* counter);
    std::optional<Bytes> on_confirm(const wire::Frame& f, OpCounter* counter);
    std::optional<Bytes> on_reauth(const wire::Frame& f, OpCounter* counter);
    void fail(std::uint32_t client);

    DeviceRecord record_;
    Config config_;
    LockedRandom rng_;
    Clock clock_;
    mutable std::mutex mu_;
    std::map<std::uint32_t, Pending> pending_;
    std::map<ChainKey, std::optional<Digest>> committed_;
    std::map<std::uint32_t, DeviceSessionState> states_;
};

// --- client -----------------------------------------------------------------

enum class Mode { P2P, O2M };

const char* mode_name(Mode m);

struct ClientIdentity {
    std::uint32_t id = 0;
    SymKey key;  // the factor used for this run
};

enum class TargetState { Pending, AwaitingApRep, Authenticated, AwaitingReauthRep, Terminated };

/// Client side of one initial authentication (Msg1..Msg5 per target) and its re-authentications.
class ClientSession {
public:
    ClientSession(ClientIdentity me, std::uint32_t as_id, Mode mode, std::vector<std::uint32_t> targets,
                  Config config, RandomSource& rng, Clock clock, OpCounter* counter = nullptr);

    wire::Frame make_as_req();
    void on_as_rep(const wire::Frame& f);

    wire::Frame make_ap_req(std::size_t i);
    wire::Frame on_ap_rep(std::size_t i, const wire::Frame& f);

    wire::Frame make_reauth_req(std::size_t i);
    void on_reauth_rep(std::size_t i, const wire::Frame& f);

    void terminate(std::size_t i, Reason r);
    void terminate_all(Reason r);

    Mode mode() const { return mode_; }
    const Config& config() const { return config_; }
    std::uint32_t id() const { return me_.id; }
    std::uint32_t as_id() const { return as_id_; }
    const std::vector<std::uint32_t>& targets() const { return targets_; }
    bool has_ticket() const { return ticket_.has_value(); }
    const wire::Ticket& ticket() const;
    TargetState target_state(std::size_t i) const { return per_target_.at(i).state; }
    std::optional<Reason> target_reason(std::size_t i) const { return per_target_.at(i).reason; }
    const crypto::HashChain* chain(std::size_t i) const;

private:
    struct PerTarget {
        TargetState state = TargetState::Pending;
        std::optional<Reason> reason;
        std::optional<crypto::HashChain> chain;
        std::optional<Digest> sent_link;
    };

    void check_peer(const wire::Frame& f, std::uint32_t from) const;

    ClientIdentity me_;
    std::uint32_t as_id_;
    Mode mode_;
    std::vector<std::uint32_t> targets_;
    Config config_;
    RandomSource& rng_;
    Clock clock_;
    OpCounter* counter_;
    EnNonce nonce1_;
    bool awaiting_ticket_ = false;
    SymKey sk_;
    std::optional<wire::Ticket> ticket_;
    std::vector<PerTarget> per_target_;
};

// --- driving a run over a transport -----------------------------------------

/// Client-side view of a transport.
class Channel {
public:
    virtual ~Channel() = default;
    /// Sends and waits for the reply; nullopt when none arrives within `timeout`.
    virtual std::optional<Bytes> request(std::uint32_t peer, const Bytes& frame,
                                         std::chrono::milliseconds timeout) = 0;
    /// Sends without expecting a reply.
    virtual void post(std::uint32_t peer, const Bytes& frame) = 0;
};

struct TranscriptEntry {
    wire::MsgKind kind;
    std::uint32_t from = 0;
    std::uint32_t to = 0;
    Bytes frame;
    std::size_t accounted_bits = 0;
};

struct TargetOutcome {
    std::uint32_t target = 0;
    bool ok = false;
    std::optional<Reason> reason;
};

struct RunOutcome {
    bool ok = false;
    std::optional<Reason> reason;  // first failure
    std::vector<TargetOutcome> targets;
    std::vector<TranscriptEntry> transcript;

    std::size_t accounted_bits() const;
    std::size_t message_count() const { return transcript.size(); }
};

/// Encodes client frames into the run transcript and retries requests that go unanswered.
class Exchanger {
public:
    Exchanger(Channel& ch, RunOutcome& out, const Config& cfg) : ch_(ch), out_(out), cfg_(cfg) {}

    Bytes record(const wire::Frame& f, std::uint32_t to);
    wire::Frame request(const wire::Frame& f, std::uint32_t peer, wire::MsgKind expect);
    void post(const wire::Frame& f, std::uint32_t peer);

private:
    Channel& ch_;
    RunOutcome& out_;
    const Config& cfg_;
};

/// Marks the run failed, keeping the first reason.
void fail_outcome(RunOutcome& out, Reason r);

/// Msg1/Msg2, then Msg3..Msg5 with each target of the session.
RunOutcome run_initial(ClientSession& s, Channel& ch);
/// Msg6/Msg7 with every target the session authenticated.
RunOutcome run_reauth(ClientSession& s, Channel& ch);

struct ClientEnv {
    std::uint32_t as_id = 0;
    Config config;
    RandomSource* rng = nullptr;
    Clock clock;
    OpCounter* counter = nullptr;
};

/// One client factor. P2P authenticates to NT targets with NT separate runs; O2M with one.
class Client {
public:
    Client(ClientIdentity me, ClientEnv env);

    RunOutcome authenticate(Mode mode, const std::vector<std::uint32_t>& targets, Channel& ch);
    RunOutcome reauthenticate(Channel& ch);

    const ClientIdentity& identity() const { return me_; }
    const std::vector<ClientSession>& sessions() const { return sessions_; }

private:
    ClientIdentity me_;
    ClientEnv env_;
    std::vector<ClientSession> sessions_;
};

void merge_into(RunOutcome& into, RunOutcome part);

struct MultiFactorOutcome {
    bool ok = false;
    std::vector<RunOutcome> factors;
    std::optional<loa::InstanceAggregate> aggregate;

    std::size_t accounted_bits() const;
};

/// One full run per factor; succeeds only if every factor does. `specs`, when given,
/// pairs each factor with its weight and LoA for the instance aggregate.
MultiFactorOutcome run_two_factor(std::vector<Client>& factors, const std::vector<loa::AuthMethodSpec>& specs,
                                  Mode mode, const std::vector<std::uint32_t>& targets, Channel& ch);

}  // namespace m2i::protocol
