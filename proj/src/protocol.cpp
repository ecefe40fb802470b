#include "m2i/protocol.hpp"

#include <algorithm>
#include <ctime>

namespace m2i::protocol {
namespace {

using wire::Frame;
using wire::MsgKind;

Frame decode_as(std::span<const std::uint8_t> bytes, MsgKind kind)
{
    return guarded([&] { return wire::decode_msg(bytes, kind); });
}

bool is_o2m(const wire::MessageHeader& h)
{
    return h.prot == wire::ProT::O2M || h.prot == wire::ProT::O2MReauth;
}

Digest to_digest(std::span<const std::uint8_t> b)
{
    Digest d;
    std::copy_n(b.begin(), Digest::kSize, d.bytes.begin());
    return d;
}

}  // namespace

ProtocolError from_crypto_error(const crypto::CryptoError& e)
{
    switch (e.kind()) {
    case crypto::CryptoError::Kind::IntegrityFailure: return {Reason::IntegrityFailure, e.what()};
    case crypto::CryptoError::Kind::ChainExhausted: return {Reason::ChainExhausted, e.what()};
    default: return {Reason::Malformed, e.what()};
    }
}

const char* reason_name(Reason r)
{
    switch (r) {
    case Reason::StaleTimestamp: return "stale-timestamp";
    case Reason::IdentityMismatch: return "identity-mismatch";
    case Reason::NonceMismatch: return "nonce-mismatch";
    case Reason::TicketInvalid: return "ticket-invalid";
    case Reason::IntegrityFailure: return "integrity-failure";
    case Reason::ChainMismatch: return "chain-mismatch";
    case Reason::ChainExhausted: return "chain-exhausted";
    case Reason::UnexpectedMessage: return "unexpected-message";
    case Reason::NotEligible: return "not-eligible";
    case Reason::NotAuthorized: return "not-authorized";
    case Reason::LoaInsufficient: return "loa-insufficient";
    case Reason::UnknownPrincipal: return "unknown-principal";
    case Reason::Timeout: return "timeout";
    case Reason::Malformed: return "malformed";
    }
    return "?";
}

const char* class_name(DeviceClass c)
{
    switch (c) {
    case DeviceClass::C0: return "C0";
    case DeviceClass::C1: return "C1";
    case DeviceClass::C2: return "C2";
    case DeviceClass::C2Plus: return "C2+";
    }
    return "?";
}

DeviceClass parse_device_class(const std::string& s)
{
    if (s == "C0")
        return DeviceClass::C0;
    if (s == "C1")
        return DeviceClass::C1;
    if (s == "C2")
        return DeviceClass::C2;
    if (s == "C2+")
        return DeviceClass::C2Plus;
    throw std::invalid_argument("unknown device class '" + s + "'");
}

bool may_request(DeviceClass c, wire::TicketType t)
{
    switch (c) {
    case DeviceClass::C0: return false;
    case DeviceClass::C1: return t == wire::TicketType::P2P;
    case DeviceClass::C2:
    case DeviceClass::C2Plus: return true;
    }
    return false;
}

void Registry::add_device(DeviceRecord d)
{
    const auto id = d.id;
    if (!devices_.emplace(id, std::move(d)).second)
        throw std::invalid_argument("duplicate device id " + std::to_string(id));
}

void Registry::add_client(ClientRecord c)
{
    if (c.factor_keys.empty())
        throw std::invalid_argument("client " + std::to_string(c.id) + " has no factor keys");
    const auto id = c.id;
    if (!clients_.emplace(id, std::move(c)).second)
        throw std::invalid_argument("duplicate client id " + std::to_string(id));
}

void Registry::add_group(Group g)
{
    const auto id = g.id;
    if (!groups_.emplace(id, std::move(g)).second)
        throw std::invalid_argument("duplicate group id " + std::to_string(id));
}

const DeviceRecord* Registry::device(std::uint32_t id) const
{
    auto it = devices_.find(id);
    return it == devices_.end() ? nullptr : &it->second;
}

const ClientRecord* Registry::client(std::uint32_t id) const
{
    auto it = clients_.find(id);
    return it == clients_.end() ? nullptr : &it->second;
}

const Group* Registry::group(std::uint32_t id) const
{
    auto it = groups_.find(id);
    return it == groups_.end() ? nullptr : &it->second;
}

Clock system_clock()
{
    return [] { return static_cast<std::uint32_t>(std::time(nullptr)); };
}

// --- verification algorithms ------------------------------------------------

bool ts_veri(std::uint32_t ts, std::uint32_t now, std::uint32_t delta_t)
{
    const auto skew = ts > now ? std::uint64_t{ts} - now : std::uint64_t{now} - ts;
    return skew <= delta_t;
}

bool id_veri(std::uint32_t id_s, std::uint32_t id_c) { return id_s == id_c; }

bool en_veri(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) { return crypto::ct_equal(a, b); }

std::optional<Reason> ti_check(std::uint32_t sender_id, const wire::TicketInfo& info, std::uint32_t now,
                               loa::LoaValue rloa)
{
    if (!id_veri(sender_id, info.id_client))
        return Reason::IdentityMismatch;
    if (info.effective_start() > now || info.end_time <= now)
        return Reason::TicketInvalid;
    if (info.loa < rloa.value())
        return Reason::LoaInsufficient;
    return std::nullopt;
}

TauthGenResult tauth_gen(std::uint32_t client_id, const EnNonce& en_nonce, const SymKey& sk, std::size_t n,
                         RandomSource& rng, OpCounter* counter)
{
    TauthGenResult out;
    wire::Authenticator a{client_id, {}};
    if (n > 0) {
        out.chain = crypto::HashChain::generate(en_nonce, n, counter);
        const Digest hn = out.chain->take();
        a.proof.assign(hn.bytes.begin(), hn.bytes.end());
    } else {
        a.proof.assign(en_nonce.bytes.begin(), en_nonce.bytes.end());
    }
    out.authenticator = wire::seal_authenticator(a, sk, rng, counter);
    return out;
}

TauthVeriResult tauth_veri(const wire::TicketInfo& info, const wire::Authenticator& auth, AuthType type,
                           const std::optional<Digest>& stored, OpCounter* counter)
{
    if (!id_veri(auth.client, info.id_client))
        return {};
    const bool is_link = auth.proof.size() == Digest::kSize;
    if (type == AuthType::Initial) {
        if (info.reusable() && is_link)
            return {true, to_digest(auth.proof)};
        return {true, std::nullopt};
    }
    if (!is_link || !stored)
        return {};
    const Digest presented = to_digest(auth.proof);
    if (!crypto::hc_verify(presented, *stored, counter))
        return {};
    return {true, presented};
}

// --- authentication server --------------------------------------------------

AuthServer::AuthServer(std::uint32_t id, std::shared_ptr<const Registry> registry, Config config, RandomSource& rng,
                       Clock clock, IssuePolicy policy)
    : id_(id), registry_(std::move(registry)), config_(config), rng_(rng), clock_(std::move(clock)),
      policy_(std::move(policy))
{
}

void AuthServer::set_policy(IssuePolicy policy)
{
    std::lock_guard lock(mu_);
    policy_ = std::move(policy);
}

std::vector<IssuedTicket> AuthServer::issued() const
{
    std::lock_guard lock(mu_);
    return issued_;
}

Bytes AuthServer::handle(std::span<const std::uint8_t> frame, OpCounter* counter)
{
    const auto header = guarded([&] { return wire::decode_header(frame); });
    const MsgKind kind = guarded([&] { return wire::identify(header, wire::Role::AuthServer); });
    if (kind != MsgKind::AsReq)
        throw ProtocolError(Reason::UnexpectedMessage, "authentication server only accepts Msg1");
    const Frame f = decode_as(frame, kind);
    if (f.header.id_r != id_)
        throw ProtocolError(Reason::IdentityMismatch, "Msg1 addressed to another server");

    const ClientRecord* client = registry_->client(f.header.id_s);
    if (!client)
        throw ProtocolError(Reason::UnknownPrincipal, "unknown client " + std::to_string(f.header.id_s));

    // Trial decryption picks the factor; a failed tag check costs no counted operation.
    const auto& boxed = std::get<wire::Boxed>(f.payload);
    std::optional<wire::AsReqPlain> req;
    std::size_t factor = 0;
    for (; factor < client->factor_keys.size(); ++factor) {
        try {
            req = wire::open_as_req(boxed, client->factor_keys[factor], counter);
            break;
        } catch (const crypto::CryptoError& e) {
            if (e.kind() != crypto::CryptoError::Kind::IntegrityFailure)
                throw from_crypto_error(e);
        } catch (const wire::WireError& e) {
            throw ProtocolError(Reason::Malformed, e.what());
        }
    }
    if (!req)
        throw ProtocolError(Reason::IntegrityFailure, "Msg1 does not verify under any client key");

    const std::uint32_t now = clock_();
    if (!ts_veri(req->ts, now, config_.delta_t))
        throw ProtocolError(Reason::StaleTimestamp, "Msg1 timestamp outside the freshness window");
    if (!id_veri(f.header.id_s, req->client))
        throw ProtocolError(Reason::IdentityMismatch, "Msg1 sender does not match the encrypted identity");

    const bool o2m = f.header.prot == wire::ProT::O2M;
    const auto type = o2m ? wire::TicketType::O2M : wire::TicketType::P2P;
    if (!o2m && req->targets.size() != 1)
        throw ProtocolError(Reason::Malformed, "P2P Msg1 must name exactly one target");
    if (!may_request(client->device_class, type))
        throw ProtocolError(Reason::NotEligible, std::string("class ") + class_name(client->device_class) +
                                                     " may not request this ticket type");

    loa::LoaValue required;
    std::optional<std::uint32_t> group;
    for (std::size_t i = 0; i < req->targets.size(); ++i) {
        const DeviceRecord* d = registry_->device(req->targets[i]);
        if (!d)
            throw ProtocolError(Reason::UnknownPrincipal, "unknown target " + std::to_string(req->targets[i]));
        required = std::max(required, d->rloa());
        if (o2m) {
            if (!d->group_id || (group && *group != *d->group_id))
                throw ProtocolError(Reason::NotEligible, "O2M targets do not share a group");
            group = d->group_id;
        }
    }

    wire::TicketKey key{wire::KeyKind::DeviceLongTerm, {}};
    if (o2m) {
        const Group* g = registry_->group(*group);
        if (!g)
            throw ProtocolError(Reason::UnknownPrincipal, "unknown group " + std::to_string(*group));
        key = {wire::KeyKind::Group, g->key};
    } else {
        key.key = registry_->device(req->targets[0])->long_term_key;
    }

    IssueRequest ir{req->client, req->targets, type, factor};
    IssuePolicy policy;
    {
        std::lock_guard lock(mu_);
        policy = policy_;
    }
    IssueDecision decision;
    if (policy)
        decision = policy(ir);
    else
        decision.loa = static_cast<std::uint8_t>(required.value());
    if (!decision.allowed)
        throw ProtocolError(decision.deny_reason, "ticket refused by policy");

    wire::TicketInfo info;
    info.id_client = req->client;
    info.flags = decision.flags;
    info.session_key = crypto::gen_session_key(rng_);
    info.authentication_time = now;
    info.end_time = now + (decision.lifetime ? decision.lifetime : config_.ticket_lifetime);
    info.loa = decision.loa;
    info.restrictions = decision.restrictions;
    info.en_nonce = req->nonce1;

    const wire::Ticket ticket = guarded([&] { return wire::encode_ticket(info, type, key, rng_, counter); });
    wire::AsRep rep = guarded([&] {
        return wire::seal_as_rep({info.session_key, req->nonce1, ticket}, client->factor_keys[factor], rng_,
                                 counter);
    });
    Frame out{wire::header_for(MsgKind::AsRep, o2m, id_, req->client), MsgKind::AsRep, std::move(rep)};
    {
        std::lock_guard lock(mu_);
        issued_.push_back({std::move(ir), info});
    }
    return wire::encode_msg(out);
}

// --- target device ----------------------------------------------------------

TargetDevice::TargetDevice(DeviceRecord record, Config config, RandomSource& rng, Clock clock)
    : record_(std::move(record)), config_(config), rng_(rng), clock_(std::move(clock))
{
}

std::optional<DeviceSessionState> TargetDevice::state(std::uint32_t client) const
{
    std::lock_guard lock(mu_);
    auto it = states_.find(client);
    if (it == states_.end())
        return std::nullopt;
    return it->second;
}

std::optional<Digest> TargetDevice::stored_link(std::uint32_t client, const EnNonce& ticket_nonce) const
{
    std::lock_guard lock(mu_);
    auto it = committed_.find({client, ticket_nonce});
    if (it == committed_.end())
        return std::nullopt;
    return it->second;
}

void TargetDevice::fail(std::uint32_t client)
{
    std::lock_guard lock(mu_);
    pending_.erase(client);
    states_[client] = DeviceSessionState::Terminated;
}

std::optional<Bytes> TargetDevice::handle(std::span<const std::uint8_t> frame, OpCounter* counter)
{
    std::uint32_t sender = 0;
    try {
        const auto header = guarded([&] { return wire::decode_header(frame); });
        sender = header.id_s;
        const MsgKind kind = guarded([&] { return wire::identify(header, wire::Role::Device); });
        if (kind == MsgKind::KrbApReq)
            throw ProtocolError(Reason::UnexpectedMessage, "device does not serve Kerberos here");
        const Frame f = decode_as(frame, kind);
        if (f.header.id_r != record_.id)
            throw ProtocolError(Reason::IdentityMismatch, "message addressed to another device");
        switch (kind) {
        case MsgKind::ApReq: return on_ap_req(f, counter);
        case MsgKind::ApConfirm: return on_confirm(f, counter);
        default: return on_reauth(f, counter);
        }
    } catch (const ProtocolError&) {
        fail(sender);
        throw;
    }
}

wire::TicketInfo TargetDevice::open_ticket(const wire::Ticket& t, std::uint32_t sender, OpCounter* counter) const
{
    wire::TicketKey key{wire::KeyKind::DeviceLongTerm, record_.long_term_key};
    if (t.type == wire::TicketType::O2M) {
        if (!record_.group_key)
            throw ProtocolError(Reason::TicketInvalid, "device holds no group key");
        key = {wire::KeyKind::Group, *record_.group_key};
    }
    wire::TicketInfo info;
    try {
        info = wire::decode_ticket(t, key, counter);
    } catch (const crypto::CryptoError& e) {
        if (e.kind() == crypto::CryptoError::Kind::IntegrityFailure)
            throw ProtocolError(Reason::IntegrityFailure, "ticket does not verify under the device key");
        throw ProtocolError(Reason::TicketInvalid, e.what());
    } catch (const wire::WireError& e) {
        throw ProtocolError(Reason::TicketInvalid, e.what());
    }
    if (auto r = ti_check(sender, info, clock_(), record_.rloa()))
        throw ProtocolError(*r, std::string("ticket rejected: ") + reason_name(*r));
    return info;
}

std::optional<Bytes> TargetDevice::on_ap_req(const Frame& f, OpCounter* counter)
{
    const std::uint32_t sender = f.header.id_s;
    const auto& m = std::get<wire::ApReq>(f.payload);
    const wire::TicketInfo info = open_ticket(m.ticket, sender, counter);
    const auto auth = guarded([&] { return wire::open_authenticator(m.authenticator, info.session_key, counter); });
    const TauthVeriResult v = tauth_veri(info, auth, AuthType::Initial, std::nullopt, counter);
    if (!v.ok)
        throw ProtocolError(Reason::IdentityMismatch, "authenticator identity does not match the ticket");
    {
        std::lock_guard lock(mu_);
        if (committed_.count({sender, info.en_nonce}))
            throw ProtocolError(Reason::ChainMismatch, "ticket already used to authenticate to this device");
    }

    Pending p{info.session_key, crypto::gen_nonce(rng_), info.en_nonce, v.stored};
    wire::Boxed rep = guarded([&] { return wire::seal_ap_rep({info.en_nonce, p.nonce3}, info.session_key, rng_, counter); });
    {
        std::lock_guard lock(mu_);
        pending_[sender] = p;
        states_[sender] = DeviceSessionState::AwaitingConfirm;
    }
    return wire::encode_msg(
        {wire::header_for(MsgKind::ApRep, is_o2m(f.header), record_.id, sender), MsgKind::ApRep, std::move(rep)});
}

std::optional<Bytes> TargetDevice::on_confirm(const Frame& f, OpCounter* counter)
{
    const std::uint32_t sender = f.header.id_s;
    Pending p;
    {
        std::lock_guard lock(mu_);
        auto it = pending_.find(sender);
        if (it == pending_.end())
            throw ProtocolError(Reason::UnexpectedMessage, "Msg5 without a pending Msg3");
        p = it->second;
    }
    const auto conf = guarded([&] { return wire::open_ap_confirm(std::get<wire::Boxed>(f.payload), p.sk, counter); });
    if (!en_veri(conf.nonce3.bytes, p.nonce3.bytes))
        throw ProtocolError(Reason::NonceMismatch, "Msg5 does not echo the device nonce");

    std::lock_guard lock(mu_);
    // The chain only becomes usable once the client has proven the session key.
    if (!committed_.emplace(ChainKey{sender, p.ticket_nonce}, p.link).second)
        throw ProtocolError(Reason::ChainMismatch, "ticket already used to authenticate to this device");
    pending_.erase(sender);
    states_[sender] = DeviceSessionState::Authenticated;
    return std::nullopt;
}

std::optional<Bytes> TargetDevice::on_reauth(const Frame& f, OpCounter* counter)
{
    const std::uint32_t sender = f.header.id_s;
    const auto& m = std::get<wire::ApReq>(f.payload);
    const wire::TicketInfo info = open_ticket(m.ticket, sender, counter);
    const auto auth = guarded([&] { return wire::open_authenticator(m.authenticator, info.session_key, counter); });
    if (!id_veri(auth.client, info.id_client))
        throw ProtocolError(Reason::IdentityMismatch, "authenticator identity does not match the ticket");

    const ChainKey key{sender, info.en_nonce};
    std::optional<Digest> stored;
    {
        std::lock_guard lock(mu_);
        auto it = committed_.find(key);
        if (it == committed_.end() || !it->second)
            throw ProtocolError(Reason::ChainMismatch, "no hash chain established for this ticket");
        stored = it->second;
    }
    const TauthVeriResult v = tauth_veri(info, auth, AuthType::Reauth, stored, counter);
    if (!v.ok)
        throw ProtocolError(Reason::ChainMismatch, "presented link does not hash to the stored link");
    {
        // Compare-and-swap: a concurrent re-auth may have spent the same link meanwhile.
        std::lock_guard lock(mu_);
        auto it = committed_.find(key);
        if (it == committed_.end() || it->second != stored)
            throw ProtocolError(Reason::ChainMismatch, "link already spent");
        it->second = v.stored;
        states_[sender] = DeviceSessionState::Authenticated;
    }
    wire::Boxed rep = guarded([&] {
        return wire::seal_reauth_rep({*v.stored, crypto::gen_nonce(rng_)}, info.session_key, rng_, counter);
    });
    return wire::encode_msg({wire::header_for(MsgKind::ReauthRep, is_o2m(f.header), record_.id, sender),
                             MsgKind::ReauthRep, std::move(rep)});
}

// --- client -----------------------------------------------------------------

const char* mode_name(Mode m) { return m == Mode::P2P ? "P2P" : "O2M"; }

ClientSession::ClientSession(ClientIdentity me, std::uint32_t as_id, Mode mode, std::vector<std::uint32_t> targets,
                             Config config, RandomSource& rng, Clock clock, OpCounter* counter)
    : me_(me), as_id_(as_id), mode_(mode), targets_(std::move(targets)), config_(config), rng_(rng),
      clock_(std::move(clock)), counter_(counter), per_target_(targets_.size())
{
    if (targets_.empty())
        throw std::invalid_argument("no target devices");
    if (mode == Mode::P2P && targets_.size() != 1)
        throw std::invalid_argument("a P2P session has exactly one target");
}

const wire::Ticket& ClientSession::ticket() const
{
    if (!ticket_)
        throw std::logic_error("no ticket held");
    return *ticket_;
}

const crypto::HashChain* ClientSession::chain(std::size_t i) const
{
    const auto& c = per_target_.at(i).chain;
    return c ? &*c : nullptr;
}

void ClientSession::terminate(std::size_t i, Reason r)
{
    auto& t = per_target_.at(i);
    t.state = TargetState::Terminated;
    t.reason = r;
}

void ClientSession::terminate_all(Reason r)
{
    awaiting_ticket_ = false;
    for (std::size_t i = 0; i < per_target_.size(); ++i)
        terminate(i, r);
}

void ClientSession::check_peer(const Frame& f, std::uint32_t from) const
{
    if (f.header.id_s != from || f.header.id_r != me_.id)
        throw ProtocolError(Reason::IdentityMismatch, "reply from an unexpected peer");
}

Frame ClientSession::make_as_req()
{
    nonce1_ = crypto::gen_nonce(rng_);
    wire::AsReqPlain p{me_.id, targets_, nonce1_, clock_()};
    wire::Boxed box = guarded([&] { return wire::seal_as_req(p, me_.key, rng_, counter_); });
    awaiting_ticket_ = true;
    return {wire::header_for(MsgKind::AsReq, mode_ == Mode::O2M, me_.id, as_id_), MsgKind::AsReq, std::move(box)};
}

void ClientSession::on_as_rep(const Frame& f)
{
    if (!awaiting_ticket_)
        throw ProtocolError(Reason::UnexpectedMessage, "Msg2 without an outstanding Msg1");
    check_peer(f, as_id_);
    const auto p = guarded([&] { return wire::open_as_rep(std::get<wire::AsRep>(f.payload), me_.key, counter_); });
    if (!en_veri(p.nonce1.bytes, nonce1_.bytes))
        throw ProtocolError(Reason::NonceMismatch, "Msg2 does not echo EnNonce1");
    const auto want = mode_ == Mode::O2M ? wire::TicketType::O2M : wire::TicketType::P2P;
    if (p.ticket.type != want)
        throw ProtocolError(Reason::TicketInvalid, "ticket type does not match the requested protocol");
    sk_ = p.sk;
    ticket_ = p.ticket;
    awaiting_ticket_ = false;
}

Frame ClientSession::make_ap_req(std::size_t i)
{
    auto& t = per_target_.at(i);
    if (!ticket_ || t.state != TargetState::Pending)
        throw ProtocolError(Reason::UnexpectedMessage, "not ready to send Msg3");
    if (config_.chain_length > config_.max_chain)
        throw ProtocolError(Reason::Malformed, "requested chain length exceeds the policy cap");
    const EnNonce nonce2 = crypto::gen_nonce(rng_);
    TauthGenResult g = guarded([&] { return tauth_gen(me_.id, nonce2, sk_, config_.chain_length, rng_, counter_); });
    t.chain = std::move(g.chain);
    t.state = TargetState::AwaitingApRep;
    return {wire::header_for(MsgKind::ApReq, mode_ == Mode::O2M, me_.id, targets_[i]), MsgKind::ApReq,
            wire::ApReq{*ticket_, std::move(g.authenticator)}};
}

Frame ClientSession::on_ap_rep(std::size_t i, const Frame& f)
{
    auto& t = per_target_.at(i);
    if (t.state != TargetState::AwaitingApRep)
        throw ProtocolError(Reason::UnexpectedMessage, "Msg4 without an outstanding Msg3");
    check_peer(f, targets_[i]);
    const auto p = guarded([&] { return wire::open_ap_rep(std::get<wire::Boxed>(f.payload), sk_, counter_); });
    if (!en_veri(p.nonce1.bytes, nonce1_.bytes))
        throw ProtocolError(Reason::NonceMismatch, "Msg4 does not echo EnNonce1");
    wire::Boxed conf = guarded([&] { return wire::seal_ap_confirm({p.nonce3}, sk_, rng_, counter_); });
    t.state = TargetState::Authenticated;
    return {wire::header_for(MsgKind::ApConfirm, mode_ == Mode::O2M, me_.id, targets_[i]), MsgKind::ApConfirm,
            std::move(conf)};
}

Frame ClientSession::make_reauth_req(std::size_t i)
{
    auto& t = per_target_.at(i);
    if (t.state != TargetState::Authenticated)
        throw ProtocolError(Reason::UnexpectedMessage, "re-authentication needs a completed initial run");
    if (!t.chain || t.chain->exhausted())
        throw ProtocolError(Reason::ChainExhausted, "no links remaining");
    const Digest link = t.chain->take();
    wire::Authenticator a{me_.id, Bytes(link.bytes.begin(), link.bytes.end())};
    crypto::SealedBox box = guarded([&] { return wire::seal_authenticator(a, sk_, rng_, counter_); });
    t.sent_link = link;
    t.state = TargetState::AwaitingReauthRep;
    return {wire::header_for(MsgKind::ReauthReq, mode_ == Mode::O2M, me_.id, targets_[i]), MsgKind::ReauthReq,
            wire::ApReq{*ticket_, std::move(box)}};
}

void ClientSession::on_reauth_rep(std::size_t i, const Frame& f)
{
    auto& t = per_target_.at(i);
    if (t.state != TargetState::AwaitingReauthRep)
        throw ProtocolError(Reason::UnexpectedMessage, "Msg7 without an outstanding Msg6");
    check_peer(f, targets_[i]);
    const auto p = guarded([&] { return wire::open_reauth_rep(std::get<wire::Boxed>(f.payload), sk_, counter_); });
    if (!en_veri(p.link.bytes, t.sent_link->bytes))
        throw ProtocolError(Reason::NonceMismatch, "Msg7 does not echo the presented link");
    t.state = TargetState::Authenticated;
}

// --- drivers ----------------------------------------------------------------

std::size_t RunOutcome::accounted_bits() const
{
    std::size_t sum = 0;
    for (const auto& e : transcript)
        sum += e.accounted_bits;
    return sum;
}

Bytes Exchanger::record(const Frame& f, std::uint32_t to)
{
    Bytes bytes = guarded([&] { return wire::encode_msg(f); });
    out_.transcript.push_back({f.kind, f.header.id_s, to, bytes, wire::accounted_bits(f)});
    return bytes;
}

Frame Exchanger::request(const Frame& f, std::uint32_t peer, MsgKind expect)
{
    const Bytes bytes = record(f, peer);
    for (unsigned attempt = 0; attempt <= cfg_.retries; ++attempt) {
        if (auto rep = ch_.request(peer, bytes, cfg_.client_timeout)) {
            Frame r = decode_as(*rep, expect);
            out_.transcript.push_back({expect, r.header.id_s, r.header.id_r, *rep, wire::accounted_bits(r)});
            return r;
        }
    }
    throw ProtocolError(Reason::Timeout, std::string("no reply to ") + wire::kind_name(f.kind));
}

void Exchanger::post(const Frame& f, std::uint32_t peer) { ch_.post(peer, record(f, peer)); }

void fail_outcome(RunOutcome& out, Reason r)
{
    out.ok = false;
    if (!out.reason)
        out.reason = r;
}

RunOutcome run_initial(ClientSession& s, Channel& ch)
{
    RunOutcome out;
    out.ok = true;
    Exchanger ex(ch, out, s.config());
    try {
        const Frame rep = ex.request(s.make_as_req(), s.as_id(), MsgKind::AsRep);
        s.on_as_rep(rep);
    } catch (const ProtocolError& e) {
        s.terminate_all(e.reason());
        fail_outcome(out, e.reason());
        for (auto t : s.targets())
            out.targets.push_back({t, false, e.reason()});
        return out;
    }

    bool aborted = false;
    for (std::size_t i = 0; i < s.targets().size(); ++i) {
        const std::uint32_t target = s.targets()[i];
        if (aborted) {
            s.terminate(i, Reason::UnexpectedMessage);
            out.targets.push_back({target, false, Reason::UnexpectedMessage});
            continue;
        }
        try {
            const Frame rep = ex.request(s.make_ap_req(i), target, MsgKind::ApRep);
            ex.post(s.on_ap_rep(i, rep), target);
            out.targets.push_back({target, true, std::nullopt});
        } catch (const ProtocolError& e) {
            s.terminate(i, e.reason());
            fail_outcome(out, e.reason());
            out.targets.push_back({target, false, e.reason()});
            aborted = s.mode() == Mode::O2M && s.config().o2m_strict;
        }
    }
    return out;
}

RunOutcome run_reauth(ClientSession& s, Channel& ch)
{
    RunOutcome out;
    out.ok = true;
    Exchanger ex(ch, out, s.config());
    bool any = false;
    for (std::size_t i = 0; i < s.targets().size(); ++i) {
        if (s.target_state(i) != TargetState::Authenticated)
            continue;
        any = true;
        const std::uint32_t target = s.targets()[i];
        try {
            const Frame rep = ex.request(s.make_reauth_req(i), target, MsgKind::ReauthRep);
            s.on_reauth_rep(i, rep);
            out.targets.push_back({target, true, std::nullopt});
        } catch (const ProtocolError& e) {
            if (e.reason() != Reason::ChainExhausted)
                s.terminate(i, e.reason());
            fail_outcome(out, e.reason());
            out.targets.push_back({target, false, e.reason()});
        }
    }
    if (!any)
        fail_outcome(out, Reason::UnexpectedMessage);
    return out;
}

void merge_into(RunOutcome& into, RunOutcome part)
{
    if (into.targets.empty() && into.transcript.empty()) {
        into = std::move(part);
        return;
    }
    into.ok = into.ok && part.ok;
    if (!into.reason)
        into.reason = part.reason;
    into.targets.insert(into.targets.end(), part.targets.begin(), part.targets.end());
    for (auto& e : part.transcript)
        into.transcript.push_back(std::move(e));
}

Client::Client(ClientIdentity me, ClientEnv env) : me_(me), env_(std::move(env))
{
    if (!env_.rng)
        throw std::invalid_argument("client needs a random source");
    if (!env_.clock)
        env_.clock = system_clock();
}

RunOutcome Client::authenticate(Mode mode, const std::vector<std::uint32_t>& targets, Channel& ch)
{
    sessions_.clear();
    RunOutcome out;
    if (mode == Mode::O2M) {
        sessions_.emplace_back(me_, env_.as_id, mode, targets, env_.config, *env_.rng, env_.clock, env_.counter);
    } else {
        for (auto t : targets)
            sessions_.emplace_back(me_, env_.as_id, mode, std::vector{t}, env_.config, *env_.rng, env_.clock,
                                   env_.counter);
    }
    for (auto& s : sessions_)
        merge_into(out, run_initial(s, ch));
    return out;
}

RunOutcome Client::reauthenticate(Channel& ch)
{
    RunOutcome out;
    for (auto& s : sessions_)
        merge_into(out, run_reauth(s, ch));
    if (sessions_.empty())
        fail_outcome(out, Reason::UnexpectedMessage);
    return out;
}

std::size_t MultiFactorOutcome::accounted_bits() const
{
    std::size_t sum = 0;
    for (const auto& f : factors)
        sum += f.accounted_bits();
    return sum;
}

MultiFactorOutcome run_two_factor(std::vector<Client>& factors, const std::vector<loa::AuthMethodSpec>& specs,
                                  Mode mode, const std::vector<std::uint32_t>& targets, Channel& ch)
{
    if (factors.empty())
        throw std::invalid_argument("no authentication factors");
    if (!specs.empty() && specs.size() != factors.size())
        throw std::invalid_argument("one method spec per factor");
    MultiFactorOutcome out;
    out.ok = true;
    for (auto& c : factors) {
        out.factors.push_back(c.authenticate(mode, targets, ch));
        out.ok = out.ok && out.factors.back().ok;
    }
    if (!specs.empty())
        out.aggregate = loa::agg_dloa_instance(specs);
    return out;
}

}  // namespace m2i::protocol
