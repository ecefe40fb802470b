#include "m2i/kerberos.hpp"

namespace m2i::kerberos {
namespace {

using protocol::guarded;
using protocol::ProtocolError;
using protocol::Reason;
using wire::Frame;
using wire::MsgKind;

Frame decode_for(std::span<const std::uint8_t> frame, wire::Role role, MsgKind want)
{
    const auto header = guarded([&] { return wire::decode_header(frame); });
    if (guarded([&] { return wire::identify(header, role); }) != want)
        throw ProtocolError(Reason::UnexpectedMessage, "unexpected Kerberos message");
    return guarded([&] { return wire::decode_msg(frame, want); });
}

void require(bool ok, Reason r, const char* what)
{
    if (!ok)
        throw ProtocolError(r, what);
}

bool times_valid(const wire::KrbTimes& t, std::uint32_t now) { return t.start <= now && now < t.end; }

}  // namespace

KerberosAs::KerberosAs(KdcConfig cfg, std::shared_ptr<const protocol::Registry> registry, RandomSource& rng,
                       Clock clock)
    : cfg_(cfg), registry_(std::move(registry)), rng_(rng), clock_(std::move(clock))
{
}

Bytes KerberosAs::handle(std::span<const std::uint8_t> frame, OpCounter* counter)
{
    const Frame f = decode_for(frame, wire::Role::AuthServer, MsgKind::KrbAsReq);
    const auto& m = std::get<wire::KrbAsReq>(f.payload);
    require(f.header.id_r == cfg_.as_id, Reason::IdentityMismatch, "request addressed to another server");
    require(m.options == 0, Reason::Malformed, "unsupported options");
    require(f.header.id_s == m.client, Reason::IdentityMismatch, "sender does not match ID_C");
    require(m.realm == cfg_.realm, Reason::UnknownPrincipal, "foreign realm");
    require(m.tgs == cfg_.tgs_id, Reason::UnknownPrincipal, "unknown TGS");
    require(m.times.start <= m.times.end, Reason::Malformed, "times out of order");
    const protocol::ClientRecord* client = registry_->client(m.client);
    require(client != nullptr, Reason::UnknownPrincipal, "unknown client");

    const SymKey k_ctgs = crypto::gen_session_key(rng_);
    wire::KrbKdcRep rep;
    rep.realm = cfg_.realm;
    rep.client = m.client;
    rep.ticket = guarded([&] {
        return wire::seal_krb_ticket({0, k_ctgs, cfg_.realm, m.client, cfg_.address, m.times}, cfg_.tgs_key, rng_,
                                     counter);
    });
    rep.enc = guarded([&] {
        return wire::seal_krb_enc_part({k_ctgs, m.times, m.nonce1, cfg_.realm, cfg_.tgs_id},
                                       client->factor_keys.front(), crypto::KeyUsage::AsRepEncPart, rng_, counter);
    });
    return wire::encode_msg(
        {wire::header_for(MsgKind::KrbAsRep, false, cfg_.as_id, m.client), MsgKind::KrbAsRep, std::move(rep)});
}

Tgs::Tgs(KdcConfig cfg, std::shared_ptr<const protocol::Registry> registry, RandomSource& rng, Clock clock)
    : cfg_(cfg), registry_(std::move(registry)), rng_(rng), clock_(std::move(clock))
{
}

Bytes Tgs::handle(std::span<const std::uint8_t> frame, OpCounter* counter)
{
    const Frame f = decode_for(frame, wire::Role::Tgs, MsgKind::KrbTgsReq);
    const auto& m = std::get<wire::KrbTgsReq>(f.payload);
    require(f.header.id_r == cfg_.tgs_id, Reason::IdentityMismatch, "request addressed to another server");
    require(m.options == 0, Reason::Malformed, "unsupported options");

    const auto tgt = guarded([&] { return wire::open_krb_ticket(m.tgt, cfg_.tgs_key, counter); });
    const auto auth = guarded([&] {
        return wire::open_krb_authenticator(m.authenticator, tgt.key, crypto::KeyUsage::TgsReqAuthenticator,
                                            counter);
    });
    const std::uint32_t now = clock_();
    require(auth.client == tgt.client && tgt.client == f.header.id_s, Reason::IdentityMismatch,
            "authenticator does not match the TGT");
    require(auth.realm == cfg_.realm && tgt.realm == cfg_.realm, Reason::UnknownPrincipal, "foreign realm");
    require(protocol::ts_veri(auth.ts, now, cfg_.delta_t), Reason::StaleTimestamp, "stale authenticator");
    require(times_valid(tgt.times, now), Reason::TicketInvalid, "TGT not currently valid");
    require(m.times.start <= m.times.end, Reason::Malformed, "times out of order");
    const protocol::DeviceRecord* target = registry_->device(m.target);
    require(target != nullptr, Reason::UnknownPrincipal, "unknown target");

    const SymKey k_cd = crypto::gen_session_key(rng_);
    wire::KrbKdcRep rep;
    rep.realm = cfg_.realm;
    rep.client = tgt.client;
    rep.ticket = guarded([&] {
        return wire::seal_krb_ticket({0, k_cd, cfg_.realm, tgt.client, tgt.address, m.times}, target->long_term_key,
                                     rng_, counter);
    });
    rep.enc = guarded([&] {
        return wire::seal_krb_enc_part({k_cd, m.times, m.nonce2, cfg_.realm, m.target}, tgt.key,
                                       crypto::KeyUsage::TgsRepEncPart, rng_, counter);
    });
    return wire::encode_msg(
        {wire::header_for(MsgKind::KrbTgsRep, false, cfg_.tgs_id, tgt.client), MsgKind::KrbTgsRep, std::move(rep)});
}

KerberosDevice::KerberosDevice(protocol::DeviceRecord record, std::uint8_t realm, std::uint32_t delta_t,
                               RandomSource& rng, Clock clock)
    : record_(std::move(record)), realm_(realm), delta_t_(delta_t), rng_(rng), clock_(std::move(clock))
{
}

std::size_t KerberosDevice::accepted() const
{
    std::lock_guard lock(mu_);
    return accepted_;
}

Bytes KerberosDevice::handle(std::span<const std::uint8_t> frame, OpCounter* counter)
{
    const Frame f = decode_for(frame, wire::Role::Device, MsgKind::KrbApReq);
    const auto& m = std::get<wire::KrbApReq>(f.payload);
    require(f.header.id_r == record_.id, Reason::IdentityMismatch, "request addressed to another device");
    require(m.options == 0, Reason::Malformed, "unsupported options");

    const auto sgt = guarded([&] { return wire::open_krb_ticket(m.sgt, record_.long_term_key, counter); });
    const auto auth = guarded([&] {
        return wire::open_krb_authenticator(m.authenticator, sgt.key, crypto::KeyUsage::ApReqAuthenticator, counter);
    });
    const std::uint32_t now = clock_();
    require(auth.client == sgt.client && sgt.client == f.header.id_s, Reason::IdentityMismatch,
            "authenticator does not match the service ticket");
    require(auth.realm == realm_ && sgt.realm == realm_, Reason::UnknownPrincipal, "foreign realm");
    require(protocol::ts_veri(auth.ts, now, delta_t_), Reason::StaleTimestamp, "stale authenticator");
    require(times_valid(sgt.times, now), Reason::TicketInvalid, "service ticket not currently valid");

    wire::Boxed rep = guarded([&] { return wire::seal_krb_ap_rep(auth.ts, sgt.key, rng_, counter); });
    {
        std::lock_guard lock(mu_);
        ++accepted_;
    }
    return wire::encode_msg(
        {wire::header_for(MsgKind::KrbApRep, false, record_.id, sgt.client), MsgKind::KrbApRep, std::move(rep)});
}

KerberosClient::KerberosClient(std::uint32_t id, SymKey key, KerberosClientEnv env)
    : id_(id), key_(key), env_(std::move(env))
{
    if (!env_.rng)
        throw std::invalid_argument("client needs a random source");
    if (!env_.clock)
        env_.clock = protocol::system_clock();
}

wire::KrbTimes KerberosClient::request_times() const
{
    const std::uint32_t now = env_.clock();
    return {now, now + env_.lifetime, 0};
}

void KerberosClient::get_tgt(protocol::Exchanger& ex)
{
    wire::KrbAsReq req{0, id_, env_.realm, env_.tgs_id, request_times(), crypto::gen_nonce(*env_.rng)};
    const Frame rep = ex.request({wire::header_for(MsgKind::KrbAsReq, false, id_, env_.as_id), MsgKind::KrbAsReq, req},
                                 env_.as_id, MsgKind::KrbAsRep);
    require(rep.header.id_s == env_.as_id && rep.header.id_r == id_, Reason::IdentityMismatch,
            "reply from an unexpected peer");
    const auto& m = std::get<wire::KrbKdcRep>(rep.payload);
    require(m.realm == env_.realm && m.client == id_, Reason::IdentityMismatch, "reply names another principal");
    const auto enc = guarded(
        [&] { return wire::open_krb_enc_part(m.enc, key_, crypto::KeyUsage::AsRepEncPart, env_.counter); });
    require(protocol::en_veri(enc.nonce.bytes, req.nonce1.bytes), Reason::NonceMismatch, "nonce not echoed");
    require(enc.times == req.times, Reason::Malformed, "times altered");
    require(enc.realm == env_.realm && enc.server == env_.tgs_id, Reason::IdentityMismatch, "TGS identity altered");
    tgs_session_key_ = enc.key;
    tgt_ = m.ticket;
}

KerberosClient::ServiceTicket KerberosClient::get_sgt(protocol::Exchanger& ex, std::uint32_t target)
{
    wire::KrbTgsReq req;
    req.target = target;
    req.times = request_times();
    req.nonce2 = crypto::gen_nonce(*env_.rng);
    req.tgt = *tgt_;
    req.authenticator = guarded([&] {
        return wire::seal_krb_authenticator({id_, env_.realm, env_.clock()}, *tgs_session_key_,
                                            crypto::KeyUsage::TgsReqAuthenticator, *env_.rng, env_.counter);
    });
    const Frame rep = ex.request(
        {wire::header_for(MsgKind::KrbTgsReq, false, id_, env_.tgs_id), MsgKind::KrbTgsReq, req}, env_.tgs_id,
        MsgKind::KrbTgsRep);
    require(rep.header.id_s == env_.tgs_id && rep.header.id_r == id_, Reason::IdentityMismatch,
            "reply from an unexpected peer");
    const auto& m = std::get<wire::KrbKdcRep>(rep.payload);
    require(m.realm == env_.realm && m.client == id_, Reason::IdentityMismatch, "reply names another principal");
    const auto enc = guarded([&] {
        return wire::open_krb_enc_part(m.enc, *tgs_session_key_, crypto::KeyUsage::TgsRepEncPart, env_.counter);
    });
    require(protocol::en_veri(enc.nonce.bytes, req.nonce2.bytes), Reason::NonceMismatch, "nonce not echoed");
    require(enc.times == req.times, Reason::Malformed, "times altered");
    require(enc.realm == env_.realm && enc.server == target, Reason::IdentityMismatch, "target identity altered");
    return {target, enc.key, m.ticket};
}

void KerberosClient::use_sgt(protocol::Exchanger& ex, const ServiceTicket& st)
{
    const std::uint32_t ts2 = env_.clock();
    wire::KrbApReq req;
    req.sgt = st.sgt;
    req.authenticator = guarded([&] {
        return wire::seal_krb_authenticator({id_, env_.realm, ts2}, st.key, crypto::KeyUsage::ApReqAuthenticator,
                                            *env_.rng, env_.counter);
    });
    const Frame rep = ex.request({wire::header_for(MsgKind::KrbApReq, false, id_, st.target), MsgKind::KrbApReq, req},
                                 st.target, MsgKind::KrbApRep);
    require(rep.header.id_s == st.target && rep.header.id_r == id_, Reason::IdentityMismatch,
            "reply from an unexpected peer");
    const std::uint32_t echoed =
        guarded([&] { return wire::open_krb_ap_rep(std::get<wire::Boxed>(rep.payload), st.key, env_.counter); });
    require(echoed == ts2, Reason::NonceMismatch, "Ts2 not echoed");
}

RunOutcome KerberosClient::run(Channel& ch, const std::vector<std::uint32_t>& targets, unsigned factors)
{
    RunOutcome out;
    out.ok = true;
    protocol::Exchanger ex(ch, out, env_.config);
    sgts_.clear();
    try {
        get_tgt(ex);
    } catch (const ProtocolError& e) {
        protocol::fail_outcome(out, e.reason());
        for (auto t : targets)
            out.targets.push_back({t, false, e.reason()});
        return out;
    }
    for (auto t : targets) {
        try {
            for (unsigned i = 0; i < factors; ++i) {
                ServiceTicket st = get_sgt(ex, t);
                use_sgt(ex, st);
                sgts_.push_back(std::move(st));
            }
            out.targets.push_back({t, true, std::nullopt});
        } catch (const ProtocolError& e) {
            protocol::fail_outcome(out, e.reason());
            out.targets.push_back({t, false, e.reason()});
        }
    }
    return out;
}

RunOutcome KerberosClient::reauth(Channel& ch)
{
    RunOutcome out;
    out.ok = !sgts_.empty();
    if (!out.ok)
        out.reason = Reason::UnexpectedMessage;
    protocol::Exchanger ex(ch, out, env_.config);
    for (const auto& st : sgts_) {
        try {
            use_sgt(ex, st);
            out.targets.push_back({st.target, true, std::nullopt});
        } catch (const ProtocolError& e) {
            protocol::fail_outcome(out, e.reason());
            out.targets.push_back({st.target, false, e.reason()});
        }
    }
    return out;
}

}  // namespace m2i::kerberos
