#include "m2i/wire.hpp"

#include <ctime>

namespace m2i::wire {
namespace {

using bits::BitReader;
using bits::BitString;
using bits::BitWriter;

template <class T>
void put_fixed(BitWriter& w, const T& v)
{
    w.put_bytes(v.bytes);
}

template <class T>
T get_fixed(BitReader& r)
{
    T v;
    r.get_bytes(v.bytes);
    return v;
}

void put_times(BitWriter& w, const KrbTimes& t)
{
    w.put(t.start, 32);
    w.put(t.end, 32);
    w.put(t.renew, 32);
}

KrbTimes get_times(BitReader& r)
{
    KrbTimes t;
    t.start = static_cast<std::uint32_t>(r.get(32));
    t.end = static_cast<std::uint32_t>(r.get(32));
    t.renew = static_cast<std::uint32_t>(r.get(32));
    return t;
}

bool is_m2i_initial(ProT p) { return p == ProT::P2P || p == ProT::O2M; }
bool is_m2i_reauth(ProT p) { return p == ProT::P2PReauth || p == ProT::O2MReauth; }

std::size_t m2i_body_bytes(const crypto::Envelope& env)
{
    if (env.plain_bits == 0)
        throw WireError("empty ciphertext");
    return crypto::cbc_body_bytes(env.plain_bits);
}

std::size_t krb_body_bytes(const crypto::Envelope& env)
{
    if (env.plain_bits == 0 || env.plain_bits % 8)
        throw WireError("bad ciphertext length");
    return crypto::cts_body_bytes(env.plain_bits / 8);
}

void check_m2i_box(const SealedBox& b)
{
    if (b.body.size() != m2i_body_bytes(b.env))
        throw WireError("ciphertext length does not match envelope");
}

void check_krb_box(const SealedBox& b)
{
    if (b.body.size() != krb_body_bytes(b.env))
        throw WireError("ciphertext length does not match envelope");
}

void check_ticket(const Ticket& t)
{
    if (t.box.env.plain_bits != kTicketInfoBits || t.box.body.size() != accounted_len(kTicketInfoBits) / 8)
        throw WireError("malformed ticket");
}

std::size_t acc(const SealedBox& b) { return accounted_len(b.env.plain_bits); }

void put_envelope(Bytes& out, const crypto::Envelope& e)
{
    out.insert(out.end(), e.iv.begin(), e.iv.end());
    out.insert(out.end(), e.tag.begin(), e.tag.end());
    out.push_back(static_cast<std::uint8_t>(e.plain_bits >> 8));
    out.push_back(static_cast<std::uint8_t>(e.plain_bits));
}

crypto::Envelope get_envelope(std::span<const std::uint8_t> in)
{
    crypto::Envelope e;
    std::copy_n(in.begin(), crypto::kBlockBytes, e.iv.begin());
    std::copy_n(in.begin() + crypto::kBlockBytes, crypto::kTagBytes, e.tag.begin());
    e.plain_bits = static_cast<std::uint16_t>(in[32] << 8 | in[33]);
    return e;
}

struct Encoded {
    BitString payload;
    std::vector<crypto::Envelope> envs;
};

/// Which payload alternative a message kind carries.
std::size_t payload_index(MsgKind k)
{
    switch (k) {
    case MsgKind::AsReq:
    case MsgKind::ApRep:
    case MsgKind::ApConfirm:
    case MsgKind::ReauthRep:
    case MsgKind::KrbApRep: return 0;
    case MsgKind::AsRep: return 1;
    case MsgKind::ApReq:
    case MsgKind::ReauthReq: return 2;
    case MsgKind::KrbAsReq: return 3;
    case MsgKind::KrbAsRep:
    case MsgKind::KrbTgsRep: return 4;
    case MsgKind::KrbTgsReq: return 5;
    case MsgKind::KrbApReq: return 6;
    }
    throw WireError("unknown message");
}

bool header_matches(MsgKind k, const MessageHeader& h)
{
    const MessageHeader want = header_for(k, h.prot == ProT::O2M || h.prot == ProT::O2MReauth, 0, 0);
    return want.prot == h.prot && want.msg_t == h.msg_t;
}

Encoded encode_payload(const Frame& f)
{
    if (f.payload.index() != payload_index(f.kind))
        throw WireError(std::string("payload does not match message kind ") + kind_name(f.kind));
    const bool krb = is_kerberos(f.kind);
    Encoded out;
    BitWriter w;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Boxed>) {
                krb ? check_krb_box(p.enc) : check_m2i_box(p.enc);
                w.put_bytes(p.enc.body);
                out.envs = {p.enc.env};
            } else if constexpr (std::is_same_v<T, AsRep>) {
                check_m2i_box(p.enc);
                w.put_bytes(p.enc.body);
                out.envs = {p.enc.env, p.ticket_env};
            } else if constexpr (std::is_same_v<T, ApReq>) {
                check_ticket(p.ticket);
                check_m2i_box(p.authenticator);
                w.put(static_cast<std::uint8_t>(p.ticket.type), 1);
                w.put_bytes(p.ticket.box.body);
                w.put_bytes(p.authenticator.body);
                out.envs = {p.ticket.box.env, p.authenticator.env};
            } else if constexpr (std::is_same_v<T, KrbAsReq>) {
                w.put(p.options, 32);
                w.put(p.client, 32);
                w.put(p.realm, 8);
                w.put(p.tgs, 32);
                put_times(w, p.times);
                put_fixed(w, p.nonce1);
            } else if constexpr (std::is_same_v<T, KrbKdcRep>) {
                check_krb_box(p.ticket);
                check_krb_box(p.enc);
                w.put(p.realm, 8);
                w.put(p.client, 32);
                w.put_bytes(p.ticket.body);
                w.put_bytes(p.enc.body);
                out.envs = {p.ticket.env, p.enc.env};
            } else if constexpr (std::is_same_v<T, KrbTgsReq>) {
                check_krb_box(p.tgt);
                check_krb_box(p.authenticator);
                w.put(p.options, 32);
                w.put(p.target, 32);
                put_times(w, p.times);
                put_fixed(w, p.nonce2);
                w.put_bytes(p.tgt.body);
                w.put_bytes(p.authenticator.body);
                out.envs = {p.tgt.env, p.authenticator.env};
            } else if constexpr (std::is_same_v<T, KrbApReq>) {
                check_krb_box(p.sgt);
                check_krb_box(p.authenticator);
                w.put(p.options, 32);
                w.put_bytes(p.sgt.body);
                w.put_bytes(p.authenticator.body);
                out.envs = {p.sgt.env, p.authenticator.env};
            }
        },
        f.payload);
    out.payload = std::move(w).finish();
    return out;
}

SealedBox read_box(BitReader& r, const crypto::Envelope& env, bool krb)
{
    SealedBox b;
    b.env = env;
    b.body.resize(krb ? krb_body_bytes(env) : m2i_body_bytes(env));
    r.get_bytes(b.body);
    return b;
}

Payload decode_payload(MsgKind kind, std::span<const std::uint8_t> payload,
                       const std::vector<crypto::Envelope>& envs)
{
    const bool krb = is_kerberos(kind);
    BitReader r(payload, payload.size() * 8);
    auto need_envs = [&](std::size_t n) {
        if (envs.size() != n)
            throw WireError("wrong envelope count");
    };
    Payload out;
    switch (payload_index(kind)) {
    case 0: {
        need_envs(1);
        out = Boxed{read_box(r, envs[0], krb)};
        break;
    }
    case 1: {
        need_envs(2);
        AsRep m;
        m.enc = read_box(r, envs[0], false);
        m.ticket_env = envs[1];
        if (m.ticket_env.plain_bits != kTicketInfoBits)
            throw WireError("malformed ticket");
        out = std::move(m);
        break;
    }
    case 2: {
        need_envs(2);
        ApReq m;
        m.ticket.type = static_cast<TicketType>(r.get(1));
        if (envs[0].plain_bits != kTicketInfoBits)
            throw WireError("malformed ticket");
        m.ticket.box = read_box(r, envs[0], false);
        m.authenticator = read_box(r, envs[1], false);
        out = std::move(m);
        break;
    }
    case 3: {
        need_envs(0);
        KrbAsReq m;
        m.options = static_cast<std::uint32_t>(r.get(32));
        m.client = static_cast<std::uint32_t>(r.get(32));
        m.realm = static_cast<std::uint8_t>(r.get(8));
        m.tgs = static_cast<std::uint32_t>(r.get(32));
        m.times = get_times(r);
        m.nonce1 = get_fixed<EnNonce>(r);
        out = m;
        break;
    }
    case 4: {
        need_envs(2);
        KrbKdcRep m;
        m.realm = static_cast<std::uint8_t>(r.get(8));
        m.client = static_cast<std::uint32_t>(r.get(32));
        m.ticket = read_box(r, envs[0], true);
        m.enc = read_box(r, envs[1], true);
        out = std::move(m);
        break;
    }
    case 5: {
        need_envs(2);
        KrbTgsReq m;
        m.options = static_cast<std::uint32_t>(r.get(32));
        m.target = static_cast<std::uint32_t>(r.get(32));
        m.times = get_times(r);
        m.nonce2 = get_fixed<EnNonce>(r);
        m.tgt = read_box(r, envs[0], true);
        m.authenticator = read_box(r, envs[1], true);
        out = std::move(m);
        break;
    }
    case 6: {
        need_envs(2);
        KrbApReq m;
        m.options = static_cast<std::uint32_t>(r.get(32));
        m.sgt = read_box(r, envs[0], true);
        m.authenticator = read_box(r, envs[1], true);
        out = std::move(m);
        break;
    }
    }
    // Anything left over may only be the zero fill up to the next byte.
    if (r.remaining() >= 8 || !r.rest_is_zero())
        throw WireError("trailing payload data");
    return out;
}

template <class Box>
Box expect_plain_bits(Box b, std::size_t bits, const char* what)
{
    if (b.bits != bits)
        throw WireError(std::string("malformed ") + what);
    return b;
}

BitString open_m2i(const SealedBox& box, const SymKey& k, OpCounter* c) { return crypto::sym_decrypt(k, box, c); }

BitReader reader_for(const BitString& s) { return BitReader(s); }

Bytes krb_open(const SealedBox& box, const SymKey& k, KeyUsage usage, std::size_t bits, const char* what,
               OpCounter* c)
{
    if (box.env.plain_bits != bits)
        throw WireError(std::string("malformed ") + what);
    return crypto::kerberos_decrypt(k, usage, box, c);
}

}  // namespace

const char* prot_name(ProT p)
{
    switch (p) {
    case ProT::P2P: return "P2P";
    case ProT::O2M: return "O2M";
    case ProT::P2PReauth: return "P2P-reauth";
    case ProT::O2MReauth: return "O2M-reauth";
    case ProT::Kerberos: return "Kerberos";
    }
    return "?";
}

std::array<std::uint8_t, kHeaderBytes> encode_header(const MessageHeader& h)
{
    const auto prot = static_cast<std::uint8_t>(h.prot);
    const auto msgt = static_cast<std::uint8_t>(h.msg_t);
    if (prot > 0xf || msgt > 1 || h.pay_l > kMaxPayL)
        throw WireError("header field out of range");
    BitWriter w;
    w.put(prot, 4);
    w.put(msgt, 1);
    w.put(h.id_s, 32);
    w.put(h.id_r, 32);
    w.put(h.pay_l, 27);
    const BitString s = std::move(w).finish();
    std::array<std::uint8_t, kHeaderBytes> out{};
    std::copy(s.bytes.begin(), s.bytes.end(), out.begin());
    return out;
}

MessageHeader decode_header(std::span<const std::uint8_t> data)
{
    if (data.size() < kHeaderBytes)
        throw WireError("short header");
    BitReader r(data.first(kHeaderBytes), kHeaderBytes * 8);
    MessageHeader h;
    h.prot = static_cast<ProT>(r.get(4));
    h.msg_t = static_cast<MsgT>(r.get(1));
    h.id_s = static_cast<std::uint32_t>(r.get(32));
    h.id_r = static_cast<std::uint32_t>(r.get(32));
    h.pay_l = static_cast<std::uint32_t>(r.get(27));
    return h;
}

BitString pack_ticket_info(const TicketInfo& info)
{
    if (info.flags & kReservedFlags)
        throw WireError("reserved ticket flags set");
    if (info.loa < 1 || info.loa > 3)
        throw WireError("ticket LoA out of range");
    BitWriter w;
    w.put(info.id_client, 32);
    w.put(info.flags, 8);
    put_fixed(w, info.session_key);
    w.put(info.authentication_time, 32);
    w.put(info.start_time, 32);
    w.put(info.end_time, 32);
    w.put(info.renewal_deadline, 32);
    w.put(info.loa, 4);
    w.put(info.restrictions, 4);
    put_fixed(w, info.en_nonce);
    return std::move(w).finish();
}

TicketInfo unpack_ticket_info(const BitString& plain)
{
    if (plain.bits != kTicketInfoBits)
        throw WireError("malformed ticket");
    BitReader r(plain);
    TicketInfo t;
    t.id_client = static_cast<std::uint32_t>(r.get(32));
    t.flags = static_cast<std::uint8_t>(r.get(8));
    t.session_key = get_fixed<SymKey>(r);
    t.authentication_time = static_cast<std::uint32_t>(r.get(32));
    t.start_time = static_cast<std::uint32_t>(r.get(32));
    t.end_time = static_cast<std::uint32_t>(r.get(32));
    t.renewal_deadline = static_cast<std::uint32_t>(r.get(32));
    t.loa = static_cast<std::uint8_t>(r.get(4));
    t.restrictions = static_cast<std::uint8_t>(r.get(4));
    t.en_nonce = get_fixed<EnNonce>(r);
    if (t.flags & kReservedFlags)
        throw WireError("reserved ticket flags set");
    if (t.loa < 1 || t.loa > 3)
        throw WireError("ticket LoA out of range");
    if (t.effective_start() > t.end_time)
        throw WireError("ticket starts after it ends");
    return t;
}

Ticket encode_ticket(const TicketInfo& info, TicketType type, const TicketKey& key, RandomSource& rng,
                     OpCounter* counter)
{
    const KeyKind want = type == TicketType::P2P ? KeyKind::DeviceLongTerm : KeyKind::Group;
    if (key.kind != want)
        throw WireError("ticket type does not match key kind");
    return Ticket{type, crypto::sym_encrypt(key.key, pack_ticket_info(info), rng, counter)};
}

TicketInfo decode_ticket(const Ticket& ticket, const TicketKey& key, OpCounter* counter)
{
    const KeyKind want = ticket.type == TicketType::P2P ? KeyKind::DeviceLongTerm : KeyKind::Group;
    if (key.kind != want)
        throw WireError("ticket type does not match key kind");
    check_ticket(ticket);
    return unpack_ticket_info(crypto::sym_decrypt(key.key, ticket.box, counter));
}

std::string generalized_time(std::uint32_t unix_seconds)
{
    const std::time_t t = unix_seconds;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[20];
    std::strftime(buf, sizeof buf, "%Y%m%d%H%M%SZ", &tm);
    return buf;
}

const char* kind_name(MsgKind k)
{
    switch (k) {
    case MsgKind::AsReq: return "Msg1";
    case MsgKind::AsRep: return "Msg2";
    case MsgKind::ApReq: return "Msg3";
    case MsgKind::ApRep: return "Msg4";
    case MsgKind::ApConfirm: return "Msg5";
    case MsgKind::ReauthReq: return "Msg6";
    case MsgKind::ReauthRep: return "Msg7";
    case MsgKind::KrbAsReq: return "K-Msg1";
    case MsgKind::KrbAsRep: return "K-Msg2";
    case MsgKind::KrbTgsReq: return "K-Msg3";
    case MsgKind::KrbTgsRep: return "K-Msg4";
    case MsgKind::KrbApReq: return "K-Msg5";
    case MsgKind::KrbApRep: return "K-Msg6";
    }
    return "?";
}

bool is_kerberos(MsgKind k) { return k >= MsgKind::KrbAsReq; }

MessageHeader header_for(MsgKind kind, bool o2m, std::uint32_t id_s, std::uint32_t id_r)
{
    MessageHeader h;
    h.id_s = id_s;
    h.id_r = id_r;
    switch (kind) {
    case MsgKind::AsReq:
    case MsgKind::ApReq: h.prot = o2m ? ProT::O2M : ProT::P2P, h.msg_t = MsgT::Req; break;
    case MsgKind::AsRep:
    case MsgKind::ApRep:
    case MsgKind::ApConfirm: h.prot = o2m ? ProT::O2M : ProT::P2P, h.msg_t = MsgT::Rep; break;
    case MsgKind::ReauthReq: h.prot = o2m ? ProT::O2MReauth : ProT::P2PReauth, h.msg_t = MsgT::Req; break;
    case MsgKind::ReauthRep: h.prot = o2m ? ProT::O2MReauth : ProT::P2PReauth, h.msg_t = MsgT::Rep; break;
    case MsgKind::KrbAsReq:
    case MsgKind::KrbTgsReq:
    case MsgKind::KrbApReq: h.prot = ProT::Kerberos, h.msg_t = MsgT::Req; break;
    case MsgKind::KrbAsRep:
    case MsgKind::KrbTgsRep:
    case MsgKind::KrbApRep: h.prot = ProT::Kerberos, h.msg_t = MsgT::Rep; break;
    }
    return h;
}

std::size_t accounted_bits(const Frame& f)
{
    return std::visit(
        [](const auto& p) -> std::size_t {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Boxed>)
                return acc(p.enc);
            else if constexpr (std::is_same_v<T, AsRep>)
                return acc(p.enc);
            else if constexpr (std::is_same_v<T, ApReq>)
                return 1 + acc(p.ticket.box) + acc(p.authenticator);
            else if constexpr (std::is_same_v<T, KrbAsReq>)
                return 32 + 32 + 8 + 32 + 96 + 128;
            else if constexpr (std::is_same_v<T, KrbKdcRep>)
                return 8 + 32 + acc(p.ticket) + acc(p.enc);
            else if constexpr (std::is_same_v<T, KrbTgsReq>)
                return 32 + 32 + 96 + 128 + acc(p.tgt) + acc(p.authenticator);
            else
                return 32 + acc(p.sgt) + acc(p.authenticator);
        },
        f.payload);
}

Bytes encode_msg(const Frame& f)
{
    if (!header_matches(f.kind, f.header))
        throw WireError(std::string("header does not match message kind ") + kind_name(f.kind));
    Encoded enc = encode_payload(f);
    MessageHeader h = f.header;
    h.pay_l = static_cast<std::uint32_t>(enc.payload.byte_len());
    const auto head = encode_header(h);
    Bytes out;
    out.reserve(head.size() + enc.payload.bytes.size() + 1 + enc.envs.size() * crypto::kEnvelopeBytes);
    out.insert(out.end(), head.begin(), head.end());
    out.insert(out.end(), enc.payload.bytes.begin(), enc.payload.bytes.end());
    out.push_back(static_cast<std::uint8_t>(enc.envs.size()));
    for (const auto& e : enc.envs)
        put_envelope(out, e);
    return out;
}

std::optional<std::size_t> frame_size(std::span<const std::uint8_t> data)
{
    if (data.size() < kHeaderBytes)
        return std::nullopt;
    const MessageHeader h = decode_header(data);
    const std::size_t count_at = kHeaderBytes + h.pay_l;
    if (data.size() <= count_at)
        return std::nullopt;
    return count_at + 1 + std::size_t{data[count_at]} * crypto::kEnvelopeBytes;
}

Frame decode_msg(std::span<const std::uint8_t> data, MsgKind expected)
{
    const MessageHeader h = decode_header(data);
    if (!header_matches(expected, h))
        throw WireError("unknown message");
    const std::size_t count_at = kHeaderBytes + h.pay_l;
    if (data.size() <= count_at)
        throw WireError("payload shorter than PayL");
    const std::size_t count = data[count_at];
    if (data.size() != count_at + 1 + count * crypto::kEnvelopeBytes)
        throw WireError("frame length does not match PayL");
    std::vector<crypto::Envelope> envs;
    for (std::size_t i = 0; i < count; ++i)
        envs.push_back(get_envelope(data.subspan(count_at + 1 + i * crypto::kEnvelopeBytes, crypto::kEnvelopeBytes)));

    Frame f;
    f.header = h;
    f.kind = expected;
    f.payload = decode_payload(expected, data.subspan(kHeaderBytes, h.pay_l), envs);
    return f;
}

MsgKind identify(const MessageHeader& h, Role receiver)
{
    const bool req = h.msg_t == MsgT::Req;
    switch (receiver) {
    case Role::AuthServer:
        if (is_m2i_initial(h.prot) && req)
            return MsgKind::AsReq;
        if (h.prot == ProT::Kerberos && req)
            return MsgKind::KrbAsReq;
        break;
    case Role::Tgs:
        if (h.prot == ProT::Kerberos && req)
            return MsgKind::KrbTgsReq;
        break;
    case Role::Device:
        if (is_m2i_initial(h.prot))
            return req ? MsgKind::ApReq : MsgKind::ApConfirm;
        if (is_m2i_reauth(h.prot) && req)
            return MsgKind::ReauthReq;
        if (h.prot == ProT::Kerberos && req)
            return MsgKind::KrbApReq;
        break;
    case Role::Client:
        if (is_m2i_reauth(h.prot) && !req)
            return MsgKind::ReauthRep;
        break;
    }
    throw WireError("unknown message");
}

// --- M2I plaintexts ---------------------------------------------------------

Boxed seal_as_req(const AsReqPlain& p, const SymKey& k, RandomSource& rng, OpCounter* c)
{
    if (p.targets.empty())
        throw WireError("no target devices");
    BitWriter w;
    w.put(p.client, 32);
    for (auto t : p.targets)
        w.put(t, 32);
    put_fixed(w, p.nonce1);
    w.put(p.ts, 32);
    return Boxed{crypto::sym_encrypt(k, std::move(w).finish(), rng, c)};
}

AsReqPlain open_as_req(const Boxed& m, const SymKey& k, OpCounter* c)
{
    const BitString s = open_m2i(m.enc, k, c);
    if (s.bits < 224 || (s.bits - 192) % 32)
        throw WireError("malformed Msg1");
    BitReader r = reader_for(s);
    AsReqPlain p;
    p.client = static_cast<std::uint32_t>(r.get(32));
    for (std::size_t i = 0; i < (s.bits - 192) / 32; ++i)
        p.targets.push_back(static_cast<std::uint32_t>(r.get(32)));
    p.nonce1 = get_fixed<EnNonce>(r);
    p.ts = static_cast<std::uint32_t>(r.get(32));
    return p;
}

AsRep seal_as_rep(const AsRepPlain& p, const SymKey& k, RandomSource& rng, OpCounter* c)
{
    check_ticket(p.ticket);
    BitWriter w;
    put_fixed(w, p.sk);
    put_fixed(w, p.nonce1);
    w.put(static_cast<std::uint8_t>(p.ticket.type), 1);
    w.put_bytes(p.ticket.box.body);
    return AsRep{crypto::sym_encrypt(k, std::move(w).finish(), rng, c), p.ticket.box.env};
}

AsRepPlain open_as_rep(const AsRep& m, const SymKey& k, OpCounter* c)
{
    const BitString s = expect_plain_bits(open_m2i(m.enc, k, c), 256 + kTicketBits, "Msg2");
    BitReader r = reader_for(s);
    AsRepPlain p;
    p.sk = get_fixed<SymKey>(r);
    p.nonce1 = get_fixed<EnNonce>(r);
    p.ticket.type = static_cast<TicketType>(r.get(1));
    p.ticket.box.env = m.ticket_env;
    p.ticket.box.body.resize(accounted_len(kTicketInfoBits) / 8);
    r.get_bytes(p.ticket.box.body);
    check_ticket(p.ticket);
    return p;
}

SealedBox seal_authenticator(const Authenticator& a, const SymKey& sk, RandomSource& rng, OpCounter* c)
{
    if (a.proof.size() != EnNonce::kSize && a.proof.size() != Digest::kSize)
        throw WireError("authenticator proof must be a nonce or a chain link");
    BitWriter w;
    w.put(a.client, 32);
    w.put_bytes(a.proof);
    return crypto::sym_encrypt(sk, std::move(w).finish(), rng, c);
}

Authenticator open_authenticator(const SealedBox& box, const SymKey& sk, OpCounter* c)
{
    const BitString s = open_m2i(box, sk, c);
    if (s.bits != 32 + 128 && s.bits != 32 + 256)
        throw WireError("malformed authenticator");
    BitReader r = reader_for(s);
    Authenticator a;
    a.client = static_cast<std::uint32_t>(r.get(32));
    a.proof.resize((s.bits - 32) / 8);
    r.get_bytes(a.proof);
    return a;
}

Boxed seal_ap_rep(const ApRepPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c)
{
    BitWriter w;
    put_fixed(w, p.nonce1);
    put_fixed(w, p.nonce3);
    return Boxed{crypto::sym_encrypt(sk, std::move(w).finish(), rng, c)};
}

ApRepPlain open_ap_rep(const Boxed& m, const SymKey& sk, OpCounter* c)
{
    const BitString s = expect_plain_bits(open_m2i(m.enc, sk, c), 256, "Msg4");
    BitReader r = reader_for(s);
    ApRepPlain p;
    p.nonce1 = get_fixed<EnNonce>(r);
    p.nonce3 = get_fixed<EnNonce>(r);
    return p;
}

Boxed seal_ap_confirm(const ApConfirmPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c)
{
    BitWriter w;
    put_fixed(w, p.nonce3);
    return Boxed{crypto::sym_encrypt(sk, std::move(w).finish(), rng, c)};
}

ApConfirmPlain open_ap_confirm(const Boxed& m, const SymKey& sk, OpCounter* c)
{
    const BitString s = expect_plain_bits(open_m2i(m.enc, sk, c), 128, "Msg5");
    BitReader r = reader_for(s);
    return ApConfirmPlain{get_fixed<EnNonce>(r)};
}

Boxed seal_reauth_rep(const ReauthRepPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c)
{
    BitWriter w;
    put_fixed(w, p.link);
    put_fixed(w, p.nonce4);
    return Boxed{crypto::sym_encrypt(sk, std::move(w).finish(), rng, c)};
}

ReauthRepPlain open_reauth_rep(const Boxed& m, const SymKey& sk, OpCounter* c)
{
    const BitString s = expect_plain_bits(open_m2i(m.enc, sk, c), 384, "Msg7");
    BitReader r = reader_for(s);
    ReauthRepPlain p;
    p.link = get_fixed<Digest>(r);
    p.nonce4 = get_fixed<EnNonce>(r);
    return p;
}

// --- Kerberos plaintexts ----------------------------------------------------

SealedBox seal_krb_ticket(const KrbTicketBody& t, const SymKey& k, RandomSource& rng, OpCounter* c)
{
    BitWriter w;
    w.put(t.kflags, 32);
    put_fixed(w, t.key);
    w.put(t.realm, 8);
    w.put(t.client, 32);
    w.put(t.address, 8);
    put_times(w, t.times);
    return crypto::kerberos_encrypt(k, KeyUsage::Ticket, std::move(w).finish().bytes, rng, c);
}

KrbTicketBody open_krb_ticket(const SealedBox& box, const SymKey& k, OpCounter* c)
{
    const Bytes plain = krb_open(box, k, KeyUsage::Ticket, kKrbTicketBits, "ticket", c);
    BitReader r(plain, plain.size() * 8);
    KrbTicketBody t;
    t.kflags = static_cast<std::uint32_t>(r.get(32));
    t.key = get_fixed<SymKey>(r);
    t.realm = static_cast<std::uint8_t>(r.get(8));
    t.client = static_cast<std::uint32_t>(r.get(32));
    t.address = static_cast<std::uint8_t>(r.get(8));
    t.times = get_times(r);
    return t;
}

SealedBox seal_krb_authenticator(const KrbAuthenticator& a, const SymKey& k, KeyUsage usage, RandomSource& rng,
                                 OpCounter* c)
{
    BitWriter w;
    w.put(a.client, 32);
    w.put(a.realm, 8);
    w.put(a.ts, 32);
    return crypto::kerberos_encrypt(k, usage, std::move(w).finish().bytes, rng, c);
}

KrbAuthenticator open_krb_authenticator(const SealedBox& box, const SymKey& k, KeyUsage usage, OpCounter* c)
{
    const Bytes plain = krb_open(box, k, usage, kKrbAuthenticatorBits, "authenticator", c);
    BitReader r(plain, plain.size() * 8);
    KrbAuthenticator a;
    a.client = static_cast<std::uint32_t>(r.get(32));
    a.realm = static_cast<std::uint8_t>(r.get(8));
    a.ts = static_cast<std::uint32_t>(r.get(32));
    return a;
}

SealedBox seal_krb_enc_part(const KrbEncPart& e, const SymKey& k, KeyUsage usage, RandomSource& rng, OpCounter* c)
{
    BitWriter w;
    put_fixed(w, e.key);
    put_times(w, e.times);
    put_fixed(w, e.nonce);
    w.put(e.realm, 8);
    w.put(e.server, 32);
    return crypto::kerberos_encrypt(k, usage, std::move(w).finish().bytes, rng, c);
}

KrbEncPart open_krb_enc_part(const SealedBox& box, const SymKey& k, KeyUsage usage, OpCounter* c)
{
    const Bytes plain = krb_open(box, k, usage, kKrbEncPartBits, "encrypted part", c);
    BitReader r(plain, plain.size() * 8);
    KrbEncPart e;
    e.key = get_fixed<SymKey>(r);
    e.times = get_times(r);
    e.nonce = get_fixed<EnNonce>(r);
    e.realm = static_cast<std::uint8_t>(r.get(8));
    e.server = static_cast<std::uint32_t>(r.get(32));
    return e;
}

Boxed seal_krb_ap_rep(std::uint32_t ts2, const SymKey& k, RandomSource& rng, OpCounter* c)
{
    const Bytes plain{static_cast<std::uint8_t>(ts2 >> 24), static_cast<std::uint8_t>(ts2 >> 16),
                      static_cast<std::uint8_t>(ts2 >> 8), static_cast<std::uint8_t>(ts2)};
    return Boxed{crypto::kerberos_encrypt(k, KeyUsage::ApRepEncPart, plain, rng, c)};
}

std::uint32_t open_krb_ap_rep(const Boxed& m, const SymKey& k, OpCounter* c)
{
    const Bytes plain = krb_open(m.enc, k, KeyUsage::ApRepEncPart, kKrbApRepBits, "K-Msg6", c);
    return std::uint32_t{plain[0]} << 24 | std::uint32_t{plain[1]} << 16 | std::uint32_t{plain[2]} << 8 | plain[3];
}

}  // namespace m2i::wire
