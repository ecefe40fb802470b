#pragma once

#include "m2i/bits.hpp"
#include "m2i/crypto.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace m2i::wire {

using crypto::Bytes;
using crypto::Digest;
using crypto::EnNonce;
using crypto::SealedBox;
using crypto::SymKey;

class WireError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// ceil(bits / L) * L; the length the cost tables charge for an encrypted component.
constexpr std::size_t accounted_len(std::size_t plain_bits, std::size_t L = 128)
{
    return (plain_bits + L - 1) / L * L;
}

// --- header -----------------------------------------------------------------

// Local code points; the protocol family leaves them open.
enum class ProT : std::uint8_t { P2P = 1, O2M = 2, P2PReauth = 3, O2MReauth = 4, Kerberos = 5 };
enum class MsgT : std::uint8_t { Req = 0, Rep = 1 };

const char* prot_name(ProT p);

struct MessageHeader {
    ProT prot = ProT::P2P;
    MsgT msg_t = MsgT::Req;
    std::uint32_t id_s = 0;
    std::uint32_t id_r = 0;
    std::uint32_t pay_l = 0;  // payload bytes, 27 bits

    friend bool operator==(const MessageHeader&, const MessageHeader&) = default;
};

inline constexpr std::size_t kHeaderBytes = 12;
inline constexpr std::uint32_t kMaxPayL = (1u << 27) - 1;

std::array<std::uint8_t, kHeaderBytes> encode_header(const MessageHeader& h);
MessageHeader decode_header(std::span<const std::uint8_t> data);

// --- tickets ----------------------------------------------------------------

enum TicketFlag : std::uint8_t {
    kRenewable = 1u << 0,
    kForwardable = 1u << 1,
    kReusable = 1u << 2,
    kProxiable = 1u << 3,
    kProxy = 1u << 4,
};
inline constexpr std::uint8_t kReservedFlags = 0xe0;

struct TicketInfo {
    std::uint32_t id_client = 0;
    std::uint8_t flags = 0;
    SymKey session_key;
    std::uint32_t authentication_time = 0;
    std::uint32_t start_time = 0;  // 0: starts at authentication_time
    std::uint32_t end_time = 0;
    std::uint32_t renewal_deadline = 0;
    std::uint8_t loa = 1;
    std::uint8_t restrictions = 0;
    EnNonce en_nonce;

    std::uint32_t effective_start() const { return start_time ? start_time : authentication_time; }
    bool reusable() const { return flags & kReusable; }

    friend bool operator==(const TicketInfo&, const TicketInfo&) = default;
};

inline constexpr std::size_t kTicketInfoBits = 432;
inline constexpr std::size_t kTicketBits = 1 + accounted_len(kTicketInfoBits);  // 513

enum class TicketType : std::uint8_t { P2P = 0, O2M = 1 };

/// Device long-term keys seal P2P tickets, group keys seal O2M tickets.
enum class KeyKind { DeviceLongTerm, Group };

struct TicketKey {
    KeyKind kind;
    SymKey key;
};

struct Ticket {
    TicketType type = TicketType::P2P;
    SealedBox box;

    friend bool operator==(const Ticket&, const Ticket&) = default;
};

bits::BitString pack_ticket_info(const TicketInfo& info);
TicketInfo unpack_ticket_info(const bits::BitString& plain);

Ticket encode_ticket(const TicketInfo& info, TicketType type, const TicketKey& key, crypto::RandomSource& rng,
                     crypto::OpCounter* counter = nullptr);
TicketInfo decode_ticket(const Ticket& ticket, const TicketKey& key, crypto::OpCounter* counter = nullptr);

/// Renders a wire timestamp as GeneralizedTime ("YYYYMMDDHHMMSSZ") for logs.
std::string generalized_time(std::uint32_t unix_seconds);

// --- payloads ---------------------------------------------------------------

enum class MsgKind {
    AsReq,       // Msg1
    AsRep,       // Msg2
    ApReq,       // Msg3
    ApRep,       // Msg4
    ApConfirm,   // Msg5
    ReauthReq,   // Msg6
    ReauthRep,   // Msg7
    KrbAsReq,    // Kerberos Msg1
    KrbAsRep,    // Msg2
    KrbTgsReq,   // Msg3
    KrbTgsRep,   // Msg4
    KrbApReq,    // Msg5
    KrbApRep,    // Msg6
};

const char* kind_name(MsgKind k);
bool is_kerberos(MsgKind k);

/// A payload that is a single ciphertext: Msg1, Msg4, Msg5, Msg7 and Kerberos Msg6.
struct Boxed {
    SealedBox enc;
    friend bool operator==(const Boxed&, const Boxed&) = default;
};

/// Msg2. The ticket rides inside the ciphertext; its envelope travels beside it.
struct AsRep {
    SealedBox enc;
    crypto::Envelope ticket_env;
    friend bool operator==(const AsRep&, const AsRep&) = default;
};

/// Msg3 and Msg6.
struct ApReq {
    Ticket ticket;
    SealedBox authenticator;
    friend bool operator==(const ApReq&, const ApReq&) = default;
};

struct KrbTimes {
    std::uint32_t start = 0;
    std::uint32_t end = 0;
    std::uint32_t renew = 0;
    friend bool operator==(const KrbTimes&, const KrbTimes&) = default;
};

struct KrbAsReq {
    std::uint32_t options = 0;
    std::uint32_t client = 0;
    std::uint8_t realm = 0;
    std::uint32_t tgs = 0;
    KrbTimes times;
    EnNonce nonce1;
    friend bool operator==(const KrbAsReq&, const KrbAsReq&) = default;
};

/// Kerberos Msg2 and Msg4 share a shape: realm, client, ticket, encrypted part.
struct KrbKdcRep {
    std::uint8_t realm = 0;
    std::uint32_t client = 0;
    SealedBox ticket;
    SealedBox enc;
    friend bool operator==(const KrbKdcRep&, const KrbKdcRep&) = default;
};

struct KrbTgsReq {
    std::uint32_t options = 0;
    std::uint32_t target = 0;
    KrbTimes times;
    EnNonce nonce2;
    SealedBox tgt;
    SealedBox authenticator;
    friend bool operator==(const KrbTgsReq&, const KrbTgsReq&) = default;
};

struct KrbApReq {
    std::uint32_t options = 0;
    SealedBox sgt;
    SealedBox authenticator;
    friend bool operator==(const KrbApReq&, const KrbApReq&) = default;
};

using Payload = std::variant<Boxed, AsRep, ApReq, KrbAsReq, KrbKdcRep, KrbTgsReq, KrbApReq>;

struct Frame {
    MessageHeader header;
    MsgKind kind = MsgKind::AsReq;
    Payload payload;

    friend bool operator==(const Frame&, const Frame&) = default;
};

/// Header type fields for a message kind. `o2m` selects the O2M code points for M2I kinds.
MessageHeader header_for(MsgKind kind, bool o2m, std::uint32_t id_s, std::uint32_t id_r);

/// Bits the cost model charges for this payload.
std::size_t accounted_bits(const Frame& f);

/// header || payload || envelope count || envelopes. Fills in pay_l.
Bytes encode_msg(const Frame& f);
/// Decodes a frame the receiver expects to be of kind `expected`.
Frame decode_msg(std::span<const std::uint8_t> data, MsgKind expected);

enum class Role { Client, AuthServer, Tgs, Device };

/// Message kind a server-side role receives for this header; throws "unknown message".
MsgKind identify(const MessageHeader& h, Role receiver);

/// Total frame size once enough bytes are buffered to tell, otherwise nullopt.
std::optional<std::size_t> frame_size(std::span<const std::uint8_t> data);

// --- M2I plaintexts ---------------------------------------------------------

struct AsReqPlain {
    std::uint32_t client = 0;
    std::vector<std::uint32_t> targets;  // one for P2P, the ID_D list for O2M
    EnNonce nonce1;
    std::uint32_t ts = 0;
};

struct AsRepPlain {
    SymKey sk;
    EnNonce nonce1;
    Ticket ticket;
};

/// ID_C with either EnNonce2 (16 bytes) or a chain link (32 bytes).
struct Authenticator {
    std::uint32_t client = 0;
    Bytes proof;
};

struct ApRepPlain {
    EnNonce nonce1;
    EnNonce nonce3;
};

struct ApConfirmPlain {
    EnNonce nonce3;
};

struct ReauthRepPlain {
    Digest link;
    EnNonce nonce4;
};

using crypto::OpCounter;
using crypto::RandomSource;

Boxed seal_as_req(const AsReqPlain& p, const SymKey& k, RandomSource& rng, OpCounter* c = nullptr);
AsReqPlain open_as_req(const Boxed& m, const SymKey& k, OpCounter* c = nullptr);

AsRep seal_as_rep(const AsRepPlain& p, const SymKey& k, RandomSource& rng, OpCounter* c = nullptr);
AsRepPlain open_as_rep(const AsRep& m, const SymKey& k, OpCounter* c = nullptr);

SealedBox seal_authenticator(const Authenticator& a, const SymKey& sk, RandomSource& rng, OpCounter* c = nullptr);
Authenticator open_authenticator(const SealedBox& box, const SymKey& sk, OpCounter* c = nullptr);

Boxed seal_ap_rep(const ApRepPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c = nullptr);
ApRepPlain open_ap_rep(const Boxed& m, const SymKey& sk, OpCounter* c = nullptr);

Boxed seal_ap_confirm(const ApConfirmPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c = nullptr);
ApConfirmPlain open_ap_confirm(const Boxed& m, const SymKey& sk, OpCounter* c = nullptr);

Boxed seal_reauth_rep(const ReauthRepPlain& p, const SymKey& sk, RandomSource& rng, OpCounter* c = nullptr);
ReauthRepPlain open_reauth_rep(const Boxed& m, const SymKey& sk, OpCounter* c = nullptr);

// --- Kerberos plaintexts ----------------------------------------------------

/// TGT and SGT body: K-Flags 32, key 128, realm 8, ID_C 32, AD_C 8, times 96 = 304 bits.
struct KrbTicketBody {
    std::uint32_t kflags = 0;
    SymKey key;
    std::uint8_t realm = 0;
    std::uint32_t client = 0;
    std::uint8_t address = 0;
    KrbTimes times;
};

/// ID_C 32, realm 8, timestamp 32 = 72 bits.
struct KrbAuthenticator {
    std::uint32_t client = 0;
    std::uint8_t realm = 0;
    std::uint32_t ts = 0;
};

/// Encrypted part of Msg2 / Msg4: key 128, times 96, nonce 128, realm 8, server id 32 = 392 bits.
struct KrbEncPart {
    SymKey key;
    KrbTimes times;
    EnNonce nonce;
    std::uint8_t realm = 0;
    std::uint32_t server = 0;
};

inline constexpr std::size_t kKrbTicketBits = 304;
inline constexpr std::size_t kKrbAuthenticatorBits = 72;
inline constexpr std::size_t kKrbEncPartBits = 392;
inline constexpr std::size_t kKrbApRepBits = 32;

using crypto::KeyUsage;

SealedBox seal_krb_ticket(const KrbTicketBody& t, const SymKey& k, RandomSource& rng, OpCounter* c = nullptr);
KrbTicketBody open_krb_ticket(const SealedBox& box, const SymKey& k, OpCounter* c = nullptr);

SealedBox seal_krb_authenticator(const KrbAuthenticator& a, const SymKey& k, KeyUsage usage, RandomSource& rng,
                                 OpCounter* c = nullptr);
KrbAuthenticator open_krb_authenticator(const SealedBox& box, const SymKey& k, KeyUsage usage,
                                        OpCounter* c = nullptr);

SealedBox seal_krb_enc_part(const KrbEncPart& e, const SymKey& k, KeyUsage usage, RandomSource& rng,
                            OpCounter* c = nullptr);
KrbEncPart open_krb_enc_part(const SealedBox& box, const SymKey& k, KeyUsage usage, OpCounter* c = nullptr);

Boxed seal_krb_ap_rep(std::uint32_t ts2, const SymKey& k, RandomSource& rng, OpCounter* c = nullptr);
std::uint32_t open_krb_ap_rep(const Boxed& m, const SymKey& k, OpCounter* c = nullptr);

}  // namespace m2i::wire
