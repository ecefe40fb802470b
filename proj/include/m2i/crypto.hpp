#pragma once

#include "m2i/bits.hpp"

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2i::crypto {

using Bytes = std::vector<std::uint8_t>;

class CryptoError : public std::runtime_error {
public:
    enum class Kind { EmptyPlaintext, NotBlockAligned, IntegrityFailure, Malformed, EmptyChain, ChainExhausted, Rng };

    CryptoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

template <std::size_t N>
struct FixedBytes {
    static constexpr std::size_t kSize = N;
    std::array<std::uint8_t, N> bytes{};

    std::span<const std::uint8_t, N> view() const { return bytes; }
    friend bool operator==(const FixedBytes&, const FixedBytes&) = default;
    friend auto operator<=>(const FixedBytes&, const FixedBytes&) = default;
};

/// AES-128 key.
struct SymKey : FixedBytes<16> {};
/// 128-bit random challenge.
struct EnNonce : FixedBytes<16> {};
/// SHA-256 output.
struct Digest : FixedBytes<32> {};

bool ct_equal(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

std::string to_hex(std::span<const std::uint8_t> data);
Bytes from_hex(const std::string& hex);

template <class T>
T fixed_from_hex(const std::string& hex)
{
    const Bytes raw = from_hex(hex);
    if (raw.size() != T::kSize)
        throw CryptoError(CryptoError::Kind::Malformed, "hex value has wrong length");
    T out;
    std::copy(raw.begin(), raw.end(), out.bytes.begin());
    return out;
}

// --- operation counting -----------------------------------------------------

enum class OpKind : std::size_t { SE = 0, H, HMAC, KSE, KSD };
inline constexpr std::size_t kOpKinds = 5;
const char* op_name(OpKind kind);

/// Per-session tally of cryptographic operations, optionally with the time spent in each.
class OpCounter {
public:
    explicit OpCounter(bool timed = false) : timed_(timed) {}

    void add(OpKind kind, std::chrono::nanoseconds spent = {});

    std::uint64_t count(OpKind kind) const { return counts_[static_cast<std::size_t>(kind)]; }
    std::chrono::nanoseconds time(OpKind kind) const { return times_[static_cast<std::size_t>(kind)]; }
    std::chrono::nanoseconds total_time() const;
    bool timed() const { return timed_; }

    OpCounter& operator+=(const OpCounter& other);
    void reset();

private:
    bool timed_;
    std::array<std::uint64_t, kOpKinds> counts_{};
    std::array<std::chrono::nanoseconds, kOpKinds> times_{};
};

// --- randomness -------------------------------------------------------------

class RandomSource {
public:
    virtual ~RandomSource() = default;
    virtual void fill(std::span<std::uint8_t> out) = 0;
};

/// OS-backed CSPRNG.
class SystemRandom final : public RandomSource {
public:
    void fill(std::span<std::uint8_t> out) override;
};

/// AES-128-CTR keystream keyed from a seed; used for reproducible transcripts.
class DeterministicRandom final : public RandomSource {
public:
    explicit DeterministicRandom(std::uint64_t seed);
    ~DeterministicRandom() override;
    DeterministicRandom(const DeterministicRandom&) = delete;
    DeterministicRandom& operator=(const DeterministicRandom&) = delete;

    void fill(std::span<std::uint8_t> out) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

EnNonce gen_nonce(RandomSource& rng);
SymKey gen_session_key(RandomSource& rng);

// --- ciphers ----------------------------------------------------------------

inline constexpr std::size_t kBlockBytes = 16;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kEnvelopeBytes = kBlockBytes + kTagBytes + 2;

/// Out-of-band companion of a ciphertext: IV, integrity tag and plaintext bit length.
/// None of it is part of the accounted message length.
struct Envelope {
    std::array<std::uint8_t, kBlockBytes> iv{};
    std::array<std::uint8_t, kTagBytes> tag{};
    std::uint16_t plain_bits = 0;

    friend bool operator==(const Envelope&, const Envelope&) = default;
};

struct SealedBox {
    Envelope env;
    Bytes body;

    friend bool operator==(const SealedBox&, const SealedBox&) = default;
};

/// AES-128-CBC over the zero-filled plaintext; body is ceil(bits/128) blocks.
SealedBox sym_encrypt(const SymKey& key, const bits::BitString& plaintext, RandomSource& rng,
                      OpCounter* counter = nullptr);
bits::BitString sym_decrypt(const SymKey& key, const SealedBox& box, OpCounter* counter = nullptr);

/// Body length of a CBC box for a plaintext of `plain_bits`.
std::size_t cbc_body_bytes(std::size_t plain_bits);

/// Key usage numbers for the Kerberos baseline, after RFC 4120.
enum class KeyUsage : std::uint32_t {
    Ticket = 2,
    AsRepEncPart = 3,
    TgsReqAuthenticator = 7,
    TgsRepEncPart = 8,
    ApReqAuthenticator = 11,
    ApRepEncPart = 12,
};

/// AES-128-CBC-CS3 with per-usage derived keys and HMAC-SHA256-128, after RFC 8009.
/// Length preserving for inputs of at least one block; shorter inputs occupy one block.
SealedBox kerberos_encrypt(const SymKey& key, KeyUsage usage, std::span<const std::uint8_t> plaintext,
                           RandomSource& rng, OpCounter* counter = nullptr);
Bytes kerberos_decrypt(const SymKey& key, KeyUsage usage, const SealedBox& box, OpCounter* counter = nullptr);

std::size_t cts_body_bytes(std::size_t plain_bytes);

// --- hashing ----------------------------------------------------------------

Digest hash(std::span<const std::uint8_t> data, OpCounter* counter = nullptr);
Digest hmac(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data, OpCounter* counter = nullptr);

/// h_1 = H(seed), h_i = H(h_{i-1}). Links are spent newest first.
class HashChain {
public:
    static HashChain generate(const EnNonce& seed, std::size_t n, OpCounter* counter = nullptr);

    std::size_t length() const { return links_.size(); }
    /// 1-based index of the next unspent link; 0 once exhausted.
    std::size_t cursor() const { return cursor_; }
    bool exhausted() const { return cursor_ == 0; }

    /// h_i, 1-based.
    const Digest& link(std::size_t i) const;
    const EnNonce& seed() const { return seed_; }

    /// Returns h_cursor and moves the cursor down.
    Digest take();

private:
    EnNonce seed_;
    std::vector<Digest> links_;
    std::size_t cursor_ = 0;
};

bool hc_verify(const Digest& prev, const Digest& stored, OpCounter* counter = nullptr);

}  // namespace m2i::crypto
