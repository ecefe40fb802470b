#include "m2i/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cstring>

namespace m2i::crypto {
namespace {

using Clock = std::chrono::steady_clock;

struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

CipherCtx make_ctx(const EVP_CIPHER* cipher, const std::uint8_t* key, const std::uint8_t* iv, bool encrypt)
{
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_CipherInit_ex(ctx.get(), cipher, nullptr, key, iv, encrypt ? 1 : 0) != 1)
        throw CryptoError(CryptoError::Kind::Malformed, "cipher initialisation failed");
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    return ctx;
}

void run_cipher(EVP_CIPHER_CTX* ctx, std::span<const std::uint8_t> in, std::uint8_t* out)
{
    int len = 0;
    if (EVP_CipherUpdate(ctx, out, &len, in.data(), static_cast<int>(in.size())) != 1 ||
        static_cast<std::size_t>(len) != in.size())
        throw CryptoError(CryptoError::Kind::Malformed, "cipher update failed");
}

/// Times one primitive when the counter asks for it, and records it on success.
class OpScope {
public:
    OpScope(OpCounter* counter, OpKind kind) : counter_(counter), kind_(kind)
    {
        if (counter_ && counter_->timed())
            start_ = Clock::now();
    }
    void done()
    {
        if (!counter_)
            return;
        counter_->add(kind_, counter_->timed() ? Clock::now() - start_ : Clock::duration{});
    }

private:
    OpCounter* counter_;
    OpKind kind_;
    Clock::time_point start_{};
};

using Tag = std::array<std::uint8_t, kTagBytes>;

Tag compute_tag(std::span<const std::uint8_t> mac_key, const Envelope& env, std::span<const std::uint8_t> body)
{
    Bytes input;
    input.reserve(kBlockBytes + 2 + body.size());
    input.insert(input.end(), env.iv.begin(), env.iv.end());
    input.push_back(static_cast<std::uint8_t>(env.plain_bits >> 8));
    input.push_back(static_cast<std::uint8_t>(env.plain_bits));
    input.insert(input.end(), body.begin(), body.end());
    std::array<std::uint8_t, 32> full{};
    unsigned int len = 0;
    HMAC(EVP_sha256(), mac_key.data(), static_cast<int>(mac_key.size()), input.data(), input.size(), full.data(),
         &len);
    Tag tag;
    std::copy_n(full.begin(), kTagBytes, tag.begin());
    return tag;
}

std::array<std::uint8_t, 32> cbc_mac_key(const SymKey& key)
{
    static constexpr char kLabel[] = "m2i sealed-box mac";
    std::array<std::uint8_t, sizeof(kLabel) - 1 + 16> input{};
    std::memcpy(input.data(), kLabel, sizeof(kLabel) - 1);
    std::memcpy(input.data() + sizeof(kLabel) - 1, key.bytes.data(), 16);
    std::array<std::uint8_t, 32> out{};
    SHA256(input.data(), input.size(), out.data());
    return out;
}

/// KDF-HMAC-SHA2 (SP 800-108 counter mode) truncated to 128 bits.
SymKey derive_usage_key(const SymKey& base, KeyUsage usage, std::uint8_t suffix)
{
    const auto u = static_cast<std::uint32_t>(usage);
    const std::array<std::uint8_t, 14> input{0, 0, 0, 1,
                                             static_cast<std::uint8_t>(u >> 24), static_cast<std::uint8_t>(u >> 16),
                                             static_cast<std::uint8_t>(u >> 8), static_cast<std::uint8_t>(u),
                                             suffix, 0, 0, 0, 0, 128};
    std::array<std::uint8_t, 32> full{};
    unsigned int len = 0;
    HMAC(EVP_sha256(), base.bytes.data(), 16, input.data(), input.size(), full.data(), &len);
    SymKey out;
    std::copy_n(full.begin(), 16, out.bytes.begin());
    return out;
}

void check_tag(std::span<const std::uint8_t> mac_key, const SealedBox& box)
{
    const Tag expect = compute_tag(mac_key, box.env, box.body);
    if (!ct_equal(expect, box.env.tag))
        throw CryptoError(CryptoError::Kind::IntegrityFailure, "integrity check failed");
}

}  // namespace

bool ct_equal(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b)
{
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

std::string to_hex(std::span<const std::uint8_t> data)
{
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

Bytes from_hex(const std::string& hex)
{
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9')
            return c - '0';
        if (c >= 'a' && c <= 'f')
            return c - 'a' + 10;
        if (c >= 'A' && c <= 'F')
            return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2)
        throw CryptoError(CryptoError::Kind::Malformed, "odd-length hex string");
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int hi = nibble(hex[2 * i]);
        const int lo = nibble(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            throw CryptoError(CryptoError::Kind::Malformed, "invalid hex digit");
        out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return out;
}

const char* op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::SE: return "T_SE";
    case OpKind::H: return "T_H";
    case OpKind::HMAC: return "T_HMAC";
    case OpKind::KSE: return "T_KSE";
    case OpKind::KSD: return "T_KSD";
    }
    return "?";
}

void OpCounter::add(OpKind kind, std::chrono::nanoseconds spent)
{
    const auto i = static_cast<std::size_t>(kind);
    ++counts_[i];
    times_[i] += spent;
}

std::chrono::nanoseconds OpCounter::total_time() const
{
    std::chrono::nanoseconds sum{};
    for (auto t : times_)
        sum += t;
    return sum;
}

OpCounter& OpCounter::operator+=(const OpCounter& other)
{
    for (std::size_t i = 0; i < kOpKinds; ++i) {
        counts_[i] += other.counts_[i];
        times_[i] += other.times_[i];
    }
    return *this;
}

void OpCounter::reset()
{
    counts_ = {};
    times_ = {};
}

void SystemRandom::fill(std::span<std::uint8_t> out)
{
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
        throw CryptoError(CryptoError::Kind::Rng, "system RNG failure");
}

struct DeterministicRandom::Impl {
    CipherCtx ctx;
};

DeterministicRandom::DeterministicRandom(std::uint64_t seed) : impl_(std::make_unique<Impl>())
{
    std::array<std::uint8_t, 8> s{};
    for (int i = 0; i < 8; ++i)
        s[i] = static_cast<std::uint8_t>(seed >> (8 * i));
    std::array<std::uint8_t, 32> k{};
    SHA256(s.data(), s.size(), k.data());
    const std::array<std::uint8_t, 16> iv{};
    impl_->ctx = make_ctx(EVP_aes_128_ctr(), k.data(), iv.data(), true);
}

DeterministicRandom::~DeterministicRandom() = default;

void DeterministicRandom::fill(std::span<std::uint8_t> out)
{
    std::fill(out.begin(), out.end(), 0);
    run_cipher(impl_->ctx.get(), out, out.data());
}

EnNonce gen_nonce(RandomSource& rng)
{
    EnNonce n;
    rng.fill(n.bytes);
    return n;
}

SymKey gen_session_key(RandomSource& rng)
{
    SymKey k;
    rng.fill(k.bytes);
    return k;
}

std::size_t cbc_body_bytes(std::size_t plain_bits)
{
    return (plain_bits + 127) / 128 * kBlockBytes;
}

SealedBox sym_encrypt(const SymKey& key, const bits::BitString& plaintext, RandomSource& rng, OpCounter* counter)
{
    if (plaintext.bits == 0)
        throw CryptoError(CryptoError::Kind::EmptyPlaintext, "empty plaintext");
    if (plaintext.bits > 0xffff)
        throw CryptoError(CryptoError::Kind::Malformed, "plaintext too long");
    OpScope scope(counter, OpKind::SE);

    SealedBox box;
    box.env.plain_bits = static_cast<std::uint16_t>(plaintext.bits);
    rng.fill(box.env.iv);
    Bytes padded(cbc_body_bytes(plaintext.bits), 0);
    std::copy(plaintext.bytes.begin(), plaintext.bytes.begin() + static_cast<std::ptrdiff_t>(plaintext.byte_len()),
              padded.begin());
    box.body.resize(padded.size());
    auto ctx = make_ctx(EVP_aes_128_cbc(), key.bytes.data(), box.env.iv.data(), true);
    run_cipher(ctx.get(), padded, box.body.data());
    box.env.tag = compute_tag(cbc_mac_key(key), box.env, box.body);
    scope.done();
    return box;
}

bits::BitString sym_decrypt(const SymKey& key, const SealedBox& box, OpCounter* counter)
{
    if (box.body.empty() || box.body.size() % kBlockBytes != 0)
        throw CryptoError(CryptoError::Kind::NotBlockAligned, "ciphertext not block-aligned");
    if (box.env.plain_bits == 0 || cbc_body_bytes(box.env.plain_bits) != box.body.size())
        throw CryptoError(CryptoError::Kind::Malformed, "plaintext length does not match ciphertext");
    OpScope scope(counter, OpKind::SE);

    check_tag(cbc_mac_key(key), box);
    Bytes padded(box.body.size());
    auto ctx = make_ctx(EVP_aes_128_cbc(), key.bytes.data(), box.env.iv.data(), false);
    run_cipher(ctx.get(), box.body, padded.data());

    bits::BitReader reader(padded, padded.size() * 8);
    bits::BitString out = reader.get_bits(box.env.plain_bits);
    if (!reader.rest_is_zero())
        throw CryptoError(CryptoError::Kind::Malformed, "non-zero padding");
    scope.done();
    return out;
}

std::size_t cts_body_bytes(std::size_t plain_bytes)
{
    return std::max(plain_bytes, kBlockBytes);
}

SealedBox kerberos_encrypt(const SymKey& key, KeyUsage usage, std::span<const std::uint8_t> plaintext,
                           RandomSource& rng, OpCounter* counter)
{
    if (plaintext.empty())
        throw CryptoError(CryptoError::Kind::EmptyPlaintext, "empty plaintext");
    if (plaintext.size() * 8 > 0xffff)
        throw CryptoError(CryptoError::Kind::Malformed, "plaintext too long");
    OpScope scope(counter, OpKind::KSE);

    const SymKey ke = derive_usage_key(key, usage, 0xAA);
    const SymKey ki = derive_usage_key(key, usage, 0x55);

    SealedBox box;
    box.env.plain_bits = static_cast<std::uint16_t>(plaintext.size() * 8);
    rng.fill(box.env.iv);

    const std::size_t n = cts_body_bytes(plaintext.size());
    const std::size_t blocks = (n + kBlockBytes - 1) / kBlockBytes;
    Bytes padded(blocks * kBlockBytes, 0);
    std::copy(plaintext.begin(), plaintext.end(), padded.begin());
    Bytes cbc(padded.size());
    auto ctx = make_ctx(EVP_aes_128_cbc(), ke.bytes.data(), box.env.iv.data(), true);
    run_cipher(ctx.get(), padded, cbc.data());

    // CS3: the last two blocks are always swapped, and the final one truncated.
    if (blocks >= 2) {
        const std::size_t tail = n - (blocks - 1) * kBlockBytes;
        box.body.assign(cbc.begin(), cbc.begin() + static_cast<std::ptrdiff_t>((blocks - 2) * kBlockBytes));
        const auto last = cbc.begin() + static_cast<std::ptrdiff_t>((blocks - 1) * kBlockBytes);
        const auto penult = cbc.begin() + static_cast<std::ptrdiff_t>((blocks - 2) * kBlockBytes);
        box.body.insert(box.body.end(), last, last + kBlockBytes);
        box.body.insert(box.body.end(), penult, penult + static_cast<std::ptrdiff_t>(tail));
    } else {
        box.body = std::move(cbc);
    }
    box.env.tag = compute_tag(ki.bytes, box.env, box.body);
    scope.done();
    return box;
}

Bytes kerberos_decrypt(const SymKey& key, KeyUsage usage, const SealedBox& box, OpCounter* counter)
{
    const std::size_t plain_bytes = box.env.plain_bits / 8;
    if (box.env.plain_bits == 0 || box.env.plain_bits % 8 != 0 || cts_body_bytes(plain_bytes) != box.body.size())
        throw CryptoError(CryptoError::Kind::Malformed, "plaintext length does not match ciphertext");
    OpScope scope(counter, OpKind::KSD);

    const SymKey ke = derive_usage_key(key, usage, 0xAA);
    const SymKey ki = derive_usage_key(key, usage, 0x55);
    check_tag(ki.bytes, box);

    const std::size_t n = box.body.size();
    const std::size_t blocks = (n + kBlockBytes - 1) / kBlockBytes;
    Bytes cbc(blocks * kBlockBytes);
    if (blocks >= 2) {
        const std::size_t tail = n - (blocks - 1) * kBlockBytes;
        const std::size_t head = (blocks - 2) * kBlockBytes;
        std::copy_n(box.body.begin(), head, cbc.begin());
        // Recover the full penultimate ciphertext block: its tail bytes equal those of
        // D(C_n) because the final plaintext block was zero-filled before encryption.
        std::array<std::uint8_t, kBlockBytes> dn{};
        auto ecb = make_ctx(EVP_aes_128_ecb(), ke.bytes.data(), nullptr, false);
        run_cipher(ecb.get(), std::span(box.body).subspan(head, kBlockBytes), dn.data());
        std::copy_n(box.body.begin() + static_cast<std::ptrdiff_t>(head + kBlockBytes), tail,
                    cbc.begin() + static_cast<std::ptrdiff_t>(head));
        std::copy(dn.begin() + static_cast<std::ptrdiff_t>(tail), dn.end(),
                  cbc.begin() + static_cast<std::ptrdiff_t>(head + tail));
        std::copy_n(box.body.begin() + static_cast<std::ptrdiff_t>(head), kBlockBytes,
                    cbc.begin() + static_cast<std::ptrdiff_t>(head + kBlockBytes));
    } else {
        cbc = box.body;
    }
    Bytes padded(cbc.size());
    auto ctx = make_ctx(EVP_aes_128_cbc(), ke.bytes.data(), box.env.iv.data(), false);
    run_cipher(ctx.get(), cbc, padded.data());

    if (!std::all_of(padded.begin() + static_cast<std::ptrdiff_t>(plain_bytes), padded.end(),
                     [](std::uint8_t b) { return b == 0; }))
        throw CryptoError(CryptoError::Kind::Malformed, "non-zero padding");
    padded.resize(plain_bytes);
    scope.done();
    return padded;
}

Digest hash(std::span<const std::uint8_t> data, OpCounter* counter)
{
    OpScope scope(counter, OpKind::H);
    Digest d;
    SHA256(data.data(), data.size(), d.bytes.data());
    scope.done();
    return d;
}

Digest hmac(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data, OpCounter* counter)
{
    OpScope scope(counter, OpKind::HMAC);
    Digest d;
    unsigned int len = 0;
    HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), d.bytes.data(), &len);
    scope.done();
    return d;
}

HashChain HashChain::generate(const EnNonce& seed, std::size_t n, OpCounter* counter)
{
    if (n == 0)
        throw CryptoError(CryptoError::Kind::EmptyChain, "empty chain");
    HashChain chain;
    chain.seed_ = seed;
    chain.links_.reserve(n);
    chain.links_.push_back(hash(seed.bytes, counter));
    for (std::size_t i = 1; i < n; ++i)
        chain.links_.push_back(hash(chain.links_.back().bytes, counter));
    chain.cursor_ = n;
    return chain;
}

const Digest& HashChain::link(std::size_t i) const
{
    if (i == 0 || i > links_.size())
        throw std::out_of_range("hash chain link index");
    return links_[i - 1];
}

Digest HashChain::take()
{
    if (cursor_ == 0)
        throw CryptoError(CryptoError::Kind::ChainExhausted, "no links remaining");
    return links_[--cursor_];
}

bool hc_verify(const Digest& prev, const Digest& stored, OpCounter* counter)
{
    return ct_equal(hash(prev.bytes, counter).bytes, stored.bytes);
}

}  // namespace m2i::crypto
