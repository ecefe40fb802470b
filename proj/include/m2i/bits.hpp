#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace m2i::bits {

class BitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A bit string packed MSB-first into bytes; trailing bits of the last byte are zero.
struct BitString {
    std::vector<std::uint8_t> bytes;
    std::size_t bits = 0;

    static BitString from_bytes(std::span<const std::uint8_t> data);

    std::size_t byte_len() const { return (bits + 7) / 8; }
    bool empty() const { return bits == 0; }

    friend bool operator==(const BitString&, const BitString&) = default;
};

/// Big-endian, MSB-first field packer with no inter-field padding.
class BitWriter {
public:
    void put(std::uint64_t value, unsigned width);
    void put_bytes(std::span<const std::uint8_t> data);
    void put_bits(const BitString& data);

    std::size_t bit_size() const { return bits_; }
    BitString finish() &&;

private:
    void put_bit(bool bit);

    std::vector<std::uint8_t> bytes_;
    std::size_t bits_ = 0;
};

class BitReader {
public:
    BitReader(std::span<const std::uint8_t> data, std::size_t bits);
    explicit BitReader(const BitString& s) : BitReader(s.bytes, s.bits) {}

    std::uint64_t get(unsigned width);
    void get_bytes(std::span<std::uint8_t> out);
    BitString get_bits(std::size_t count);

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bits_ - pos_; }
    /// True when every unread bit is zero.
    bool rest_is_zero() const;

private:
    bool get_bit();

    std::span<const std::uint8_t> data_;
    std::size_t bits_;
    std::size_t pos_ = 0;
};

}  // namespace m2i::bits
