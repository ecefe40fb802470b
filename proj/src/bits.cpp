#include "m2i/bits.hpp"

namespace m2i::bits {

BitString BitString::from_bytes(std::span<const std::uint8_t> data)
{
    return BitString{std::vector<std::uint8_t>(data.begin(), data.end()), data.size() * 8};
}

void BitWriter::put_bit(bool bit)
{
    if (bits_ % 8 == 0)
        bytes_.push_back(0);
    if (bit)
        bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
}

void BitWriter::put(std::uint64_t value, unsigned width)
{
    if (width > 64)
        throw BitError("field wider than 64 bits");
    if (width < 64 && (value >> width) != 0)
        throw BitError("value does not fit in " + std::to_string(width) + " bits");
    for (unsigned i = width; i-- > 0;)
        put_bit((value >> i) & 1u);
}

void BitWriter::put_bytes(std::span<const std::uint8_t> data)
{
    if (bits_ % 8 == 0) {
        bytes_.insert(bytes_.end(), data.begin(), data.end());
        bits_ += data.size() * 8;
        return;
    }
    for (auto b : data)
        put(b, 8);
}

void BitWriter::put_bits(const BitString& data)
{
    BitReader r(data);
    while (r.remaining() >= 8)
        put(r.get(8), 8);
    if (r.remaining())
        put(r.get(static_cast<unsigned>(r.remaining())), static_cast<unsigned>(data.bits % 8));
}

BitString BitWriter::finish() &&
{
    return BitString{std::move(bytes_), bits_};
}

BitReader::BitReader(std::span<const std::uint8_t> data, std::size_t bits) : data_(data), bits_(bits)
{
    if (bits > data.size() * 8)
        throw BitError("bit length exceeds buffer");
}

bool BitReader::get_bit()
{
    if (pos_ >= bits_)
        throw BitError("read past end of bit string");
    const bool bit = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return bit;
}

std::uint64_t BitReader::get(unsigned width)
{
    if (width > 64)
        throw BitError("field wider than 64 bits");
    if (width > remaining())
        throw BitError("read past end of bit string");
    std::uint64_t v = 0;
    for (unsigned i = 0; i < width; ++i)
        v = (v << 1) | static_cast<std::uint64_t>(get_bit());
    return v;
}

void BitReader::get_bytes(std::span<std::uint8_t> out)
{
    if (out.size() * 8 > remaining())
        throw BitError("read past end of bit string");
    if (pos_ % 8 == 0) {
        for (auto& b : out)
            b = data_[pos_ / 8], pos_ += 8;
        return;
    }
    for (auto& b : out)
        b = static_cast<std::uint8_t>(get(8));
}

BitString BitReader::get_bits(std::size_t count)
{
    if (count > remaining())
        throw BitError("read past end of bit string");
    BitWriter w;
    while (count >= 8) {
        w.put(get(8), 8);
        count -= 8;
    }
    if (count)
        w.put(get(static_cast<unsigned>(count)), static_cast<unsigned>(count));
    return std::move(w).finish();
}

bool BitReader::rest_is_zero() const
{
    for (std::size_t p = pos_; p < bits_; ++p)
        if ((data_[p / 8] >> (7 - p % 8)) & 1u)
            return false;
    return true;
}

}  // namespace m2i::bits
