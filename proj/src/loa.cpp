#include "m2i/loa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace m2i::loa {

Rational::Rational(std::int64_t num, std::int64_t den)
{
    if (den == 0)
        throw LoaError("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    num_ = g ? num / g : 0;
    den_ = g ? den / g : 1;
}

Rational Rational::parse(const std::string& text)
{
    if (text.empty())
        throw LoaError("empty rational");
    if (auto slash = text.find('/'); slash != std::string::npos) {
        return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
    }
    std::int64_t num = 0;
    std::int64_t den = 1;
    bool seen_point = false;
    bool negative = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (i == 0 && c == '-') {
            negative = true;
        } else if (c == '.' && !seen_point) {
            seen_point = true;
        } else if (c >= '0' && c <= '9') {
            num = num * 10 + (c - '0');
            if (seen_point)
                den *= 10;
            if (den > 1'000'000'000'000LL)
                throw LoaError("rational has too many decimals: " + text);
        } else {
            throw LoaError("not a rational: " + text);
        }
    }
    return Rational(negative ? -num : num, den);
}

Rational Rational::from_double(double value)
{
    return Rational(static_cast<std::int64_t>(std::llround(value * 1'000'000.0)), 1'000'000);
}

std::int64_t Rational::floor() const
{
    std::int64_t q = num_ / den_;
    if (num_ % den_ != 0 && num_ < 0)
        --q;
    return q;
}

std::string Rational::str() const
{
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

Rational operator+(const Rational& a, const Rational& b)
{
    return Rational(a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_);
}

Rational operator*(const Rational& a, const Rational& b)
{
    return Rational(a.num_ * b.num_, a.den_ * b.den_);
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b)
{
    return (a.num_ * b.den_) <=> (b.num_ * a.den_);
}

LoaValue::LoaValue(int value) : value_(value)
{
    if (value < kMin || value > kMax)
        throw LoaError("LoA out of range [1,3]: " + std::to_string(value));
}

LoaValue floor_to_loa(const Rational& value, unsigned* warnings)
{
    std::int64_t f = value.floor();
    if (f < LoaValue::kMin) {
        if (warnings)
            *warnings |= kClampedToMinimum;
        f = LoaValue::kMin;
    }
    if (f > LoaValue::kMax)
        f = LoaValue::kMax;
    return LoaValue(static_cast<int>(f));
}

LoaValue rloa(const CloaAttributes& attrs)
{
    return std::max({attrs.dc, attrs.av, attrs.loc});
}

InstanceAggregate agg_dloa_instance(std::span<const AuthMethodSpec> methods)
{
    if (methods.empty())
        throw LoaError("no authentication methods");

    InstanceAggregate out;
    Rational weight_sum;
    for (const auto& m : methods) {
        if (m.weight < Rational(0) || m.weight > Rational(1))
            throw LoaError("weight outside [0,1] for method " + m.method_id);
        weight_sum = weight_sum + m.weight;
        out.raw = out.raw + m.weight * Rational(m.loa.value());
    }
    if (weight_sum > Rational(1))
        out.warnings |= kWeightSumAboveOne;
    out.floored = floor_to_loa(out.raw, &out.warnings);
    return out;
}

LoaValue agg_dloa_session_single(const SessionAggregationInput& input)
{
    if (input.mode != AggregationMode::SingleClient)
        throw LoaError("session aggregation mode is not single-client");
    if (input.instance_values.empty())
        throw LoaError("no instance values");
    return floor_to_loa(*std::max_element(input.instance_values.begin(), input.instance_values.end()));
}

LoaValue agg_dloa_session_chain(const SessionAggregationInput& input)
{
    if (input.mode != AggregationMode::ClientChain)
        throw LoaError("session aggregation mode is not client-chain");
    if (input.instance_values.empty())
        throw LoaError("no link values");
    return floor_to_loa(*std::min_element(input.instance_values.begin(), input.instance_values.end()));
}

std::vector<AuthMethodSpec> with_equal_weights(std::vector<AuthMethodSpec> methods)
{
    const auto n = static_cast<std::int64_t>(methods.size());
    for (auto& m : methods)
        m.weight = Rational(1, n);
    return methods;
}

}  // namespace m2i::loa
