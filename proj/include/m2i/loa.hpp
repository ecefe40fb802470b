#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2i::loa {

class LoaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact rational number; weights and weighted sums are kept exact so the
/// floor rule never sees 2.9999... where 3 was meant.
class Rational {
public:
    constexpr Rational() = default;
    Rational(std::int64_t num, std::int64_t den = 1);

    /// Parses "0.5", "1", "1/3".
    static Rational parse(const std::string& text);
    /// Converts a decimal number, exact to six decimal places.
    static Rational from_double(double value);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }

    std::int64_t floor() const;
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
    std::string str() const;

    friend Rational operator+(const Rational& a, const Rational& b);
    friend Rational operator*(const Rational& a, const Rational& b);
    friend bool operator==(const Rational& a, const Rational& b) = default;
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

/// Assurance level on the three-level scale.
class LoaValue {
public:
    static constexpr int kMin = 1;
    static constexpr int kMax = 3;

    constexpr LoaValue() = default;
    explicit LoaValue(int value);

    int value() const { return value_; }

    friend bool operator==(LoaValue, LoaValue) = default;
    friend auto operator<=>(LoaValue, LoaValue) = default;

private:
    int value_ = kMin;
};

/// Class LoA of the three LoA-affecting device attributes.
struct CloaAttributes {
    LoaValue dc;   // device capability
    LoaValue av;   // asset value
    LoaValue loc;  // location, owner policy
};

struct AuthMethodSpec {
    std::string method_id;
    Rational weight;
    LoaValue loa;
};

enum class AggregationMode { SingleClient, ClientChain };

struct SessionAggregationInput {
    AggregationMode mode = AggregationMode::SingleClient;
    std::vector<Rational> instance_values;
};

enum AggWarning : unsigned {
    kNoWarning = 0,
    kClampedToMinimum = 1u << 0,
    kWeightSumAboveOne = 1u << 1,
};

struct InstanceAggregate {
    Rational raw;
    LoaValue floored;
    unsigned warnings = kNoWarning;
};

/// Floors a pre-floor aggregate and clamps it into [1, 3].
LoaValue floor_to_loa(const Rational& value, unsigned* warnings = nullptr);

LoaValue rloa(const CloaAttributes& attrs);

InstanceAggregate agg_dloa_instance(std::span<const AuthMethodSpec> methods);

/// Maximum over the instances of one client's session.
LoaValue agg_dloa_session_single(const SessionAggregationInput& input);

/// Weakest link over a chain of clients (proxies).
LoaValue agg_dloa_session_chain(const SessionAggregationInput& input);

inline bool access_decision(LoaValue agg, LoaValue required) { return agg >= required; }

/// Equal weights 1/n for n methods, used when the policy file leaves weights out.
std::vector<AuthMethodSpec> with_equal_weights(std::vector<AuthMethodSpec> methods);

}  // namespace m2i::loa
