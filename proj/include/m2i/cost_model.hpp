#pragma once

#include "m2i/crypto.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2i::cost {

class CostError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Protocol { P2P, O2M, Kerberos, P2PReauth, O2MReauth, KerberosReauth };

inline constexpr std::array kAllProtocols = {Protocol::P2P,       Protocol::O2M,       Protocol::Kerberos,
                                             Protocol::P2PReauth, Protocol::O2MReauth, Protocol::KerberosReauth};

const char* protocol_name(Protocol p);
/// Accepts "p2p", "o2m", "kerberos", "p2p-reauth", "o2m-reauth", "kerberos-reauth".
Protocol parse_protocol(const std::string& name);
bool is_reauth(Protocol p);

/// Counts per primitive, indexed by crypto::OpKind.
struct OpCounts {
    std::array<std::uint64_t, crypto::kOpKinds> n{};

    std::uint64_t& operator[](crypto::OpKind k) { return n[static_cast<std::size_t>(k)]; }
    std::uint64_t operator[](crypto::OpKind k) const { return n[static_cast<std::size_t>(k)]; }
    friend bool operator==(const OpCounts&, const OpCounts&) = default;

    static OpCounts from(const crypto::OpCounter& c);
    std::string str() const;  // "36T_SE + 3T_H"
};

/// Mean primitive times in milliseconds.
struct TimingProfile {
    std::string name = "custom";
    double t_se = 0;
    double t_h = 0;
    double t_hmac = 0;
    double t_kse = 0;
    double t_ksd = 0;

    static TimingProfile reference();
    bool positive() const { return t_se > 0 && t_h > 0 && t_hmac > 0 && t_kse > 0 && t_ksd > 0; }
    double of(crypto::OpKind k) const;
};

std::uint64_t comm_bits(Protocol p, unsigned nt, unsigned factors = 1);
OpCounts op_counts(Protocol p, unsigned nt, unsigned factors = 1);
double pcc_ms(const OpCounts& counts, const TimingProfile& profile);
/// 100 * (b - a) / b. Negative when a exceeds b.
double reduction_pct(double a, double b);

inline std::uint64_t bytes_of(std::uint64_t bits) { return (bits + 7) / 8; }

struct CostReport {
    Protocol protocol = Protocol::P2P;
    unsigned nt = 1;
    unsigned factors = 1;
    std::uint64_t comm_bits = 0;
    std::uint64_t comm_bytes = 0;
    OpCounts ops;
    std::optional<double> pcc_ms;
};

CostReport report(Protocol p, unsigned nt, unsigned factors, const TimingProfile* profile = nullptr);

/// All protocols side by side at one NT, with the relative figures.
struct CompareRow {
    unsigned nt = 1;
    unsigned factors = 1;
    std::vector<CostReport> reports;  // in kAllProtocols order
    double o2m_vs_kerberos_comm = 0;  // reduction, %
    double p2p_vs_kerberos_comm = 0;
    double p2p_vs_kerberos_pcc = 0;
    double o2m_vs_kerberos_pcc = 0;
    double o2m_vs_p2p_pcc = 0;
    double reauth_pcc_reduction = 0;   // P2P/O2M re-auth vs Kerberos re-auth
    double reauth_comm_increase = 0;   // same pair, communication growth, %

    const CostReport& at(Protocol p) const;
};

CompareRow compare_at(unsigned nt, unsigned factors, const TimingProfile& profile);
std::string compare_csv_header();
std::string to_csv_row(const CompareRow& r);

std::string to_json(const CostReport& r);
std::string to_json(const std::vector<CostReport>& rows);
std::string csv_header();
std::string to_csv_row(const CostReport& r);

}  // namespace m2i::cost
