#include "m2i/cost_model.hpp"

#include "m2i/wire.hpp"

#include <json.hpp>

#include <sstream>

namespace m2i::cost {
namespace {

using crypto::OpKind;

void check(unsigned nt, unsigned factors)
{
    if (nt < 1)
        throw CostError("nt must be at least 1");
    if (factors != 1 && factors != 2)
        throw CostError("factors must be 1 or 2");
}

nlohmann::json json_of(const CostReport& r)
{
    nlohmann::json ops = nlohmann::json::object();
    for (std::size_t i = 0; i < crypto::kOpKinds; ++i)
        ops[crypto::op_name(static_cast<OpKind>(i))] = r.ops.n[i];
    nlohmann::json j{{"protocol", protocol_name(r.protocol)},
                     {"nt", r.nt},
                     {"factors", r.factors},
                     {"comm_bits", r.comm_bits},
                     {"comm_bytes", r.comm_bytes},
                     {"op_counts", ops}};
    j["pcc_ms"] = r.pcc_ms ? nlohmann::json(*r.pcc_ms) : nlohmann::json(nullptr);
    return j;
}

}  // namespace

const char* protocol_name(Protocol p)
{
    switch (p) {
    case Protocol::P2P: return "p2p";
    case Protocol::O2M: return "o2m";
    case Protocol::Kerberos: return "kerberos";
    case Protocol::P2PReauth: return "p2p-reauth";
    case Protocol::O2MReauth: return "o2m-reauth";
    case Protocol::KerberosReauth: return "kerberos-reauth";
    }
    throw CostError("unknown protocol");
}

Protocol parse_protocol(const std::string& name)
{
    for (auto p : kAllProtocols)
        if (name == protocol_name(p))
            return p;
    throw CostError("unknown protocol: " + name);
}

bool is_reauth(Protocol p)
{
    return p == Protocol::P2PReauth || p == Protocol::O2MReauth || p == Protocol::KerberosReauth;
}

OpCounts OpCounts::from(const crypto::OpCounter& c)
{
    OpCounts out;
    for (std::size_t i = 0; i < crypto::kOpKinds; ++i)
        out.n[i] = c.count(static_cast<OpKind>(i));
    return out;
}

std::string OpCounts::str() const
{
    std::string s;
    for (std::size_t i = 0; i < crypto::kOpKinds; ++i) {
        if (n[i] == 0)
            continue;
        if (!s.empty())
            s += " + ";
        s += std::to_string(n[i]) + crypto::op_name(static_cast<OpKind>(i));
    }
    return s.empty() ? "0" : s;
}

TimingProfile TimingProfile::reference() { return {"reference", 0.018, 0.009, 0.030, 0.055, 0.080}; }

double TimingProfile::of(OpKind k) const
{
    switch (k) {
    case OpKind::SE: return t_se;
    case OpKind::H: return t_h;
    case OpKind::HMAC: return t_hmac;
    case OpKind::KSE: return t_kse;
    case OpKind::KSD: return t_ksd;
    }
    return 0;
}

std::uint64_t comm_bits(Protocol p, unsigned nt, unsigned factors)
{
    check(nt, factors);
    const std::uint64_t n = nt;
    switch (p) {
    case Protocol::P2P: return factors * 2433 * n;
    case Protocol::O2M: return factors * (1281 * n + wire::accounted_len(32 * n + 192) + 896);
    case Protocol::Kerberos: return factors * 2408 * n + 1264;
    case Protocol::P2PReauth:
    case Protocol::O2MReauth: return factors * 1281 * n;
    case Protocol::KerberosReauth: return factors * 672 * n;
    }
    throw CostError("unknown protocol");
}

OpCounts op_counts(Protocol p, unsigned nt, unsigned factors)
{
    check(nt, factors);
    const std::uint64_t n = nt;
    const std::uint64_t f = factors;
    OpCounts c;
    switch (p) {
    case Protocol::P2P:
        c[OpKind::SE] = f * 12 * n;
        c[OpKind::H] = f * n;
        return c;
    case Protocol::O2M:
        c[OpKind::SE] = f * (5 + 7 * n);
        c[OpKind::H] = f * n;
        return c;
    case Protocol::Kerberos:
        // the TGT is fetched once whatever the factor count
        c[OpKind::KSE] = 2 + f * 5 * n;
        c[OpKind::KSD] = 1 + f * 6 * n;
        return c;
    case Protocol::P2PReauth:
    case Protocol::O2MReauth:
        c[OpKind::SE] = f * 5 * n;
        c[OpKind::H] = f * n;
        return c;
    case Protocol::KerberosReauth:
        c[OpKind::KSE] = f * 2 * n;
        c[OpKind::KSD] = f * 3 * n;
        return c;
    }
    throw CostError("unknown protocol");
}

double pcc_ms(const OpCounts& counts, const TimingProfile& profile)
{
    double total = 0;
    for (std::size_t i = 0; i < crypto::kOpKinds; ++i)
        total += static_cast<double>(counts.n[i]) * profile.of(static_cast<OpKind>(i));
    return total;
}

double reduction_pct(double a, double b)
{
    if (b == 0)
        throw CostError("reduction against zero");
    return 100.0 * (b - a) / b;
}

CostReport report(Protocol p, unsigned nt, unsigned factors, const TimingProfile* profile)
{
    CostReport r;
    r.protocol = p;
    r.nt = nt;
    r.factors = factors;
    r.comm_bits = comm_bits(p, nt, factors);
    r.comm_bytes = bytes_of(r.comm_bits);
    r.ops = op_counts(p, nt, factors);
    if (profile)
        r.pcc_ms = pcc_ms(r.ops, *profile);
    return r;
}

const CostReport& CompareRow::at(Protocol p) const
{
    for (const auto& r : reports)
        if (r.protocol == p)
            return r;
    throw CostError("protocol missing from comparison");
}

CompareRow compare_at(unsigned nt, unsigned factors, const TimingProfile& profile)
{
    CompareRow row;
    row.nt = nt;
    row.factors = factors;
    for (auto p : kAllProtocols)
        row.reports.push_back(report(p, nt, factors, &profile));
    const auto bits = [&](Protocol p) { return static_cast<double>(row.at(p).comm_bits); };
    const auto pcc = [&](Protocol p) { return *row.at(p).pcc_ms; };
    row.o2m_vs_kerberos_comm = reduction_pct(bits(Protocol::O2M), bits(Protocol::Kerberos));
    row.p2p_vs_kerberos_comm = reduction_pct(bits(Protocol::P2P), bits(Protocol::Kerberos));
    row.p2p_vs_kerberos_pcc = reduction_pct(pcc(Protocol::P2P), pcc(Protocol::Kerberos));
    row.o2m_vs_kerberos_pcc = reduction_pct(pcc(Protocol::O2M), pcc(Protocol::Kerberos));
    row.o2m_vs_p2p_pcc = reduction_pct(pcc(Protocol::O2M), pcc(Protocol::P2P));
    row.reauth_pcc_reduction = reduction_pct(pcc(Protocol::P2PReauth), pcc(Protocol::KerberosReauth));
    row.reauth_comm_increase = -reduction_pct(bits(Protocol::P2PReauth), bits(Protocol::KerberosReauth));
    return row;
}

std::string compare_csv_header()
{
    std::string h = "nt,factors";
    for (auto p : kAllProtocols)
        h += std::string(",") + protocol_name(p) + "_bits";
    for (auto p : kAllProtocols)
        h += std::string(",") + protocol_name(p) + "_pcc_ms";
    return h + ",o2m_vs_kerberos_comm_pct,p2p_vs_kerberos_comm_pct,p2p_vs_kerberos_pcc_pct,o2m_vs_kerberos_pcc_pct,"
               "o2m_vs_p2p_pcc_pct,reauth_pcc_reduction_pct,reauth_comm_increase_pct";
}

std::string to_csv_row(const CompareRow& r)
{
    std::ostringstream os;
    os.precision(6);
    os << r.nt << ',' << r.factors;
    for (const auto& c : r.reports)
        os << ',' << c.comm_bits;
    for (const auto& c : r.reports)
        os << ',' << *c.pcc_ms;
    os << ',' << r.o2m_vs_kerberos_comm << ',' << r.p2p_vs_kerberos_comm << ',' << r.p2p_vs_kerberos_pcc << ','
       << r.o2m_vs_kerberos_pcc << ',' << r.o2m_vs_p2p_pcc << ',' << r.reauth_pcc_reduction << ','
       << r.reauth_comm_increase;
    return os.str();
}

std::string to_json(const CostReport& r) { return json_of(r).dump(2); }

std::string to_json(const std::vector<CostReport>& rows)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back(json_of(r));
    return arr.dump(2);
}

std::string csv_header() { return "protocol,nt,factors,comm_bits,comm_bytes,T_SE,T_H,T_HMAC,T_KSE,T_KSD,pcc_ms"; }

std::string to_csv_row(const CostReport& r)
{
    std::ostringstream os;
    os << protocol_name(r.protocol) << ',' << r.nt << ',' << r.factors << ',' << r.comm_bits << ',' << r.comm_bytes;
    for (auto v : r.ops.n)
        os << ',' << v;
    os << ',';
    if (r.pcc_ms)
        os << *r.pcc_ms;
    return os.str();
}

}  // namespace m2i::cost
