#include "m2i/cost_model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace m2i::cost;
using m2i::crypto::OpKind;

namespace {

constexpr std::uint64_t L(std::uint64_t bits) { return (bits + 127) / 128 * 128; }

// Per-message sums, rebuilt here rather than taken from the model.
std::uint64_t oracle_bits(Protocol p, unsigned nt, unsigned f)
{
    const std::uint64_t p2p = 256 + 896 + 897 + 256 + 128;
    const std::uint64_t reauth = 897 + 384;
    const std::uint64_t krb_fixed = 328 + 936, krb_target = 800 + 936 + 544 + 128;
    switch (p) {
    case Protocol::P2P: return f * nt * p2p;
    case Protocol::O2M: return f * (L(32 * nt + 192) + 896 + nt * (897 + 256 + 128));
    case Protocol::Kerberos: return krb_fixed + f * nt * krb_target;
    case Protocol::P2PReauth:
    case Protocol::O2MReauth: return f * nt * reauth;
    case Protocol::KerberosReauth: return f * nt * (544 + 128);
    }
    return 0;
}

}  // namespace

TEST(CostModel, ClosedFormTotalsAtThreeTargets)
{
    EXPECT_EQ(comm_bits(Protocol::P2P, 3), 7299u);
    EXPECT_EQ(bytes_of(comm_bits(Protocol::P2P, 3)), 913u);
    EXPECT_EQ(bytes_of(comm_bits(Protocol::O2M, 3)), 641u);
    EXPECT_EQ(bytes_of(comm_bits(Protocol::Kerberos, 3)), 1061u);
    EXPECT_EQ(bytes_of(comm_bits(Protocol::P2PReauth, 3)), 481u);
}

TEST(CostModel, BitsAgainstMessageSums)
{
    for (auto p : kAllProtocols)
        for (unsigned nt = 1; nt <= 50; ++nt)
            for (unsigned f : {1u, 2u})
                EXPECT_EQ(comm_bits(p, nt, f), oracle_bits(p, nt, f)) << protocol_name(p) << " nt=" << nt;
    EXPECT_EQ(comm_bits(Protocol::P2P, 1, 2), 4866u);
    EXPECT_EQ(comm_bits(Protocol::Kerberos, 1, 2), 4816u + 1264u);
}

TEST(CostModel, OpCounts)
{
    for (unsigned nt = 1; nt <= 10; ++nt)
        for (unsigned f : {1u, 2u}) {
            auto p2p = op_counts(Protocol::P2P, nt, f);
            EXPECT_EQ(p2p[OpKind::SE], 12u * f * nt);
            EXPECT_EQ(p2p[OpKind::H], 1u * f * nt);
            auto o2m = op_counts(Protocol::O2M, nt, f);
            EXPECT_EQ(o2m[OpKind::SE], f * (5u + 7u * nt));
            EXPECT_EQ(o2m[OpKind::H], f * nt);
            auto krb = op_counts(Protocol::Kerberos, nt, f);
            EXPECT_EQ(krb[OpKind::KSE], 2u + f * 5u * nt);
            EXPECT_EQ(krb[OpKind::KSD], 1u + f * 6u * nt);
            auto re = op_counts(Protocol::P2PReauth, nt, f);
            EXPECT_EQ(re[OpKind::SE], f * 5u * nt);
            EXPECT_EQ(re[OpKind::H], f * nt);
            EXPECT_EQ(op_counts(Protocol::O2MReauth, nt, f), re);
            auto kre = op_counts(Protocol::KerberosReauth, nt, f);
            EXPECT_EQ(kre[OpKind::KSE], f * 2u * nt);
            EXPECT_EQ(kre[OpKind::KSD], f * 3u * nt);
        }
    EXPECT_EQ(op_counts(Protocol::P2P, 3).str(), "36T_SE + 3T_H");
}

TEST(CostModel, PccFromProfile)
{
    const auto prof = TimingProfile::reference();
    EXPECT_TRUE(prof.positive());
    EXPECT_DOUBLE_EQ(prof.t_se, 0.018);
    EXPECT_DOUBLE_EQ(prof.t_h, 0.009);
    EXPECT_NEAR(pcc_ms(op_counts(Protocol::P2P, 3), prof), 36 * 0.018 + 3 * 0.009, 1e-12);
    EXPECT_NEAR(pcc_ms(op_counts(Protocol::Kerberos, 3), prof), 17 * 0.055 + 19 * 0.080, 1e-12);
    EXPECT_NEAR(pcc_ms(op_counts(Protocol::P2P, 1), prof), 0.225, 1e-12);
    EXPECT_NEAR(pcc_ms(op_counts(Protocol::Kerberos, 3), prof), 2.5, 0.05);
    EXPECT_FALSE(report(Protocol::P2P, 3, 1).pcc_ms.has_value());
    EXPECT_TRUE(report(Protocol::P2P, 3, 1, &prof).pcc_ms.has_value());
}

TEST(CostModel, RejectsBadInput)
{
    EXPECT_THROW(comm_bits(Protocol::P2P, 0), CostError);
    EXPECT_THROW(comm_bits(Protocol::P2P, 1, 3), CostError);
    EXPECT_THROW(op_counts(Protocol::O2M, 1, 0), CostError);
    EXPECT_THROW(reduction_pct(1, 0), CostError);
    EXPECT_THROW(parse_protocol("ssh"), CostError);
    for (auto p : kAllProtocols)
        EXPECT_EQ(parse_protocol(protocol_name(p)), p);
}

TEST(CostModel, RelativeBands)
{
    const auto prof = TimingProfile::reference();
    for (unsigned nt : {10u, 50u, 100u, 200u, 400u}) {
        const auto row = compare_at(nt, 1, prof);
        EXPECT_GE(std::lround(row.o2m_vs_kerberos_comm), 42) << nt;
        EXPECT_LE(std::lround(row.o2m_vs_kerberos_comm), 45) << nt;
        EXPECT_GE(std::lround(row.p2p_vs_kerberos_pcc), 70) << nt;
        EXPECT_LE(std::lround(row.p2p_vs_kerberos_pcc), 72) << nt;
        EXPECT_GE(std::lround(row.o2m_vs_kerberos_pcc), 81) << nt;
        EXPECT_LE(std::lround(row.o2m_vs_kerberos_pcc), 82) << nt;
        EXPECT_NEAR(row.reauth_pcc_reduction, 72, 1) << nt;
        EXPECT_NEAR(row.reauth_comm_increase, 91, 1) << nt;
    }
}

TEST(CostModel, RelativeFiguresByHand)
{
    const auto prof = TimingProfile::reference();
    const auto row = compare_at(100, 1, prof);
    const double o2m = 1281.0 * 100 + L(32 * 100 + 192) + 896, krb = 2408.0 * 100 + 1264;
    EXPECT_NEAR(row.o2m_vs_kerberos_comm, 100 * (krb - o2m) / krb, 1e-9);
    const double p2p_pcc = 100 * (12 * 0.018 + 0.009), krb_pcc = 2 * 0.055 + 500 * 0.055 + 0.080 + 600 * 0.080;
    EXPECT_NEAR(row.p2p_vs_kerberos_pcc, 100 * (krb_pcc - p2p_pcc) / krb_pcc, 1e-9);
    // re-auth: 5 T_SE + T_H against 2 T_KSE + 3 T_KSD per target
    EXPECT_NEAR(row.reauth_pcc_reduction, 100 * (0.35 - 0.099) / 0.35, 1e-9);
    EXPECT_NEAR(row.reauth_comm_increase, 100 * (1281.0 - 672) / 672, 1e-9);
}

TEST(CostModel, CsvAndJson)
{
    const auto r = report(Protocol::O2M, 3, 1);
    const auto row = to_csv_row(r);
    EXPECT_NE(row.find("o2m"), std::string::npos);
    EXPECT_NE(row.find("5123"), std::string::npos);
    EXPECT_NE(to_json(r).find("\"comm_bits\""), std::string::npos);
    const std::string header = csv_header();
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}
