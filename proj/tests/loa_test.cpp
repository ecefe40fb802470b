#include "m2i/loa.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace m2i::loa;

namespace {

LoaValue L(int v) { return LoaValue(v); }

SessionAggregationInput input(AggregationMode mode, std::vector<Rational> values)
{
    return {mode, std::move(values)};
}

}  // namespace

TEST(Loa, ValueRange)
{
    EXPECT_NO_THROW(L(1));
    EXPECT_NO_THROW(L(3));
    EXPECT_THROW(L(0), LoaError);
    EXPECT_THROW(L(4), LoaError);
}

TEST(Loa, RequiredLevelIsMaxOfAttributes)
{
    EXPECT_EQ(rloa({L(2), L(3), L(1)}), L(3));
    EXPECT_EQ(rloa({L(1), L(1), L(1)}), L(1));
    EXPECT_EQ(rloa({L(3), L(1), L(2)}), L(3));
}

TEST(Loa, RequiredLevelExhaustive)
{
    for (int a = 1; a <= 3; ++a)
        for (int b = 1; b <= 3; ++b)
            for (int c = 1; c <= 3; ++c) {
                const int want = std::max({a, b, c});
                EXPECT_EQ(rloa({L(a), L(b), L(c)}).value(), want);
                // any permutation of the attributes gives the same level
                EXPECT_EQ(rloa({L(c), L(a), L(b)}).value(), want);
                EXPECT_EQ(rloa({L(b), L(c), L(a)}).value(), want);
            }
}

TEST(Loa, InstanceAggregate)
{
    std::vector<AuthMethodSpec> one{{"pw", Rational(1), L(2)}};
    auto r = agg_dloa_instance(one);
    EXPECT_EQ(r.raw, Rational(2));
    EXPECT_EQ(r.floored, L(2));

    std::vector<AuthMethodSpec> half{{"a", Rational(1, 2), L(3)}, {"b", Rational(1, 2), L(2)}};
    r = agg_dloa_instance(half);
    EXPECT_EQ(r.raw, Rational(5, 2));
    EXPECT_EQ(r.floored, L(2));

    std::vector<AuthMethodSpec> ones{{"a", Rational(1, 2), L(1)}, {"b", Rational(1, 2), L(1)}};
    r = agg_dloa_instance(ones);
    EXPECT_EQ(r.raw, Rational(1));
    EXPECT_EQ(r.floored, L(1));

    EXPECT_THROW(agg_dloa_instance(std::vector<AuthMethodSpec>{}), LoaError);
}

TEST(Loa, FloorClampsAndWarns)
{
    unsigned w = kNoWarning;
    EXPECT_EQ(floor_to_loa(Rational(5, 2), &w), L(2));
    EXPECT_EQ(w, kNoWarning);
    EXPECT_EQ(floor_to_loa(Rational(1, 2), &w), L(1));
    EXPECT_TRUE(w & kClampedToMinimum);
    EXPECT_EQ(floor_to_loa(Rational(29999, 10000)), L(2));
    EXPECT_EQ(floor_to_loa(Rational(7, 2)), L(3));

    std::vector<AuthMethodSpec> heavy{{"a", Rational(1), L(3)}, {"b", Rational(1), L(3)}};
    auto r = agg_dloa_instance(heavy);
    EXPECT_TRUE(r.warnings & kWeightSumAboveOne);
    EXPECT_EQ(r.floored, L(3));
}

TEST(Loa, RationalParsing)
{
    EXPECT_EQ(Rational::parse("0.5"), Rational(1, 2));
    EXPECT_EQ(Rational::parse("1/3") + Rational::parse("2/3"), Rational(1));
    EXPECT_EQ(Rational::from_double(0.25), Rational(1, 4));
    EXPECT_EQ(Rational(1, 3) * Rational(3), Rational(1));
}

TEST(Loa, SingleClientSessionTakesMax)
{
    using enum AggregationMode;
    EXPECT_EQ(agg_dloa_session_single(input(SingleClient, {1, 3})), L(3));
    EXPECT_EQ(agg_dloa_session_single(input(SingleClient, {2})), L(2));
    EXPECT_EQ(agg_dloa_session_single(input(SingleClient, {1, 2, 3, 2})), L(3));
    EXPECT_THROW(agg_dloa_session_single(input(ClientChain, {1})), LoaError);
    EXPECT_THROW(agg_dloa_session_single(input(SingleClient, {})), LoaError);
}

TEST(Loa, ChainSessionTakesWeakestLink)
{
    using enum AggregationMode;
    EXPECT_EQ(agg_dloa_session_chain(input(ClientChain, {1, 2})), L(1));
    EXPECT_EQ(agg_dloa_session_chain(input(ClientChain, {3})), L(3));
    EXPECT_EQ(agg_dloa_session_chain(input(ClientChain, {2, 3, 1})), L(1));
    EXPECT_THROW(agg_dloa_session_chain(input(SingleClient, {1})), LoaError);
}

TEST(Loa, SessionBoundsOverRandomLists)
{
    std::mt19937 gen(42);
    std::uniform_int_distribution<int> num(2, 12), len(1, 8);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Rational> v;
        const int n = len(gen);
        for (int i = 0; i < n; ++i)
            v.emplace_back(num(gen), 4);  // 0.5 .. 3.0
        const auto hi = agg_dloa_session_single(input(AggregationMode::SingleClient, v));
        const auto lo = agg_dloa_session_chain(input(AggregationMode::ClientChain, v));
        for (const auto& x : v) {
            EXPECT_GE(hi, floor_to_loa(x));
            EXPECT_LE(lo, floor_to_loa(x));
        }
    }
}

TEST(Loa, InstanceNeverExceedsBestMethod)
{
    std::mt19937 gen(7);
    std::uniform_int_distribution<int> lv(1, 3), wt(0, 10), len(1, 4);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<AuthMethodSpec> ms;
        const int n = len(gen);
        int budget = 10, best = 1;
        for (int i = 0; i < n; ++i) {
            const int w = std::min(budget, wt(gen));
            budget -= w;
            const int l = lv(gen);
            best = std::max(best, l);
            ms.push_back({"m" + std::to_string(i), Rational(w, 10), L(l)});
        }
        EXPECT_LE(agg_dloa_instance(ms).floored.value(), best);
    }
}

TEST(Loa, AccessDecisionExhaustive)
{
    for (int a = 1; a <= 3; ++a)
        for (int r = 1; r <= 3; ++r)
            EXPECT_EQ(access_decision(L(a), L(r)), a >= r);
    EXPECT_TRUE(access_decision(L(3), L(3)));
    EXPECT_FALSE(access_decision(L(2), L(3)));
    EXPECT_TRUE(access_decision(L(3), L(1)));
}

TEST(Loa, EqualWeightsDefault)
{
    auto ms = with_equal_weights({{"a", Rational(0), L(3)}, {"b", Rational(0), L(2)}, {"c", Rational(0), L(1)}});
    for (const auto& m : ms)
        EXPECT_EQ(m.weight, Rational(1, 3));
    EXPECT_EQ(agg_dloa_instance(ms).raw, Rational(2));
}
