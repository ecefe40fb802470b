#include "m2i/orchestrator.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace m2i;
using namespace m2i::orchestrator;
using loa::LoaValue;
using protocol::Mode;
using test::Deployment;

namespace {

struct Fixture {
    harness::Topology topo;
    harness::Policy policy;

    Fixture()
    {
        topo = harness::load_registry(test::fixture("registry.json"));
        policy = harness::load_policy(test::fixture("policy.json"));
        harness::apply_cloa(*topo.registry, policy);
    }
};

/// A coordinator wired to a deployment's AS.
struct Coordinated {
    Deployment d;
    Coordinator coord;

    Coordinated(harness::Topology topo, std::shared_ptr<const MethodCatalog> catalog,
                std::shared_ptr<const AuthzPolicy> authz, FactorVerifier verifier = {},
                CoordinatorSettings settings = {})
        : d(topo), coord(topo.registry, std::move(catalog), std::move(authz), std::move(verifier), settings)
    {
        d.servers->auth_server().set_policy(coord.issue_policy());
    }

    SessionOutcome run(AuthRequest req) { return coord.coordinate(req, d.env(), *d.channel); }
    std::size_t issued() const { return d.servers->auth_server().issued().size(); }
};

AuthRequest request(std::vector<std::uint32_t> targets, std::vector<std::string> offered, Mode mode = Mode::P2P)
{
    AuthRequest r;
    r.client = 11;
    r.targets = std::move(targets);
    r.mode = mode;
    r.offered = std::move(offered);
    return r;
}

Method unweighted(std::string id, int level, std::size_t factor = 0)
{
    return {{std::move(id), loa::Rational(0), LoaValue(level)}, factor, false};
}

}  // namespace

TEST(Catalog, UnweightedCombinationsShareWeightEqually)
{
    Fixture f;
    const auto agg = f.policy.catalog->aggregate({"password", "fob"});
    EXPECT_EQ(agg.raw, loa::Rational(5, 2));
    EXPECT_EQ(agg.floored, LoaValue(2));
    EXPECT_EQ(f.policy.catalog->aggregate({"fob"}).floored, LoaValue(3));
}

TEST(Catalog, RejectsCombinationBelowItsLevel)
{
    MethodCatalog c;
    c.add_method(unweighted("pin", 1));
    c.add_method(unweighted("fob", 3, 1));
    EXPECT_THROW(c.add_combination(LoaValue(2), Mode::P2P, {"pin"}), OrchestratorError);
    EXPECT_THROW(c.add_combination(LoaValue(3), Mode::P2P, {"pin", "fob"}), OrchestratorError);
    EXPECT_THROW(c.add_combination(LoaValue(1), Mode::P2P, {"nope"}), OrchestratorError);
    EXPECT_NO_THROW(c.add_combination(LoaValue(2), Mode::P2P, {"pin", "fob"}));
}

TEST(Catalog, WeightedMethodsUseTheirWeights)
{
    MethodCatalog c;
    c.add_method({{"a", loa::Rational(1, 2), LoaValue(3)}, 0, true});
    c.add_method({{"b", loa::Rational(1, 2), LoaValue(2)}, 1, true});
    EXPECT_EQ(c.aggregate({"a", "b"}).raw, loa::Rational(5, 2));
    EXPECT_EQ(c.aggregate({"a"}).raw, loa::Rational(3, 2));
    c.add_method(unweighted("c", 1));
    EXPECT_THROW(c.aggregate({"a", "c"}), OrchestratorError);
}

TEST(Negotiation, RequiredLevelIsHighestAmongTargets)
{
    Fixture f;
    EXPECT_EQ(required_loa(request({101}, {}), *f.topo.registry), LoaValue(3));
    EXPECT_EQ(required_loa(request({102}, {}), *f.topo.registry), LoaValue(2));
    EXPECT_EQ(required_loa(request({104, 101}, {}), *f.topo.registry), LoaValue(3));
    // policy overrides the registry's attributes for 105
    EXPECT_EQ(required_loa(request({105}, {}), *f.topo.registry), LoaValue(2));
    EXPECT_THROW(required_loa(request({999}, {}), *f.topo.registry), std::exception);
}

TEST(Negotiation, OffersCombinationsThatReachTheLevel)
{
    Fixture f;
    const auto& reg = *f.topo.registry;
    const auto& cat = *f.policy.catalog;
    using V = std::vector<Combination>;
    EXPECT_EQ(negotiate(request({101}, {"password", "fob"}), cat, reg), (V{{"fob"}}));
    EXPECT_EQ(negotiate(request({101}, {"password"}), cat, reg), V{});
    EXPECT_EQ(negotiate(request({102}, {"password", "fob"}), cat, reg), (V{{"password"}, {"password", "fob"}, {"fob"}}));
    EXPECT_EQ(negotiate(request({102}, {"pin"}), cat, reg), V{});
    EXPECT_EQ(negotiate(request({103, 105}, {"password"}, Mode::O2M), cat, reg), (V{{"password"}}));
}

TEST(Authorization, DefaultDeny)
{
    AuthzPolicy p;
    p.allow(11, 101, 5);
    p.deny(11, 102);
    EXPECT_TRUE(adf_check(11, 101, p).allowed);
    EXPECT_EQ(adf_check(11, 101, p).restrictions, 5);
    EXPECT_FALSE(adf_check(11, 102, p).allowed);
    EXPECT_FALSE(adf_check(11, 103, p).allowed);
    EXPECT_FALSE(adf_check(12, 101, p).allowed);
}

TEST(Coordinator, GrantsAndIssuesAtAggregateLevel)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    const auto out = c.run(request({101}, {"fob"}));
    ASSERT_EQ(out.verdict, Verdict::Granted) << out.detail;
    EXPECT_STREQ(verdict_code(out.verdict), "GRANTED");
    ASSERT_EQ(c.issued(), 1u);
    EXPECT_EQ(c.d.servers->auth_server().issued().back().info.loa, 3);
    EXPECT_EQ(c.d.servers->auth_server().issued().back().request.factor_index, 1u);
}

TEST(Coordinator, TicketCarriesFlooredAggregate)
{
    Fixture f;
    auto catalog = std::make_shared<MethodCatalog>();
    catalog->add_method(unweighted("a", 3, 0));
    catalog->add_method(unweighted("b", 2, 1));
    catalog->add_combination(LoaValue(2), Mode::P2P, {"a", "b"});
    Coordinated c(f.topo, catalog, f.policy.authz);
    const auto out = c.run(request({102}, {"a", "b"}));
    ASSERT_EQ(out.verdict, Verdict::Granted) << out.detail;
    ASSERT_TRUE(out.instance);
    EXPECT_EQ(out.instance->raw, loa::Rational(5, 2));
    ASSERT_EQ(c.issued(), 2u);  // one ticket per factor
    for (const auto& t : c.d.servers->auth_server().issued())
        EXPECT_EQ(t.info.loa, 2);
}

TEST(Coordinator, RestrictionIndexReachesTheDevice)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    const auto out = c.run(request({102}, {"password"}));
    ASSERT_EQ(out.verdict, Verdict::Granted) << out.detail;
    EXPECT_EQ(out.restrictions, 5);
    ASSERT_TRUE(out.run);
    // decode the ticket the device received with the device's own key
    const auto& transcript = out.run->factors.at(0).transcript;
    const auto it = std::find_if(transcript.begin(), transcript.end(),
                                 [](const auto& e) { return e.kind == wire::MsgKind::ApReq; });
    ASSERT_NE(it, transcript.end());
    const auto frame = wire::decode_msg(it->frame, wire::MsgKind::ApReq);
    const auto& req = std::get<wire::ApReq>(frame.payload);
    const auto info = wire::decode_ticket(
        req.ticket, {wire::KeyKind::DeviceLongTerm, f.topo.registry->device(102)->long_term_key});
    EXPECT_EQ(info.restrictions, 5);
    EXPECT_EQ(info.id_client, 11u);
}

TEST(Coordinator, DeniesBelowRequiredLevel)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    const auto out = c.run(request({101}, {"password"}));
    EXPECT_EQ(out.verdict, Verdict::DeniedLoa);
    EXPECT_STREQ(verdict_code(out.verdict), "DENIED(loa)");
    EXPECT_EQ(c.issued(), 0u);
}

TEST(Coordinator, WeakestLinkOfChainDenies)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    auto req = request({102}, {"password"});
    req.history = {loa::AggregationMode::ClientChain, {loa::Rational(1)}};
    const auto out = c.run(req);
    EXPECT_EQ(out.verdict, Verdict::DeniedLoa);
    ASSERT_TRUE(out.session_loa);
    EXPECT_EQ(*out.session_loa, LoaValue(1));
    EXPECT_EQ(c.issued(), 0u);

    // the same history under single-client aggregation keeps the best instance
    req.history.mode = loa::AggregationMode::SingleClient;
    const auto ok = c.run(req);
    EXPECT_EQ(ok.verdict, Verdict::Granted) << ok.detail;
    EXPECT_EQ(*ok.session_loa, LoaValue(2));
}

TEST(Coordinator, DeniesUnauthorizedTarget)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    const auto out = c.run(request({106}, {"password"}));
    EXPECT_EQ(out.verdict, Verdict::DeniedAuthz);
    EXPECT_STREQ(verdict_code(out.verdict), "DENIED(authz)");
    EXPECT_EQ(c.issued(), 0u);
}

TEST(Coordinator, GroupTicketNeedsOneRestrictionProfile)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    EXPECT_EQ(c.run(request({102, 103}, {"password"}, Mode::O2M)).verdict, Verdict::DeniedAuthz);
    EXPECT_EQ(c.run(request({103, 105}, {"password"}, Mode::O2M)).verdict, Verdict::Granted);
}

TEST(Coordinator, AuthServerRefusesWithoutGrant)
{
    Fixture f;
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz);
    // straight to the AS, skipping the coordinator
    auto client = c.d.client(11, 1);
    EXPECT_FALSE(client.authenticate(Mode::P2P, {101}, *c.d.channel).ok);
    EXPECT_EQ(c.issued(), 0u);
    EXPECT_FALSE(c.d.channel->rejections().empty());
}

TEST(Coordinator, RetriesFactorChecksWithinBudget)
{
    Fixture f;
    int calls = 0;
    FactorVerifier flaky = [&](std::uint32_t, const std::string&) { return ++calls > 1; };
    Coordinated c(f.topo, f.policy.catalog, f.policy.authz, flaky, {1});
    const auto out = c.run(request({101}, {"fob"}));
    EXPECT_EQ(out.verdict, Verdict::Granted) << out.detail;
    EXPECT_EQ(out.attempts, 2u);

    FactorVerifier never = [](std::uint32_t, const std::string&) { return false; };
    Coordinated n(f.topo, f.policy.catalog, f.policy.authz, never, {2});
    const auto denied = n.run(request({101}, {"fob"}));
    EXPECT_EQ(denied.verdict, Verdict::DeniedLoa);
    EXPECT_EQ(denied.attempts, 3u);
    EXPECT_EQ(n.issued(), 0u);
}

TEST(Coordinator, NoTicketUnlessLevelAndAuthorizationHold)
{
    // device attributes x method level x authorization, every combination
    int granted = 0, cases = 0;
    for (int dc = 1; dc <= 3; ++dc)
        for (int av = 1; av <= 3; ++av)
            for (int lc = 1; lc <= 3; ++lc)
                for (int level = 1; level <= 3; ++level)
                    for (bool allowed : {true, false}) {
                        auto topo = harness::synthetic_topology(1, 1, 1, 99);
                        auto reg = std::make_shared<protocol::Registry>();
                        auto dev = *topo.registry->device(101);
                        dev.attributes = {LoaValue(dc), LoaValue(av), LoaValue(lc)};
                        reg->add_device(dev);
                        for (const auto& [id, g] : topo.registry->groups())
                            reg->add_group(g);
                        reg->add_client(*topo.registry->client(11));
                        topo.registry = reg;

                        auto catalog = std::make_shared<MethodCatalog>();
                        catalog->add_method(unweighted("m", level));
                        catalog->add_combination(LoaValue(level), Mode::P2P, {"m"});
                        auto authz = std::make_shared<AuthzPolicy>();
                        if (allowed)
                            authz->allow(11, 101);
                        else
                            authz->deny(11, 101);

                        Coordinated c(topo, catalog, authz);
                        const auto out = c.run(request({101}, {"m"}));
                        const bool should = level >= std::max({dc, av, lc}) && allowed;
                        ++cases;
                        EXPECT_EQ(out.granted(), should) << dc << av << lc << " m=" << level << " a=" << allowed;
                        EXPECT_EQ(c.issued(), should ? 1u : 0u);
                        if (!should) {
                            EXPECT_EQ(out.verdict, level < std::max({dc, av, lc}) ? Verdict::DeniedLoa
                                                                                   : Verdict::DeniedAuthz);
                        }
                        granted += out.granted();
                    }
    EXPECT_EQ(cases, 162);
    EXPECT_GT(granted, 0);
}
