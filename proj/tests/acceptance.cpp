// Acceptance checks, one line per criterion. Exit status is nonzero if any fails.
// --print-golden writes the digest of the fixed-seed transcript to stdout.

#include "m2i/cost_model.hpp"
#include "m2i/harness/bench.hpp"
#include "m2i/harness/fuzz.hpp"
#include "m2i/harness/scenario.hpp"
#include "m2i/kerberos.hpp"
#include "m2i/loa.hpp"
#include "m2i/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace m2i;
using cost::Protocol;
using wire::MsgKind;

namespace {

constexpr std::uint32_t kNow = 1700000000;

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void expect(bool cond, const std::string& what)
    {
        if (!cond) {
            if (!ok)
                detail << "; ";
            detail << what;
            ok = false;
        }
    }
};

std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(M2I_FIXTURE_DIR) / name; }

std::vector<std::uint32_t> targets(unsigned nt)
{
    std::vector<std::uint32_t> t;
    for (unsigned i = 0; i < nt; ++i)
        t.push_back(101 + i);
    return t;
}

/// One in-process deployment with its own clocks.
struct Deployment {
    harness::Topology topo;
    protocol::Config config;
    std::shared_ptr<std::uint32_t> server_now = std::make_shared<std::uint32_t>(kNow);
    std::shared_ptr<std::uint32_t> client_now = std::make_shared<std::uint32_t>(kNow);
    crypto::DeterministicRandom server_rng{17};
    crypto::DeterministicRandom client_rng{18};
    std::unique_ptr<harness::Servers> servers;
    std::unique_ptr<harness::InProcessChannel> channel;

    explicit Deployment(harness::Topology t, protocol::Config cfg = {}) : topo(std::move(t)), config(cfg)
    {
        auto sn = server_now;
        servers = std::make_unique<harness::Servers>(topo, config, server_rng, [sn] { return *sn; });
        channel = std::make_unique<harness::InProcessChannel>(*servers);
    }

    protocol::ClientEnv env()
    {
        auto cn = client_now;
        return {topo.as_id, config, &client_rng, [cn] { return *cn; }, nullptr};
    }

    protocol::Client client(std::size_t factor = 0)
    {
        return protocol::Client({11, topo.registry->client(11)->factor_keys.at(factor)}, env());
    }

    kerberos::KerberosClient krb_client()
    {
        kerberos::KerberosClientEnv e;
        e.as_id = topo.as_id;
        e.tgs_id = topo.tgs_id;
        e.realm = topo.realm;
        e.config = config;
        e.rng = &client_rng;
        auto cn = client_now;
        e.clock = [cn] { return *cn; };
        return kerberos::KerberosClient(11, topo.registry->client(11)->factor_keys[0], e);
    }

    bool refused_with(protocol::Reason r) const
    {
        for (const auto& x : channel->rejections())
            if (x.reason == r)
                return true;
        return false;
    }
};

std::string bit_list(const protocol::RunOutcome& run)
{
    std::string s;
    for (const auto& e : run.transcript)
        s += (s.empty() ? "" : "/") + std::to_string(e.accounted_bits);
    return s;
}

void expect_bits(Check& c, const std::string& name, const protocol::RunOutcome& run, std::vector<std::size_t> want)
{
    std::vector<std::size_t> got;
    for (const auto& e : run.transcript)
        got.push_back(e.accounted_bits);
    c.expect(run.ok && got == want, name + " " + bit_list(run));
}

// --- criteria ---------------------------------------------------------------

void message_lengths(Check& c)
{
    {
        Deployment d(harness::synthetic_topology(1));
        auto cl = d.client();
        const auto run = cl.authenticate(protocol::Mode::P2P, {101}, *d.channel);
        expect_bits(c, "p2p", run, {256, 896, 897, 256, 128});
        expect_bits(c, "p2p-reauth", cl.reauthenticate(*d.channel), {897, 384});
    }
    for (unsigned nt = 1; nt <= 10; ++nt) {
        Deployment d(harness::synthetic_topology(nt));
        auto cl = d.client();
        const auto run = cl.authenticate(protocol::Mode::O2M, targets(nt), *d.channel);
        std::vector<std::size_t> want{wire::accounted_len(32 * nt + 192), 896};
        for (unsigned i = 0; i < nt; ++i)
            want.insert(want.end(), {897, 256, 128});
        expect_bits(c, "o2m nt=" + std::to_string(nt), run, want);
        if (nt == 3)
            c.expect(!run.transcript.empty() && run.transcript[0].accounted_bits == 384, "o2m Msg1 at nt=3");
    }
    {
        Deployment d(harness::synthetic_topology(1));
        auto kc = d.krb_client();
        const auto run = kc.run(*d.channel, {101});
        expect_bits(c, "kerberos", run, {328, 936, 800, 936, 544, 128});
        expect_bits(c, "kerberos-reauth", kc.reauth(*d.channel), {544, 128});

        // ticket and authenticator components
        std::size_t tgt = 0, sgt = 0, auth1 = 0, auth2 = 0;
        for (const auto& e : run.transcript) {
            const auto f = wire::decode_msg(e.frame, e.kind);
            const auto acc = [](const crypto::SealedBox& b) { return wire::accounted_len(b.env.plain_bits); };
            if (e.kind == MsgKind::KrbAsRep)
                tgt = acc(std::get<wire::KrbKdcRep>(f.payload).ticket);
            else if (e.kind == MsgKind::KrbTgsRep)
                sgt = acc(std::get<wire::KrbKdcRep>(f.payload).ticket);
            else if (e.kind == MsgKind::KrbTgsReq)
                auth1 = acc(std::get<wire::KrbTgsReq>(f.payload).authenticator);
            else if (e.kind == MsgKind::KrbApReq)
                auth2 = acc(std::get<wire::KrbApReq>(f.payload).authenticator);
        }
        c.expect(tgt == 384 && sgt == 384 && auth1 == 128 && auth2 == 128,
                 "kerberos components " + std::to_string(tgt) + "/" + std::to_string(sgt) + "/" +
                     std::to_string(auth1) + "/" + std::to_string(auth2));
    }
    if (c.ok)
        c.detail << "p2p 256/896/897/256/128, re-auth 897/384, o2m Msg1 32NT+192 rounded (nt 1..10), "
                    "kerberos 328/936/800/936/544/128, components 384/384/128/128";
}

void totals(Check& c)
{
    const auto bytes = [](Protocol p) { return cost::bytes_of(cost::comm_bits(p, 3)); };
    const auto p2p = bytes(Protocol::P2P), o2m = bytes(Protocol::O2M), krb = bytes(Protocol::Kerberos),
               re = bytes(Protocol::P2PReauth);
    // the same figures from live runs
    std::uint64_t live[4] = {};
    {
        Deployment d(harness::synthetic_topology(3));
        auto a = d.client();
        live[0] = cost::bytes_of(a.authenticate(protocol::Mode::P2P, targets(3), *d.channel).accounted_bits());
        live[3] = cost::bytes_of(a.reauthenticate(*d.channel).accounted_bits());
        auto b = d.client(1);
        live[1] = cost::bytes_of(b.authenticate(protocol::Mode::O2M, targets(3), *d.channel).accounted_bits());
        auto k = d.krb_client();
        live[2] = cost::bytes_of(k.run(*d.channel, targets(3)).accounted_bits());
    }
    c.expect(p2p == 913 && live[0] == 913, "p2p " + std::to_string(p2p) + "/" + std::to_string(live[0]));
    c.expect(o2m == 641 && live[1] == 641, "o2m " + std::to_string(o2m) + "/" + std::to_string(live[1]));
    c.expect(krb == 1061 && live[2] == 1061, "kerberos " + std::to_string(krb) + "/" + std::to_string(live[2]));
    c.expect(re == 481 && live[3] == 481, "p2p re-auth " + std::to_string(re) + "/" + std::to_string(live[3]));
    if (c.ok)
        c.detail << "p2p 913 B, o2m 641 B, kerberos 1061 B, p2p re-auth 481 B (model and live)";
}

void op_counts(Check& c)
{
    const auto results = harness::verify_grid(10, 1);
    std::size_t good = 0;
    for (const auto& r : results) {
        const bool ok = r.ok && r.live_ops && r.ops_match() && r.bits_match();
        good += ok;
        if (!ok)
            c.expect(false, std::string(cost::protocol_name(r.protocol)) + " nt=" + std::to_string(r.nt) +
                                " f=" + std::to_string(r.factors));
    }
    c.expect(results.size() == 6 * 10 * 2, "grid has " + std::to_string(results.size()) + " cells");
    if (c.ok)
        c.detail << good << "/" << results.size() << " live runs match the closed-form op counts and bits";
}

void bands(Check& c)
{
    const auto prof = cost::TimingProfile::reference();
    double lo[5] = {1e9, 1e9, 1e9, 1e9, 1e9}, hi[5] = {-1e9, -1e9, -1e9, -1e9, -1e9};
    for (unsigned nt : {10u, 50u, 100u, 200u, 400u}) {
        const auto row = cost::compare_at(nt, 1, prof);
        const double v[5] = {row.o2m_vs_kerberos_comm, row.p2p_vs_kerberos_pcc, row.o2m_vs_kerberos_pcc,
                             row.reauth_pcc_reduction, row.reauth_comm_increase};
        for (int i = 0; i < 5; ++i) {
            lo[i] = std::min(lo[i], v[i]);
            hi[i] = std::max(hi[i], v[i]);
        }
        const std::string at = " at nt=" + std::to_string(nt);
        const auto in = [](double x, long a, long b) { return std::lround(x) >= a && std::lround(x) <= b; };
        c.expect(in(v[0], 42, 45), "o2m comm reduction" + at);
        c.expect(in(v[1], 70, 72), "p2p pcc reduction" + at);
        c.expect(in(v[2], 81, 82), "o2m pcc reduction" + at);
        c.expect(std::abs(v[3] - 72) <= 1, "re-auth pcc reduction" + at);
        c.expect(std::abs(v[4] - 91) <= 1, "re-auth comm increase" + at);
    }
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "comm %.2f-%.2f%%, pcc p2p %.2f-%.2f%%, o2m %.2f-%.2f%%, re-auth pcc %.2f%%, comm +%.2f%%", lo[0],
                  hi[0], lo[1], hi[1], lo[2], hi[2], lo[3], hi[4]);
    if (c.ok)
        c.detail << buf;
    else
        c.detail << " (" << buf << ")";
}

void loa_examples(Check& c)
{
    using loa::LoaValue;
    using loa::Rational;
    const auto safe = loa::rloa({LoaValue(2), LoaValue(3), LoaValue(1)});
    const auto max = loa::agg_dloa_session_single({loa::AggregationMode::SingleClient, {Rational(1), Rational(3)}});
    const auto weakest = loa::agg_dloa_session_chain({loa::AggregationMode::ClientChain, {Rational(1), Rational(2)}});
    std::vector<loa::AuthMethodSpec> half{{"a", Rational(1, 2), LoaValue(3)}, {"b", Rational(1, 2), LoaValue(2)}};
    const auto floored = loa::agg_dloa_instance(half);
    c.expect(safe == LoaValue(3), "safe example gave " + std::to_string(safe.value()));
    c.expect(max == LoaValue(3), "max(1,3) gave " + std::to_string(max.value()));
    c.expect(weakest == LoaValue(1), "min(1,2) gave " + std::to_string(weakest.value()));
    c.expect(floored.raw == Rational(5, 2) && floored.floored == LoaValue(2),
             "floor(2.5) gave " + std::to_string(floored.floored.value()));
    if (c.ok)
        c.detail << "safe example 3, max(1,3)=3, chain min(1,2)=1, floor(2.5)=2";
}

void security(Check& c)
{
    // single-bit tampering
    harness::FuzzConfig fc;
    fc.flips = 1000;
    fc.seed = 2024;
    const auto rep = harness::fuzz(fc);
    for (const auto& cell : rep.cells)
        c.expect(cell.clean(), std::string("tampered ") + cost::protocol_name(cell.protocol) + " " +
                                   wire::kind_name(cell.kind) + " survived " +
                                   std::to_string(cell.trials - cell.terminated) + "x");

    // stale Msg1
    {
        Deployment d(harness::synthetic_topology(1));
        *d.client_now = kNow - d.config.delta_t - 1;
        auto cl = d.client();
        const bool ok = cl.authenticate(protocol::Mode::P2P, {101}, *d.channel).ok;
        c.expect(!ok && d.refused_with(protocol::Reason::StaleTimestamp) &&
                     d.servers->auth_server().issued().empty(),
                 "stale Msg1 not rejected");
    }
    // spent chain link
    {
        protocol::Config cfg;
        cfg.chain_length = 3;
        Deployment d(harness::synthetic_topology(1), cfg);
        harness::RecordingChannel rc(*d.channel);
        auto cl = d.client();
        bool ok = cl.authenticate(protocol::Mode::P2P, {101}, rc).ok && cl.reauthenticate(rc).ok;
        const auto spent = rc.frames().at(rc.frames().size() - 2).frame;
        bool refused = false;
        try {
            d.servers->device(101).handle(spent);
        } catch (const protocol::ProtocolError& e) {
            refused = e.reason() == protocol::Reason::ChainMismatch;
        }
        c.expect(ok && refused, "spent chain link accepted");
    }
    // O2M ticket under a key the device does not hold
    {
        auto topo = harness::synthetic_topology(2);
        auto reg = std::make_shared<protocol::Registry>();
        for (const auto& [id, dev] : topo.registry->devices()) {
            auto copy = dev;
            if (id == 102)
                copy.group_key->bytes[3] ^= 0x10;
            reg->add_device(copy);
        }
        for (const auto& [id, g] : topo.registry->groups())
            reg->add_group(g);
        for (const auto& [id, cl] : topo.registry->clients())
            reg->add_client(cl);
        topo.registry = reg;
        Deployment d(topo);
        auto cl = d.client();
        const auto run = cl.authenticate(protocol::Mode::O2M, {101, 102}, *d.channel);
        const bool rejected = run.targets.size() == 2 && run.targets[0].ok && !run.targets[1].ok &&
                              d.servers->device(102).state(11) != protocol::DeviceSessionState::Authenticated;
        c.expect(rejected, "wrong-group-key O2M ticket accepted");
    }
    // no ticket without sufficient LoA and authorization
    std::size_t grid = 0, wrong = 0;
    for (int dc = 1; dc <= 3; ++dc)
        for (int av = 1; av <= 3; ++av)
            for (int lc = 1; lc <= 3; ++lc)
                for (bool allowed : {true, false}) {
                    for (int level = 1; level <= 3; ++level) {
                        auto topo = harness::synthetic_topology(1, 1, 1, 99);
                        auto reg = std::make_shared<protocol::Registry>();
                        auto dev = *topo.registry->device(101);
                        dev.attributes = {loa::LoaValue(dc), loa::LoaValue(av), loa::LoaValue(lc)};
                        reg->add_device(dev);
                        for (const auto& [id, g] : topo.registry->groups())
                            reg->add_group(g);
                        reg->add_client(*topo.registry->client(11));
                        topo.registry = reg;

                        auto catalog = std::make_shared<orchestrator::MethodCatalog>();
                        catalog->add_method({{"m", loa::Rational(1), loa::LoaValue(level)}, 0, true});
                        catalog->add_combination(loa::LoaValue(level), protocol::Mode::P2P, {"m"});
                        auto authz = std::make_shared<orchestrator::AuthzPolicy>();
                        if (allowed)
                            authz->allow(11, 101);
                        else
                            authz->deny(11, 101);

                        Deployment d(topo);
                        orchestrator::Coordinator coord(topo.registry, catalog, authz);
                        d.servers->auth_server().set_policy(coord.issue_policy());
                        orchestrator::AuthRequest req{11, {101}, protocol::Mode::P2P, {"m"}, {}};
                        coord.coordinate(req, d.env(), *d.channel);
                        // and a client that skips the coordinator altogether
                        auto rogue = d.client();
                        rogue.authenticate(protocol::Mode::P2P, {101}, *d.channel);

                        const bool should = allowed && level >= std::max({dc, av, lc});
                        const std::size_t issued = d.servers->auth_server().issued().size();
                        ++grid;
                        if (issued != (should ? 1u : 0u))
                            ++wrong;
                    }
                }
    c.expect(wrong == 0, std::to_string(wrong) + "/" + std::to_string(grid) + " grid cells issued wrongly");
    if (c.ok)
        c.detail << rep.trials() << " tampered runs in " << rep.cells.size()
                 << " message types all terminated; stale Msg1, spent link, wrong group key rejected; " << grid
                 << " LoA/authz cells issue only when allowed";
}

void trends(Check& c)
{
    harness::BenchConfig cfg;  // n = 7000 by default
    cfg.metrics = {harness::Metric::Pcc, harness::Metric::Delay};
    const auto results = harness::bench(cfg);
    auto at = [&](Protocol p, unsigned nt, harness::Metric m) {
        for (const auto& r : results)
            if (r.protocol == p && r.nt == nt && r.metric == m)
                return r.stats;
        return harness::Stats{};
    };
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(4);
    for (const auto& r : results)
        c.expect(r.stats.n == 7000 && r.stats.sem > 0, "missing mean/SEM");
    for (unsigned nt : cfg.nts) {
        const auto o2m = at(Protocol::O2M, nt, harness::Metric::Pcc), p2p = at(Protocol::P2P, nt, harness::Metric::Pcc),
                   krb = at(Protocol::Kerberos, nt, harness::Metric::Pcc);
        line << "nt=" << nt << " pcc o2m " << o2m.mean << "±" << o2m.sem << " p2p " << p2p.mean << "±" << p2p.sem
             << " kerberos " << krb.mean << "±" << krb.sem << "; ";
        std::ostringstream why;
        why.setf(std::ios::fixed);
        why.precision(5);
        if (!(o2m.mean < p2p.mean)) {
            why << "pcc o2m " << o2m.mean << " >= p2p " << p2p.mean << " at nt=" << nt;
            if (o2m.mean - p2p.mean <= 2 * std::hypot(o2m.sem, p2p.sem))
                why << " (within 2 SEM)";
            c.expect(false, why.str());
        }
        if (!(p2p.mean < krb.mean))
            c.expect(false, "pcc p2p >= kerberos at nt=" + std::to_string(nt));
    }
    for (auto p : cfg.protocols)
        for (std::size_t i = 1; i < cfg.nts.size(); ++i) {
            const auto a = at(p, cfg.nts[i - 1], harness::Metric::Delay), b = at(p, cfg.nts[i], harness::Metric::Delay);
            if (b.mean < a.mean - 2 * std::hypot(a.sem, b.sem))
                c.expect(false, std::string("delay of ") + cost::protocol_name(p) + " drops from nt=" +
                                    std::to_string(cfg.nts[i - 1]) + " to nt=" + std::to_string(cfg.nts[i]));
        }
    if (c.ok)
        c.detail << line.str() << "delay monotone in nt; n=7000 per cell";
    else
        c.detail << " [" << line.str() << "]";
}

harness::RunSpec honest(Protocol p, bool reauth, std::vector<std::uint32_t> t, unsigned factors = 1)
{
    harness::RunSpec r;
    r.protocol = p;
    r.reauth = reauth;
    r.client = 11;
    r.targets = std::move(t);
    r.factors = factors;
    return r;
}

std::string golden_digest()
{
    auto s = harness::load_scenario(fixture("p2p_nt1.json"));
    s.runs.clear();
    s.chain_length = 2;
    s.runs.push_back(honest(Protocol::P2P, true, {101, 102}));
    s.runs.push_back(honest(Protocol::O2M, true, {101, 102, 103}));
    s.runs.push_back(honest(Protocol::Kerberos, true, {101, 102}));
    s.runs.push_back(honest(Protocol::P2P, false, {103}, 2));
    crypto::Bytes all;
    for (const auto& r : harness::run_scenario(s).results)
        for (const auto& e : r.transcript)
            all.insert(all.end(), e.frame.begin(), e.frame.end());
    return crypto::to_hex(crypto::hash(all).bytes);
}

void determinism(Check& c)
{
    const std::string a = golden_digest(), b = golden_digest();
    c.expect(a == b, "two runs differ: " + a.substr(0, 16) + " vs " + b.substr(0, 16));
    std::ifstream in(fixture("golden_transcript.sha256"));
    std::string want;
    if (!(in >> want))
        c.expect(false, "golden digest file missing");
    else
        c.expect(want == a, "transcript digest " + a.substr(0, 16) + " differs from golden " + want.substr(0, 16));
    if (c.ok)
        c.detail << "p2p/o2m/kerberos transcripts with re-auth hash to " << a.substr(0, 16)
                 << "..., same in both runs and as the stored golden digest";
}

struct Criterion {
    int number;
    const char* name;
    double limit_s;  // 0: no limit
    std::function<void(Check&)> run;
};

}  // namespace

int main(int argc, char** argv)
{
    if (argc > 1 && std::strcmp(argv[1], "--print-golden") == 0) {
        std::cout << golden_digest() << "\n";
        return 0;
    }
    const Criterion criteria[] = {
        {1, "per-message lengths", 1, message_lengths},
        {2, "totals at nt=3", 0, totals},
        {3, "op-count oracle", 10, op_counts},
        {4, "cost bands", 0, bands},
        {5, "LoA examples", 0, loa_examples},
        {6, "security properties", 60, security},
        {7, "bench trends", 300, trends},
        {8, "transcript determinism", 0, determinism},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Check c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.limit_s > 0 && secs >= cr.limit_s)
            c.expect(false, "took " + std::to_string(secs) + " s, limit " + std::to_string(cr.limit_s) + " s");
        failed += !c.ok;
        std::printf("criterion %d: %s - %s: %s (%.2f s)\n", cr.number, c.ok ? "PASS" : "FAIL", cr.name,
                    c.detail.str().c_str(), secs);
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
