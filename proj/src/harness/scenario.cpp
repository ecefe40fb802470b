#include "m2i/harness/scenario.hpp"

#include "m2i/kerberos.hpp"

#include <json.hpp>

#include <algorithm>

namespace m2i::harness {
namespace {

using cost::Protocol;

cost::Protocol reauth_of(cost::Protocol p)
{
    switch (p) {
    case Protocol::P2P: return Protocol::P2PReauth;
    case Protocol::O2M: return Protocol::O2MReauth;
    case Protocol::Kerberos: return Protocol::KerberosReauth;
    default: return p;
    }
}

void absorb(LiveResult& r, const protocol::RunOutcome& o)
{
    r.ok = r.ok && o.ok;
    if (!r.reason && o.reason)
        r.reason = o.reason;
    r.live_bits += o.accounted_bits();
    r.transcript.insert(r.transcript.end(), o.transcript.begin(), o.transcript.end());
}

LiveResult start(cost::Protocol p, const RunSpec& spec, unsigned factors, std::size_t chain_length)
{
    LiveResult r;
    r.protocol = p;
    r.client = spec.client;
    r.nt = static_cast<unsigned>(spec.targets.size());
    r.factors = factors;
    r.ok = true;
    r.tampered = spec.tamper.has_value();
    r.expected_verdict = spec.expect;
    if (factors >= 1) {
        r.oracle = cost::report(p, r.nt, factors);
        r.expected = expected_ops(p, r.nt, factors, chain_length);
    }
    return r;
}

}  // namespace

cost::OpCounts expected_ops(cost::Protocol p, unsigned nt, unsigned factors, std::size_t chain_length)
{
    cost::OpCounts c = cost::op_counts(p, nt, factors);
    if (p == Protocol::P2P || p == Protocol::O2M)
        c[crypto::OpKind::H] = std::uint64_t{factors} * nt * chain_length;
    return c;
}

bool LiveResult::passed() const
{
    if (tampered)
        return !ok || server_rejections > 0;
    if (expected_verdict && *expected_verdict != "GRANTED")
        return verdict == *expected_verdict && server_rejections == 0;
    if (!verdict.empty() && verdict != "GRANTED")
        return false;
    return ok && bits_match() && ops_match();
}

std::string to_json(const std::vector<LiveResult>& results)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json j{{"protocol", cost::protocol_name(r.protocol)},
                         {"client", r.client},
                         {"nt", r.nt},
                         {"factors", r.factors},
                         {"ok", r.ok},
                         {"live_bits", r.live_bits},
                         {"oracle_bits", r.oracle.comm_bits},
                         {"live_bytes", cost::bytes_of(r.live_bits)},
                         {"expected_ops", r.expected.str()},
                         {"bits_match", r.bits_match()},
                         {"ops_match", r.ops_match()},
                         {"messages", r.transcript.size()},
                         {"server_rejections", r.server_rejections},
                         {"tampered", r.tampered},
                         {"passed", r.passed()}};
        j["live_ops"] = r.live_ops ? nlohmann::json(r.live_ops->str()) : nlohmann::json(nullptr);
        if (r.reason)
            j["reason"] = protocol::reason_name(*r.reason);
        if (!r.verdict.empty())
            j["verdict"] = r.verdict;
        if (r.expected_verdict)
            j["expected_verdict"] = *r.expected_verdict;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

LiveHarness::LiveHarness(Topology topo, LiveSettings settings, std::optional<Policy> policy)
    : topo_(std::move(topo)), settings_(std::move(settings)), policy_(std::move(policy))
{
    if (policy_) {
        // keep the caller's registry untouched
        topo_.registry = std::make_shared<protocol::Registry>(*topo_.registry);
        apply_cloa(*topo_.registry, *policy_);
    }
    rng_ = std::make_unique<crypto::DeterministicRandom>(settings_.seed);
    server_rng_ = std::make_unique<crypto::DeterministicRandom>(settings_.seed ^ 0x5eedULL);
    if (settings_.fixed_time) {
        const std::uint32_t t = *settings_.fixed_time;
        clock_ = [t] { return t; };
    } else {
        clock_ = protocol::system_clock();
    }
    servers_ = std::make_unique<Servers>(topo_, settings_.config, *server_rng_, clock_);
    if (settings_.transport == TransportKind::InProcess) {
        inproc_ = std::make_unique<InProcessChannel>(*servers_, &counter_);
    } else {
        tcp_server_ = std::make_unique<TcpServer>(*servers_);
        tcp_server_->start();
        tcp_channel_ = std::make_unique<TcpChannel>(tcp_server_->port());
    }
    if (policy_)
        coordinator_ = std::make_unique<orchestrator::Coordinator>(topo_.registry, policy_->catalog, policy_->authz);
}

LiveHarness::~LiveHarness()
{
    tcp_channel_.reset();
    if (tcp_server_)
        tcp_server_->stop();
}

protocol::Channel& LiveHarness::base_channel()
{
    if (inproc_)
        return *inproc_;
    return *tcp_channel_;
}

std::size_t LiveHarness::refused() const
{
    return inproc_ ? inproc_->rejections().size() : tcp_server_->refused();
}

std::vector<LiveResult> LiveHarness::run(const RunSpec& spec)
{
    const protocol::ClientRecord* rec = topo_.registry->client(spec.client);
    if (!rec)
        throw ConfigError("unknown client " + std::to_string(spec.client));
    if (spec.protocol != Protocol::Kerberos && !spec.coordinate && spec.factors > rec->factor_keys.size())
        throw ConfigError("client " + std::to_string(spec.client) + " has fewer keys than factors");

    std::optional<TamperChannel> tamper;
    protocol::Channel& ch =
        spec.tamper ? tamper.emplace(base_channel(), spec.tamper->first, spec.tamper->second) : base_channel();
    const bool local = settings_.transport == TransportKind::InProcess;
    const std::size_t chain = settings_.config.chain_length;
    std::vector<LiveResult> out;

    auto begin_phase = [&](cost::Protocol p, unsigned factors) {
        counter_.reset();
        out.push_back(start(p, spec, factors, chain));
        return refused();
    };
    auto end_phase = [&](std::size_t refused_before) {
        LiveResult& r = out.back();
        r.server_rejections = refused() - refused_before;
        if (local)
            r.live_ops = cost::OpCounts::from(counter_);
        if (tamper)
            r.tampered = tamper->fired();
    };

    if (spec.protocol == Protocol::Kerberos) {
        kerberos::KerberosClientEnv env;
        env.as_id = topo_.as_id;
        env.tgs_id = topo_.tgs_id;
        env.realm = topo_.realm;
        env.lifetime = settings_.config.ticket_lifetime;
        env.config = settings_.config;
        env.rng = rng_.get();
        env.clock = clock_;
        env.counter = &counter_;
        kerberos::KerberosClient kc(spec.client, rec->factor_keys.front(), env);
        auto before = begin_phase(Protocol::Kerberos, spec.factors);
        absorb(out.back(), kc.run(ch, spec.targets, spec.factors));
        end_phase(before);
        if (spec.reauth) {
            before = begin_phase(Protocol::KerberosReauth, spec.factors);
            absorb(out.back(), kc.reauth(ch));
            end_phase(before);
        }
        return out;
    }

    const protocol::Mode mode = spec.protocol == Protocol::P2P ? protocol::Mode::P2P : protocol::Mode::O2M;
    protocol::ClientEnv env{topo_.as_id, settings_.config, rng_.get(), clock_, &counter_};

    if (spec.coordinate) {
        if (!coordinator_)
            throw ConfigError("coordinated run without a policy");
        orchestrator::AuthRequest req{spec.client, spec.targets, mode, spec.offered, {}};
        servers_->auth_server().set_policy(coordinator_->issue_policy());
        counter_.reset();
        const std::size_t before = refused();
        orchestrator::SessionOutcome so;
        try {
            so = coordinator_->coordinate(req, env, ch);
        } catch (...) {
            servers_->auth_server().set_policy({});
            throw;
        }
        servers_->auth_server().set_policy({});
        const unsigned factors = so.combination ? static_cast<unsigned>(so.combination->size()) : 0;
        out.push_back(start(spec.protocol, spec, factors, chain));
        LiveResult& r = out.back();
        r.verdict = orchestrator::verdict_code(so.verdict);
        if (so.run)
            for (const auto& f : so.run->factors)
                absorb(r, f);
        else
            r.ok = false;
        end_phase(before);
        return out;
    }

    std::vector<protocol::Client> clients;
    for (unsigned f = 0; f < spec.factors; ++f)
        clients.emplace_back(protocol::ClientIdentity{spec.client, rec->factor_keys[f]}, env);
    auto before = begin_phase(spec.protocol, spec.factors);
    const auto mo = protocol::run_two_factor(clients, {}, mode, spec.targets, ch);
    for (const auto& f : mo.factors)
        absorb(out.back(), f);
    end_phase(before);
    if (spec.reauth) {
        before = begin_phase(reauth_of(spec.protocol), spec.factors);
        for (auto& c : clients)
            absorb(out.back(), c.reauthenticate(ch));
        end_phase(before);
    }
    return out;
}

bool ScenarioResult::passed() const
{
    return !results.empty() && std::all_of(results.begin(), results.end(), [](const LiveResult& r) { return r.passed(); });
}

ScenarioResult run_scenario(const ScenarioSpec& spec)
{
    Topology topo = load_registry(spec.registry);
    std::optional<Policy> policy;
    if (spec.policy)
        policy = load_policy(*spec.policy);
    LiveSettings settings;
    settings.config.chain_length = spec.chain_length;
    settings.seed = spec.seed;
    settings.fixed_time = spec.fixed_time;
    settings.transport = spec.transport;
    LiveHarness h(std::move(topo), settings, std::move(policy));

    ScenarioResult out;
    out.name = spec.name;
    for (const auto& run : spec.runs) {
        auto rs = h.run(run);
        out.results.insert(out.results.end(), rs.begin(), rs.end());
    }
    return out;
}

std::vector<LiveResult> verify_grid(unsigned max_nt, std::uint64_t seed)
{
    const Topology topo = synthetic_topology(max_nt, 1, 2, seed);
    const std::uint32_t client = topo.registry->clients().begin()->first;
    std::vector<LiveResult> out;

    // one link per target matches the initial-run closed forms; re-authentication needs a second
    for (std::size_t chain : {std::size_t{1}, std::size_t{2}}) {
        LiveSettings settings;
        settings.seed = seed;
        settings.config.chain_length = chain;
        LiveHarness h(topo, settings);
        for (auto p : {Protocol::P2P, Protocol::O2M, Protocol::Kerberos}) {
            if (chain == 2 && p == Protocol::Kerberos)
                continue;
            for (unsigned nt = 1; nt <= max_nt; ++nt)
                for (unsigned f : {1u, 2u}) {
                    RunSpec spec;
                    spec.protocol = p;
                    spec.client = client;
                    spec.factors = f;
                    spec.reauth = chain == 2 || p == Protocol::Kerberos;
                    for (std::uint32_t i = 0; i < nt; ++i)
                        spec.targets.push_back(101 + i);
                    auto rs = h.run(spec);
                    if (chain == 2)
                        rs.erase(rs.begin());  // the initial phase was checked with chain 1
                    out.insert(out.end(), rs.begin(), rs.end());
                }
        }
    }
    return out;
}

}  // namespace m2i::harness
