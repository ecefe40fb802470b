#include "m2i/harness/bench.hpp"

#include "m2i/harness/transport.hpp"
#include "m2i/kerberos.hpp"

#include <json.hpp>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

namespace m2i::harness {
namespace {

using cost::Protocol;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Protocol base_of(Protocol p)
{
    switch (p) {
    case Protocol::P2PReauth: return Protocol::P2P;
    case Protocol::O2MReauth: return Protocol::O2M;
    case Protocol::KerberosReauth: return Protocol::Kerberos;
    default: return p;
    }
}

/// Everything a client needs to run one protocol instance against a deployment.
struct Job {
    Protocol protocol;
    std::vector<std::uint32_t> targets;
    unsigned factors;
    const Topology* topo;
    protocol::Config config;
    crypto::RandomSource* rng;
    protocol::Clock clock;
};

[[noreturn]] void run_failed(const protocol::RunOutcome& o)
{
    throw std::runtime_error(std::string("benchmark run failed: ") +
                             (o.reason ? protocol::reason_name(*o.reason) : "unknown"));
}

void require_ok(const protocol::RunOutcome& o)
{
    if (!o.ok)
        run_failed(o);
}

/// Wall time of the measured phase in ms; the counter only sees that phase.
double measured_run(const Job& job, protocol::Channel& ch, crypto::OpCounter* counter)
{
    const auto& clients_map = job.topo->registry->clients();
    if (clients_map.empty() || clients_map.begin()->second.factor_keys.size() < job.factors)
        throw std::runtime_error("benchmark client lacks keys");
    const protocol::ClientRecord* rec = &clients_map.begin()->second;
    const bool reauth = cost::is_reauth(job.protocol);
    const Protocol base = base_of(job.protocol);

    if (base == Protocol::Kerberos) {
        kerberos::KerberosClientEnv env;
        env.as_id = job.topo->as_id;
        env.tgs_id = job.topo->tgs_id;
        env.realm = job.topo->realm;
        env.lifetime = job.config.ticket_lifetime;
        env.config = job.config;
        env.rng = job.rng;
        env.clock = job.clock;
        env.counter = counter;
        kerberos::KerberosClient kc(rec->id, rec->factor_keys.front(), env);
        if (reauth) {
            require_ok(kc.run(ch, job.targets, job.factors));
            if (counter)
                counter->reset();
            const auto t0 = Clock::now();
            const auto o = kc.reauth(ch);
            const double ms = ms_since(t0);
            require_ok(o);
            return ms;
        }
        const auto t0 = Clock::now();
        const auto o = kc.run(ch, job.targets, job.factors);
        const double ms = ms_since(t0);
        require_ok(o);
        return ms;
    }

    const protocol::Mode mode = base == Protocol::P2P ? protocol::Mode::P2P : protocol::Mode::O2M;
    protocol::ClientEnv env{job.topo->as_id, job.config, job.rng, job.clock, counter};
    std::vector<protocol::Client> clients;
    for (unsigned f = 0; f < job.factors; ++f)
        clients.emplace_back(protocol::ClientIdentity{rec->id, rec->factor_keys.at(f)}, env);
    if (reauth) {
        for (const auto& o : protocol::run_two_factor(clients, {}, mode, job.targets, ch).factors)
            require_ok(o);
        if (counter)
            counter->reset();
        const auto t0 = Clock::now();
        std::vector<protocol::RunOutcome> outs;
        for (auto& c : clients)
            outs.push_back(c.reauthenticate(ch));
        const double ms = ms_since(t0);
        for (const auto& o : outs)
            require_ok(o);
        return ms;
    }
    const auto t0 = Clock::now();
    const auto mo = protocol::run_two_factor(clients, {}, mode, job.targets, ch);
    const double ms = ms_since(t0);
    for (const auto& o : mo.factors)
        require_ok(o);
    return ms;
}

std::vector<std::uint32_t> first_targets(const Topology& topo, unsigned nt)
{
    std::vector<std::uint32_t> out;
    for (const auto& [id, _] : topo.registry->devices()) {
        if (out.size() == nt)
            break;
        out.push_back(id);
    }
    if (out.size() != nt)
        throw std::runtime_error("not enough devices for NT=" + std::to_string(nt));
    return out;
}

protocol::Config config_for(Protocol p)
{
    protocol::Config c;
    c.chain_length = cost::is_reauth(p) ? 2 : 1;
    return c;
}

std::optional<std::filesystem::path> write_raw(const BenchConfig& cfg, Protocol p, unsigned nt, Metric m,
                                               const std::vector<double>& samples)
{
    if (!cfg.raw_dir)
        return std::nullopt;
    std::filesystem::create_directories(*cfg.raw_dir);
    const auto file = *cfg.raw_dir / (std::string(cost::protocol_name(p)) + "_nt" + std::to_string(nt) + "_f" +
                                      std::to_string(cfg.factors) + "_" + metric_name(m) + ".csv");
    std::ofstream out(file);
    out << "iteration,ms\n";
    out.precision(9);
    for (std::size_t i = 0; i < samples.size(); ++i)
        out << i << ',' << samples[i] << '\n';
    return file;
}

struct LocalSamples {
    std::vector<double> pcc;
    std::vector<double> ptc;
};

/// One in-process deployment with its own RNGs and timed counter.
struct LocalCell {
    LocalCell(const BenchConfig& cfg, Protocol p, unsigned nt, const Topology& topo)
        : server_rng(cfg.seed ^ 0x5eedULL),
          client_rng(cfg.seed),
          servers(topo, config_for(p), server_rng, protocol::system_clock()),
          counter(true),
          ch(servers, &counter),
          job{p, first_targets(topo, nt), cfg.factors, &topo, config_for(p), &client_rng, protocol::system_clock()}
    {
    }

    crypto::DeterministicRandom server_rng;
    crypto::DeterministicRandom client_rng;
    Servers servers;
    crypto::OpCounter counter;
    InProcessChannel ch;
    Job job;
    LocalSamples samples;
};

/// PCC and PTC with every role in this process. PCC and PTC come from the same
/// iterations, and the cells run round-robin so load drift hits all of them alike.
std::map<std::pair<Protocol, unsigned>, LocalSamples> local_samples(const BenchConfig& cfg, const Topology& topo)
{
    std::vector<std::pair<std::pair<Protocol, unsigned>, std::unique_ptr<LocalCell>>> cells;
    for (auto p : cfg.protocols)
        for (auto nt : cfg.nts)
            cells.emplace_back(std::pair{p, nt}, std::make_unique<LocalCell>(cfg, p, nt, topo));
    for (auto& [key, cell] : cells) {
        cell->samples.pcc.reserve(cfg.iterations);
        cell->samples.ptc.reserve(cfg.iterations);
    }

    // The first cell of a round runs measurably slower, so the starting cell rotates.
    for (std::size_t i = 0; i < cfg.warmup + cfg.iterations; ++i)
        for (std::size_t k = 0; k < cells.size(); ++k) {
            auto& cell = cells[(i + k) % cells.size()].second;
            cell->counter.reset();
            const double wall = measured_run(cell->job, cell->ch, &cell->counter);
            if (i < cfg.warmup)
                continue;
            cell->samples.pcc.push_back(std::chrono::duration<double, std::milli>(cell->counter.total_time()).count());
            cell->samples.ptc.push_back(wall);
        }

    std::map<std::pair<Protocol, unsigned>, LocalSamples> out;
    for (auto& [key, cell] : cells)
        out.emplace(key, std::move(cell->samples));
    return out;
}

/// Client-observed time against a server in a child process.
std::vector<double> delay_samples(const BenchConfig& cfg, Protocol p, unsigned nt, const Topology& topo)
{
    crypto::DeterministicRandom server_rng(cfg.seed ^ 0x5eedULL);
    const protocol::Config pc = config_for(p);
    Servers servers(topo, pc, server_rng, protocol::system_clock());
    TcpServer server(servers);
    const pid_t child = ::fork();
    if (child < 0)
        throw std::runtime_error("fork failed");
    if (child == 0) {
        server.run();
        ::_exit(0);
    }
    server.release();

    std::vector<double> samples;
    try {
        crypto::DeterministicRandom client_rng(cfg.seed);
        TcpChannel ch(server.port());
        Job job{p, first_targets(topo, nt), cfg.factors, &topo, pc, &client_rng, protocol::system_clock()};
        samples.reserve(cfg.iterations);
        for (std::size_t i = 0; i < cfg.warmup + cfg.iterations; ++i) {
            const double wall = measured_run(job, ch, nullptr);
            if (i >= cfg.warmup)
                samples.push_back(wall);
        }
    } catch (...) {
        ::kill(child, SIGTERM);
        ::waitpid(child, nullptr, 0);
        throw;
    }
    ::kill(child, SIGTERM);
    ::waitpid(child, nullptr, 0);
    return samples;
}

}  // namespace

const char* metric_name(Metric m)
{
    switch (m) {
    case Metric::Pcc: return "pcc";
    case Metric::Ptc: return "ptc";
    case Metric::Delay: return "delay";
    }
    return "?";
}

Metric parse_metric(const std::string& s)
{
    for (auto m : {Metric::Pcc, Metric::Ptc, Metric::Delay})
        if (s == metric_name(m))
            return m;
    throw std::invalid_argument("unknown metric " + s);
}

Stats summarize(const std::vector<double>& samples)
{
    Stats s;
    s.n = samples.size();
    if (s.n == 0)
        return s;
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(s.n);
    if (s.n < 2)
        return s;
    double ss = 0;
    for (double x : samples)
        ss += (x - s.mean) * (x - s.mean);
    s.sem = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    return s;
}

std::vector<BenchResult> bench(const BenchConfig& cfg)
{
    if (cfg.iterations < 1)
        throw std::invalid_argument("iterations must be at least 1");
    if (cfg.factors != 1 && cfg.factors != 2)
        throw std::invalid_argument("factors must be 1 or 2");
    unsigned max_nt = 1;
    for (auto nt : cfg.nts) {
        if (nt < 1)
            throw std::invalid_argument("nt must be at least 1");
        max_nt = std::max(max_nt, nt);
    }
    const Topology topo = synthetic_topology(max_nt, 1, 2, cfg.seed);

    const bool needs_local = std::any_of(cfg.metrics.begin(), cfg.metrics.end(),
                                         [](Metric m) { return m != Metric::Delay; });
    const auto local = needs_local ? local_samples(cfg, topo) : std::map<std::pair<Protocol, unsigned>, LocalSamples>{};
    std::vector<BenchResult> out;
    for (auto m : cfg.metrics)
        for (auto p : cfg.protocols)
            for (auto nt : cfg.nts) {
                std::vector<double> samples;
                if (m == Metric::Delay) {
                    samples = delay_samples(cfg, p, nt, topo);
                } else {
                    const auto& cell = local.at({p, nt});
                    samples = m == Metric::Pcc ? cell.pcc : cell.ptc;
                }
                out.push_back({p, nt, cfg.factors, m, summarize(samples), write_raw(cfg, p, nt, m, samples)});
            }
    return out;
}

std::string bench_csv(const std::vector<BenchResult>& results)
{
    std::ostringstream os;
    os.precision(9);
    os << "protocol,nt,factors,metric,mean_ms,sem_ms,n\n";
    for (const auto& r : results)
        os << cost::protocol_name(r.protocol) << ',' << r.nt << ',' << r.factors << ',' << metric_name(r.metric)
           << ',' << r.stats.mean << ',' << r.stats.sem << ',' << r.stats.n << '\n';
    return os.str();
}

std::string bench_json(const std::vector<BenchResult>& results)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json j{{"protocol", cost::protocol_name(r.protocol)},
                         {"nt", r.nt},
                         {"factors", r.factors},
                         {"metric", metric_name(r.metric)},
                         {"mean_ms", r.stats.mean},
                         {"sem_ms", r.stats.sem},
                         {"n", r.stats.n}};
        if (r.raw_file)
            j["raw_file"] = r.raw_file->string();
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

cost::TimingProfile measure_primitives(std::size_t iterations)
{
    if (iterations == 0)
        throw std::invalid_argument("iterations must be at least 1");
    crypto::DeterministicRandom rng(99);
    const crypto::SymKey key = crypto::gen_session_key(rng);
    const auto n = static_cast<double>(iterations);

    bits::BitWriter w;
    w.put_bytes(crypto::gen_nonce(rng).bytes);
    const bits::BitString block = std::move(w).finish();  // 128 bits
    const crypto::Digest link = crypto::hash(block.bytes);
    crypto::Bytes krb_plain(49, 0x42);  // 392 bits, the largest Kerberos part

    cost::TimingProfile p;
    p.name = "measured";

    crypto::SealedBox box = crypto::sym_encrypt(key, block, rng);
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < iterations; ++i) {
        box = crypto::sym_encrypt(key, block, rng);
        (void)crypto::sym_decrypt(key, box);
    }
    p.t_se = ms_since(t0) / (2 * n);

    t0 = Clock::now();
    crypto::Digest d = link;
    for (std::size_t i = 0; i < iterations; ++i)
        d = crypto::hash(d.bytes);
    p.t_h = ms_since(t0) / n;

    t0 = Clock::now();
    for (std::size_t i = 0; i < iterations; ++i)
        d = crypto::hmac(key.bytes, d.bytes);
    p.t_hmac = ms_since(t0) / n;

    crypto::SealedBox kbox;
    t0 = Clock::now();
    for (std::size_t i = 0; i < iterations; ++i)
        kbox = crypto::kerberos_encrypt(key, crypto::KeyUsage::TgsRepEncPart, krb_plain, rng);
    p.t_kse = ms_since(t0) / n;

    t0 = Clock::now();
    for (std::size_t i = 0; i < iterations; ++i)
        (void)crypto::kerberos_decrypt(key, crypto::KeyUsage::TgsRepEncPart, kbox);
    p.t_ksd = ms_since(t0) / n;
    return p;
}

}  // namespace m2i::harness
