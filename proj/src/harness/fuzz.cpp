#include "m2i/harness/fuzz.hpp"

#include "m2i/harness/scenario.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

namespace m2i::harness {
namespace {

using cost::Protocol;

Protocol base_of(Protocol p)
{
    switch (p) {
    case Protocol::P2PReauth: return Protocol::P2P;
    case Protocol::O2MReauth: return Protocol::O2M;
    case Protocol::KerberosReauth: return Protocol::Kerberos;
    default: return p;
    }
}

}  // namespace

bool FuzzReport::all_terminated() const
{
    return !cells.empty() && std::all_of(cells.begin(), cells.end(), [](const FuzzCell& c) { return c.clean(); });
}

std::size_t FuzzReport::trials() const
{
    std::size_t n = 0;
    for (const auto& c : cells)
        n += c.trials;
    return n;
}

std::string FuzzReport::csv() const
{
    std::ostringstream os;
    os << "protocol,message,trials,terminated\n";
    for (const auto& c : cells)
        os << cost::protocol_name(c.protocol) << ',' << wire::kind_name(c.kind) << ',' << c.trials << ','
           << c.terminated << '\n';
    return os.str();
}

FuzzReport fuzz(const FuzzConfig& cfg)
{
    if (cfg.nt < 1)
        throw std::invalid_argument("nt must be at least 1");
    FuzzReport report;
    std::mt19937_64 pick(cfg.seed);
    const Topology topo = synthetic_topology(cfg.nt, 1, 1, cfg.seed);

    for (auto p : cfg.protocols) {
        const bool reauth = cost::is_reauth(p);
        LiveSettings settings;
        settings.seed = cfg.seed;
        settings.config.chain_length = reauth ? 2 : 1;
        // one refusal is all we need to see
        settings.config.retries = 0;
        LiveHarness h(topo, settings);

        RunSpec spec;
        spec.protocol = base_of(p);
        spec.reauth = reauth;
        spec.client = topo.registry->clients().begin()->first;
        for (const auto& [id, _] : topo.registry->devices())
            spec.targets.push_back(id);

        // honest run to learn the frame sequence of the phase under test
        const auto honest = h.run(spec);
        for (const auto& r : honest)
            if (!r.ok)
                throw std::runtime_error(std::string("honest run failed for ") + cost::protocol_name(p));
        const std::size_t offset = reauth ? honest.front().transcript.size() : 0;
        const auto& phase = honest.back().transcript;
        std::map<wire::MsgKind, std::vector<std::size_t>> by_kind;
        for (std::size_t i = 0; i < phase.size(); ++i)
            by_kind[phase[i].kind].push_back(i);

        for (const auto& [kind, indices] : by_kind) {
            FuzzCell cell;
            cell.protocol = p;
            cell.kind = kind;
            for (std::size_t t = 0; t < cfg.flips; ++t) {
                const std::size_t idx = indices[pick() % indices.size()];
                const std::size_t bit = pick() % (phase[idx].frame.size() * 8);
                RunSpec s = spec;
                s.tamper = std::make_pair(offset + idx, bit);
                const auto rs = h.run(s);
                ++cell.trials;
                bool stopped = false;
                for (const auto& r : rs)
                    stopped = stopped || !r.ok || r.server_rejections > 0;
                if (stopped)
                    ++cell.terminated;
                else if (cell.survivors.size() < 5)
                    cell.survivors.push_back("frame " + std::to_string(idx) + " bit " + std::to_string(bit));
            }
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

}  // namespace m2i::harness
