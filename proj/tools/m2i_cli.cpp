// m2i: cost model, live runs, benchmarks and tamper campaigns.

#include "m2i/cost_model.hpp"
#include "m2i/harness/bench.hpp"
#include "m2i/harness/config.hpp"
#include "m2i/harness/fuzz.hpp"
#include "m2i/harness/scenario.hpp"
#include "m2i/harness/transport.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace m2i;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void write_text(const std::filesystem::path& file, const std::string& text)
{
    if (file.has_parent_path())
        std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out)
        throw std::runtime_error("cannot write " + file.string());
    out << text;
}

cost::TimingProfile profile_named(const std::string& name)
{
    if (name == "reference")
        return cost::TimingProfile::reference();
    if (name == "measured")
        return harness::measure_primitives();
    throw CLI::ValidationError("--profile", "expected reference or measured");
}

std::vector<cost::Protocol> protocols_of(const std::vector<std::string>& names)
{
    std::vector<cost::Protocol> out;
    for (const auto& n : names)
        out.push_back(cost::parse_protocol(n));
    return out;
}

int print_results(const std::vector<harness::LiveResult>& rs)
{
    std::cout << harness::to_json(rs) << '\n';
    for (const auto& r : rs)
        if (!r.passed())
            return 1;
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"M2I authentication framework: cost model, live runs and benchmarks"};
    app.require_subcommand(1);

    // model
    auto* model = app.add_subcommand("model", "print closed-form cost reports");
    std::vector<std::string> model_protocols{"p2p", "o2m", "kerberos"};
    std::vector<unsigned> model_nts{3};
    unsigned model_factors = 1;
    std::string model_profile = "reference";
    std::string model_format = "json";
    model->add_option("--protocol", model_protocols, "protocols")->delimiter(',');
    model->add_option("--nt", model_nts, "target counts")->delimiter(',');
    model->add_option("--factors", model_factors)->check(CLI::Range(1, 2));
    model->add_option("--profile", model_profile, "reference or measured");
    model->add_option("--format", model_format)->check(CLI::IsMember({"json", "csv"}));

    // compare
    auto* compare = app.add_subcommand("compare", "side-by-side tables and plot data");
    unsigned compare_max = 400;
    std::string compare_profile = "reference";
    std::string compare_out = "compare";
    compare->add_option("--max-nt", compare_max)->check(CLI::PositiveNumber);
    compare->add_option("--profile", compare_profile, "reference or measured");
    compare->add_option("--out", compare_out, "output directory");

    // verify
    auto* verify = app.add_subcommand("verify", "live runs against the closed forms");
    unsigned verify_max = 10;
    std::uint64_t verify_seed = 1;
    std::string verify_scenario;
    verify->add_option("--max-nt", verify_max)->check(CLI::PositiveNumber);
    verify->add_option("--seed", verify_seed);
    verify->add_option("--scenario", verify_scenario, "run a scenario file instead of the grid")
        ->check(CLI::ExistingFile);

    // bench
    auto* benchc = app.add_subcommand("bench", "PCC, PTC and delay with mean and SEM");
    harness::BenchConfig bcfg;
    std::vector<std::string> bench_protocols{"p2p", "o2m", "kerberos"};
    std::vector<std::string> bench_metrics{"pcc", "ptc", "delay"};
    std::string bench_out;
    std::string bench_raw;
    bool bench_primitives = false;
    benchc->add_option("--protocol", bench_protocols)->delimiter(',');
    benchc->add_option("--nt", bcfg.nts)->delimiter(',');
    benchc->add_option("--factors", bcfg.factors)->check(CLI::Range(1, 2));
    benchc->add_option("-n,--iterations", bcfg.iterations)->check(CLI::PositiveNumber);
    benchc->add_option("--warmup", bcfg.warmup);
    benchc->add_option("--seed", bcfg.seed);
    benchc->add_option("--metric", bench_metrics)->delimiter(',');
    benchc->add_option("--out", bench_out, "CSV summary file");
    benchc->add_option("--raw-dir", bench_raw, "directory for per-iteration samples");
    benchc->add_flag("--primitives", bench_primitives, "also print the local primitive profile");

    // fuzz
    auto* fuzzc = app.add_subcommand("fuzz", "single-bit tamper campaign");
    harness::FuzzConfig fcfg;
    fuzzc->add_option("--flips", fcfg.flips, "flips per message type")->check(CLI::PositiveNumber);
    fuzzc->add_option("--nt", fcfg.nt)->check(CLI::PositiveNumber);
    fuzzc->add_option("--seed", fcfg.seed);

    // serve
    auto* serve = app.add_subcommand("serve", "AS, TGS and devices on loopback TCP");
    std::string serve_registry;
    std::string serve_policy;
    std::uint16_t serve_port = 0;
    std::size_t serve_chain = 2;
    serve->add_option("--registry", serve_registry)->required()->check(CLI::ExistingFile);
    serve->add_option("--policy", serve_policy, "CLoA overrides")->check(CLI::ExistingFile);
    serve->add_option("--port", serve_port);
    serve->add_option("--chain-length", serve_chain);

    // client
    auto* client = app.add_subcommand("client", "one authentication run against `serve`");
    std::string client_registry;
    std::uint16_t client_port = 0;
    std::string client_protocol = "p2p";
    std::uint32_t client_id = 0;
    std::vector<std::uint32_t> client_targets;
    unsigned client_factors = 1;
    bool client_reauth = false;
    std::size_t client_chain = 2;
    client->add_option("--registry", client_registry)->required()->check(CLI::ExistingFile);
    client->add_option("--port", client_port)->required();
    client->add_option("--protocol", client_protocol)->check(CLI::IsMember({"p2p", "o2m", "kerberos"}));
    client->add_option("--client", client_id)->required();
    client->add_option("--targets", client_targets)->required()->delimiter(',');
    client->add_option("--factors", client_factors)->check(CLI::Range(1, 2));
    client->add_flag("--reauth", client_reauth);
    client->add_option("--chain-length", client_chain);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*model) {
            const auto profile = profile_named(model_profile);
            std::vector<cost::CostReport> rows;
            for (const auto& p : protocols_of(model_protocols))
                for (auto nt : model_nts)
                    rows.push_back(cost::report(p, nt, model_factors, &profile));
            if (model_format == "json") {
                std::cout << cost::to_json(rows) << '\n';
            } else {
                std::cout << cost::csv_header() << '\n';
                for (const auto& r : rows)
                    std::cout << cost::to_csv_row(r) << '\n';
            }
            return 0;
        }

        if (*compare) {
            const auto profile = profile_named(compare_profile);
            const std::filesystem::path dir = compare_out;
            for (unsigned f : {1u, 2u}) {
                std::string table = cost::compare_csv_header() + "\n";
                std::map<std::string, std::string> plots;
                for (unsigned nt = 1; nt <= compare_max; ++nt) {
                    const auto row = cost::compare_at(nt, f, profile);
                    table += cost::to_csv_row(row) + "\n";
                    for (const auto& r : row.reports) {
                        const std::string name = cost::protocol_name(r.protocol);
                        plots["comm_" + name] += std::to_string(nt) + " " + std::to_string(r.comm_bits) + "\n";
                        plots["pcc_" + name] += std::to_string(nt) + " " + std::to_string(*r.pcc_ms) + "\n";
                    }
                }
                const std::string suffix = "_f" + std::to_string(f);
                write_text(dir / ("compare" + suffix + ".csv"), table);
                for (const auto& [name, data] : plots)
                    write_text(dir / "plot" / (name + suffix + ".dat"), "# nt value\n" + data);
            }
            std::cout << "wrote " << (dir / "compare_f1.csv").string() << ", " << (dir / "compare_f2.csv").string()
                      << " and plot data under " << (dir / "plot").string() << '\n';
            for (unsigned nt : {10u, 50u, 100u, 200u, 400u}) {
                if (nt > compare_max)
                    break;
                const auto r = cost::compare_at(nt, 1, profile);
                std::cout << "NT=" << nt << "  comm O2M vs Kerberos -" << r.o2m_vs_kerberos_comm
                          << "%  PCC P2P vs Kerberos -" << r.p2p_vs_kerberos_pcc << "%  PCC O2M vs Kerberos -"
                          << r.o2m_vs_kerberos_pcc << "%  re-auth PCC -" << r.reauth_pcc_reduction
                          << "%  re-auth comm +" << r.reauth_comm_increase << "%\n";
            }
            return 0;
        }

        if (*verify) {
            if (!verify_scenario.empty()) {
                const auto res = harness::run_scenario(harness::load_scenario(verify_scenario));
                std::cout << harness::to_json(res.results) << '\n';
                std::cerr << res.name << ": " << (res.passed() ? "pass" : "FAIL") << '\n';
                return res.passed() ? 0 : 1;
            }
            const auto rs = harness::verify_grid(verify_max, verify_seed);
            std::size_t bad = 0;
            for (const auto& r : rs)
                if (!r.passed()) {
                    ++bad;
                    std::cerr << "mismatch: " << cost::protocol_name(r.protocol) << " nt=" << r.nt
                              << " factors=" << r.factors << " bits " << r.live_bits << "/" << r.oracle.comm_bits
                              << " ops " << (r.live_ops ? r.live_ops->str() : "-") << "/" << r.expected.str()
                              << '\n';
                }
            std::cout << rs.size() - bad << "/" << rs.size() << " live runs match the closed forms\n";
            return bad == 0 ? 0 : 1;
        }

        if (*benchc) {
            bcfg.protocols = protocols_of(bench_protocols);
            bcfg.metrics.clear();
            for (const auto& m : bench_metrics)
                bcfg.metrics.push_back(harness::parse_metric(m));
            if (!bench_raw.empty())
                bcfg.raw_dir = bench_raw;
            if (bench_primitives) {
                const auto p = harness::measure_primitives();
                std::cout << "T_SE " << p.t_se << " ms, T_H " << p.t_h << " ms, T_HMAC " << p.t_hmac << " ms, T_KSE "
                          << p.t_kse << " ms, T_KSD " << p.t_ksd << " ms\n";
            }
            const auto rs = harness::bench(bcfg);
            const std::string csv = harness::bench_csv(rs);
            if (!bench_out.empty())
                write_text(bench_out, csv);
            std::cout << csv;
            return 0;
        }

        if (*fuzzc) {
            const auto rep = harness::fuzz(fcfg);
            std::cout << rep.csv();
            for (const auto& c : rep.cells)
                for (const auto& s : c.survivors)
                    std::cerr << "survived: " << cost::protocol_name(c.protocol) << ' ' << wire::kind_name(c.kind)
                              << ' ' << s << '\n';
            std::cout << rep.trials() << " tampered runs, " << (rep.all_terminated() ? "all" : "NOT all")
                      << " terminated\n";
            return rep.all_terminated() ? 0 : 1;
        }

        if (*serve) {
            auto topo = harness::load_registry(serve_registry);
            if (!serve_policy.empty())
                harness::apply_cloa(*topo.registry, harness::load_policy(serve_policy));
            crypto::SystemRandom rng;
            protocol::Config cfg;
            cfg.chain_length = serve_chain;
            harness::Servers servers(topo, cfg, rng, protocol::system_clock());
            harness::TcpServer server(servers, serve_port);
            std::signal(SIGINT, [](int) { g_stop = 1; });
            std::signal(SIGTERM, [](int) { g_stop = 1; });
            server.start();
            std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
            while (!g_stop)
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
            std::cout << "refused " << server.refused() << " frames\n";
            return 0;
        }

        if (*client) {
            const auto topo = harness::load_registry(client_registry);
            const auto* rec = topo.registry->client(client_id);
            if (!rec)
                throw std::runtime_error("unknown client " + std::to_string(client_id));
            crypto::SystemRandom rng;
            harness::TcpChannel ch(client_port);
            protocol::Config cfg;
            cfg.chain_length = client_chain;
            std::vector<harness::LiveResult> results;
            auto record = [&](cost::Protocol p, unsigned factors, const protocol::RunOutcome& o) {
                harness::LiveResult r;
                r.protocol = p;
                r.client = client_id;
                r.nt = static_cast<unsigned>(client_targets.size());
                r.factors = factors;
                r.ok = o.ok;
                r.reason = o.reason;
                r.live_bits = o.accounted_bits();
                r.transcript = o.transcript;
                r.oracle = cost::report(p, r.nt, factors);
                r.expected = harness::expected_ops(p, r.nt, factors, client_chain);
                results.push_back(std::move(r));
            };
            if (client_protocol == "kerberos") {
                kerberos::KerberosClientEnv env;
                env.as_id = topo.as_id;
                env.tgs_id = topo.tgs_id;
                env.realm = topo.realm;
                env.config = cfg;
                env.rng = &rng;
                env.clock = protocol::system_clock();
                kerberos::KerberosClient kc(client_id, rec->factor_keys.front(), env);
                record(cost::Protocol::Kerberos, client_factors, kc.run(ch, client_targets, client_factors));
                if (client_reauth)
                    record(cost::Protocol::KerberosReauth, client_factors, kc.reauth(ch));
                return print_results(results);
            }
            const bool p2p = client_protocol == "p2p";
            protocol::ClientEnv env{topo.as_id, cfg, &rng, protocol::system_clock(), nullptr};
            std::vector<protocol::Client> clients;
            for (unsigned f = 0; f < client_factors; ++f)
                clients.emplace_back(protocol::ClientIdentity{client_id, rec->factor_keys.at(f)}, env);
            protocol::RunOutcome all{true, std::nullopt, {}, {}};
            for (auto& o : protocol::run_two_factor(clients, {}, p2p ? protocol::Mode::P2P : protocol::Mode::O2M,
                                                    client_targets, ch)
                               .factors)
                protocol::merge_into(all, std::move(o));
            record(p2p ? cost::Protocol::P2P : cost::Protocol::O2M, client_factors, all);
            if (client_reauth) {
                protocol::RunOutcome re{true, std::nullopt, {}, {}};
                for (auto& c : clients)
                    protocol::merge_into(re, c.reauthenticate(ch));
                record(p2p ? cost::Protocol::P2PReauth : cost::Protocol::O2MReauth, client_factors, re);
            }
            return print_results(results);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
