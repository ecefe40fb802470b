#include "m2i/harness/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace m2i::harness {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in)
        throw ConfigError("cannot open " + file.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json parse(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad JSON: ") + e.what());
    }
}

crypto::SymKey key_of(const json& j, const char* field)
{
    try {
        return crypto::fixed_from_hex<crypto::SymKey>(j.at(field).get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("missing or bad key '") + field + "': " + e.what());
    } catch (const crypto::CryptoError& e) {
        throw ConfigError(std::string("bad key '") + field + "': " + e.what());
    }
}

loa::CloaAttributes cloa_of(const json& j)
{
    return {loa::LoaValue(j.value("dc", 1)), loa::LoaValue(j.value("av", 1)), loa::LoaValue(j.value("loc", 1))};
}

protocol::Mode mode_of(const std::string& s)
{
    if (s == "p2p")
        return protocol::Mode::P2P;
    if (s == "o2m")
        return protocol::Mode::O2M;
    throw ConfigError("unknown mode " + s);
}

template <class F>
auto wrap(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const json::exception& e) {
        throw ConfigError(e.what());
    } catch (const loa::LoaError& e) {
        throw ConfigError(e.what());
    } catch (const orchestrator::OrchestratorError& e) {
        throw ConfigError(e.what());
    } catch (const cost::CostError& e) {
        throw ConfigError(e.what());
    } catch (const crypto::CryptoError& e) {
        throw ConfigError(e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

Topology parse_registry(const std::string& json_text)
{
    const json j = parse(json_text);
    return wrap([&] {
        Topology t;
        t.registry = std::make_shared<protocol::Registry>();
        t.as_id = j.value("as_id", 1u);
        t.tgs_id = j.value("tgs_id", 2u);
        t.realm = j.value("realm", std::uint8_t{1});
        t.tgs_key = key_of(j, "tgs_key");

        std::map<std::uint32_t, std::pair<std::uint32_t, crypto::SymKey>> group_of;
        for (const auto& g : j.value("groups", json::array())) {
            protocol::Group grp{g.at("id").get<std::uint32_t>(), key_of(g, "key"),
                                g.at("members").get<std::vector<std::uint32_t>>()};
            for (auto m : grp.members)
                if (!group_of.emplace(m, std::make_pair(grp.id, grp.key)).second)
                    throw ConfigError("device " + std::to_string(m) + " is in more than one group");
            t.registry->add_group(std::move(grp));
        }
        for (const auto& d : j.at("devices")) {
            protocol::DeviceRecord rec;
            rec.id = d.at("id").get<std::uint32_t>();
            rec.long_term_key = key_of(d, "key");
            rec.device_class = protocol::parse_device_class(d.value("class", std::string("C2")));
            rec.attributes = cloa_of(d.value("cloa", json::object()));
            if (auto it = group_of.find(rec.id); it != group_of.end()) {
                rec.group_id = it->second.first;
                rec.group_key = it->second.second;
            }
            t.registry->add_device(std::move(rec));
        }
        for (const auto& [member, _] : group_of)
            if (!t.registry->device(member))
                throw ConfigError("group member " + std::to_string(member) + " is not a device");
        for (const auto& c : j.at("clients")) {
            protocol::ClientRecord rec;
            rec.id = c.at("id").get<std::uint32_t>();
            rec.device_class = protocol::parse_device_class(c.value("class", std::string("C2")));
            for (const auto& k : c.at("factor_keys"))
                rec.factor_keys.push_back(crypto::fixed_from_hex<crypto::SymKey>(k.get<std::string>()));
            if (rec.factor_keys.empty())
                throw ConfigError("client " + std::to_string(rec.id) + " has no factor keys");
            t.registry->add_client(std::move(rec));
        }
        return t;
    });
}

Topology load_registry(const std::filesystem::path& file) { return parse_registry(read_file(file)); }

Policy parse_policy(const std::string& json_text)
{
    const json j = parse(json_text);
    return wrap([&] {
        Policy p;
        for (const auto& m : j.value("methods", json::array())) {
            orchestrator::Method method;
            method.spec.method_id = m.at("id").get<std::string>();
            method.spec.loa = loa::LoaValue(m.at("loa").get<int>());
            method.factor = m.value("factor", std::size_t{0});
            if (m.contains("weight")) {
                const auto& w = m.at("weight");
                method.spec.weight = w.is_string() ? loa::Rational::parse(w.get<std::string>())
                                                   : loa::Rational::from_double(w.get<double>());
            } else {
                method.weighted = false;
            }
            p.catalog->add_method(std::move(method));
        }
        for (const auto& c : j.value("catalog", json::array()))
            p.catalog->add_combination(loa::LoaValue(c.at("rloa").get<int>()), mode_of(c.at("mode")),
                                       c.at("methods").get<std::vector<std::string>>());
        for (const auto& a : j.value("authz", json::array())) {
            const auto client = a.at("client").get<std::uint32_t>();
            const auto target = a.at("target").get<std::uint32_t>();
            if (a.value("allowed", true))
                p.authz->allow(client, target, a.value("restrictions", std::uint8_t{0}));
            else
                p.authz->deny(client, target);
        }
        const json cloa = j.value("device_cloa", json::object());
        for (const auto& [id, attrs] : cloa.items())
            p.cloa[static_cast<std::uint32_t>(std::stoul(id))] = cloa_of(attrs);
        return p;
    });
}

Policy load_policy(const std::filesystem::path& file) { return parse_policy(read_file(file)); }

void apply_cloa(protocol::Registry& registry, const Policy& policy)
{
    // Registry has no mutable lookup; rebuild the touched device records.
    protocol::Registry rebuilt;
    for (const auto& [id, g] : registry.groups())
        rebuilt.add_group(g);
    for (auto [id, d] : registry.devices()) {
        if (auto it = policy.cloa.find(id); it != policy.cloa.end())
            d.attributes = it->second;
        rebuilt.add_device(std::move(d));
    }
    for (const auto& [id, c] : registry.clients())
        rebuilt.add_client(c);
    for (const auto& [id, _] : policy.cloa)
        if (!registry.device(id))
            throw ConfigError("policy names unknown device " + std::to_string(id));
    registry = std::move(rebuilt);
}

ScenarioSpec parse_scenario(const std::string& json_text, const std::filesystem::path& base)
{
    const json j = parse(json_text);
    return wrap([&] {
        ScenarioSpec s;
        s.name = j.value("name", std::string("scenario"));
        s.registry = base / j.at("registry").get<std::string>();
        if (j.contains("policy"))
            s.policy = base / j.at("policy").get<std::string>();
        s.seed = j.value("seed", std::uint64_t{1});
        const std::string transport = j.value("transport", std::string("inproc"));
        if (transport == "inproc")
            s.transport = TransportKind::InProcess;
        else if (transport == "tcp")
            s.transport = TransportKind::Tcp;
        else
            throw ConfigError("unknown transport " + transport);
        s.chain_length = j.value("chain_length", std::size_t{1});
        if (j.contains("fixed_time"))
            s.fixed_time = j.at("fixed_time").get<std::uint32_t>();
        for (const auto& r : j.at("runs")) {
            RunSpec run;
            run.protocol = cost::parse_protocol(r.at("protocol").get<std::string>());
            if (cost::is_reauth(run.protocol))
                throw ConfigError("use \"reauth\": true with the base protocol");
            run.reauth = r.value("reauth", false);
            run.client = r.at("client").get<std::uint32_t>();
            run.targets = r.at("targets").get<std::vector<std::uint32_t>>();
            if (run.targets.empty())
                throw ConfigError("run names no targets");
            run.factors = r.value("factors", 1u);
            if (run.factors != 1 && run.factors != 2)
                throw ConfigError("factors must be 1 or 2");
            run.coordinate = r.value("coordinate", false);
            run.offered = r.value("offered", std::vector<std::string>{});
            if (r.contains("expect"))
                run.expect = r.at("expect").get<std::string>();
            if (run.coordinate && run.reauth)
                throw ConfigError("coordinated runs do not re-authenticate");
            if (run.coordinate && run.protocol == cost::Protocol::Kerberos)
                throw ConfigError("the Kerberos baseline is not coordinated");
            if (run.coordinate && !s.policy)
                throw ConfigError("coordinated runs need a policy file");
            if (r.contains("tamper"))
                run.tamper = std::make_pair(r.at("tamper").at("message").get<std::size_t>(),
                                            r.at("tamper").at("bit").get<std::size_t>());
            s.runs.push_back(std::move(run));
        }
        for (const auto& r : s.runs)
            if (r.reauth && r.protocol != cost::Protocol::Kerberos && s.chain_length < 2)
                throw ConfigError("re-authentication needs chain_length of at least 2");
        return s;
    });
}

ScenarioSpec load_scenario(const std::filesystem::path& file)
{
    return parse_scenario(read_file(file), file.parent_path());
}

Topology synthetic_topology(std::size_t devices, std::size_t clients, std::size_t factors, std::uint64_t seed)
{
    crypto::DeterministicRandom rng(seed);
    Topology t;
    t.registry = std::make_shared<protocol::Registry>();
    t.tgs_key = crypto::gen_session_key(rng);
    protocol::Group g{1, crypto::gen_session_key(rng), {}};
    for (std::size_t i = 0; i < devices; ++i)
        g.members.push_back(static_cast<std::uint32_t>(101 + i));
    for (auto id : g.members) {
        protocol::DeviceRecord d;
        d.id = id;
        d.long_term_key = crypto::gen_session_key(rng);
        d.group_id = g.id;
        d.group_key = g.key;
        t.registry->add_device(std::move(d));
    }
    t.registry->add_group(std::move(g));
    for (std::size_t i = 0; i < clients; ++i) {
        protocol::ClientRecord c;
        c.id = static_cast<std::uint32_t>(11 + i);
        for (std::size_t f = 0; f < factors; ++f)
            c.factor_keys.push_back(crypto::gen_session_key(rng));
        t.registry->add_client(std::move(c));
    }
    return t;
}

}  // namespace m2i::harness
