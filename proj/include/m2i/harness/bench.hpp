#pragma once

#include "m2i/cost_model.hpp"
#include "m2i/harness/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace m2i::harness {

enum class Metric { Pcc, Ptc, Delay };

const char* metric_name(Metric m);
Metric parse_metric(const std::string& s);

struct BenchConfig {
    std::vector<cost::Protocol> protocols{cost::Protocol::P2P, cost::Protocol::O2M, cost::Protocol::Kerberos};
    std::vector<unsigned> nts{1, 5, 10};
    unsigned factors = 1;
    std::size_t iterations = 7000;
    std::size_t warmup = 100;
    std::uint64_t seed = 1;
    std::vector<Metric> metrics{Metric::Pcc, Metric::Ptc, Metric::Delay};
    /// One CSV of raw samples per (protocol, nt, metric) when set.
    std::optional<std::filesystem::path> raw_dir;
};

struct Stats {
    double mean = 0;
    double sem = 0;  // sample standard deviation / sqrt(n)
    std::size_t n = 0;
};

Stats summarize(const std::vector<double>& samples);

struct BenchResult {
    cost::Protocol protocol = cost::Protocol::P2P;
    unsigned nt = 1;
    unsigned factors = 1;
    Metric metric = Metric::Pcc;
    Stats stats;  // milliseconds
    std::optional<std::filesystem::path> raw_file;
};

/// PCC and PTC run every role in this process; delay talks to a forked server process over loopback TCP.
std::vector<BenchResult> bench(const BenchConfig& config);

std::string bench_csv(const std::vector<BenchResult>& results);
std::string bench_json(const std::vector<BenchResult>& results);

/// Mean time of each primitive on this machine, in milliseconds.
cost::TimingProfile measure_primitives(std::size_t iterations = 10000);

}  // namespace m2i::harness
