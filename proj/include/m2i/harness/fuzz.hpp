#pragma once

#include "m2i/cost_model.hpp"
#include "m2i/harness/config.hpp"
#include "m2i/wire.hpp"

#include <string>
#include <vector>

namespace m2i::harness {

struct FuzzConfig {
    std::vector<cost::Protocol> protocols{cost::Protocol::P2P,       cost::Protocol::O2M,
                                          cost::Protocol::Kerberos,  cost::Protocol::P2PReauth,
                                          cost::Protocol::O2MReauth, cost::Protocol::KerberosReauth};
    unsigned nt = 2;
    std::size_t flips = 1000;  // per message type
    std::uint64_t seed = 1;
};

struct FuzzCell {
    cost::Protocol protocol = cost::Protocol::P2P;
    wire::MsgKind kind = wire::MsgKind::AsReq;
    std::size_t trials = 0;
    std::size_t terminated = 0;
    std::vector<std::string> survivors;  // "frame N bit B", first few only

    bool clean() const { return trials > 0 && terminated == trials; }
};

struct FuzzReport {
    std::vector<FuzzCell> cells;

    bool all_terminated() const;
    std::size_t trials() const;
    std::string csv() const;
};

/// Flips one random bit of one message per trial and checks that some party stops the run.
FuzzReport fuzz(const FuzzConfig& config);

}  // namespace m2i::harness
