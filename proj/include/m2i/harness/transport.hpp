#pragma once

#include "m2i/harness/config.hpp"
#include "m2i/kerberos.hpp"
#include "m2i/protocol.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace m2i::harness {

using protocol::Bytes;

/// Every server role of a deployment. Frames are routed by recipient id, then by protocol:
/// Kerberos frames to the Kerberos AS/TGS/device, the rest to the M2I AS/device.
class Servers {
public:
    Servers(const Topology& topo, protocol::Config config, crypto::RandomSource& rng, protocol::Clock clock);

    protocol::AuthServer& auth_server() { return *as_; }
    kerberos::KerberosAs& kerberos_as() { return *kas_; }
    kerberos::Tgs& tgs() { return *tgs_; }
    protocol::TargetDevice& device(std::uint32_t id) { return *devices_.at(id); }
    kerberos::KerberosDevice& kerberos_device(std::uint32_t id) { return *kdevices_.at(id); }

    bool serves(std::uint32_t peer) const;
    /// Reply frame, nullopt for messages without one. Throws ProtocolError when the server refuses.
    std::optional<Bytes> dispatch(std::uint32_t peer, std::span<const std::uint8_t> frame,
                                  protocol::OpCounter* counter = nullptr);

private:
    std::uint32_t as_id_;
    std::uint32_t tgs_id_;
    std::unique_ptr<protocol::AuthServer> as_;
    std::unique_ptr<kerberos::KerberosAs> kas_;
    std::unique_ptr<kerberos::Tgs> tgs_;
    std::map<std::uint32_t, std::unique_ptr<protocol::TargetDevice>> devices_;
    std::map<std::uint32_t, std::unique_ptr<kerberos::KerberosDevice>> kdevices_;
};

struct Rejection {
    std::uint32_t peer = 0;
    protocol::Reason reason = protocol::Reason::Malformed;
    std::string what;
};

/// Direct calls into a Servers instance. Server-side operations go to `server_counter`.
class InProcessChannel final : public protocol::Channel {
public:
    explicit InProcessChannel(Servers& servers, protocol::OpCounter* server_counter = nullptr)
        : servers_(servers), counter_(server_counter)
    {
    }

    std::optional<Bytes> request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds timeout) override;
    void post(std::uint32_t peer, const Bytes& frame) override;

    void set_counter(protocol::OpCounter* c) { counter_ = c; }
    const std::vector<Rejection>& rejections() const { return rejections_; }
    void clear_rejections() { rejections_.clear(); }

private:
    std::optional<Bytes> deliver(std::uint32_t peer, const Bytes& frame);

    Servers& servers_;
    protocol::OpCounter* counter_;
    std::vector<Rejection> rejections_;
};

struct RecordedFrame {
    std::uint32_t peer = 0;
    bool from_client = true;
    Bytes frame;
};

/// Keeps a copy of every frame in both directions.
class RecordingChannel final : public protocol::Channel {
public:
    explicit RecordingChannel(protocol::Channel& inner) : inner_(inner) {}

    std::optional<Bytes> request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds timeout) override;
    void post(std::uint32_t peer, const Bytes& frame) override;

    const std::vector<RecordedFrame>& frames() const { return frames_; }

private:
    protocol::Channel& inner_;
    std::vector<RecordedFrame> frames_;
};

/// Flips one bit of the n-th frame crossing the channel (requests and replies counted in order).
class TamperChannel final : public protocol::Channel {
public:
    TamperChannel(protocol::Channel& inner, std::size_t frame_index, std::size_t bit)
        : inner_(inner), target_(frame_index), bit_(bit)
    {
    }

    std::optional<Bytes> request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds timeout) override;
    void post(std::uint32_t peer, const Bytes& frame) override;

    bool fired() const { return fired_; }

private:
    Bytes pass(Bytes frame);

    protocol::Channel& inner_;
    std::size_t target_;
    std::size_t bit_;
    std::size_t seen_ = 0;
    bool fired_ = false;
};

/// Loopback TCP listener serving every role of a Servers instance. A refused frame closes its connection.
class TcpServer {
public:
    /// Binds 127.0.0.1:`port` (0 picks a free port). Does not accept until start() or run().
    TcpServer(Servers& servers, std::uint16_t port = 0);
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const { return port_; }
    void start();  // accept loop on a background thread
    void run();    // accept loop on the calling thread, until stop()
    void stop();
    /// Closes the listening socket without shutting it down; for the parent side of a fork.
    void release();

    std::size_t refused() const { return refused_.load(); }

private:
    void serve(int fd);

    Servers& servers_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> refused_{0};
    std::thread acceptor_;
    std::mutex mu_;
    std::vector<int> conns_;
    std::vector<std::thread> workers_;
};

/// Client side of TcpServer: one connection per peer, opened on first use.
class TcpChannel final : public protocol::Channel {
public:
    explicit TcpChannel(std::uint16_t port, std::string host = "127.0.0.1");
    ~TcpChannel() override;
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    std::optional<Bytes> request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds timeout) override;
    void post(std::uint32_t peer, const Bytes& frame) override;

private:
    int connection(std::uint32_t peer);
    void drop(std::uint32_t peer);

    std::uint16_t port_;
    std::string host_;
    std::map<std::uint32_t, int> fds_;
};

/// Reads one frame; nullopt on EOF, error, oversize frame or timeout (negative timeout waits forever).
std::optional<Bytes> read_frame(int fd, int timeout_ms);
bool write_all(int fd, const Bytes& data);

}  // namespace m2i::harness
