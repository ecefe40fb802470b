#include "m2i/harness/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>
#include <system_error>

namespace m2i::harness {
namespace {

constexpr std::size_t kMaxFrame = 1 << 20;

[[noreturn]] void sys_fail(const char* what) { throw std::system_error(errno, std::generic_category(), what); }

void set_nodelay(int fd)
{
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

Servers::Servers(const Topology& topo, protocol::Config config, crypto::RandomSource& rng, protocol::Clock clock)
    : as_id_(topo.as_id), tgs_id_(topo.tgs_id)
{
    if (as_id_ == tgs_id_)
        throw ConfigError("AS and TGS need distinct ids");
    std::shared_ptr<const protocol::Registry> reg = topo.registry;
    as_ = std::make_unique<protocol::AuthServer>(as_id_, reg, config, rng, clock);
    kerberos::KdcConfig kdc;
    kdc.realm = topo.realm;
    kdc.as_id = as_id_;
    kdc.tgs_id = tgs_id_;
    kdc.tgs_key = topo.tgs_key;
    kdc.delta_t = config.delta_t;
    kdc.lifetime = config.ticket_lifetime;
    kas_ = std::make_unique<kerberos::KerberosAs>(kdc, reg, rng, clock);
    tgs_ = std::make_unique<kerberos::Tgs>(kdc, reg, rng, clock);
    for (const auto& [id, d] : reg->devices()) {
        if (id == as_id_ || id == tgs_id_)
            throw ConfigError("device id " + std::to_string(id) + " collides with a server id");
        devices_.emplace(id, std::make_unique<protocol::TargetDevice>(d, config, rng, clock));
        kdevices_.emplace(id,
                          std::make_unique<kerberos::KerberosDevice>(d, topo.realm, config.delta_t, rng, clock));
    }
}

bool Servers::serves(std::uint32_t peer) const
{
    return peer == as_id_ || peer == tgs_id_ || devices_.count(peer) > 0;
}

std::optional<Bytes> Servers::dispatch(std::uint32_t peer, std::span<const std::uint8_t> frame,
                                       protocol::OpCounter* counter)
{
    const auto header = protocol::guarded([&] { return wire::decode_header(frame); });
    const bool krb = header.prot == wire::ProT::Kerberos;
    if (peer == as_id_)
        return krb ? kas_->handle(frame, counter) : as_->handle(frame, counter);
    if (peer == tgs_id_) {
        if (!krb)
            throw protocol::ProtocolError(protocol::Reason::UnexpectedMessage, "TGS only speaks Kerberos");
        return tgs_->handle(frame, counter);
    }
    auto it = devices_.find(peer);
    if (it == devices_.end())
        throw protocol::ProtocolError(protocol::Reason::UnknownPrincipal, "no such peer");
    if (krb)
        return kdevices_.at(peer)->handle(frame, counter);
    return it->second->handle(frame, counter);
}

std::optional<Bytes> InProcessChannel::deliver(std::uint32_t peer, const Bytes& frame)
{
    try {
        return servers_.dispatch(peer, frame, counter_);
    } catch (const protocol::ProtocolError& e) {
        rejections_.push_back({peer, e.reason(), e.what()});
        return std::nullopt;
    }
}

std::optional<Bytes> InProcessChannel::request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds)
{
    return deliver(peer, frame);
}

void InProcessChannel::post(std::uint32_t peer, const Bytes& frame) { deliver(peer, frame); }

std::optional<Bytes> RecordingChannel::request(std::uint32_t peer, const Bytes& frame,
                                               std::chrono::milliseconds timeout)
{
    frames_.push_back({peer, true, frame});
    auto rep = inner_.request(peer, frame, timeout);
    if (rep)
        frames_.push_back({peer, false, *rep});
    return rep;
}

void RecordingChannel::post(std::uint32_t peer, const Bytes& frame)
{
    frames_.push_back({peer, true, frame});
    inner_.post(peer, frame);
}

Bytes TamperChannel::pass(Bytes frame)
{
    if (seen_++ == target_ && !frame.empty()) {
        const std::size_t bit = bit_ % (frame.size() * 8);
        frame[bit / 8] ^= static_cast<std::uint8_t>(0x80u >> (bit % 8));
        fired_ = true;
    }
    return frame;
}

std::optional<Bytes> TamperChannel::request(std::uint32_t peer, const Bytes& frame,
                                            std::chrono::milliseconds timeout)
{
    auto rep = inner_.request(peer, pass(frame), timeout);
    if (rep)
        rep = pass(std::move(*rep));
    return rep;
}

void TamperChannel::post(std::uint32_t peer, const Bytes& frame) { inner_.post(peer, pass(frame)); }

// --- sockets ----------------------------------------------------------------

bool write_all(int fd, const Bytes& data)
{
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR)
            continue;
        if (n <= 0)
            return false;
        off += static_cast<std::size_t>(n);
    }
    return true;
}

std::optional<Bytes> read_frame(int fd, int timeout_ms)
{
    Bytes buf;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    std::uint8_t chunk[4096];
    for (;;) {
        // never read past the frame: the next one may already be queued behind it
        std::size_t want = 0;
        try {
            if (buf.size() < wire::kHeaderBytes) {
                want = wire::kHeaderBytes - buf.size();
            } else if (auto total = wire::frame_size(buf)) {
                if (*total > kMaxFrame)
                    return std::nullopt;
                if (buf.size() >= *total)
                    return buf;
                want = *total - buf.size();
            } else {
                const std::size_t count_at = wire::kHeaderBytes + wire::decode_header(buf).pay_l;
                if (count_at + 1 > kMaxFrame)
                    return std::nullopt;
                want = count_at + 1 - buf.size();
            }
        } catch (const std::exception&) {
            return std::nullopt;
        }
        if (timeout_ms >= 0) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0)
                return std::nullopt;
            pollfd p{fd, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(left.count()));
            if (r < 0 && errno == EINTR)
                continue;
            if (r <= 0)
                return std::nullopt;
        }
        want = std::min(want, sizeof chunk);
        const ssize_t n = ::recv(fd, chunk, want, 0);
        if (n < 0 && errno == EINTR)
            continue;
        if (n <= 0)
            return std::nullopt;
        buf.insert(buf.end(), chunk, chunk + n);
    }
}

TcpServer::TcpServer(Servers& servers, std::uint16_t port) : servers_(servers)
{
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        sys_fail("socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        ::close(listen_fd_);
        sys_fail("bind");
    }
    if (::listen(listen_fd_, 64) < 0) {
        ::close(listen_fd_);
        sys_fail("listen");
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start()
{
    acceptor_ = std::thread([this] { run(); });
}

void TcpServer::run()
{
    while (!stopping_) {
        pollfd p{listen_fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, 100);
        if (r <= 0)
            continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0)
            continue;
        set_nodelay(fd);
        std::lock_guard lock(mu_);
        conns_.push_back(fd);
        workers_.emplace_back([this, fd] { serve(fd); });
    }
}

void TcpServer::serve(int fd)
{
    while (!stopping_) {
        auto frame = read_frame(fd, -1);
        if (!frame)
            break;
        try {
            const auto header = wire::decode_header(*frame);
            if (auto rep = servers_.dispatch(header.id_r, *frame); rep && !write_all(fd, *rep))
                break;
        } catch (const std::exception&) {
            ++refused_;
            break;
        }
    }
    ::shutdown(fd, SHUT_RDWR);
}

void TcpServer::stop()
{
    if (listen_fd_ < 0)
        return;
    stopping_ = true;
    if (acceptor_.joinable())
        acceptor_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(mu_);
        for (int fd : conns_)
            ::shutdown(fd, SHUT_RDWR);
        workers.swap(workers_);
    }
    for (auto& t : workers)
        t.join();
    for (int fd : conns_)
        ::close(fd);
    conns_.clear();
    ::close(listen_fd_);
    listen_fd_ = -1;
}

void TcpServer::release()
{
    if (listen_fd_ >= 0)
        ::close(listen_fd_);
    listen_fd_ = -1;
}

TcpChannel::TcpChannel(std::uint16_t port, std::string host) : port_(port), host_(std::move(host)) {}

TcpChannel::~TcpChannel()
{
    for (auto& [peer, fd] : fds_)
        ::close(fd);
}

int TcpChannel::connection(std::uint32_t peer)
{
    if (auto it = fds_.find(peer); it != fds_.end())
        return it->second;
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
        sys_fail("socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::invalid_argument("bad host " + host_);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        ::close(fd);
        return -1;
    }
    set_nodelay(fd);
    fds_[peer] = fd;
    return fd;
}

void TcpChannel::drop(std::uint32_t peer)
{
    if (auto it = fds_.find(peer); it != fds_.end()) {
        ::close(it->second);
        fds_.erase(it);
    }
}

std::optional<Bytes> TcpChannel::request(std::uint32_t peer, const Bytes& frame, std::chrono::milliseconds timeout)
{
    const int fd = connection(peer);
    if (fd < 0)
        return std::nullopt;
    if (!write_all(fd, frame)) {
        drop(peer);
        return std::nullopt;
    }
    auto rep = read_frame(fd, static_cast<int>(timeout.count()));
    if (!rep)
        drop(peer);
    return rep;
}

void TcpChannel::post(std::uint32_t peer, const Bytes& frame)
{
    const int fd = connection(peer);
    if (fd >= 0 && !write_all(fd, frame))
        drop(peer);
}

}  // namespace m2i::harness
