#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>

namespace takin {

// Blocking TCP stream with MSG_NOSIGNAL writes and TCP_NODELAY.
class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {
        if (fd_ >= 0) {
            int one = 1;
            ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        }
    }
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    TcpStream(TcpStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    TcpStream& operator=(TcpStream&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = other.fd_;
            other.fd_ = -1;
        }
        return *this;
    }
    ~TcpStream() { close(); }

    static TcpStream connect(const std::string& host, uint16_t port) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw std::runtime_error("net: socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            throw std::runtime_error("net: bad address " + host);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            const int err = errno;
            ::close(fd);
            throw std::runtime_error("net: connect to " + host + ":" + std::to_string(port) +
                                     " failed: " + std::strerror(err));
        }
        return TcpStream(fd);
    }

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    // returns bytes read; 0 on orderly shutdown
    size_t read_some(char* dst, size_t len) {
        while (true) {
            const ssize_t n = ::recv(fd_, dst, len, 0);
            if (n >= 0) return size_t(n);
            if (errno == EINTR) continue;
            return 0; // treat hard errors as EOF; framing layer reports truncation
        }
    }

    void write_all(const char* src, size_t len) {
        size_t off = 0;
        while (off < len) {
            const ssize_t n = ::send(fd_, src + off, len - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error(std::string("net: send failed: ") + std::strerror(errno));
            }
            off += size_t(n);
        }
    }
    void write_all(const std::string& data) { write_all(data.data(), data.size()); }

    void shutdown_read() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RD);
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener() = default;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    TcpListener(TcpListener&& other) noexcept : fd_(other.fd_), port_(other.port_) { other.fd_ = -1; }
    TcpListener& operator=(TcpListener&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = other.fd_;
            port_ = other.port_;
            other.fd_ = -1;
        }
        return *this;
    }
    ~TcpListener() { close(); }

    // port 0 binds an ephemeral port; bound_port() reports the result
    static TcpListener listen_on(uint16_t port, int backlog = 64) {
        TcpListener l;
        l.fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (l.fd_ < 0) throw std::runtime_error("net: socket() failed");
        int one = 1;
        ::setsockopt(l.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(l.fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw std::runtime_error("net: bind to port " + std::to_string(port) +
                                     " failed: " + std::strerror(errno));
        }
        if (::listen(l.fd_, backlog) != 0) throw std::runtime_error("net: listen failed");
        sockaddr_in bound{};
        socklen_t blen = sizeof(bound);
        ::getsockname(l.fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
        l.port_ = ntohs(bound.sin_port);
        return l;
    }

    uint16_t bound_port() const { return port_; }

    // Polls so a concurrent stop() is observed within ~50 ms.
    std::optional<TcpStream> accept(const std::atomic<bool>& stop) {
        while (!stop.load()) {
            pollfd pfd{fd_, POLLIN, 0};
            const int r = ::poll(&pfd, 1, 50);
            if (r < 0) {
                if (errno == EINTR) continue;
                return std::nullopt;
            }
            if (r == 0) continue;
            const int cfd = ::accept(fd_, nullptr, nullptr);
            if (cfd < 0) {
                if (errno == EINTR || errno == ECONNABORTED) continue;
                return std::nullopt;
            }
            return TcpStream(cfd);
        }
        return std::nullopt;
    }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

} // namespace takin
