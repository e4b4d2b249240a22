#include "mixplane/protocol.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace mixplane::proto {

const char* task_name(Task t) {
    switch (t) {
        case Task::Error: return "error";
        case Task::Register: return "register";
        case Task::Submit: return "submit_query";
        case Task::NextChunk: return "next_chunk";
        case Task::Feedback: return "feedback";
        case Task::Checkpoint: return "checkpoint";
        case Task::Restore: return "restore";
        case Task::EndOfData: return "end_of_data";
    }
    return "unknown";
}

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

Socket Socket::connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw ProtocolError("resolve " + host + ": " + ::gai_strerror(rc));
    }
    std::string last = "no address";
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last = std::strerror(errno);
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            ::freeaddrinfo(res);
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(fd);
        }
        last = std::strerror(errno);
        ::close(fd);
    }
    ::freeaddrinfo(res);
    throw ProtocolError("connect " + host + ":" + service + ": " + last);
}

void Socket::send_all(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
        const ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw ProtocolError(std::string("send: ") + std::strerror(errno));
        }
        p += w;
        n -= static_cast<std::size_t>(w);
    }
}

bool Socket::recv_all(void* data, std::size_t n) {
    char* p = static_cast<char*>(data);
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd_, p + got, n - got, 0);
        if (r < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw ProtocolError(std::string("recv: ") + std::strerror(errno));
        }
        if (r == 0) {
            if (got == 0) {
                return false;
            }
            throw ProtocolError("connection closed mid-frame");
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

Listener::Listener(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw ProtocolError("resolve " + host + ": " + ::gai_strerror(rc));
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0) {
        ::freeaddrinfo(res);
        throw ProtocolError(std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd_.load(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd_.load(), res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd_.load(), 128) != 0) {
        const std::string err = std::strerror(errno);
        ::freeaddrinfo(res);
        ::close(fd_.exchange(-1));
        throw ProtocolError("listen on " + host + ":" + service + ": " + err);
    }
    ::freeaddrinfo(res);
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_.load(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Socket Listener::accept() {
    for (;;) {
        const int fd = fd_;
        if (fd < 0) {
            return Socket();
        }
        int c = ::accept(fd, nullptr, nullptr);
        if (c >= 0) {
            int one = 1;
            ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(c);
        }
        if (errno == EINTR || errno == ECONNABORTED) {
            continue;
        }
        return Socket();
    }
}

void Listener::close() {
    const int fd = fd_.exchange(-1);
    if (fd >= 0) {
        ::shutdown(fd, SHUT_RDWR);
        ::close(fd);
    }
}

void send_frame(Socket& s, Task task, std::string_view payload) {
    if (payload.size() > max_payload) {
        throw ProtocolError("frame payload of " + std::to_string(payload.size()) + " bytes exceeds the limit");
    }
    unsigned char header[5];
    const auto n = static_cast<std::uint32_t>(payload.size());
    header[0] = static_cast<unsigned char>(n >> 24);
    header[1] = static_cast<unsigned char>(n >> 16);
    header[2] = static_cast<unsigned char>(n >> 8);
    header[3] = static_cast<unsigned char>(n);
    header[4] = static_cast<unsigned char>(task);
    std::string buf(reinterpret_cast<const char*>(header), sizeof header);
    buf.append(payload);
    s.send_all(buf.data(), buf.size());
}

void send_json(Socket& s, Task task, const nlohmann::json& j) { send_frame(s, task, j.dump()); }

std::optional<Frame> recv_frame(Socket& s) {
    unsigned char header[5];
    if (!s.recv_all(header, sizeof header)) {
        return std::nullopt;
    }
    const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                            (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
    if (n > max_payload) {
        throw ProtocolError("incoming frame of " + std::to_string(n) + " bytes exceeds the limit");
    }
    if (header[4] > static_cast<unsigned char>(Task::EndOfData)) {
        throw ProtocolError("unknown task id " + std::to_string(header[4]));
    }
    Frame f;
    f.task = static_cast<Task>(header[4]);
    f.payload.resize(n);
    if (n > 0 && !s.recv_all(f.payload.data(), n)) {
        throw ProtocolError("connection closed mid-frame");
    }
    return f;
}

void send_chunk(Socket& s, const nlohmann::json& header, std::string_view bytes) {
    send_json(s, Task::NextChunk, header);
    for (std::size_t off = 0; off < bytes.size(); off += data_frame_size) {
        send_frame(s, Task::NextChunk, bytes.substr(off, data_frame_size));
    }
}

std::string recv_chunk_body(Socket& s, std::size_t size) {
    std::string out;
    out.reserve(size);
    while (out.size() < size) {
        auto f = recv_frame(s);
        if (!f) {
            throw ProtocolError("connection closed inside a chunk");
        }
        if (f->task != Task::NextChunk) {
            throw ProtocolError(std::string("unexpected ") + task_name(f->task) + " frame inside a chunk");
        }
        out += f->payload;
    }
    if (out.size() != size) {
        throw ProtocolError("chunk body longer than announced");
    }
    return out;
}

std::chrono::duration<double> Backoff::delay(int attempt) const {
    if (attempt <= 0) {
        return std::chrono::duration<double>(0);
    }
    const double d = base.count() * std::pow(factor, attempt - 1);
    return std::chrono::duration<double>(std::min(d, cap.count()));
}

}  // namespace mixplane::proto
