#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mixplane/job.hpp"
#include "mixplane/protocol.hpp"

namespace mixplane {

// One thread per connection, requests answered in order. A connection binds
// to a single node identity with a register message.
class TcpServer {
public:
    TcpServer(std::shared_ptr<JobManager> jobs, const std::string& host, std::uint16_t port);
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const { return listener_.port(); }
    JobManager& jobs() { return *jobs_; }

    void stop();
    // Test hook: abruptly closes every open client connection; the server
    // keeps accepting new ones.
    void drop_connections();
    std::uint64_t connections_accepted() const { return accepted_; }

private:
    struct Connection;

    void accept_loop();
    void serve(std::shared_ptr<Connection> conn);
    void handle(Connection& conn, const proto::Frame& frame);

    std::shared_ptr<JobManager> jobs_;
    proto::Listener listener_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> accepted_{0};
    std::mutex mutex_;
    std::vector<std::shared_ptr<Connection>> connections_;
    std::vector<std::thread> workers_;
    // Feedback warnings already logged.
    std::set<std::string> warned_;
    std::thread acceptor_;
};

}  // namespace mixplane
