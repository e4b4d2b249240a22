#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mixplane/util.hpp"

namespace mixplane::proto {

// Frame: 4-byte big-endian payload length, 1-byte task id, payload.
enum class Task : std::uint8_t {
    Error = 0x00,
    Register = 0x01,
    Submit = 0x02,
    NextChunk = 0x03,
    Feedback = 0x04,
    Checkpoint = 0x05,
    Restore = 0x06,
    EndOfData = 0x07,
};

const char* task_name(Task t);

inline constexpr std::size_t max_payload = std::size_t{256} << 20;
// Chunk bytes are streamed as consecutive data frames of at most this size.
inline constexpr std::size_t data_frame_size = std::size_t{1} << 20;

struct Frame {
    Task task = Task::Error;
    std::string payload;
};

// Owning TCP socket. Transport failures raise ProtocolError.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    static Socket connect(const std::string& host, std::uint16_t port);

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }
    void close();
    // Unblocks a reader on another thread without releasing the descriptor.
    void shutdown();

    void send_all(const void* data, std::size_t n);
    // false on orderly EOF before the first byte; throws on EOF mid-read.
    bool recv_all(void* data, std::size_t n);

private:
    int fd_ = -1;
};

class Listener {
public:
    Listener(const std::string& host, std::uint16_t port);
    ~Listener() { close(); }
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    std::uint16_t port() const { return port_; }
    // Invalid socket once the listener has been closed.
    Socket accept();
    void close();

private:
    std::atomic<int> fd_{-1};
    std::uint16_t port_ = 0;
};

void send_frame(Socket& s, Task task, std::string_view payload);
void send_json(Socket& s, Task task, const nlohmann::json& j);
// nullopt on orderly EOF between frames.
std::optional<Frame> recv_frame(Socket& s);

// Header frame followed by the chunk bytes in data frames.
void send_chunk(Socket& s, const nlohmann::json& header, std::string_view bytes);
std::string recv_chunk_body(Socket& s, std::size_t size);

struct Backoff {
    std::chrono::duration<double> base{0.5};
    double factor = 2.0;
    std::chrono::duration<double> cap{30.0};
    int max_attempts = 8;

    // Delay before attempt `attempt` (0-based; attempt 0 has no delay).
    std::chrono::duration<double> delay(int attempt) const;
};

}  // namespace mixplane::proto
