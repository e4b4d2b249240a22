#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixplane/chunk.hpp"
#include "mixplane/job.hpp"
#include "mixplane/processing.hpp"
#include "mixplane/protocol.hpp"

namespace mixplane {

struct ClientOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    proto::Backoff backoff;
};

// An error reported by the server (as opposed to a transport failure).
class ServerError : public Error {
public:
    ServerError(std::string kind, const std::string& what) : Error(what), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Request/response over one TCP connection. Transport failures reconnect
// with exponential backoff, re-register the bound identity and resend; every
// request the client library sends is safe to repeat.
class Connection {
public:
    explicit Connection(ClientOptions options);

    void bind(const NodeIdentity& id);
    nlohmann::json call(proto::Task task, const nlohmann::json& request);

    struct ChunkFetch {
        bool end = false;
        std::uint64_t chunk_id = 0;
        std::uint64_t position = 0;
        std::uint64_t skip = 0;
        std::string bytes;
    };
    ChunkFetch fetch_chunk(const nlohmann::json& request);

    // Whether the last call needed more than one attempt.
    bool last_call_retried() const { return retried_; }
    std::uint64_t reconnects() const { return connects_ > 0 ? connects_ - 1 : 0; }
    // Test hook: drops the socket as if the network failed.
    void drop() { socket_.shutdown(); }

private:
    template <typename F>
    auto with_retry(F&& op);
    void connect();

    ClientOptions options_;
    proto::Socket socket_;
    std::optional<NodeIdentity> identity_;
    bool retried_ = false;
    std::uint64_t connects_ = 0;
};

// Control-plane calls: submit, feedback, checkpoint, restore.
class ControlClient {
public:
    explicit ControlClient(ClientOptions options) : conn_(std::move(options)) {}

    nlohmann::json submit(const std::string& job_id, const nlohmann::json& query, const QueryArgs& args);
    FeedbackAck feedback(const std::string& job_id, std::uint64_t step, const std::vector<DomainFeedback>& losses);
    std::string checkpoint(const std::string& job_id);
    void restore(const std::string& checkpoint_id, const std::map<std::string, std::uint64_t>& progress);

    Connection& connection() { return conn_; }

private:
    Connection conn_;
};

struct ResultStreamingArgs {
    std::string job_id;
    std::uint32_t group = 0;
    std::uint32_t node = 0;
    std::uint32_t worker = 0;
    Mode mode = Mode::Overall;
    std::uint64_t window_size = 0;
    bool strict_window = true;
    std::uint64_t sequence_length = 0;
    std::size_t prefetch_depth = 0;
    std::shared_ptr<const Tokenizer> tokenizer;
    // Continue from the server's record of this worker's in-flight chunk.
    bool resume = false;

    NodeIdentity identity() const { return {job_id, group, node, worker}; }
};

struct StreamItem {
    std::string payload;
    std::uint32_t key = 0;
    std::string key_name;
    std::uint64_t chunk_id = 0;
    FileId file = 0;
    SampleId sample = 0;

    bool operator==(const StreamItem&) const = default;
};

// Outer iteration over the worker's chunks, inner iteration over each chunk's
// samples (or token sequences) in the configured processing mode.
class ResultStream {
public:
    ResultStream(ClientOptions options, ResultStreamingArgs args);
    ~ResultStream();

    // Overall and window modes.
    std::optional<StreamItem> next();
    // Tokenized mode.
    std::optional<TokenBatchItem> next_tokens();

    const ResultStreamingArgs& args() const { return args_; }
    // Keys of the current chunk, indexed by StreamItem::key / TokenBatchItem::key.
    const std::vector<MixtureKey>& keys() const { return keys_; }
    const Chunk* chunk() const { return chunk_ ? &*chunk_ : nullptr; }
    std::optional<std::uint64_t> position() const { return position_; }
    // Items yielded (or skipped on resume) from the current chunk.
    std::uint64_t samples_yielded() const { return yielded_; }
    bool ended() const { return ended_; }

    std::uint64_t chunks_received() const { return chunks_; }
    std::uint64_t hot_path_opens() const;
    std::uint64_t skipped_empty() const { return skipped_empty_; }
    std::uint64_t incomplete_windows() const { return incomplete_; }
    Connection& connection() { return conn_; }

private:
    bool advance();
    std::uint64_t items_in_chunk() const;

    ResultStreamingArgs args_;
    Connection conn_;
    std::optional<Chunk> chunk_;
    std::vector<MixtureKey> keys_;
    std::vector<std::string> key_names_;
    std::vector<SamplePointer> order_;
    std::vector<TokenBatchItem> tokens_;
    std::unique_ptr<ChunkPayloads> payloads_;
    std::optional<std::uint64_t> position_;
    std::uint64_t yielded_ = 0;
    bool ended_ = false;
    std::uint64_t chunks_ = 0;
    std::uint64_t hot_opens_done_ = 0;
    std::uint64_t skipped_empty_ = 0;
    std::uint64_t incomplete_ = 0;
};

}  // namespace mixplane
