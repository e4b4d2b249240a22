#include "mixplane/client.hpp"

#include <thread>

namespace mixplane {

using nlohmann::json;
using proto::Task;

Connection::Connection(ClientOptions options) : options_(std::move(options)) {}

void Connection::connect() {
    socket_ = proto::Socket::connect(options_.host, options_.port);
    ++connects_;
    if (identity_) {
        proto::send_json(socket_, Task::Register,
                         {{"job_id", identity_->job_id},
                          {"group", identity_->group},
                          {"node", identity_->node},
                          {"worker", identity_->worker}});
        auto reply = proto::recv_frame(socket_);
        if (!reply) {
            throw ProtocolError("connection closed during register");
        }
        if (reply->task == Task::Error) {
            const auto err = json::parse(reply->payload);
            throw ServerError(err.value("kind", "internal"), err.value("error", "register failed"));
        }
    }
}

template <typename F>
auto Connection::with_retry(F&& op) {
    retried_ = false;
    std::string last;
    const int attempts = std::max(1, options_.backoff.max_attempts);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            retried_ = true;
            std::this_thread::sleep_for(options_.backoff.delay(attempt));
        }
        try {
            if (!socket_.valid()) {
                connect();
            }
            return op();
        } catch (const ProtocolError& e) {
            last = e.what();
            socket_.close();
        }
    }
    throw ProtocolError("giving up after " + std::to_string(attempts) + " attempts: " + last);
}

void Connection::bind(const NodeIdentity& id) {
    identity_ = id;
    socket_.close();
    with_retry([] { return 0; });
}

namespace {

[[noreturn]] void raise(const proto::Frame& f) {
    json err = json::parse(f.payload, nullptr, false);
    if (err.is_discarded()) {
        throw ServerError("internal", f.payload);
    }
    throw ServerError(err.value("kind", "internal"), err.value("error", "server error"));
}

}  // namespace

json Connection::call(Task task, const json& request) {
    return with_retry([&] {
        proto::send_json(socket_, task, request);
        auto reply = proto::recv_frame(socket_);
        if (!reply) {
            throw ProtocolError("connection closed before a reply");
        }
        if (reply->task == Task::Error) {
            raise(*reply);
        }
        if (reply->task != task) {
            throw ProtocolError(std::string("expected ") + proto::task_name(task) + " reply, got " +
                                proto::task_name(reply->task));
        }
        return json::parse(reply->payload);
    });
}

Connection::ChunkFetch Connection::fetch_chunk(const json& request) {
    return with_retry([&] {
        proto::send_json(socket_, Task::NextChunk, request);
        auto reply = proto::recv_frame(socket_);
        if (!reply) {
            throw ProtocolError("connection closed before a reply");
        }
        ChunkFetch out;
        if (reply->task == Task::Error) {
            raise(*reply);
        }
        const json header = json::parse(reply->payload);
        out.position = header.at("position").get<std::uint64_t>();
        out.chunk_id = header.at("chunk_id").get<std::uint64_t>();
        if (reply->task == Task::EndOfData) {
            out.end = true;
            return out;
        }
        if (reply->task != Task::NextChunk) {
            throw ProtocolError(std::string("unexpected ") + proto::task_name(reply->task) + " reply");
        }
        out.skip = header.at("skip").get<std::uint64_t>();
        out.bytes = proto::recv_chunk_body(socket_, header.at("size").get<std::size_t>());
        return out;
    });
}

//------------------------------------------------------------------------------

json ControlClient::submit(const std::string& job_id, const json& query, const QueryArgs& args) {
    return conn_.call(Task::Submit, {{"job_id", job_id}, {"query", query}, {"args", args.to_json()}});
}

FeedbackAck ControlClient::feedback(const std::string& job_id, std::uint64_t step,
                                    const std::vector<DomainFeedback>& losses) {
    json l = json::array();
    for (const auto& d : losses) {
        l.push_back({{"key", to_json(d.key)}, {"loss_sum", d.loss_sum}, {"tokens", d.tokens}});
    }
    try {
        const json reply = conn_.call(Task::Feedback, {{"job_id", job_id}, {"step", step}, {"losses", std::move(l)}});
        return {true, reply.value("warning", "")};
    } catch (const ServerError& e) {
        // A resent message whose first copy was applied before the
        // connection dropped is reported as stale; that is an ack.
        if (conn_.last_call_retried() && e.kind() == "query" &&
            std::string_view(e.what()).find("is not after step") != std::string_view::npos) {
            return {true, ""};
        }
        throw;
    }
}

std::string ControlClient::checkpoint(const std::string& job_id) {
    return conn_.call(Task::Checkpoint, {{"job_id", job_id}}).at("checkpoint_id").get<std::string>();
}

void ControlClient::restore(const std::string& checkpoint_id, const std::map<std::string, std::uint64_t>& progress) {
    json p = json::object();
    for (const auto& [id, n] : progress) {
        p[id] = n;
    }
    conn_.call(Task::Restore, {{"checkpoint_id", checkpoint_id}, {"progress", std::move(p)}});
}

//------------------------------------------------------------------------------

ResultStream::ResultStream(ClientOptions options, ResultStreamingArgs args)
    : args_(std::move(args)), conn_(std::move(options)) {
    if (args_.mode == Mode::Window && args_.window_size == 0) {
        throw Error("window mode needs a positive window size");
    }
    if (args_.mode == Mode::Tokenized) {
        if (args_.sequence_length == 0) {
            throw Error("tokenized mode needs a positive sequence length");
        }
        if (!args_.tokenizer) {
            args_.tokenizer = std::make_shared<WhitespaceTokenizer>();
        }
    }
    conn_.bind(args_.identity());
}

ResultStream::~ResultStream() = default;

std::uint64_t ResultStream::hot_path_opens() const {
    return hot_opens_done_ + (payloads_ ? payloads_->hot_path_opens() : 0);
}

std::uint64_t ResultStream::items_in_chunk() const {
    return args_.mode == Mode::Tokenized ? tokens_.size() : order_.size();
}

bool ResultStream::advance() {
    while (!ended_) {
        if (chunk_ && yielded_ < items_in_chunk()) {
            return true;
        }
        json req;
        if (position_) {
            req = {{"position", *position_ + 1}};
        } else if (args_.resume) {
            req = {{"resume", true}};
        } else {
            req = {{"position", 0}};
        }
        auto fetch = conn_.fetch_chunk(req);
        if (payloads_) {
            hot_opens_done_ += payloads_->hot_path_opens();
            payloads_.reset();
        }
        position_ = fetch.position;
        if (fetch.end) {
            ended_ = true;
            chunk_.reset();
            return false;
        }
        ++chunks_;
        chunk_ = parse_chunk(fetch.bytes);
        keys_ = chunk_keys(*chunk_);
        key_names_.clear();
        for (const auto& k : keys_) {
            key_names_.push_back(k.str());
        }
        tokens_.clear();
        switch (args_.mode) {
            case Mode::Overall:
                order_ = overall_order(*chunk_);
                break;
            case Mode::Window:
                order_ = window_order(*chunk_, args_.window_size, args_.strict_window);
                break;
            case Mode::Tokenized: {
                order_ = overall_order(*chunk_);
                const std::uint64_t window = chunk_->mixture ? chunk_->mixture->chunk_size : chunk_->size();
                ChunkPayloads payloads(*chunk_, order_, args_.prefetch_depth);
                auto w = tokenized_window(*chunk_, payloads, *args_.tokenizer, args_.sequence_length, window,
                                          args_.strict_window);
                hot_opens_done_ += payloads.hot_path_opens();
                skipped_empty_ += w.skipped_empty;
                incomplete_ += w.incomplete ? 1 : 0;
                tokens_ = std::move(w.items);
                order_.clear();
                break;
            }
        }
        if (fetch.skip > items_in_chunk()) {
            throw ProtocolError("server asked to skip " + std::to_string(fetch.skip) + " of " +
                                std::to_string(items_in_chunk()) + " items");
        }
        yielded_ = fetch.skip;
        if (args_.mode != Mode::Tokenized) {
            // Samples already yielded before a restore are dropped from the
            // read plan as well.
            payloads_ = std::make_unique<ChunkPayloads>(
                *chunk_, std::span<const SamplePointer>(order_).subspan(yielded_), args_.prefetch_depth);
        }
    }
    return false;
}

std::optional<StreamItem> ResultStream::next() {
    if (args_.mode == Mode::Tokenized) {
        throw Error("tokenized streams yield token sequences; use next_tokens()");
    }
    if (!advance()) {
        return std::nullopt;
    }
    const SamplePointer& p = order_[yielded_];
    StreamItem item;
    item.payload = payloads_->get(p.file, p.sample);
    item.key = p.key;
    item.key_name = key_names_[p.key];
    item.chunk_id = chunk_->chunk_id;
    item.file = p.file;
    item.sample = p.sample;
    ++yielded_;
    return item;
}

std::optional<TokenBatchItem> ResultStream::next_tokens() {
    if (args_.mode != Mode::Tokenized) {
        throw Error("next_tokens() needs tokenized mode");
    }
    if (!advance()) {
        return std::nullopt;
    }
    return tokens_[yielded_++];
}

}  // namespace mixplane
