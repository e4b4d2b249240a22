#include "mixplane/server.hpp"

#include <iostream>

namespace mixplane {

using nlohmann::json;
using proto::Task;

struct TcpServer::Connection {
    proto::Socket socket;
    std::optional<NodeIdentity> identity;
    std::atomic<bool> done{false};
};

TcpServer::TcpServer(std::shared_ptr<JobManager> jobs, const std::string& host, std::uint16_t port)
    : jobs_(std::move(jobs)), listener_(host, port) {
    acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop() {
    if (stopping_.exchange(true)) {
        return;
    }
    listener_.close();
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(mutex_);
        for (auto& c : connections_) {
            c->socket.shutdown();
        }
        workers.swap(workers_);
    }
    for (auto& t : workers) {
        t.join();
    }
}

void TcpServer::drop_connections() {
    std::lock_guard lock(mutex_);
    for (auto& c : connections_) {
        c->socket.shutdown();
    }
}

void TcpServer::accept_loop() {
    while (!stopping_) {
        proto::Socket s = listener_.accept();
        if (!s.valid()) {
            break;
        }
        auto conn = std::make_shared<Connection>();
        conn->socket = std::move(s);
        ++accepted_;
        std::lock_guard lock(mutex_);
        if (stopping_) {
            conn->socket.shutdown();
            break;
        }
        std::erase_if(connections_, [](const auto& c) { return c->done.load(); });
        connections_.push_back(conn);
        workers_.emplace_back([this, conn] { serve(conn); });
    }
}

void TcpServer::serve(std::shared_ptr<Connection> conn) {
    try {
        while (!stopping_) {
            auto frame = proto::recv_frame(conn->socket);
            if (!frame) {
                break;
            }
            handle(*conn, *frame);
        }
    } catch (const ProtocolError&) {
        // Transport failure: the client reconnects and retries.
    } catch (const std::exception& e) {
        std::clog << "connection error: " << e.what() << '\n';
    }
    conn->done = true;
}

namespace {

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const QueryError*>(&e)) {
        return "query";
    }
    if (dynamic_cast<const ProtocolError*>(&e)) {
        return "protocol";
    }
    if (dynamic_cast<const SchemaError*>(&e)) {
        return "schema";
    }
    if (dynamic_cast<const IoError*>(&e)) {
        return "io";
    }
    return "internal";
}

std::vector<DomainFeedback> parse_losses(const json& j) {
    std::vector<DomainFeedback> out;
    for (const auto& l : j) {
        out.push_back({key_from_json(l.at("key")), l.at("loss_sum").get<double>(), l.at("tokens").get<std::uint64_t>()});
    }
    return out;
}

}  // namespace

void TcpServer::handle(Connection& conn, const proto::Frame& frame) {
    json req;
    try {
        req = json::parse(frame.payload);
        switch (frame.task) {
            case Task::Register: {
                NodeIdentity id{req.at("job_id").get<std::string>(), req.at("group").get<std::uint32_t>(),
                                req.at("node").get<std::uint32_t>(), req.at("worker").get<std::uint32_t>()};
                jobs_->register_node(id);
                conn.identity = id;
                proto::send_json(conn.socket, Task::Register, {{"ok", true}});
                return;
            }
            case Task::Submit: {
                const auto summary = jobs_->submit(req.at("job_id").get<std::string>(), req.at("query"),
                                                   QueryArgs::from_json(req.value("args", json::object())));
                proto::send_json(conn.socket, Task::Submit, summary);
                return;
            }
            case Task::NextChunk: {
                if (!conn.identity) {
                    throw ProtocolError("next_chunk before register");
                }
                std::optional<std::uint64_t> position;
                if (!req.value("resume", false)) {
                    position = req.at("position").get<std::uint64_t>();
                }
                const ChunkReply reply = jobs_->next_chunk(*conn.identity, position);
                if (reply.end) {
                    proto::send_json(conn.socket, Task::EndOfData,
                                     {{"position", reply.position}, {"chunk_id", reply.chunk_id}});
                    return;
                }
                proto::send_chunk(conn.socket,
                                  {{"chunk_id", reply.chunk_id},
                                   {"position", reply.position},
                                   {"skip", reply.skip},
                                   {"size", reply.bytes->size()}},
                                  *reply.bytes);
                return;
            }
            case Task::Feedback: {
                const auto ack = jobs_->feedback(req.at("job_id").get<std::string>(), req.at("step").get<std::uint64_t>(),
                                                 parse_losses(req.at("losses")));
                json out = {{"ok", true}};
                if (!ack.warning.empty()) {
                    std::lock_guard lock(mutex_);
                    if (warned_.insert(ack.warning).second) {
                        std::clog << "warning: " << ack.warning << '\n';
                    }
                    out["warning"] = ack.warning;
                }
                proto::send_json(conn.socket, Task::Feedback, out);
                return;
            }
            case Task::Checkpoint: {
                const auto id = jobs_->checkpoint(req.at("job_id").get<std::string>());
                proto::send_json(conn.socket, Task::Checkpoint, {{"checkpoint_id", id}});
                return;
            }
            case Task::Restore: {
                std::map<std::string, std::uint64_t> progress;
                const json given = req.value("progress", json::object());
                for (const auto& [ident, n] : given.items()) {
                    progress.emplace(ident, n.get<std::uint64_t>());
                }
                jobs_->restore(req.at("checkpoint_id").get<std::string>(), progress);
                proto::send_json(conn.socket, Task::Restore, {{"ok", true}});
                return;
            }
            case Task::Error:
            case Task::EndOfData:
                throw ProtocolError(std::string("clients may not send ") + proto::task_name(frame.task));
        }
    } catch (const ProtocolError& e) {
        // A transport failure while replying propagates; request errors are
        // reported on the wire.
        if (!conn.socket.valid()) {
            throw;
        }
        proto::send_json(conn.socket, Task::Error, {{"error", e.what()}, {"kind", "protocol"}});
    } catch (const json::exception& e) {
        proto::send_json(conn.socket, Task::Error, {{"error", std::string("bad request: ") + e.what()}, {"kind", "query"}});
    } catch (const std::exception& e) {
        proto::send_json(conn.socket, Task::Error, {{"error", e.what()}, {"kind", error_kind(e)}});
    }
}

}  // namespace mixplane
