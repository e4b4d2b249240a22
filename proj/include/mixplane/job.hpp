#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mixplane/catalog.hpp"
#include "mixplane/chunk.hpp"
#include "mixplane/mixture.hpp"

namespace mixplane {

struct QueryArgs {
    std::uint32_t dp_groups = 1;
    std::uint32_t nodes_per_group = 1;
    // Data-loader workers per node; every node of the job has the same count.
    std::uint32_t num_workers = 1;
    std::optional<std::uint64_t> seed;
    // When set, every chunk generated under a dynamic mixture appends its
    // mixture to this file.
    std::string trajectory_log;
    unsigned index_workers = 1;

    nlohmann::json to_json() const;
    static QueryArgs from_json(const nlohmann::json& j);
};

struct NodeIdentity {
    std::string job_id;
    std::uint32_t group = 0;
    std::uint32_t node = 0;
    std::uint32_t worker = 0;

    std::string str() const;
    static NodeIdentity parse(const std::string& job_id, std::string_view text);
    auto operator<=>(const NodeIdentity&) const = default;
};

struct ChunkReply {
    // Set once the stream has no chunk at `position`.
    bool end = false;
    std::uint64_t position = 0;
    std::uint64_t chunk_id = 0;
    // Samples the consumer must discard before yielding (after a restore).
    std::uint64_t skip = 0;
    std::shared_ptr<const std::string> bytes;
};

struct FeedbackAck {
    bool accepted = true;
    std::string warning;
};

class JobManager {
public:
    JobManager(std::shared_ptr<const Catalog> catalog, std::filesystem::path checkpoint_dir);
    ~JobManager();

    // query = {"filters": [...], "mixture": {...}}. Returns a summary of the
    // built index. Re-submitting an identical (query, args) is a no-op.
    nlohmann::json submit(const std::string& job_id, const nlohmann::json& query, const QueryArgs& args);

    void register_node(const NodeIdentity& id);

    // Chunk at `position` of the identity's (group, worker) stream, or the
    // in-flight position when `position` is empty.
    ChunkReply next_chunk(const NodeIdentity& id, std::optional<std::uint64_t> position);

    FeedbackAck feedback(const std::string& job_id, std::uint64_t step, const std::vector<DomainFeedback>& losses);

    std::string checkpoint(const std::string& job_id);
    // progress: NodeIdentity::str() -> samples already yielded from that
    // worker's in-flight chunk.
    void restore(const std::string& checkpoint_id, const std::map<std::string, std::uint64_t>& progress);

    // Generator, distributor and mixture state, as written into checkpoints.
    nlohmann::json job_state(const std::string& job_id) const;
    std::size_t cached_chunks(const std::string& job_id) const;
    bool has_job(const std::string& job_id) const;
    std::filesystem::path checkpoint_path(const std::string& checkpoint_id) const;

    static std::uint64_t stream_chunk_id(const QueryArgs& args, std::uint32_t group, std::uint32_t worker,
                                         std::uint64_t position);

private:
    struct Job;

    std::shared_ptr<Job> find(const std::string& job_id) const;
    std::shared_ptr<Job> build(const std::string& job_id, const nlohmann::json& query, const QueryArgs& args) const;

    std::shared_ptr<const Catalog> catalog_;
    std::filesystem::path checkpoint_dir_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
};

}  // namespace mixplane
