#include "mixplane/job.hpp"

#include <charconv>
#include <fstream>
#include <iostream>

#include "mixplane/ado.hpp"
#include "mixplane/chunker_index.hpp"

namespace mixplane {

using nlohmann::json;

json QueryArgs::to_json() const {
    json j = {{"dp_groups", dp_groups},
              {"nodes_per_group", nodes_per_group},
              {"num_workers", num_workers},
              {"trajectory_log", trajectory_log},
              {"index_workers", index_workers}};
    j["seed"] = seed ? json(*seed) : json();
    return j;
}

QueryArgs QueryArgs::from_json(const json& j) {
    QueryArgs a;
    a.dp_groups = j.value("dp_groups", a.dp_groups);
    a.nodes_per_group = j.value("nodes_per_group", a.nodes_per_group);
    if (j.contains("num_workers") && j["num_workers"].is_array()) {
        // Per-node worker counts are accepted only when they agree.
        const auto counts = j["num_workers"].get<std::vector<std::uint32_t>>();
        if (counts.empty() || std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end()) {
            throw QueryError("every node of a job must use the same num_workers");
        }
        a.num_workers = counts.front();
    } else {
        a.num_workers = j.value("num_workers", a.num_workers);
    }
    if (j.contains("seed") && !j["seed"].is_null()) {
        a.seed = j["seed"].get<std::uint64_t>();
    }
    a.trajectory_log = j.value("trajectory_log", a.trajectory_log);
    a.index_workers = j.value("index_workers", a.index_workers);
    if (a.dp_groups == 0 || a.nodes_per_group == 0 || a.num_workers == 0) {
        throw QueryError("dp_groups, nodes_per_group and num_workers must be positive");
    }
    return a;
}

std::string NodeIdentity::str() const {
    return std::to_string(group) + "/" + std::to_string(node) + "/" + std::to_string(worker);
}

NodeIdentity NodeIdentity::parse(const std::string& job_id, std::string_view text) {
    NodeIdentity id;
    id.job_id = job_id;
    std::uint32_t* fields[] = {&id.group, &id.node, &id.worker};
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 3; ++i) {
        auto [next, ec] = std::from_chars(p, end, *fields[i]);
        if (ec != std::errc() || (i < 2 && (next == end || *next != '/')) || (i == 2 && next != end)) {
            throw QueryError("malformed node identity '" + std::string(text) + "'");
        }
        p = next + 1;
    }
    return id;
}

std::uint64_t JobManager::stream_chunk_id(const QueryArgs& args, std::uint32_t group, std::uint32_t worker,
                                          std::uint64_t position) {
    return (position * args.num_workers + worker) * args.dp_groups + group;
}

//------------------------------------------------------------------------------

struct JobManager::Job {
    std::string id;
    json query;
    QueryArgs args;
    std::uint64_t seed = 0;
    std::unique_ptr<ChunkGenerator> generator;
    std::unique_ptr<MixtureProvider> provider;
    // Set for arbitrary mixtures, which have no provider.
    std::uint64_t arbitrary_chunk_size = 0;
    std::map<FileId, std::string> paths;
    json summary;

    std::mutex mutex;
    std::map<std::uint64_t, std::shared_ptr<const std::string>> cache;
    std::optional<std::uint64_t> exhausted_at;
    // (group, node, worker) -> highest position requested so far, -1 if none.
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::int64_t> last_requested;
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> registered;
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::uint64_t> pending_skip;
    std::optional<std::uint64_t> last_step;
    std::uint64_t checkpoints = 0;

    void generate_through(std::uint64_t chunk_id);
    void evict(std::uint32_t group, std::uint32_t worker);
    json state() const;
    void restore_state(const json& s);
};

void JobManager::Job::generate_through(std::uint64_t chunk_id) {
    while (!exhausted_at && generator->next_chunk_id() <= chunk_id) {
        GenerationResult r;
        std::optional<MixtureSpec> spec;
        if (provider) {
            spec = provider->current();
            r = generator->generate(*spec);
        } else {
            r = generator->generate_arbitrary(arbitrary_chunk_size);
        }
        if (!r) {
            exhausted_at = generator->next_chunk_id();
            std::string detail;
            for (const auto& [key, need] : r.shortfall) {
                detail += " " + key.str() + "=" + std::to_string(need);
            }
            std::clog << "job " << id << ": end of data at chunk " << *exhausted_at
                      << (detail.empty() ? "" : "; unmet:" + detail) << '\n';
            return;
        }
        Chunk& chunk = *r.chunk;
        for (const auto& [key, datasets] : chunk.parts) {
            for (const auto& [ds, files] : datasets) {
                for (const auto& [file, ranges] : files) {
                    chunk.files.emplace(file, paths.at(file));
                }
            }
        }
        if (provider && provider->dynamic() && !args.trajectory_log.empty()) {
            ado::append_trajectory(args.trajectory_log, last_step.value_or(0), chunk.chunk_id, *spec);
        }
        cache.emplace(chunk.chunk_id, std::make_shared<const std::string>(serialize_chunk(chunk)));
    }
}

// A chunk stays cached until every node of its group has asked for a later
// position of the same worker stream.
void JobManager::Job::evict(std::uint32_t group, std::uint32_t worker) {
    std::int64_t min_pos = std::numeric_limits<std::int64_t>::max();
    for (std::uint32_t n = 0; n < args.nodes_per_group; ++n) {
        min_pos = std::min(min_pos, last_requested.at({group, n, worker}));
    }
    for (std::int64_t pos = min_pos - 1; pos >= 0; --pos) {
        auto it = cache.find(stream_chunk_id(args, group, worker, static_cast<std::uint64_t>(pos)));
        if (it == cache.end()) {
            break;
        }
        cache.erase(it);
    }
}

json JobManager::Job::state() const {
    json nodes = json::array();
    for (const auto& [key, pos] : last_requested) {
        nodes.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), pos});
    }
    json cached = json::array();
    for (const auto& [chunk_id, bytes] : cache) {
        cached.push_back({chunk_id, *bytes});
    }
    return {{"generator", generator->state()},
            {"distributor",
             {{"nodes", std::move(nodes)},
              {"cache", std::move(cached)},
              {"exhausted_at", exhausted_at ? json(*exhausted_at) : json()}}},
            {"mixture", provider ? provider->state() : json::object()},
            {"last_step", last_step ? json(*last_step) : json()}};
}

void JobManager::Job::restore_state(const json& s) {
    generator->restore(s.at("generator"));
    const auto& d = s.at("distributor");
    for (const auto& n : d.at("nodes")) {
        const auto key = std::make_tuple(n[0].get<std::uint32_t>(), n[1].get<std::uint32_t>(), n[2].get<std::uint32_t>());
        auto it = last_requested.find(key);
        if (it == last_requested.end()) {
            throw Error("checkpoint node " + n.dump() + " does not fit the job's topology");
        }
        it->second = n[3].get<std::int64_t>();
    }
    cache.clear();
    for (const auto& c : d.at("cache")) {
        cache.emplace(c[0].get<std::uint64_t>(), std::make_shared<const std::string>(c[1].get<std::string>()));
    }
    exhausted_at.reset();
    if (!d.at("exhausted_at").is_null()) {
        exhausted_at = d.at("exhausted_at").get<std::uint64_t>();
    }
    if (provider) {
        provider->restore(s.at("mixture"));
    }
    last_step.reset();
    if (!s.at("last_step").is_null()) {
        last_step = s.at("last_step").get<std::uint64_t>();
    }
}

//------------------------------------------------------------------------------

JobManager::JobManager(std::shared_ptr<const Catalog> catalog, std::filesystem::path checkpoint_dir)
    : catalog_(std::move(catalog)), checkpoint_dir_(std::move(checkpoint_dir)) {
    if (!catalog_) {
        throw Error("JobManager: no catalog");
    }
}

JobManager::~JobManager() = default;

namespace {

std::unique_ptr<MixtureProvider> make_provider(const json& m, const ChunkerIndex& index,
                                               std::uint64_t& arbitrary_chunk_size) {
    const std::string type = m.value("type", "static");
    if (type == "static") {
        return std::make_unique<StaticMixtureProvider>("static", spec_from_json(m));
    }
    if (type == "hierarchical") {
        HierarchicalMixtureSpec h{hierarchy_from_json(m.at("root")), m.at("chunk_size").get<std::uint64_t>(),
                                  m.value("strict", true)};
        return std::make_unique<StaticMixtureProvider>("hierarchical", flatten_hierarchy(h));
    }
    if (type == "inferred") {
        return std::make_unique<StaticMixtureProvider>(
            "inferred", infer_mixture(index, m.at("chunk_size").get<std::uint64_t>(), m.value("strict", true)));
    }
    if (type == "schedule") {
        std::vector<ScheduleStage> stages;
        for (const auto& s : m.at("stages")) {
            stages.push_back({s.at("step").get<std::uint64_t>(), spec_from_json(s.at("mixture"))});
        }
        return std::make_unique<ScheduleMixtureProvider>(MixtureSchedule(std::move(stages)));
    }
    if (type == "ado") {
        std::vector<MixtureKey> domains;
        for (const auto& d : m.at("domains")) {
            domains.push_back(key_from_json(d));
        }
        ado::AdoConfig config = ado::AdoConfig::from_json(m.value("config", json::object()));
        config.chunk_size = m.at("chunk_size").get<std::uint64_t>();
        config.strict = m.value("strict", false);
        return std::make_unique<ado::AdoMixtureProvider>(std::move(domains), std::move(config));
    }
    if (type == "arbitrary") {
        arbitrary_chunk_size = m.at("chunk_size").get<std::uint64_t>();
        if (arbitrary_chunk_size == 0) {
            throw QueryError("chunk_size must be positive");
        }
        return nullptr;
    }
    throw QueryError("unknown mixture type '" + type + "'");
}

}  // namespace

std::shared_ptr<JobManager::Job> JobManager::build(const std::string& job_id, const json& query,
                                                   const QueryArgs& args) const {
    auto job = std::make_shared<Job>();
    job->id = job_id;
    job->query = query;
    job->args = args;
    job->seed = args.seed.value_or(fnv1a(query.dump()));

    std::vector<FilterPredicate> preds;
    for (const auto& f : query.value("filters", json::array())) {
        preds.push_back(FilterPredicate::from_json(f));
    }
    const auto rows = catalog_->filter_intervals(preds);
    if (rows.empty()) {
        throw QueryError("query for job '" + job_id + "' matches no samples");
    }
    ChunkerIndex index = build_index(rows, args.index_workers);
    for (const auto& row : rows) {
        if (!job->paths.contains(row.file_id)) {
            job->paths.emplace(row.file_id, catalog_->file(row.file_id)->path);
        }
    }
    try {
        job->provider = make_provider(query.at("mixture"), index, job->arbitrary_chunk_size);
    } catch (const QueryError&) {
        throw;
    } catch (const std::exception& e) {
        throw QueryError(std::string("invalid mixture: ") + e.what());
    }
    job->summary = {{"job_id", job_id},
                    {"seed", job->seed},
                    {"intervals", rows.size()},
                    {"components", index.components().size()},
                    {"samples", index.total_samples()}};
    job->generator = std::make_unique<ChunkGenerator>(std::move(index), job->seed);
    for (std::uint32_t g = 0; g < args.dp_groups; ++g) {
        for (std::uint32_t n = 0; n < args.nodes_per_group; ++n) {
            for (std::uint32_t w = 0; w < args.num_workers; ++w) {
                job->last_requested[{g, n, w}] = -1;
            }
        }
    }
    return job;
}

json JobManager::submit(const std::string& job_id, const json& query, const QueryArgs& args) {
    if (job_id.empty()) {
        throw QueryError("empty job id");
    }
    if (auto existing = find(job_id)) {
        if (existing->query == query && existing->args.to_json() == args.to_json()) {
            return existing->summary;
        }
        throw QueryError("job '" + job_id + "' already exists with a different query");
    }
    auto job = build(job_id, query, args);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = jobs_.emplace(job_id, job);
    if (!inserted) {
        if (it->second->query == query && it->second->args.to_json() == args.to_json()) {
            return it->second->summary;
        }
        throw QueryError("job '" + job_id + "' already exists with a different query");
    }
    return job->summary;
}

std::shared_ptr<JobManager::Job> JobManager::find(const std::string& job_id) const {
    std::shared_lock lock(mutex_);
    auto it = jobs_.find(job_id);
    return it == jobs_.end() ? nullptr : it->second;
}

bool JobManager::has_job(const std::string& job_id) const { return find(job_id) != nullptr; }

void JobManager::register_node(const NodeIdentity& id) {
    auto job = find(id.job_id);
    if (!job) {
        throw QueryError("unknown job '" + id.job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    if (!job->last_requested.contains({id.group, id.node, id.worker})) {
        throw QueryError("node " + id.str() + " is outside job '" + id.job_id + "' (" +
                         std::to_string(job->args.dp_groups) + " groups x " +
                         std::to_string(job->args.nodes_per_group) + " nodes x " +
                         std::to_string(job->args.num_workers) + " workers)");
    }
    job->registered.insert({id.group, id.node, id.worker});
}

ChunkReply JobManager::next_chunk(const NodeIdentity& id, std::optional<std::uint64_t> position) {
    auto job = find(id.job_id);
    if (!job) {
        throw QueryError("unknown job '" + id.job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    const auto key = std::make_tuple(id.group, id.node, id.worker);
    if (!job->registered.contains(key)) {
        throw ProtocolError("node " + id.str() + " is not registered with job '" + id.job_id + "'");
    }
    ChunkReply reply;
    std::int64_t& last = job->last_requested.at(key);
    if (position) {
        reply.position = *position;
        job->pending_skip.erase(key);
    } else {
        // Resume stays repeatable (a retried request sees the same skip)
        // until the node moves on with an explicit position.
        reply.position = last < 0 ? 0 : static_cast<std::uint64_t>(last);
        if (auto it = job->pending_skip.find(key); it != job->pending_skip.end()) {
            reply.skip = it->second;
        }
    }
    reply.chunk_id = stream_chunk_id(job->args, id.group, id.worker, reply.position);
    job->generate_through(reply.chunk_id);
    last = std::max(last, static_cast<std::int64_t>(reply.position));
    if (job->exhausted_at && reply.chunk_id >= *job->exhausted_at) {
        reply.end = true;
    } else {
        auto it = job->cache.find(reply.chunk_id);
        if (it == job->cache.end()) {
            throw ProtocolError("chunk " + std::to_string(reply.chunk_id) + " at position " +
                                std::to_string(reply.position) + " was already released to every node of group " +
                                std::to_string(id.group));
        }
        reply.bytes = it->second;
    }
    job->evict(id.group, id.worker);
    return reply;
}

FeedbackAck JobManager::feedback(const std::string& job_id, std::uint64_t step,
                                 const std::vector<DomainFeedback>& losses) {
    auto job = find(job_id);
    if (!job) {
        throw QueryError("unknown job '" + job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    if (job->last_step && step <= *job->last_step) {
        throw QueryError("feedback step " + std::to_string(step) + " is not after step " +
                         std::to_string(*job->last_step));
    }
    FeedbackAck ack;
    if (!job->provider) {
        ack.warning = "job '" + job_id + "' has an arbitrary mixture; feedback ignored";
    } else {
        job->provider->on_feedback(step, losses);
        if (!job->provider->dynamic() && job->provider->algorithm() != "schedule") {
            ack.warning = "job '" + job_id + "' has a " + job->provider->algorithm() + " mixture; feedback ignored";
        }
    }
    job->last_step = step;
    return ack;
}

json JobManager::job_state(const std::string& job_id) const {
    auto job = find(job_id);
    if (!job) {
        throw QueryError("unknown job '" + job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    return job->state();
}

std::size_t JobManager::cached_chunks(const std::string& job_id) const {
    auto job = find(job_id);
    if (!job) {
        throw QueryError("unknown job '" + job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    return job->cache.size();
}

std::filesystem::path JobManager::checkpoint_path(const std::string& checkpoint_id) const {
    if (checkpoint_id.empty() || checkpoint_id.find('/') != std::string::npos || checkpoint_id.starts_with(".")) {
        throw QueryError("invalid checkpoint id '" + checkpoint_id + "'");
    }
    return checkpoint_dir_ / (checkpoint_id + ".json");
}

std::string JobManager::checkpoint(const std::string& job_id) {
    auto job = find(job_id);
    if (!job) {
        throw QueryError("unknown job '" + job_id + "'");
    }
    std::lock_guard lock(job->mutex);
    std::filesystem::create_directories(checkpoint_dir_);
    std::string checkpoint_id;
    do {
        checkpoint_id = job_id + "-ckpt-" + std::to_string(job->checkpoints++);
    } while (std::filesystem::exists(checkpoint_path(checkpoint_id)));
    const json doc = {{"version", 1},
                      {"checkpoint_id", checkpoint_id},
                      {"job_id", job_id},
                      {"query", job->query},
                      {"args", job->args.to_json()},
                      {"state", job->state()}};
    const auto path = checkpoint_path(checkpoint_id);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint " + tmp);
        }
        out << doc.dump();
        if (!out) {
            throw IoError("cannot write checkpoint " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
    return checkpoint_id;
}

void JobManager::restore(const std::string& checkpoint_id, const std::map<std::string, std::uint64_t>& progress) {
    const auto path = checkpoint_path(checkpoint_id);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw QueryError("unknown checkpoint '" + checkpoint_id + "'");
    }
    const json doc = json::parse(in);
    if (doc.at("version").get<int>() != 1) {
        throw Error("unsupported checkpoint version in " + path.string());
    }
    const std::string job_id = doc.at("job_id").get<std::string>();
    auto job = build(job_id, doc.at("query"), QueryArgs::from_json(doc.at("args")));
    job->restore_state(doc.at("state"));
    for (const auto& [ident, yielded] : progress) {
        const NodeIdentity id = NodeIdentity::parse(job_id, ident);
        const auto key = std::make_tuple(id.group, id.node, id.worker);
        auto it = job->last_requested.find(key);
        if (it == job->last_requested.end()) {
            throw QueryError("progress for unknown node " + ident);
        }
        if (yielded == 0) {
            continue;
        }
        if (it->second < 0) {
            throw QueryError("node " + ident + " reports progress but never received a chunk");
        }
        const auto chunk_id = stream_chunk_id(job->args, id.group, id.worker, static_cast<std::uint64_t>(it->second));
        auto cached = job->cache.find(chunk_id);
        if (cached != job->cache.end()) {
            const auto size = parse_chunk(*cached->second).size();
            if (yielded > size) {
                throw QueryError("node " + ident + " reports " + std::to_string(yielded) +
                                 " samples of a chunk holding " + std::to_string(size));
            }
        }
        job->pending_skip[key] = yielded;
    }
    // Numbering continues after the restored checkpoint.
    const std::string prefix = job_id + "-ckpt-";
    if (checkpoint_id.starts_with(prefix)) {
        try {
            job->checkpoints = std::stoull(checkpoint_id.substr(prefix.size())) + 1;
        } catch (const std::exception&) {
        }
    }
    std::unique_lock lock(mutex_);
    jobs_[job_id] = std::move(job);
}

}  // namespace mixplane
