#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mixplane/chunker_index.hpp"
#include "mixplane/mixture.hpp"

namespace mixplane {

// A fixed-size set of sample pointers, grouped by the mixture's keys (or by
// component keys for arbitrary chunks).
struct Chunk {
    std::uint64_t chunk_id = 0;
    std::uint64_t seed = 0;
    std::optional<MixtureSpec> mixture;
    std::map<MixtureKey, DatasetFiles> parts;
    // Paths of every file the chunk points into; filled in by the server.
    std::map<FileId, std::string> files;

    std::uint64_t size() const;
    std::uint64_t count(const MixtureKey& key) const;

    bool operator==(const Chunk&) const = default;
};

// Canonical JSON text; equal chunks serialize to identical bytes.
std::string serialize_chunk(const Chunk& chunk);
Chunk parse_chunk(std::string_view bytes);

std::uint64_t chunk_seed(std::uint64_t job_seed, std::uint64_t chunk_id);

// Chunk on success; otherwise the per-key counts that could not be met.
struct GenerationResult {
    std::optional<Chunk> chunk;
    std::map<MixtureKey, std::uint64_t> shortfall;

    explicit operator bool() const { return chunk.has_value(); }
};

// Moves shortfall_key's remaining count onto progress_keys, proportionally to
// their weights in `spec`, integerized by largest remainders. shortfall_key
// itself is excluded from the recipients. Throws if nobody can receive it.
std::map<MixtureKey, std::uint64_t> redistribute_best_effort(std::map<MixtureKey, std::uint64_t> remaining,
                                                             const MixtureKey& shortfall_key,
                                                             const std::set<MixtureKey>& progress_keys,
                                                             const MixtureSpec& spec);

class ChunkGenerator {
public:
    ChunkGenerator(ChunkerIndex index, std::uint64_t seed);

    // One chunk conforming to spec. Strict mode consumes nothing on failure.
    GenerationResult generate(const MixtureSpec& spec);

    // Drains component keys one after another in seeded order; the final
    // chunk may be short.
    GenerationResult generate_arbitrary(std::uint64_t chunk_size);

    std::uint64_t next_chunk_id() const { return next_chunk_id_; }
    std::uint64_t seed() const { return seed_; }
    const ChunkerIndex& index() const { return index_; }
    const std::vector<MixtureKey>& component_order() const { return order_; }
    std::uint64_t remaining() const;

    nlohmann::json state() const;
    void restore(const nlohmann::json& state);

private:
    void add_ranges(DatasetFiles& dst, const std::vector<SampleRange>& ranges) const;
    Chunk finish(std::map<MixtureKey, DatasetFiles> parts, std::optional<MixtureSpec> mixture);

    ChunkerIndex index_;
    std::uint64_t seed_;
    std::vector<MixtureKey> order_;
    std::vector<RangeCursor> cursors_;
    std::uint64_t next_chunk_id_ = 0;
};

}  // namespace mixplane
