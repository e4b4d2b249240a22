#include "mixplane/chunk.hpp"

#include <algorithm>
#include <iterator>

namespace mixplane {

using nlohmann::json;

std::uint64_t Chunk::size() const {
    std::uint64_t total = 0;
    for (const auto& [key, datasets] : parts) {
        total += count(key);
    }
    return total;
}

std::uint64_t Chunk::count(const MixtureKey& key) const {
    auto it = parts.find(key);
    if (it == parts.end()) {
        return 0;
    }
    std::uint64_t total = 0;
    for (const auto& [ds, files] : it->second) {
        for (const auto& [file, ranges] : files) {
            for (const auto& r : ranges) {
                total += r.size();
            }
        }
    }
    return total;
}

std::string serialize_chunk(const Chunk& chunk) {
    json parts = json::array();
    for (const auto& [key, datasets] : chunk.parts) {
        json ranges = json::array();
        for (const auto& [ds, files] : datasets) {
            for (const auto& [file, list] : files) {
                for (const auto& r : list) {
                    ranges.push_back({ds, file, r.start, r.end});
                }
            }
        }
        parts.push_back({{"key", to_json(key)}, {"ranges", std::move(ranges)}});
    }
    json files = json::array();
    for (const auto& [id, path] : chunk.files) {
        files.push_back({id, path});
    }
    json j = {{"version", 1},
              {"chunk_id", chunk.chunk_id},
              {"seed", chunk.seed},
              {"mixture", chunk.mixture ? to_json(*chunk.mixture) : json()},
              {"parts", std::move(parts)},
              {"files", std::move(files)}};
    return j.dump();
}

Chunk parse_chunk(std::string_view bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed chunk: ") + e.what());
    }
    if (j.at("version").get<int>() != 1) {
        throw ProtocolError("unsupported chunk version");
    }
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("mixture").is_null()) {
        c.mixture = spec_from_json(j.at("mixture"));
    }
    for (const auto& part : j.at("parts")) {
        DatasetFiles& dst = c.parts[key_from_json(part.at("key"))];
        for (const auto& r : part.at("ranges")) {
            dst[r[0].get<DatasetId>()][r[1].get<FileId>()].push_back({r[2].get<SampleId>(), r[3].get<SampleId>()});
        }
    }
    for (const auto& f : j.at("files")) {
        c.files.emplace(f[0].get<FileId>(), f[1].get<std::string>());
    }
    return c;
}

std::uint64_t chunk_seed(std::uint64_t job_seed, std::uint64_t chunk_id) { return hash_combine(job_seed, chunk_id); }

std::map<MixtureKey, std::uint64_t> redistribute_best_effort(std::map<MixtureKey, std::uint64_t> remaining,
                                                             const MixtureKey& shortfall_key,
                                                             const std::set<MixtureKey>& progress_keys,
                                                             const MixtureSpec& spec) {
    auto it = remaining.find(shortfall_key);
    if (it == remaining.end()) {
        throw Error("redistribute_best_effort: unknown key '" + shortfall_key.str() + "'");
    }
    const std::uint64_t shortfall = it->second;
    std::vector<MixtureKey> recipients;
    std::vector<double> weights;
    for (const auto& key : progress_keys) {
        if (key == shortfall_key) {
            continue;
        }
        auto w = spec.weights.find(key);
        if (w == spec.weights.end()) {
            throw Error("redistribute_best_effort: '" + key.str() + "' is not in the mixture");
        }
        recipients.push_back(key);
        weights.push_back(w->second);
    }
    if (recipients.empty()) {
        throw Error("redistribute_best_effort: no key to receive the shortfall of '" + shortfall_key.str() + "'");
    }
    it->second = 0;
    if (shortfall == 0) {
        return remaining;
    }
    const auto extra = largest_remainders(weights, shortfall);
    for (std::size_t i = 0; i < recipients.size(); ++i) {
        remaining[recipients[i]] += extra[i];
    }
    return remaining;
}

//------------------------------------------------------------------------------
// ChunkGenerator

ChunkGenerator::ChunkGenerator(ChunkerIndex index, std::uint64_t seed) : index_(std::move(index)), seed_(seed) {
    for (const auto& [key, locations] : index_.components()) {
        order_.push_back(key);
    }
    Rng rng(hash_combine(seed_, 0x6b657973ULL));
    rng.shuffle(order_);
    cursors_.reserve(order_.size());
    for (const auto& key : order_) {
        cursors_.emplace_back(key, index_.components().at(key), seed_);
    }
}

std::uint64_t ChunkGenerator::remaining() const {
    std::uint64_t total = 0;
    for (const auto& c : cursors_) {
        total += c.remaining();
    }
    return total;
}

void ChunkGenerator::add_ranges(DatasetFiles& dst, const std::vector<SampleRange>& ranges) const {
    for (const auto& r : ranges) {
        dst[r.dataset][r.file].push_back(r.range);
    }
}

Chunk ChunkGenerator::finish(std::map<MixtureKey, DatasetFiles> parts, std::optional<MixtureSpec> mixture) {
    for (auto& [key, datasets] : parts) {
        for (auto& [ds, files] : datasets) {
            for (auto& [file, ranges] : files) {
                normalize_intervals(ranges);
            }
        }
    }
    Chunk chunk;
    chunk.chunk_id = next_chunk_id_++;
    chunk.seed = chunk_seed(seed_, chunk.chunk_id);
    chunk.mixture = std::move(mixture);
    chunk.parts = std::move(parts);
    return chunk;
}

GenerationResult ChunkGenerator::generate(const MixtureSpec& spec) {
    std::map<MixtureKey, std::uint64_t> remaining = proportions_to_counts(spec);
    std::vector<MixtureKey> keys;
    std::map<MixtureKey, std::vector<std::size_t>> matching;
    for (const auto& [key, count] : remaining) {
        keys.push_back(key);
        auto& list = matching[key];
        for (std::size_t c = 0; c < order_.size(); ++c) {
            if (key.matches(order_[c])) {
                list.push_back(c);
            }
        }
    }

    std::vector<RangeCursor::Position> saved;
    saved.reserve(cursors_.size());
    for (const auto& c : cursors_) {
        saved.push_back(c.position());
    }

    std::map<MixtureKey, DatasetFiles> parts;
    const auto pending = [&] {
        return std::any_of(remaining.begin(), remaining.end(), [](const auto& kv) { return kv.second > 0; });
    };
    // Keys that found samples at some point while building this chunk, and
    // keys whose matching components are all drained.
    std::set<MixtureKey> served;
    std::set<MixtureKey> exhausted;
    bool progress = true;
    while (pending() && progress) {
        progress = false;
        for (const auto& key : keys) {
            std::uint64_t& need = remaining[key];
            for (std::size_t c : matching[key]) {
                if (need == 0) {
                    break;
                }
                const auto ranges = cursors_[c].take(need);
                if (ranges.empty()) {
                    continue;
                }
                std::uint64_t got = 0;
                for (const auto& r : ranges) {
                    got += r.range.size();
                }
                add_ranges(parts[key], ranges);
                need -= got;
                progress = true;
                served.insert(key);
            }
            if (need > 0) {
                exhausted.insert(key);
            }
        }
        if (spec.strict || !progress) {
            continue;
        }
        // A key still short has drained every matching component; its count
        // moves to keys that found data and are not drained themselves.
        std::set<MixtureKey> recipients;
        std::set_difference(served.begin(), served.end(), exhausted.begin(), exhausted.end(),
                            std::inserter(recipients, recipients.end()));
        for (const auto& key : exhausted) {
            if (remaining[key] > 0 && !recipients.empty()) {
                remaining = redistribute_best_effort(std::move(remaining), key, recipients, spec);
            }
        }
    }

    if (pending()) {
        if (spec.strict || parts.empty()) {
            for (std::size_t i = 0; i < cursors_.size(); ++i) {
                cursors_[i].seek(saved[i]);
            }
            GenerationResult failed;
            for (const auto& [key, need] : remaining) {
                if (need > 0) {
                    failed.shortfall.emplace(key, need);
                }
            }
            return failed;
        }
    }
    if (parts.empty()) {
        return {};
    }
    return {finish(std::move(parts), spec), {}};
}

GenerationResult ChunkGenerator::generate_arbitrary(std::uint64_t chunk_size) {
    if (chunk_size == 0) {
        throw Error("generate_arbitrary: chunk_size must be positive");
    }
    std::map<MixtureKey, DatasetFiles> parts;
    std::uint64_t need = chunk_size;
    for (std::size_t c = 0; c < cursors_.size() && need > 0; ++c) {
        const auto ranges = cursors_[c].take(need);
        for (const auto& r : ranges) {
            need -= r.range.size();
        }
        if (!ranges.empty()) {
            add_ranges(parts[order_[c]], ranges);
        }
    }
    if (parts.empty()) {
        GenerationResult done;
        done.shortfall.emplace(MixtureKey(), chunk_size);
        return done;
    }
    return {finish(std::move(parts), std::nullopt), {}};
}

json ChunkGenerator::state() const {
    json cursors = json::array();
    for (const auto& c : cursors_) {
        const auto p = c.position();
        cursors.push_back({p.range, p.offset, p.remaining});
    }
    return {{"seed", seed_}, {"next_chunk_id", next_chunk_id_}, {"cursors", std::move(cursors)}};
}

void ChunkGenerator::restore(const json& state) {
    if (state.at("seed").get<std::uint64_t>() != seed_) {
        throw Error("ChunkGenerator: state belongs to a different seed");
    }
    const auto& cursors = state.at("cursors");
    if (cursors.size() != cursors_.size()) {
        throw Error("ChunkGenerator: state has " + std::to_string(cursors.size()) + " cursors, index has " +
                    std::to_string(cursors_.size()));
    }
    for (std::size_t i = 0; i < cursors_.size(); ++i) {
        cursors_[i].seek({cursors[i][0].get<std::size_t>(), cursors[i][1].get<std::uint64_t>(),
                          cursors[i][2].get<std::uint64_t>()});
    }
    next_chunk_id_ = state.at("next_chunk_id").get<std::uint64_t>();
}

}  // namespace mixplane
