#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "mixplane/catalog.hpp"
#include "mixplane/mixture.hpp"
#include "mixplane/util.hpp"

namespace mixplane {

using FileIntervals = std::map<FileId, std::vector<Interval>>;
using DatasetFiles = std::map<DatasetId, FileIntervals>;

// Component key (a sample group's full property map) -> dataset -> file ->
// sorted, merged half-open intervals.
class ChunkerIndex {
public:
    using Map = std::map<MixtureKey, DatasetFiles>;

    ChunkerIndex() = default;
    explicit ChunkerIndex(Map map);

    const Map& components() const { return map_; }
    bool empty() const { return map_.empty(); }
    std::uint64_t total_samples() const;
    std::uint64_t samples_under(const MixtureKey& component) const;

    bool operator==(const ChunkerIndex&) const = default;

private:
    Map map_;
};

MixtureKey component_key(const PropertyValues& values);

// Builds per-worker local indices over contiguous row slices, then merges them.
// The result does not depend on `workers`. Overlapping intervals for one file
// are an error.
ChunkerIndex build_index(std::span<const IntervalRow> rows, unsigned workers = 1);

// Sorts a file's interval list and merges adjacent ones; throws on overlap.
void normalize_intervals(std::vector<Interval>& intervals);

//------------------------------------------------------------------------------
// RangeCursor

struct SampleRange {
    DatasetId dataset = 0;
    FileId file = 0;
    Interval range;

    bool operator==(const SampleRange&) const = default;
};

// Stateful iteration over one component key's ranges. Dataset and file order
// are a seeded shuffle; intervals within a file stay in ascending order.
class RangeCursor {
public:
    RangeCursor() = default;
    RangeCursor(MixtureKey key, const DatasetFiles& locations, std::uint64_t seed);

    // Ranges totalling min(n, remaining()) samples; the last range is split
    // when only a prefix is needed. Empty once depleted.
    std::vector<SampleRange> take(std::uint64_t n);

    const MixtureKey& key() const { return key_; }
    std::uint64_t remaining() const { return remaining_; }
    bool depleted() const { return remaining_ == 0; }

    struct Position {
        std::size_t range = 0;
        std::uint64_t offset = 0;
        std::uint64_t remaining = 0;
        bool operator==(const Position&) const = default;
    };
    Position position() const { return {next_, offset_, remaining_}; }
    void seek(const Position& p);

private:
    MixtureKey key_;
    std::vector<SampleRange> order_;
    std::size_t next_ = 0;
    std::uint64_t offset_ = 0;
    std::uint64_t remaining_ = 0;
};

inline std::vector<SampleRange> take_samples(RangeCursor& cursor, std::uint64_t n) { return cursor.take(n); }

}  // namespace mixplane
