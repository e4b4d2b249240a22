#include "mixplane/chunker_index.hpp"

#include <algorithm>
#include <thread>

namespace mixplane {

ChunkerIndex::ChunkerIndex(Map map) : map_(std::move(map)) {}

std::uint64_t ChunkerIndex::total_samples() const {
    std::uint64_t total = 0;
    for (const auto& [key, datasets] : map_) {
        total += samples_under(key);
    }
    return total;
}

std::uint64_t ChunkerIndex::samples_under(const MixtureKey& component) const {
    auto it = map_.find(component);
    if (it == map_.end()) {
        return 0;
    }
    std::uint64_t total = 0;
    for (const auto& [ds, files] : it->second) {
        for (const auto& [file, intervals] : files) {
            for (const auto& iv : intervals) {
                total += iv.size();
            }
        }
    }
    return total;
}

MixtureKey component_key(const PropertyValues& values) {
    MixtureKey::Entries entries;
    for (const auto& [name, list] : values) {
        if (!list.empty()) {
            entries.emplace(name, list);
        }
    }
    return MixtureKey(std::move(entries));
}

void normalize_intervals(std::vector<Interval>& intervals) {
    std::sort(intervals.begin(), intervals.end());
    std::size_t out = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (intervals[i].start >= intervals[i].end) {
            throw Error("build_index: empty interval");
        }
        if (out > 0 && intervals[i].start < intervals[out - 1].end) {
            throw Error("build_index: overlapping intervals [" + std::to_string(intervals[out - 1].start) + "," +
                        std::to_string(intervals[out - 1].end) + ") and [" + std::to_string(intervals[i].start) +
                        "," + std::to_string(intervals[i].end) + ")");
        }
        if (out > 0 && intervals[i].start == intervals[out - 1].end) {
            intervals[out - 1].end = intervals[i].end;
        } else {
            intervals[out++] = intervals[i];
        }
    }
    intervals.resize(out);
}

ChunkerIndex build_index(std::span<const IntervalRow> rows, unsigned workers) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(rows.size(), 1))));
    std::vector<ChunkerIndex::Map> local(workers);
    const auto build_slice = [&](unsigned w) {
        const std::size_t begin = rows.size() * w / workers;
        const std::size_t end = rows.size() * (w + 1) / workers;
        auto& index = local[w];
        // Rows arrive grouped by file with ascending starts, so a cache of
        // the last key avoids most map lookups.
        const PropertyValues* last_values = nullptr;
        DatasetFiles* last_slot = nullptr;
        for (std::size_t i = begin; i < end; ++i) {
            const IntervalRow& row = rows[i];
            if (last_values == nullptr || *last_values != row.values) {
                last_slot = &index[component_key(row.values)];
                last_values = &row.values;
            }
            auto& list = (*last_slot)[row.dataset_id][row.file_id];
            list.push_back({row.start, row.end});
        }
    };
    if (workers == 1) {
        build_slice(0);
    } else {
        std::vector<std::jthread> threads;
        for (unsigned w = 0; w < workers; ++w) {
            threads.emplace_back(build_slice, w);
        }
    }
    ChunkerIndex::Map merged = std::move(local[0]);
    for (unsigned w = 1; w < workers; ++w) {
        for (auto& [key, datasets] : local[w]) {
            auto& dst = merged[key];
            for (auto& [ds, files] : datasets) {
                for (auto& [file, intervals] : files) {
                    auto& list = dst[ds][file];
                    list.insert(list.end(), intervals.begin(), intervals.end());
                }
            }
        }
    }
    for (auto& [key, datasets] : merged) {
        for (auto& [ds, files] : datasets) {
            for (auto& [file, intervals] : files) {
                normalize_intervals(intervals);
            }
        }
    }
    return ChunkerIndex(std::move(merged));
}

//------------------------------------------------------------------------------
// RangeCursor

RangeCursor::RangeCursor(MixtureKey key, const DatasetFiles& locations, std::uint64_t seed) : key_(std::move(key)) {
    Rng rng(hash_combine(seed, fnv1a(key_.str())));
    std::vector<DatasetId> datasets;
    for (const auto& [ds, files] : locations) {
        datasets.push_back(ds);
    }
    rng.shuffle(datasets);
    for (DatasetId ds : datasets) {
        const FileIntervals& files = locations.at(ds);
        std::vector<FileId> order;
        for (const auto& [file, intervals] : files) {
            order.push_back(file);
        }
        rng.shuffle(order);
        for (FileId file : order) {
            for (const auto& iv : files.at(file)) {
                order_.push_back({ds, file, iv});
                remaining_ += iv.size();
            }
        }
    }
}

std::vector<SampleRange> RangeCursor::take(std::uint64_t n) {
    std::vector<SampleRange> out;
    while (n > 0 && next_ < order_.size()) {
        const SampleRange& r = order_[next_];
        const std::uint64_t available = r.range.size() - offset_;
        const std::uint64_t used = std::min(available, n);
        const SampleId start = r.range.start + offset_;
        out.push_back({r.dataset, r.file, {start, start + used}});
        n -= used;
        remaining_ -= used;
        offset_ += used;
        if (offset_ == r.range.size()) {
            ++next_;
            offset_ = 0;
        }
    }
    return out;
}

void RangeCursor::seek(const Position& p) {
    if (p.range > order_.size() || (p.range < order_.size() && p.offset >= order_[p.range].range.size()) ||
        (p.range == order_.size() && p.offset != 0)) {
        throw Error("RangeCursor: invalid position for '" + key_.str() + "'");
    }
    std::uint64_t remaining = 0;
    for (std::size_t i = p.range; i < order_.size(); ++i) {
        remaining += order_[i].range.size();
    }
    remaining -= p.offset;
    if (remaining != p.remaining) {
        throw Error("RangeCursor: position does not match the index for '" + key_.str() + "'");
    }
    next_ = p.range;
    offset_ = p.offset;
    remaining_ = remaining;
}

}  // namespace mixplane
