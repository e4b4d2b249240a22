#include "mixplane/processing.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include <json.hpp>

#include "mixplane/reader.hpp"

namespace mixplane {

Mode parse_mode(std::string_view name) {
    if (name == "overall") {
        return Mode::Overall;
    }
    if (name == "window") {
        return Mode::Window;
    }
    if (name == "tokenized") {
        return Mode::Tokenized;
    }
    throw Error("unknown processing mode '" + std::string(name) + "'");
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Overall: return "overall";
        case Mode::Window: return "window";
        case Mode::Tokenized: return "tokenized";
    }
    return "?";
}

std::vector<MixtureKey> chunk_keys(const Chunk& chunk) {
    std::vector<MixtureKey> keys;
    for (const auto& [key, datasets] : chunk.parts) {
        keys.push_back(key);
    }
    return keys;
}

ActiveIterator::ActiveIterator(const DatasetFiles& locations, std::uint64_t seed) {
    std::vector<std::pair<DatasetId, FileId>> files;
    for (const auto& [ds, by_file] : locations) {
        for (const auto& [file, ranges] : by_file) {
            files.emplace_back(ds, file);
        }
    }
    Rng rng(seed);
    rng.shuffle(files);
    for (const auto& [ds, file] : files) {
        for (const auto& r : locations.at(ds).at(file)) {
            ranges_.emplace_back(file, r);
            remaining_ += r.size();
        }
    }
}

std::optional<std::pair<FileId, SampleId>> ActiveIterator::next() {
    if (range_ == ranges_.size()) {
        return std::nullopt;
    }
    const auto& [file, r] = ranges_[range_];
    const SampleId s = r.start + offset_;
    if (++offset_ == r.size()) {
        ++range_;
        offset_ = 0;
    }
    --remaining_;
    return std::pair{file, s};
}

std::vector<ActiveIterator> active_iterators(const Chunk& chunk) {
    std::vector<ActiveIterator> out;
    for (const auto& [key, datasets] : chunk.parts) {
        out.emplace_back(datasets, hash_combine(chunk.seed, fnv1a(key.str())));
    }
    return out;
}

std::vector<std::uint32_t> key_rotation(const Chunk& chunk) {
    std::vector<std::uint32_t> order(chunk.parts.size());
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(hash_combine(chunk.seed, 0x726f746174696f6eULL));
    rng.shuffle(order);
    return order;
}

std::vector<double> window_proportions(const Chunk& chunk) {
    std::vector<double> props;
    // The requested mixture when the chunk holds exactly its keys, otherwise
    // the chunk's realized composition (arbitrary or short best-effort chunks).
    bool requested = chunk.mixture && chunk.mixture->weights.size() == chunk.parts.size();
    if (requested) {
        for (const auto& [key, datasets] : chunk.parts) {
            auto it = chunk.mixture->weights.find(key);
            if (it == chunk.mixture->weights.end() || chunk.count(key) == 0) {
                requested = false;
                break;
            }
            props.push_back(it->second);
        }
    }
    if (!requested) {
        props.clear();
        for (const auto& [key, datasets] : chunk.parts) {
            props.push_back(static_cast<double>(chunk.count(key)));
        }
    }
    return props;
}

std::vector<SamplePointer> overall_order(const Chunk& chunk) {
    auto iters = active_iterators(chunk);
    const auto rotation = key_rotation(chunk);
    std::vector<SamplePointer> out;
    out.reserve(chunk.size());
    bool any = true;
    while (any) {
        any = false;
        for (std::uint32_t k : rotation) {
            if (auto s = iters[k].next()) {
                out.push_back({k, s->first, s->second});
                any = true;
            }
        }
    }
    return out;
}

namespace {

// Counts for one window given what each key still has; nullopt when strict
// and the apportionment cannot be met.
std::optional<std::vector<std::uint64_t>> window_counts(std::span<const double> props,
                                                        std::span<const std::uint64_t> available,
                                                        std::uint64_t window, bool strict) {
    std::vector<std::uint64_t> need = largest_remainders(props, window);
    if (strict) {
        for (std::size_t k = 0; k < need.size(); ++k) {
            if (need[k] > available[k]) {
                return std::nullopt;
            }
        }
        return need;
    }
    const std::uint64_t total = std::accumulate(available.begin(), available.end(), std::uint64_t{0});
    if (total <= window) {
        return std::vector<std::uint64_t>(available.begin(), available.end());
    }
    for (;;) {
        std::uint64_t shortfall = 0;
        for (std::size_t k = 0; k < need.size(); ++k) {
            if (need[k] > available[k]) {
                shortfall += need[k] - available[k];
                need[k] = available[k];
            }
        }
        if (shortfall == 0) {
            return need;
        }
        std::vector<double> weights(need.size(), 0.0);
        for (std::size_t k = 0; k < need.size(); ++k) {
            if (available[k] > need[k]) {
                weights[k] = props[k] > 0 ? props[k] : 1e-12;
            }
        }
        const auto extra = largest_remainders(weights, shortfall);
        for (std::size_t k = 0; k < need.size(); ++k) {
            need[k] += extra[k];
        }
    }
}

}  // namespace

std::vector<SamplePointer> window_order(const Chunk& chunk, std::uint64_t window, bool strict) {
    if (window == 0) {
        throw Error("window_order: window size must be positive");
    }
    auto iters = active_iterators(chunk);
    const auto rotation = key_rotation(chunk);
    const auto props = window_proportions(chunk);
    std::vector<SamplePointer> out;
    out.reserve(chunk.size());
    std::vector<std::uint64_t> available(iters.size());
    for (;;) {
        for (std::size_t k = 0; k < iters.size(); ++k) {
            available[k] = iters[k].remaining();
        }
        if (std::all_of(available.begin(), available.end(), [](auto a) { return a == 0; })) {
            break;
        }
        auto counts = window_counts(props, available, window, strict);
        if (!counts) {
            break;
        }
        bool any = true;
        while (any) {
            any = false;
            for (std::uint32_t k : rotation) {
                if ((*counts)[k] > 0) {
                    auto s = iters[k].next();
                    out.push_back({k, s->first, s->second});
                    --(*counts)[k];
                    any = true;
                }
            }
        }
    }
    return out;
}

//------------------------------------------------------------------------------
// ChunkPayloads

ChunkPayloads::ChunkPayloads(const Chunk& chunk, std::span<const SamplePointer> plan, std::size_t prefetch_depth)
    : depth_(prefetch_depth) {
    for (const auto& [key, datasets] : chunk.parts) {
        for (const auto& [ds, files] : datasets) {
            for (const auto& [file, ranges] : files) {
                auto& dst = ranges_[file];
                dst.insert(dst.end(), ranges.begin(), ranges.end());
            }
        }
    }
    for (auto& [file, ranges] : ranges_) {
        normalize_intervals(ranges);
        auto it = chunk.files.find(file);
        if (it == chunk.files.end()) {
            throw ProtocolError("chunk " + std::to_string(chunk.chunk_id) + " has no path for file " +
                                std::to_string(file));
        }
        paths_.emplace(file, it->second);
    }
    for (const auto& p : plan) {
        if (order_index_.emplace(p.file, order_.size()).second) {
            order_.push_back(p.file);
        }
    }
    for (const auto& [file, ranges] : ranges_) {
        if (order_index_.emplace(file, order_.size()).second) {
            order_.push_back(file);
        }
    }
    if (depth_ > 0) {
        for (std::size_t i = 0; i < std::min(depth_, order_.size()); ++i) {
            files_.emplace(order_[i], start(order_[i]));
        }
    }
}

ChunkPayloads::~ChunkPayloads() {
    for (auto& [file, f] : files_) {
        if (f.valid()) {
            f.wait();
        }
    }
}

ChunkPayloads::Future ChunkPayloads::start(FileId file) {
    const std::string path = paths_.at(file);
    const std::vector<Interval> ranges = ranges_.at(file);
    return std::async(std::launch::async, [path, ranges] {
        auto loaded = std::make_shared<Loaded>();
        loaded->ranges = ranges;
        std::uint64_t off = 0;
        for (const auto& r : ranges) {
            loaded->offsets.push_back(off);
            off += r.size();
        }
        loaded->records = read_ranges(path, ranges);
        return std::shared_ptr<const Loaded>(std::move(loaded));
    }).share();
}

void ChunkPayloads::prefetch_after(std::size_t order_index) {
    for (std::size_t i = order_index + 1; i < order_.size() && i <= order_index + depth_; ++i) {
        if (!files_.contains(order_[i])) {
            files_.emplace(order_[i], start(order_[i]));
        }
    }
}

const std::string& ChunkPayloads::get(FileId file, SampleId sample) {
    auto it = files_.find(file);
    if (it == files_.end()) {
        if (!paths_.contains(file)) {
            throw Error("sample " + std::to_string(sample) + " of file " + std::to_string(file) +
                        " is not part of this chunk");
        }
        ++hot_opens_;
        std::packaged_task<std::shared_ptr<const Loaded>()> task([this, file] { return start(file).get(); });
        it = files_.emplace(file, task.get_future().share()).first;
        task();
    }
    if (depth_ > 0) {
        prefetch_after(order_index_.at(file));
    }
    const Loaded& loaded = *it->second.get();
    auto r = std::upper_bound(loaded.ranges.begin(), loaded.ranges.end(), sample,
                              [](SampleId s, const Interval& iv) { return s < iv.start; });
    if (r == loaded.ranges.begin() || sample >= std::prev(r)->end) {
        throw Error("sample " + std::to_string(sample) + " of file " + std::to_string(file) +
                    " is not part of this chunk");
    }
    --r;
    const auto idx = loaded.offsets[static_cast<std::size_t>(r - loaded.ranges.begin())] + (sample - r->start);
    return loaded.records[idx];
}

//------------------------------------------------------------------------------
// Tokenization

std::vector<std::int32_t> WhitespaceTokenizer::encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    std::size_t i = 0;
    const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && space(text[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !space(text[i])) {
            ++i;
        }
        if (i > start) {
            out.push_back(static_cast<std::int32_t>(fnv1a(text.substr(start, i - start)) % vocab_));
        }
    }
    return out;
}

std::string record_text(std::string_view record) {
    auto j = nlohmann::json::parse(record, nullptr, false);
    if (j.is_object()) {
        auto it = j.find("text");
        if (it != j.end() && it->is_string()) {
            return it->get<std::string>();
        }
    }
    return std::string(record);
}

TokenizedWindow tokenized_window(const Chunk& chunk, ChunkPayloads& payloads, const Tokenizer& tokenizer,
                                 std::uint64_t sequence_length, std::uint64_t window, bool strict) {
    if (sequence_length == 0 || window == 0) {
        throw Error("tokenized_window: sequence length and window must be positive");
    }
    TokenizedWindow result;
    auto iters = active_iterators(chunk);
    const auto rotation = key_rotation(chunk);
    const auto props = window_proportions(chunk);
    const std::size_t k_count = iters.size();

    std::vector<std::deque<std::int32_t>> buffers(k_count);
    std::vector<bool> drained(k_count, false);
    std::vector<std::vector<TokenBatchItem>> sequences(k_count);

    // Cuts one more sequence from key k's token stream, reading samples as
    // needed. false once the key cannot supply a full sequence.
    const auto produce = [&](std::uint32_t k) {
        auto& buf = buffers[k];
        while (buf.size() < sequence_length) {
            auto s = iters[k].next();
            if (!s) {
                drained[k] = true;
                return false;
            }
            const auto tokens = tokenizer.encode(record_text(payloads.get(s->first, s->second)));
            if (tokens.empty()) {
                ++result.skipped_empty;
            }
            buf.insert(buf.end(), tokens.begin(), tokens.end());
        }
        TokenBatchItem item;
        item.key = k;
        item.tokens.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(sequence_length));
        item.domains.assign(sequence_length, k);
        buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(sequence_length));
        sequences[k].push_back(std::move(item));
        return true;
    };

    std::vector<std::uint64_t> need = largest_remainders(props, window);
    for (;;) {
        std::uint64_t shortfall = 0;
        for (std::uint32_t k = 0; k < k_count; ++k) {
            while (sequences[k].size() < need[k] && produce(k)) {
            }
            if (sequences[k].size() < need[k]) {
                shortfall += need[k] - sequences[k].size();
                need[k] = sequences[k].size();
            }
        }
        if (shortfall == 0) {
            break;
        }
        if (strict) {
            result.incomplete = true;
            return result;
        }
        std::vector<double> weights(k_count, 0.0);
        bool any = false;
        for (std::uint32_t k = 0; k < k_count; ++k) {
            if (!drained[k]) {
                weights[k] = props[k] > 0 ? props[k] : 1e-12;
                any = true;
            }
        }
        if (!any) {
            break;
        }
        const auto extra = largest_remainders(weights, shortfall);
        for (std::uint32_t k = 0; k < k_count; ++k) {
            need[k] += extra[k];
        }
    }

    std::vector<std::size_t> next(k_count, 0);
    bool any = true;
    while (any) {
        any = false;
        for (std::uint32_t k : rotation) {
            if (next[k] < sequences[k].size()) {
                result.items.push_back(std::move(sequences[k][next[k]++]));
                any = true;
            }
        }
    }
    return result;
}

std::map<std::uint32_t, DomainLoss> per_domain_loss(std::span<const double> token_losses,
                                                    std::span<const std::uint32_t> domains) {
    if (token_losses.size() != domains.size()) {
        throw Error("per_domain_loss: " + std::to_string(token_losses.size()) + " losses but " +
                    std::to_string(domains.size()) + " domain tags");
    }
    std::map<std::uint32_t, DomainLoss> out;
    for (std::size_t i = 0; i < token_losses.size(); ++i) {
        auto& d = out[domains[i]];
        d.loss_sum += token_losses[i];
        ++d.tokens;
    }
    return out;
}

}  // namespace mixplane
