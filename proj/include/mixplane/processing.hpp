#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixplane/chunk.hpp"

namespace mixplane {

enum class Mode { Overall, Window, Tokenized };

Mode parse_mode(std::string_view name);
const char* mode_name(Mode m);

struct SamplePointer {
    // Index of the key in chunk.parts order.
    std::uint32_t key = 0;
    FileId file = 0;
    SampleId sample = 0;

    bool operator==(const SamplePointer&) const = default;
};

std::vector<MixtureKey> chunk_keys(const Chunk& chunk);

// Walks one key's ranges: files in a seeded order, samples ascending within a
// file.
class ActiveIterator {
public:
    ActiveIterator(const DatasetFiles& locations, std::uint64_t seed);

    std::optional<std::pair<FileId, SampleId>> next();
    std::uint64_t remaining() const { return remaining_; }

private:
    std::vector<std::pair<FileId, Interval>> ranges_;
    std::size_t range_ = 0;
    SampleId offset_ = 0;
    std::uint64_t remaining_ = 0;
};

std::vector<ActiveIterator> active_iterators(const Chunk& chunk);
// Seeded order in which keys take turns.
std::vector<std::uint32_t> key_rotation(const Chunk& chunk);

// Per-key proportions that windows are apportioned by.
std::vector<double> window_proportions(const Chunk& chunk);

// Every sample of the chunk, keys interleaved round-robin in seeded order.
std::vector<SamplePointer> overall_order(const Chunk& chunk);

// Back-to-back windows whose key counts are the largest-remainders
// apportionment of `window` samples. Strict mode stops before the first
// window that cannot be filled exactly; best-effort moves the missing counts
// to keys that still have samples.
std::vector<SamplePointer> window_order(const Chunk& chunk, std::uint64_t window, bool strict);

//------------------------------------------------------------------------------
// Payload access

// Loads the records a chunk points into, one file at a time, in first-use
// order. With depth > 0 the next `depth` files are opened on background
// threads; output is unaffected by the depth.
class ChunkPayloads {
public:
    ChunkPayloads(const Chunk& chunk, std::span<const SamplePointer> plan, std::size_t prefetch_depth);
    ~ChunkPayloads();
    ChunkPayloads(const ChunkPayloads&) = delete;
    ChunkPayloads& operator=(const ChunkPayloads&) = delete;

    // Raw record line. Load errors surface here.
    const std::string& get(FileId file, SampleId sample);

    // Files opened synchronously by get() because no prefetch had started.
    std::uint64_t hot_path_opens() const { return hot_opens_; }

private:
    struct Loaded {
        std::vector<Interval> ranges;
        std::vector<std::uint64_t> offsets;
        std::vector<std::string> records;
    };
    using Future = std::shared_future<std::shared_ptr<const Loaded>>;

    Future start(FileId file);
    void prefetch_after(std::size_t order_index);

    std::map<FileId, std::string> paths_;
    std::map<FileId, std::vector<Interval>> ranges_;
    std::vector<FileId> order_;
    std::map<FileId, std::size_t> order_index_;
    std::map<FileId, Future> files_;
    std::size_t depth_;
    std::uint64_t hot_opens_ = 0;
};

//------------------------------------------------------------------------------
// Tokenization

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::int32_t> encode(std::string_view text) const = 0;
};

// Splits on ASCII whitespace and hashes each word into a fixed vocabulary.
class WhitespaceTokenizer : public Tokenizer {
public:
    explicit WhitespaceTokenizer(std::uint32_t vocab = 50257) : vocab_(vocab) {}
    std::vector<std::int32_t> encode(std::string_view text) const override;

private:
    std::uint32_t vocab_;
};

// The "text" field of a JSON record, or the whole record if it has none.
std::string record_text(std::string_view record);

struct TokenBatchItem {
    std::vector<std::int32_t> tokens;
    // Per-token key index (all equal: one domain per sequence).
    std::vector<std::uint32_t> domains;
    std::uint32_t key = 0;

    bool operator==(const TokenBatchItem&) const = default;
};

struct TokenizedWindow {
    std::vector<TokenBatchItem> items;
    std::uint64_t skipped_empty = 0;
    // Set when strict mode could not fill the window.
    bool incomplete = false;
};

// One window of `window` token sequences (the chunk size), apportioned over
// keys like window_order. Each sequence is cut from one key's token stream;
// tokens left over at the end of the chunk are dropped.
TokenizedWindow tokenized_window(const Chunk& chunk, ChunkPayloads& payloads, const Tokenizer& tokenizer,
                                 std::uint64_t sequence_length, std::uint64_t window, bool strict);

struct DomainLoss {
    double loss_sum = 0.0;
    std::uint64_t tokens = 0;
    bool operator==(const DomainLoss&) const = default;
};

std::map<std::uint32_t, DomainLoss> per_domain_loss(std::span<const double> token_losses,
                                                    std::span<const std::uint32_t> domains);

}  // namespace mixplane
