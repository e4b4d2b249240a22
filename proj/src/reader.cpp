#include "mixplane/reader.hpp"

#include <fstream>
#include <mutex>
#include <utility>

#include <boost/iostreams/device/file.hpp>
#include <boost/iostreams/filter/zstd.hpp>
#include <boost/iostreams/filtering_stream.hpp>
#include <json.hpp>

namespace mixplane {

namespace io = boost::iostreams;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kStreamBuffer = 1 << 16;

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

class JsonlReader : public RecordReader {
public:
    explicit JsonlReader(const fs::path& path) : buffer_(kStreamBuffer) {
        in_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        in_.open(path, std::ios::binary);
        if (!in_) {
            throw IoError("cannot open " + path.string());
        }
    }

    bool next(std::string& record) override {
        if (!std::getline(in_, record)) {
            return false;
        }
        if (!record.empty() && record.back() == '\r') {
            record.pop_back();
        }
        return true;
    }

private:
    std::vector<char> buffer_;
    std::ifstream in_;
};

class ZstdJsonlReader : public RecordReader {
public:
    explicit ZstdJsonlReader(const fs::path& path) {
        if (!fs::is_regular_file(path)) {
            throw IoError("cannot open " + path.string());
        }
        in_.push(io::zstd_decompressor(), kStreamBuffer);
        in_.push(io::file_source(path.string(), std::ios::binary), kStreamBuffer);
    }

    bool next(std::string& record) override {
        try {
            if (!std::getline(in_, record)) {
                return false;
            }
        } catch (const std::exception& e) {
            throw IoError(std::string("zstd decode failed: ") + e.what());
        }
        if (!record.empty() && record.back() == '\r') {
            record.pop_back();
        }
        return true;
    }

private:
    io::filtering_istream in_;
};

struct Registry {
    std::mutex mutex;
    std::vector<std::pair<std::string, ReaderFactory>> factories;

    Registry() {
        factories.emplace_back(".jsonl.zst", [](const fs::path& p) { return std::make_unique<ZstdJsonlReader>(p); });
        factories.emplace_back(".jsonl", [](const fs::path& p) { return std::make_unique<JsonlReader>(p); });
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

std::unique_ptr<RecordReader> open_records(const fs::path& path) {
    const std::string name = path.string();
    ReaderFactory factory;
    {
        Registry& r = registry();
        std::lock_guard lock(r.mutex);
        for (const auto& [suffix, f] : r.factories) {
            if (ends_with(name, suffix)) {
                factory = f;
                break;
            }
        }
    }
    if (!factory) {
        throw IoError("no reader for " + name);
    }
    return factory(path);
}

void register_reader(std::string suffix, ReaderFactory factory) {
    Registry& r = registry();
    std::lock_guard lock(r.mutex);
    // Longer suffixes first so ".jsonl.zst" wins over ".zst".
    auto pos = r.factories.begin();
    while (pos != r.factories.end() && pos->first.size() >= suffix.size()) {
        ++pos;
    }
    r.factories.emplace(pos, std::move(suffix), std::move(factory));
}

std::vector<std::string> read_ranges(const fs::path& path, std::span<const Interval> ranges) {
    std::vector<std::string> out;
    if (ranges.empty()) {
        return out;
    }
    std::uint64_t wanted = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        if (ranges[i].start >= ranges[i].end || (i > 0 && ranges[i].start < ranges[i - 1].end)) {
            throw IoError("read_ranges: ranges for " + path.string() + " are not sorted and disjoint");
        }
        wanted += ranges[i].size();
    }
    out.reserve(wanted);
    auto reader = open_records(path);
    std::string record;
    SampleId line = 0;
    std::size_t r = 0;
    while (r < ranges.size()) {
        if (!reader->next(record)) {
            throw IoError("range [" + std::to_string(ranges[r].start) + "," + std::to_string(ranges[r].end) +
                          ") runs past the end of " + path.string() + " (" + std::to_string(line) +
                          " records)");
        }
        if (line >= ranges[r].start) {
            if (!nlohmann::json::accept(record)) {
                throw IoError("malformed JSON in " + path.string() + " at record " + std::to_string(line));
            }
            out.push_back(std::move(record));
            record.clear();
            if (line + 1 == ranges[r].end) {
                ++r;
            }
        }
        ++line;
    }
    return out;
}

std::vector<std::string> read_range(const fs::path& path, SampleId start, SampleId end) {
    const Interval range{start, end};
    return read_ranges(path, std::span(&range, 1));
}

//------------------------------------------------------------------------------
// RecordWriter

struct RecordWriter::Impl {
    io::filtering_ostream out;
};

RecordWriter::RecordWriter(const fs::path& path) : impl_(std::make_unique<Impl>()) {
    if (ends_with(path.string(), ".zst")) {
        impl_->out.push(io::zstd_compressor(io::zstd_params(io::zstd::default_compression)));
    }
    impl_->out.push(io::file_sink(path.string(), std::ios::binary | std::ios::trunc));
    if (!impl_->out) {
        throw IoError("cannot write " + path.string());
    }
}

RecordWriter::~RecordWriter() {
    try {
        close();
    } catch (...) {
    }
}

void RecordWriter::write(std::string_view record) {
    impl_->out.write(record.data(), static_cast<std::streamsize>(record.size()));
    impl_->out.put('\n');
}

void RecordWriter::close() {
    if (!impl_->out.empty()) {
        impl_->out.reset();
    }
}

}  // namespace mixplane
