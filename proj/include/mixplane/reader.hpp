#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mixplane/util.hpp"

namespace mixplane {

// Sequential access to the records of one data file.
class RecordReader {
public:
    virtual ~RecordReader() = default;

    // Next record without its trailing newline; false at end of file.
    virtual bool next(std::string& record) = 0;
};

using ReaderFactory = std::function<std::unique_ptr<RecordReader>(const std::filesystem::path&)>;

// Picks a reader by file suffix: ".jsonl" and ".jsonl.zst" are built in.
std::unique_ptr<RecordReader> open_records(const std::filesystem::path& path);

// Extension point for other formats, matched on the path suffix.
void register_reader(std::string suffix, ReaderFactory factory);

// Records [start, end) of the file (0-based). Throws IoError if the range runs
// past the end of the file or a record in it is not valid JSON.
std::vector<std::string> read_range(const std::filesystem::path& path, SampleId start, SampleId end);

// All records covered by sorted, disjoint ranges, in one forward scan.
std::vector<std::string> read_ranges(const std::filesystem::path& path, std::span<const Interval> ranges);

class RecordWriter {
public:
    // Compresses with zstd when the path ends in ".zst".
    explicit RecordWriter(const std::filesystem::path& path);
    ~RecordWriter();
    RecordWriter(const RecordWriter&) = delete;
    RecordWriter& operator=(const RecordWriter&) = delete;

    void write(std::string_view record);
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mixplane
