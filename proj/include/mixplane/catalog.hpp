#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mixplane/util.hpp"

namespace mixplane {

//------------------------------------------------------------------------------
// Schema

enum class PropertyKind { String, Categorical };

struct PropertyDef {
    std::string name;
    PropertyKind kind = PropertyKind::String;
    bool nullable = true;
    bool multiple = false;
    // Full value set of a categorical property, in declaration order.
    std::vector<std::string> categories;

    bool operator==(const PropertyDef&) const = default;
};

using PropertyValues = std::map<std::string, std::vector<std::string>>;

class PropertySchema {
public:
    PropertySchema() = default;
    explicit PropertySchema(std::vector<PropertyDef> properties);

    const std::vector<PropertyDef>& properties() const { return properties_; }
    const PropertyDef* find(std::string_view name) const;

    // Throws SchemaError naming the file and sample on any violation.
    // Sorts and deduplicates each value list in place.
    void conform(PropertyValues& values, std::string_view file, SampleId sample) const;

    nlohmann::json to_json() const;
    static PropertySchema from_json(const nlohmann::json& j);

    bool operator==(const PropertySchema&) const = default;

private:
    std::vector<PropertyDef> properties_;
};

//------------------------------------------------------------------------------
// Records and queries

struct SampleRecord {
    DatasetId dataset_id = 0;
    FileId file_id = 0;
    SampleId sample_id = 0;
    PropertyValues values;

    bool operator==(const SampleRecord&) const = default;
};

enum class FilterOp { Eq, Ne, In, NotIn };

struct FilterPredicate {
    std::string property;
    FilterOp op = FilterOp::Eq;
    std::vector<std::string> operand;

    static FilterPredicate from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct IntervalRow {
    FileId file_id = 0;
    DatasetId dataset_id = 0;
    PropertyValues values;
    SampleId start = 0;
    SampleId end = 0;

    bool operator==(const IntervalRow&) const = default;
};

// Maximal runs of consecutive sample ids in one file with identical property
// maps. Rows must be sorted by (file_id, sample_id).
std::vector<IntervalRow> detect_intervals(std::span<const SampleRecord> rows);

//------------------------------------------------------------------------------
// MetadataParser

class MetadataParser {
public:
    virtual ~MetadataParser() = default;

    virtual std::string name() const = 0;

    // Extracts the schema's properties from one parsed record.
    virtual PropertyValues parse(const nlohmann::json& record, const PropertySchema& schema) const = 0;
};

// Reads every property from a field of the same name, either at the top level
// or inside a nested object (e.g. "meta" for The Pile layout). Strings give a
// single value, arrays of strings give several, null or absent gives none.
class JsonFieldParser : public MetadataParser {
public:
    explicit JsonFieldParser(std::string metadata_field = {}) : field_(std::move(metadata_field)) {}

    std::string name() const override { return field_.empty() ? "json" : "json:" + field_; }
    PropertyValues parse(const nlohmann::json& record, const PropertySchema& schema) const override;

private:
    std::string field_;
};

// "json" (top-level fields), "meta" / "pile" (fields under "meta"),
// "json:<field>" for any other nested object.
std::unique_ptr<MetadataParser> make_parser(std::string_view name);

// Schema of The Pile: pile_set_name is a non-nullable, single-valued enum.
PropertySchema pile_schema();

//------------------------------------------------------------------------------
// Catalog

struct FileInfo {
    FileId id = 0;
    DatasetId dataset_id = 0;
    std::string path;
    std::uint64_t samples = 0;
    std::uint64_t fingerprint = 0;
};

struct DatasetInfo {
    DatasetId id = 0;
    std::string name;
    std::string parser;
    PropertySchema schema;
    std::vector<FileId> files;
};

class Catalog {
public:
    Catalog() = default;
    Catalog(Catalog&& other) noexcept;
    Catalog& operator=(Catalog&& other) noexcept;

    // Parses every file with a pool of `workers` threads and commits all
    // records at once. Any failure leaves the catalog unchanged. Re-registering
    // an unchanged (name, path) pair is a no-op; a changed file is an error.
    DatasetId register_dataset(const std::string& name, const std::vector<std::filesystem::path>& files,
                               const MetadataParser& parser, const PropertySchema& schema,
                               unsigned workers = 1);

    // Conjunction of predicates, sorted by (file_id, sample_id).
    std::vector<SampleRecord> execute_filter(std::span<const FilterPredicate> predicates) const;

    // Same filter, then interval detection, without materializing records.
    std::vector<IntervalRow> filter_intervals(std::span<const FilterPredicate> predicates) const;

    std::uint64_t size() const;
    PropertySchema schema() const;
    std::vector<DatasetInfo> datasets() const;
    std::vector<FileInfo> files() const;
    std::optional<FileInfo> file(FileId id) const;

    void save(const std::filesystem::path& path) const;
    static Catalog load(const std::filesystem::path& path);

private:
    struct Column {
        PropertyDef def;
        std::vector<std::string> dictionary;
        std::unordered_map<std::string, std::uint32_t> lookup;
        std::vector<std::uint32_t> offsets{0};
        std::vector<std::uint32_t> values;

        std::uint32_t intern(const std::string& value);
    };

    std::vector<std::uint64_t> select_rows(std::span<const FilterPredicate> predicates) const;
    PropertyValues row_values(std::uint64_t row) const;
    bool same_values(std::uint64_t a, std::uint64_t b) const;
    const Column* column(std::string_view name) const;

    mutable std::shared_mutex mutex_;
    std::vector<DatasetInfo> datasets_;
    std::vector<FileInfo> files_;
    std::vector<Column> columns_;
    std::vector<FileId> row_file_;
    std::vector<SampleId> row_sample_;
};

}  // namespace mixplane
