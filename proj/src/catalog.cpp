#include "mixplane/catalog.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_set>

#include "mixplane/intervals.hpp"
#include "mixplane/reader.hpp"

namespace mixplane {

using nlohmann::json;
namespace fs = std::filesystem;

//------------------------------------------------------------------------------
// PropertySchema

PropertySchema::PropertySchema(std::vector<PropertyDef> properties) : properties_(std::move(properties)) {
    std::set<std::string> names;
    for (auto& p : properties_) {
        if (p.name.empty()) {
            throw SchemaError("property with empty name");
        }
        if (!names.insert(p.name).second) {
            throw SchemaError("duplicate property '" + p.name + "'");
        }
        if (p.kind == PropertyKind::Categorical) {
            if (p.categories.empty()) {
                throw SchemaError("categorical property '" + p.name + "' lists no values");
            }
            std::set<std::string> seen(p.categories.begin(), p.categories.end());
            if (seen.size() != p.categories.size()) {
                throw SchemaError("categorical property '" + p.name + "' repeats a value");
            }
        } else if (!p.categories.empty()) {
            throw SchemaError("string property '" + p.name + "' cannot enumerate values");
        }
    }
}

const PropertyDef* PropertySchema::find(std::string_view name) const {
    for (const auto& p : properties_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

void PropertySchema::conform(PropertyValues& values, std::string_view file, SampleId sample) const {
    const auto where = [&] { return " (file " + std::string(file) + ", sample " + std::to_string(sample) + ")"; };
    for (const auto& [name, list] : values) {
        if (find(name) == nullptr) {
            throw SchemaError("property '" + name + "' is not in the schema" + where());
        }
    }
    for (const auto& def : properties_) {
        auto it = values.find(def.name);
        if (it == values.end() || it->second.empty()) {
            if (!def.nullable) {
                throw SchemaError("non-nullable property '" + def.name + "' has no value" + where());
            }
            if (it != values.end()) {
                values.erase(it);
            }
            continue;
        }
        auto& list = it->second;
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        if (list.size() > 1 && !def.multiple) {
            throw SchemaError("single-valued property '" + def.name + "' has " + std::to_string(list.size()) +
                              " values" + where());
        }
        if (def.kind == PropertyKind::Categorical) {
            for (const auto& v : list) {
                if (std::find(def.categories.begin(), def.categories.end(), v) == def.categories.end()) {
                    throw SchemaError("value '" + v + "' is not a category of '" + def.name + "'" + where());
                }
            }
        }
    }
}

json PropertySchema::to_json() const {
    json out = json::array();
    for (const auto& p : properties_) {
        json j = {{"name", p.name},
                  {"kind", p.kind == PropertyKind::Categorical ? "categorical" : "string"},
                  {"nullable", p.nullable},
                  {"multiple", p.multiple}};
        if (p.kind == PropertyKind::Categorical) {
            j["categories"] = p.categories;
        }
        out.push_back(std::move(j));
    }
    return out;
}

PropertySchema PropertySchema::from_json(const json& j) {
    const json& list = j.is_object() ? j.at("properties") : j;
    std::vector<PropertyDef> defs;
    for (const auto& p : list) {
        PropertyDef def;
        def.name = p.at("name").get<std::string>();
        const std::string kind = p.value("kind", "string");
        if (kind == "categorical" || kind == "enum") {
            def.kind = PropertyKind::Categorical;
        } else if (kind != "string") {
            throw SchemaError("unknown property kind '" + kind + "'");
        }
        def.nullable = p.value("nullable", true);
        def.multiple = p.value("multiple", false);
        if (p.contains("categories")) {
            def.categories = p.at("categories").get<std::vector<std::string>>();
        }
        defs.push_back(std::move(def));
    }
    return PropertySchema(std::move(defs));
}

PropertySchema pile_schema() {
    PropertyDef def;
    def.name = "pile_set_name";
    def.kind = PropertyKind::Categorical;
    def.nullable = false;
    def.multiple = false;
    def.categories = {"ArXiv",        "BookCorpus2",     "Books3",          "DM Mathematics",
                      "Enron Emails", "EuroParl",        "FreeLaw",         "Github",
                      "Gutenberg (PG-19)", "HackerNews", "NIH ExPorter",    "OpenSubtitles",
                      "OpenWebText2", "PhilPapers",      "Pile-CC",         "PubMed Abstracts",
                      "PubMed Central", "StackExchange", "USPTO Backgrounds", "Ubuntu IRC",
                      "Wikipedia (en)", "YoutubeSubtitles"};
    return PropertySchema({def});
}

//------------------------------------------------------------------------------
// Parsers

PropertyValues JsonFieldParser::parse(const json& record, const PropertySchema& schema) const {
    const json* source = &record;
    if (!field_.empty()) {
        auto it = record.find(field_);
        if (it == record.end() || !it->is_object()) {
            static const json empty = json::object();
            source = &empty;
        } else {
            source = &*it;
        }
    }
    PropertyValues values;
    for (const auto& def : schema.properties()) {
        auto it = source->find(def.name);
        if (it == source->end() || it->is_null()) {
            continue;
        }
        std::vector<std::string>& list = values[def.name];
        const auto add = [&](const json& v) {
            if (v.is_string()) {
                list.push_back(v.get<std::string>());
            } else if (!v.is_null()) {
                list.push_back(v.dump());
            }
        };
        if (it->is_array()) {
            for (const auto& v : *it) {
                add(v);
            }
        } else {
            add(*it);
        }
    }
    return values;
}

std::unique_ptr<MetadataParser> make_parser(std::string_view name) {
    if (name == "json") {
        return std::make_unique<JsonFieldParser>();
    }
    if (name == "meta" || name == "pile") {
        return std::make_unique<JsonFieldParser>("meta");
    }
    if (name.starts_with("json:")) {
        return std::make_unique<JsonFieldParser>(std::string(name.substr(5)));
    }
    throw SchemaError("unknown metadata parser '" + std::string(name) + "'");
}

//------------------------------------------------------------------------------
// Filters

namespace {

FilterOp parse_op(const std::string& op) {
    if (op == "==" || op == "eq") return FilterOp::Eq;
    if (op == "!=" || op == "ne") return FilterOp::Ne;
    if (op == "in") return FilterOp::In;
    if (op == "not-in" || op == "not in" || op == "not_in") return FilterOp::NotIn;
    throw QueryError("unknown filter operator '" + op + "'");
}

const char* op_name(FilterOp op) {
    switch (op) {
        case FilterOp::Eq: return "==";
        case FilterOp::Ne: return "!=";
        case FilterOp::In: return "in";
        case FilterOp::NotIn: return "not-in";
    }
    return "?";
}

std::vector<std::string> operand_list(const json& v) {
    if (v.is_array()) {
        return v.get<std::vector<std::string>>();
    }
    return {v.get<std::string>()};
}

}  // namespace

FilterPredicate FilterPredicate::from_json(const json& j) {
    FilterPredicate p;
    if (j.is_array()) {
        if (j.size() != 3) {
            throw QueryError("filter triple must have 3 elements");
        }
        p.property = j[0].get<std::string>();
        p.op = parse_op(j[1].get<std::string>());
        p.operand = operand_list(j[2]);
    } else {
        p.property = j.at("property").get<std::string>();
        p.op = parse_op(j.at("op").get<std::string>());
        p.operand = operand_list(j.contains("values") ? j.at("values") : j.at("value"));
    }
    return p;
}

json FilterPredicate::to_json() const {
    return {{"property", property}, {"op", op_name(op)}, {"values", operand}};
}

//------------------------------------------------------------------------------
// Interval detection over records

std::vector<IntervalRow> detect_intervals(std::span<const SampleRecord> rows) {
    std::vector<IntervalRow> out;
    for_each_run(
        rows.size(), [&](std::size_t i) { return rows[i].file_id; },
        [&](std::size_t i) { return rows[i].sample_id; },
        [&](std::size_t a, std::size_t b) { return rows[a].values == rows[b].values; },
        [&](std::size_t first, std::size_t last) {
            out.push_back({rows[first].file_id, rows[first].dataset_id, rows[first].values, rows[first].sample_id,
                           rows[last].sample_id + 1});
        });
    return out;
}

//------------------------------------------------------------------------------
// Catalog

namespace {

// Per-file parse output, interned locally so workers share nothing.
struct ParsedColumn {
    std::vector<std::string> dictionary;
    std::unordered_map<std::string, std::uint32_t> lookup;
    std::vector<std::uint32_t> offsets{0};
    std::vector<std::uint32_t> values;
};

struct ParsedFile {
    std::string path;
    std::uint64_t samples = 0;
    std::uint64_t fingerprint = kFnvOffset;
    std::vector<ParsedColumn> columns;
};

ParsedFile parse_file(const std::string& path, const MetadataParser& parser, const PropertySchema& schema) {
    ParsedFile out;
    out.path = path;
    out.columns.resize(schema.properties().size());
    auto reader = open_records(path);
    std::string line;
    while (reader->next(line)) {
        out.fingerprint = fnv1a(line, out.fingerprint);
        out.fingerprint = fnv1a("\n", out.fingerprint);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("malformed JSON (file " + path + ", sample " + std::to_string(out.samples) +
                              "): " + e.what());
        }
        PropertyValues values = parser.parse(record, schema);
        schema.conform(values, path, out.samples);
        const auto& defs = schema.properties();
        for (std::size_t c = 0; c < defs.size(); ++c) {
            ParsedColumn& col = out.columns[c];
            auto it = values.find(defs[c].name);
            if (it != values.end()) {
                for (const auto& v : it->second) {
                    auto [pos, inserted] = col.lookup.emplace(v, static_cast<std::uint32_t>(col.dictionary.size()));
                    if (inserted) {
                        col.dictionary.push_back(v);
                    }
                    col.values.push_back(pos->second);
                }
            }
            col.offsets.push_back(static_cast<std::uint32_t>(col.values.size()));
        }
        ++out.samples;
    }
    return out;
}

std::string normalize_path(const fs::path& p) {
    std::error_code ec;
    fs::path abs = fs::absolute(p, ec);
    return (ec ? p : abs.lexically_normal()).string();
}

}  // namespace

Catalog::Catalog(Catalog&& other) noexcept {
    std::unique_lock lock(other.mutex_);
    datasets_ = std::move(other.datasets_);
    files_ = std::move(other.files_);
    columns_ = std::move(other.columns_);
    row_file_ = std::move(other.row_file_);
    row_sample_ = std::move(other.row_sample_);
}

Catalog& Catalog::operator=(Catalog&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        datasets_ = std::move(other.datasets_);
        files_ = std::move(other.files_);
        columns_ = std::move(other.columns_);
        row_file_ = std::move(other.row_file_);
        row_sample_ = std::move(other.row_sample_);
    }
    return *this;
}

std::uint32_t Catalog::Column::intern(const std::string& value) {
    auto [it, inserted] = lookup.emplace(value, static_cast<std::uint32_t>(dictionary.size()));
    if (inserted) {
        dictionary.push_back(value);
    }
    return it->second;
}

DatasetId Catalog::register_dataset(const std::string& name, const std::vector<fs::path>& files,
                                    const MetadataParser& parser, const PropertySchema& schema, unsigned workers) {
    static std::mutex registration_mutex;
    std::lock_guard registration(registration_mutex);

    if (name.empty()) {
        throw SchemaError("dataset name must not be empty");
    }

    std::vector<std::string> paths;
    std::map<std::string, FileInfo> known;
    std::optional<DatasetInfo> existing;
    {
        std::shared_lock lock(mutex_);
        for (const auto& d : datasets_) {
            if (d.name == name) {
                existing = d;
            }
        }
        if (existing) {
            if (!(existing->schema == schema)) {
                throw SchemaError("dataset '" + name + "' is already registered with a different schema");
            }
            for (FileId f : existing->files) {
                known.emplace(files_[f].path, files_[f]);
            }
        }
        for (const auto& def : schema.properties()) {
            if (const Column* col = column(def.name); col != nullptr && !(col->def == def)) {
                throw SchemaError("property '" + def.name + "' conflicts with an existing definition");
            }
        }
    }
    std::set<std::string> seen;
    for (const auto& f : files) {
        std::string p = normalize_path(f);
        if (!fs::is_regular_file(p)) {
            throw IoError("cannot read " + p);
        }
        if (seen.insert(p).second) {
            paths.push_back(std::move(p));
        }
    }

    // Parse with a worker pool; results land in file order.
    std::vector<ParsedFile> parsed(paths.size());
    std::vector<std::exception_ptr> failures(paths.size());
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < paths.size(); i = next++) {
            try {
                parsed[i] = parse_file(paths[i], parser, schema);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const unsigned pool = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(paths.size())));
    if (pool == 1) {
        work();
    } else {
        std::vector<std::jthread> threads;
        for (unsigned t = 0; t < pool; ++t) {
            threads.emplace_back(work);
        }
    }
    for (const auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    for (const auto& pf : parsed) {
        auto it = known.find(pf.path);
        if (it != known.end() && (it->second.fingerprint != pf.fingerprint || it->second.samples != pf.samples)) {
            throw SchemaError("file " + pf.path + " changed since it was registered in '" + name + "'");
        }
    }

    std::unique_lock lock(mutex_);
    DatasetId id;
    if (existing) {
        id = existing->id;
    } else {
        id = static_cast<DatasetId>(datasets_.size());
        datasets_.push_back({id, name, parser.name(), schema, {}});
    }
    std::vector<std::size_t> column_of;
    for (const auto& def : schema.properties()) {
        std::size_t c = 0;
        while (c < columns_.size() && columns_[c].def.name != def.name) {
            ++c;
        }
        if (c == columns_.size()) {
            Column col;
            col.def = def;
            for (const auto& v : def.categories) {
                col.intern(v);
            }
            col.offsets.assign(row_file_.size() + 1, 0);
            columns_.push_back(std::move(col));
        }
        column_of.push_back(c);
    }
    for (auto& pf : parsed) {
        if (known.count(pf.path) != 0) {
            continue;
        }
        const FileId fid = static_cast<FileId>(files_.size());
        files_.push_back({fid, id, pf.path, pf.samples, pf.fingerprint});
        datasets_[id].files.push_back(fid);
        std::vector<bool> touched(columns_.size(), false);
        for (std::size_t c = 0; c < pf.columns.size(); ++c) {
            Column& col = columns_[column_of[c]];
            touched[column_of[c]] = true;
            const ParsedColumn& local = pf.columns[c];
            std::vector<std::uint32_t> remap(local.dictionary.size());
            for (std::size_t v = 0; v < local.dictionary.size(); ++v) {
                remap[v] = col.intern(local.dictionary[v]);
            }
            const std::uint32_t base = col.offsets.back();
            for (std::size_t s = 0; s < pf.samples; ++s) {
                for (std::uint32_t k = local.offsets[s]; k < local.offsets[s + 1]; ++k) {
                    col.values.push_back(remap[local.values[k]]);
                }
                col.offsets.push_back(base + local.offsets[s + 1]);
            }
        }
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            if (!touched[c]) {
                columns_[c].offsets.resize(columns_[c].offsets.size() + pf.samples, columns_[c].offsets.back());
            }
        }
        for (SampleId s = 0; s < pf.samples; ++s) {
            row_file_.push_back(fid);
            row_sample_.push_back(s);
        }
    }
    return id;
}

const Catalog::Column* Catalog::column(std::string_view name) const {
    for (const auto& c : columns_) {
        if (c.def.name == name) {
            return &c;
        }
    }
    return nullptr;
}

PropertyValues Catalog::row_values(std::uint64_t row) const {
    PropertyValues values;
    for (const auto& col : columns_) {
        const std::uint32_t b = col.offsets[row];
        const std::uint32_t e = col.offsets[row + 1];
        if (b == e) {
            continue;
        }
        auto& list = values[col.def.name];
        for (std::uint32_t k = b; k < e; ++k) {
            list.push_back(col.dictionary[col.values[k]]);
        }
        std::sort(list.begin(), list.end());
    }
    return values;
}

bool Catalog::same_values(std::uint64_t a, std::uint64_t b) const {
    for (const auto& col : columns_) {
        const std::uint32_t ab = col.offsets[a], ae = col.offsets[a + 1];
        const std::uint32_t bb = col.offsets[b], be = col.offsets[b + 1];
        if (ae - ab != be - bb) {
            return false;
        }
        if (!std::is_permutation(col.values.begin() + ab, col.values.begin() + ae, col.values.begin() + bb)) {
            return false;
        }
    }
    return true;
}

std::vector<std::uint64_t> Catalog::select_rows(std::span<const FilterPredicate> predicates) const {
    if (row_file_.empty()) {
        throw QueryError("catalog is empty");
    }
    struct Compiled {
        const Column* col;
        bool positive;
        std::unordered_set<std::uint32_t> ids;
    };
    std::vector<Compiled> compiled;
    for (const auto& p : predicates) {
        const Column* col = column(p.property);
        if (col == nullptr) {
            throw QueryError("unknown property '" + p.property + "'");
        }
        if ((p.op == FilterOp::Eq || p.op == FilterOp::Ne) && p.operand.size() != 1) {
            throw QueryError("operator on '" + p.property + "' needs exactly one value");
        }
        Compiled c{col, p.op == FilterOp::Eq || p.op == FilterOp::In, {}};
        for (const auto& v : p.operand) {
            if (col->def.kind == PropertyKind::Categorical &&
                std::find(col->def.categories.begin(), col->def.categories.end(), v) == col->def.categories.end()) {
                throw QueryError("'" + v + "' is not a category of '" + p.property + "'");
            }
            if (auto it = col->lookup.find(v); it != col->lookup.end()) {
                c.ids.insert(it->second);
            }
        }
        compiled.push_back(std::move(c));
    }
    std::vector<std::uint64_t> rows;
    const std::uint64_t n = row_file_.size();
    for (std::uint64_t r = 0; r < n; ++r) {
        bool keep = true;
        for (const auto& c : compiled) {
            bool any = false;
            for (std::uint32_t k = c.col->offsets[r]; k < c.col->offsets[r + 1]; ++k) {
                if (c.ids.count(c.col->values[k]) != 0) {
                    any = true;
                    break;
                }
            }
            if (any != c.positive) {
                keep = false;
                break;
            }
        }
        if (keep) {
            rows.push_back(r);
        }
    }
    return rows;
}

std::vector<SampleRecord> Catalog::execute_filter(std::span<const FilterPredicate> predicates) const {
    std::shared_lock lock(mutex_);
    const auto rows = select_rows(predicates);
    std::vector<SampleRecord> out;
    out.reserve(rows.size());
    for (std::uint64_t r : rows) {
        out.push_back({files_[row_file_[r]].dataset_id, row_file_[r], row_sample_[r], row_values(r)});
    }
    return out;
}

std::vector<IntervalRow> Catalog::filter_intervals(std::span<const FilterPredicate> predicates) const {
    std::shared_lock lock(mutex_);
    const auto rows = select_rows(predicates);
    std::vector<IntervalRow> out;
    for_each_run(
        rows.size(), [&](std::size_t i) { return row_file_[rows[i]]; },
        [&](std::size_t i) { return row_sample_[rows[i]]; },
        [&](std::size_t a, std::size_t b) { return same_values(rows[a], rows[b]); },
        [&](std::size_t first, std::size_t last) {
            const std::uint64_t r = rows[first];
            out.push_back({row_file_[r], files_[row_file_[r]].dataset_id, row_values(r), row_sample_[r],
                           row_sample_[rows[last]] + 1});
        });
    return out;
}

std::uint64_t Catalog::size() const {
    std::shared_lock lock(mutex_);
    return row_file_.size();
}

PropertySchema Catalog::schema() const {
    std::shared_lock lock(mutex_);
    std::vector<PropertyDef> defs;
    for (const auto& c : columns_) {
        defs.push_back(c.def);
    }
    return PropertySchema(std::move(defs));
}

std::vector<DatasetInfo> Catalog::datasets() const {
    std::shared_lock lock(mutex_);
    return datasets_;
}

std::vector<FileInfo> Catalog::files() const {
    std::shared_lock lock(mutex_);
    return files_;
}

std::optional<FileInfo> Catalog::file(FileId id) const {
    std::shared_lock lock(mutex_);
    if (id >= files_.size()) {
        return std::nullopt;
    }
    return files_[id];
}

//------------------------------------------------------------------------------
// Snapshot
//
// "MIXPCAT1", u64 header length, JSON header (datasets, files, columns with
// dictionaries), u64 row count, then raw little-endian arrays: row files (u32),
// row samples (u64), and per column its offsets (rows + 1, u32), u64 value
// count and values (u32).

namespace {

constexpr char kSnapshotMagic[8] = {'M', 'I', 'X', 'P', 'C', 'A', 'T', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void write_array(std::ostream& out, const std::vector<T>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw IoError("truncated catalog snapshot");
    }
    return v;
}

template <class T>
void read_array(std::istream& in, std::vector<T>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) {
        throw IoError("truncated catalog snapshot");
    }
}

}  // namespace

void Catalog::save(const fs::path& path) const {
    std::shared_lock lock(mutex_);
    json header;
    header["version"] = 1;
    json ds = json::array();
    for (const auto& d : datasets_) {
        ds.push_back({{"id", d.id}, {"name", d.name}, {"parser", d.parser}, {"schema", d.schema.to_json()},
                      {"files", d.files}});
    }
    header["datasets"] = std::move(ds);
    json fl = json::array();
    for (const auto& f : files_) {
        fl.push_back({{"id", f.id}, {"dataset", f.dataset_id}, {"path", f.path}, {"samples", f.samples},
                      {"fingerprint", f.fingerprint}});
    }
    header["files"] = std::move(fl);
    json cols = json::array();
    for (const auto& c : columns_) {
        cols.push_back({{"def", PropertySchema({c.def}).to_json()[0]}, {"dictionary", c.dictionary}});
    }
    header["columns"] = std::move(cols);
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
        write_pod<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        write_pod<std::uint64_t>(out, row_file_.size());
        write_array(out, row_file_);
        write_array(out, row_sample_);
        for (const auto& c : columns_) {
            write_array(out, c.offsets);
            write_pod<std::uint64_t>(out, c.values.size());
            write_array(out, c.values);
        }
        if (!out) {
            throw IoError("failed writing " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

Catalog Catalog::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open catalog snapshot " + path.string());
    }
    char magic[sizeof(kSnapshotMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0) {
        throw IoError(path.string() + " is not a catalog snapshot");
    }
    const auto header_len = read_pod<std::uint64_t>(in);
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    const json header = json::parse(text);
    if (header.at("version").get<int>() != 1) {
        throw IoError("unsupported catalog snapshot version");
    }
    Catalog cat;
    for (const auto& d : header.at("datasets")) {
        cat.datasets_.push_back({d.at("id").get<DatasetId>(), d.at("name").get<std::string>(),
                                 d.at("parser").get<std::string>(), PropertySchema::from_json(d.at("schema")),
                                 d.at("files").get<std::vector<FileId>>()});
    }
    for (const auto& f : header.at("files")) {
        cat.files_.push_back({f.at("id").get<FileId>(), f.at("dataset").get<DatasetId>(),
                              f.at("path").get<std::string>(), f.at("samples").get<std::uint64_t>(),
                              f.at("fingerprint").get<std::uint64_t>()});
    }
    for (const auto& c : header.at("columns")) {
        Column col;
        col.def = PropertySchema::from_json(json::array({c.at("def")})).properties()[0];
        for (const auto& v : c.at("dictionary")) {
            col.intern(v.get<std::string>());
        }
        cat.columns_.push_back(std::move(col));
    }
    const auto rows = read_pod<std::uint64_t>(in);
    read_array(in, cat.row_file_, rows);
    read_array(in, cat.row_sample_, rows);
    for (auto& col : cat.columns_) {
        read_array(in, col.offsets, rows + 1);
        const auto n = read_pod<std::uint64_t>(in);
        read_array(in, col.values, n);
    }
    return cat;
}

}  // namespace mixplane
