#include "mixplane/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "mixplane/reader.hpp"

namespace mixplane {

using nlohmann::json;
namespace fs = std::filesystem;

json CorpusSpec::to_json() const {
    json domains_j = json::array();
    for (const auto& d : domains) {
        domains_j.push_back({{"properties", d.properties},
                             {"samples", d.samples},
                             {"mean_length", d.mean_length},
                             {"dispersion", d.dispersion}});
    }
    return {{"domains", std::move(domains_j)},
            {"files_per_domain", files_per_domain},
            {"compress", compress},
            {"seed", seed},
            {"layout", layout == CorpusLayout::Clustered ? "clustered" : "interleaved"},
            {"sample_manifest", sample_manifest}};
}

CorpusSpec CorpusSpec::from_json(const json& j) {
    CorpusSpec s;
    for (const auto& d : j.at("domains")) {
        CorpusDomain dom;
        for (const auto& [name, v] : d.at("properties").items()) {
            dom.properties[name] = v.is_array() ? v.get<std::vector<std::string>>()
                                                : std::vector<std::string>{v.get<std::string>()};
        }
        dom.samples = d.value("samples", dom.samples);
        dom.mean_length = d.value("mean_length", dom.mean_length);
        dom.dispersion = d.value("dispersion", dom.dispersion);
        s.domains.push_back(std::move(dom));
    }
    s.files_per_domain = j.value("files_per_domain", s.files_per_domain);
    s.compress = j.value("compress", s.compress);
    s.seed = j.value("seed", s.seed);
    const std::string layout = j.value("layout", "clustered");
    if (layout == "clustered") {
        s.layout = CorpusLayout::Clustered;
    } else if (layout == "interleaved") {
        s.layout = CorpusLayout::Interleaved;
    } else {
        throw Error("unknown corpus layout '" + layout + "'");
    }
    s.sample_manifest = j.value("sample_manifest", s.sample_manifest);
    return s;
}

PropertySchema corpus_schema(const CorpusSpec& spec) {
    std::map<std::string, std::set<std::string>> values;
    std::map<std::string, bool> multiple;
    std::map<std::string, std::size_t> seen;
    for (const auto& d : spec.domains) {
        for (const auto& [name, list] : d.properties) {
            values[name].insert(list.begin(), list.end());
            multiple[name] = multiple[name] || list.size() > 1;
            ++seen[name];
        }
    }
    std::vector<PropertyDef> defs;
    for (const auto& [name, vals] : values) {
        PropertyDef def;
        def.name = name;
        def.kind = PropertyKind::Categorical;
        def.nullable = seen[name] < spec.domains.size();
        def.multiple = multiple[name];
        def.categories.assign(vals.begin(), vals.end());
        defs.push_back(std::move(def));
    }
    return PropertySchema(std::move(defs));
}

namespace {

std::string make_text(Rng& rng, std::size_t domain, const CorpusDomain& d) {
    const double z = rng.normal();
    const double s = d.dispersion;
    const auto words = static_cast<std::uint64_t>(std::max(1.0, std::round(d.mean_length * std::exp(s * z - s * s / 2))));
    std::string text;
    for (std::uint64_t i = 0; i < words; ++i) {
        if (i > 0) {
            text += ' ';
        }
        text += 'd';
        text += std::to_string(domain);
        text += 'w';
        text += std::to_string(rng.below(1000));
    }
    return text;
}

}  // namespace

json gen_corpus(const CorpusSpec& spec, const fs::path& dir) {
    if (spec.domains.empty()) {
        throw Error("gen_corpus: no domains");
    }
    if (spec.files_per_domain == 0) {
        throw Error("gen_corpus: files_per_domain must be positive");
    }
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        throw IoError("gen_corpus: target directory " + dir.string() + " is not empty");
    }
    fs::create_directories(dir);
    const PropertySchema schema = corpus_schema(spec);
    Rng rng(spec.seed);

    // Domain label of every sample of every file.
    std::vector<std::vector<std::size_t>> files;
    if (spec.layout == CorpusLayout::Clustered) {
        for (std::size_t d = 0; d < spec.domains.size(); ++d) {
            const std::uint64_t n = spec.domains[d].samples;
            for (std::uint32_t f = 0; f < spec.files_per_domain; ++f) {
                const std::uint64_t begin = n * f / spec.files_per_domain;
                const std::uint64_t end = n * (f + 1) / spec.files_per_domain;
                files.emplace_back(end - begin, d);
            }
        }
    } else {
        std::vector<std::pair<std::size_t, std::uint64_t>> runs;
        for (std::size_t d = 0; d < spec.domains.size(); ++d) {
            std::uint64_t left = spec.domains[d].samples;
            while (left > 0) {
                const std::uint64_t len = std::min<std::uint64_t>(left, 1 + rng.below(48));
                runs.emplace_back(d, len);
                left -= len;
            }
        }
        rng.shuffle(runs);
        std::vector<std::size_t> labels;
        for (const auto& [d, len] : runs) {
            labels.insert(labels.end(), len, d);
        }
        const std::size_t count = spec.files_per_domain * spec.domains.size();
        for (std::size_t f = 0; f < count; ++f) {
            const std::size_t begin = labels.size() * f / count;
            const std::size_t end = labels.size() * (f + 1) / count;
            files.emplace_back(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                               labels.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }

    json files_j = json::array();
    json samples_j = json::array();
    for (std::size_t f = 0; f < files.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "part-%05zu.jsonl", f);
        const std::string file_name = std::string(name) + (spec.compress ? ".zst" : "");
        RecordWriter writer(dir / file_name);
        std::map<std::size_t, std::uint64_t> per_domain;
        for (std::size_t s = 0; s < files[f].size(); ++s) {
            const std::size_t d = files[f][s];
            const CorpusDomain& dom = spec.domains[d];
            json meta = json::object();
            for (const auto& [prop, vals] : dom.properties) {
                meta[prop] = vals.size() == 1 ? json(vals.front()) : json(vals);
            }
            writer.write(json{{"text", make_text(rng, d, dom)}, {"meta", std::move(meta)}}.dump());
            ++per_domain[d];
            if (spec.sample_manifest) {
                samples_j.push_back({f, s, d});
            }
        }
        writer.close();
        json counts = json::object();
        for (const auto& [d, n] : per_domain) {
            counts[std::to_string(d)] = n;
        }
        files_j.push_back({{"path", file_name}, {"samples", files[f].size()}, {"domains", std::move(counts)}});
    }

    json domains_j = json::array();
    std::uint64_t total = 0;
    for (const auto& d : spec.domains) {
        total += d.samples;
    }
    for (const auto& d : spec.domains) {
        domains_j.push_back({{"properties", d.properties},
                             {"samples", d.samples},
                             {"fraction", static_cast<double>(d.samples) / static_cast<double>(total)},
                             {"mean_length", d.mean_length}});
    }
    json manifest = {{"version", 1},
                     {"spec", spec.to_json()},
                     {"schema", schema.to_json()},
                     {"parser", "meta"},
                     {"domains", std::move(domains_j)},
                     {"files", std::move(files_j)},
                     {"total_samples", total}};
    if (spec.sample_manifest) {
        manifest["samples"] = std::move(samples_j);
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump() << '\n';
    if (!out) {
        throw IoError("gen_corpus: cannot write manifest in " + dir.string());
    }
    return manifest;
}

DatasetId register_corpus(Catalog& catalog, const fs::path& dir, const std::string& name, unsigned workers) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw IoError("no manifest.json in " + dir.string());
    }
    const json manifest = json::parse(in);
    std::vector<fs::path> paths;
    for (const auto& f : manifest.at("files")) {
        paths.push_back(fs::absolute(dir / f.at("path").get<std::string>()));
    }
    const auto parser = make_parser(manifest.value("parser", "meta"));
    return catalog.register_dataset(name, paths, *parser, PropertySchema::from_json(manifest.at("schema")), workers);
}

}  // namespace mixplane
