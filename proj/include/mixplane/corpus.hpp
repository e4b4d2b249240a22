#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixplane/catalog.hpp"

namespace mixplane {

struct CorpusDomain {
    PropertyValues properties;
    std::uint64_t samples = 1000;
    // Words per sample: log-normal around the mean.
    double mean_length = 64;
    double dispersion = 0.25;
};

enum class CorpusLayout {
    // Each file holds one domain.
    Clustered,
    // Files hold short runs of every domain, so intervals fragment.
    Interleaved,
};

struct CorpusSpec {
    std::vector<CorpusDomain> domains;
    std::uint32_t files_per_domain = 1;
    bool compress = false;
    std::uint64_t seed = 0;
    CorpusLayout layout = CorpusLayout::Clustered;
    // List every sample (file, sample id, domain) in the manifest.
    bool sample_manifest = true;

    nlohmann::json to_json() const;
    static CorpusSpec from_json(const nlohmann::json& j);
};

// Categorical properties enumerating exactly the values the corpus uses;
// a property is multiple-valued if any domain gives it several values.
PropertySchema corpus_schema(const CorpusSpec& spec);

// Writes data files plus manifest.json into `dir`, which must be empty or
// absent. Returns the manifest.
nlohmann::json gen_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

// Registers every data file listed in dir/manifest.json under the manifest's
// schema, with the "meta" parser.
DatasetId register_corpus(Catalog& catalog, const std::filesystem::path& dir, const std::string& name,
                          unsigned workers = 1);

}  // namespace mixplane
