#include "mixplane/mixture.hpp"

#include <algorithm>
#include <cmath>

#include "mixplane/chunker_index.hpp"
#include "mixplane/util.hpp"

namespace mixplane {

using nlohmann::json;

namespace {

constexpr double kProportionTolerance = 1e-9;

template <class T>
std::strong_ordering lexicographic(const std::vector<T>& a, const std::vector<T>& b) {
    return std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

MixtureKey::MixtureKey(Entries entries) : entries_(std::move(entries)) {
    for (auto& [name, values] : entries_) {
        if (name.empty()) {
            throw Error("MixtureKey: empty property name");
        }
        if (values.empty()) {
            throw Error("MixtureKey: property '" + name + "' has no values");
        }
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
    }
}

MixtureKey MixtureKey::parse(std::string_view text) {
    Entries entries;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find(';', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const std::string_view part = text.substr(pos, end - pos);
        const std::size_t colon = part.find(':');
        if (colon == std::string_view::npos) {
            throw Error("MixtureKey: missing ':' in '" + std::string(part) + "'");
        }
        std::vector<std::string>& values = entries[std::string(part.substr(0, colon))];
        std::string_view rest = part.substr(colon + 1);
        std::size_t vpos = 0;
        while (vpos <= rest.size()) {
            std::size_t comma = rest.find(',', vpos);
            if (comma == std::string_view::npos) {
                comma = rest.size();
            }
            if (comma > vpos) {
                values.emplace_back(rest.substr(vpos, comma - vpos));
            }
            vpos = comma + 1;
        }
        pos = end + 1;
    }
    return MixtureKey(std::move(entries));
}

bool MixtureKey::matches(const MixtureKey& other) const {
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    while (a != entries_.end() && b != other.entries_.end()) {
        if (a->first < b->first) {
            ++a;
        } else if (b->first < a->first) {
            ++b;
        } else {
            // Both lists are sorted; walk them for a common value.
            const auto& va = a->second;
            const auto& vb = b->second;
            auto i = va.begin();
            auto j = vb.begin();
            bool found = false;
            while (i != va.end() && j != vb.end()) {
                if (*i < *j) {
                    ++i;
                } else if (*j < *i) {
                    ++j;
                } else {
                    found = true;
                    break;
                }
            }
            if (!found) {
                return false;
            }
            ++a;
            ++b;
        }
    }
    return true;
}

std::string MixtureKey::str() const {
    std::string out;
    for (const auto& [name, values] : entries_) {
        if (!out.empty()) {
            out += ';';
        }
        out += name;
        out += ':';
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i > 0) {
                out += ',';
            }
            out += values[i];
        }
    }
    return out;
}

std::strong_ordering MixtureKey::operator<=>(const MixtureKey& other) const {
    if (auto c = entries_.size() <=> other.entries_.size(); c != 0) {
        return c;
    }
    // Same number of properties: compare the name sequences first.
    for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b) {
        if (auto c = a->first <=> b->first; c != 0) {
            return c;
        }
    }
    for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b) {
        if (auto c = lexicographic(a->second, b->second); c != 0) {
            return c;
        }
    }
    return std::strong_ordering::equal;
}

bool key_matches(const MixtureKey& a, const MixtureKey& b) { return a.matches(b); }

std::strong_ordering key_compare(const MixtureKey& a, const MixtureKey& b) { return a <=> b; }

json to_json(const MixtureKey& key) {
    json j = json::object();
    for (const auto& [name, values] : key.entries()) {
        j[name] = values;
    }
    return j;
}

MixtureKey key_from_json(const json& j) {
    if (j.is_string()) {
        return MixtureKey::parse(j.get<std::string>());
    }
    MixtureKey::Entries entries;
    for (const auto& [name, values] : j.items()) {
        if (values.is_string()) {
            entries[name] = {values.get<std::string>()};
        } else {
            entries[name] = values.get<std::vector<std::string>>();
        }
    }
    return MixtureKey(std::move(entries));
}

//------------------------------------------------------------------------------
// MixtureSpec

MixtureSpec MixtureSpec::make(std::vector<std::pair<MixtureKey, double>> weights,
                              std::uint64_t chunk_size, bool strict) {
    if (chunk_size == 0) {
        throw Error("MixtureSpec: chunk_size must be positive");
    }
    MixtureSpec spec;
    spec.chunk_size = chunk_size;
    spec.strict = strict;
    double sum = 0.0;
    for (auto& [key, weight] : weights) {
        if (!(weight >= 0.0) || weight > 1.0 + kProportionTolerance) {
            throw Error("MixtureSpec: proportion of '" + key.str() + "' outside [0,1]");
        }
        if (weight == 0.0) {
            continue;
        }
        if (key.empty()) {
            throw Error("MixtureSpec: mixture keys need at least one property");
        }
        if (!spec.weights.emplace(std::move(key), weight).second) {
            throw Error("MixtureSpec: duplicate mixture key");
        }
        sum += weight;
    }
    if (spec.weights.empty()) {
        throw Error("MixtureSpec: no key with a positive proportion");
    }
    if (std::abs(sum - 1.0) > kProportionTolerance) {
        throw Error("MixtureSpec: proportions sum to " + std::to_string(sum) + ", expected 1");
    }
    return spec;
}

std::map<MixtureKey, std::uint64_t> proportions_to_counts(const MixtureSpec& spec) {
    if (spec.strict && spec.chunk_size < spec.weights.size()) {
        throw Error("proportions_to_counts: chunk_size " + std::to_string(spec.chunk_size) +
                    " is smaller than the number of mixture keys (" +
                    std::to_string(spec.weights.size()) + ")");
    }
    std::vector<double> proportions;
    proportions.reserve(spec.weights.size());
    for (const auto& [key, weight] : spec.weights) {
        proportions.push_back(weight);
    }
    const auto counts = largest_remainders(proportions, spec.chunk_size);
    std::map<MixtureKey, std::uint64_t> out;
    std::size_t i = 0;
    for (const auto& [key, weight] : spec.weights) {
        out.emplace(key, counts[i++]);
    }
    return out;
}

json to_json(const MixtureSpec& spec) {
    json weights = json::array();
    for (const auto& [key, weight] : spec.weights) {
        weights.push_back({{"key", to_json(key)}, {"weight", weight}});
    }
    return {{"type", "static"},
            {"chunk_size", spec.chunk_size},
            {"strict", spec.strict},
            {"weights", std::move(weights)}};
}

MixtureSpec spec_from_json(const json& j) {
    std::vector<std::pair<MixtureKey, double>> weights;
    for (const auto& w : j.at("weights")) {
        weights.emplace_back(key_from_json(w.at("key")), w.at("weight").get<double>());
    }
    return MixtureSpec::make(std::move(weights), j.at("chunk_size").get<std::uint64_t>(),
                             j.value("strict", true));
}

//------------------------------------------------------------------------------
// Hierarchies

namespace {

void flatten_node(const HierarchyNode& node, const MixtureKey::Entries& path, double weight,
                  std::vector<std::pair<MixtureKey, double>>& out) {
    if (node.property.empty()) {
        throw Error("flatten_hierarchy: node without a property");
    }
    if (node.children.empty()) {
        throw Error("flatten_hierarchy: node '" + node.property + "' has no children");
    }
    double sum = 0.0;
    for (const auto& child : node.children) {
        sum += child.proportion;
    }
    if (std::abs(sum - 1.0) > kProportionTolerance) {
        throw Error("flatten_hierarchy: children of '" + node.property + "' sum to " +
                    std::to_string(sum));
    }
    for (const auto& child : node.children) {
        if (child.values.empty()) {
            throw Error("flatten_hierarchy: child of '" + node.property + "' without values");
        }
        MixtureKey::Entries entries = path;
        std::vector<std::string> values = child.values;
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        auto [it, inserted] = entries.emplace(node.property, values);
        if (!inserted) {
            std::vector<std::string> existing = it->second;
            if (existing != values) {
                throw Error("flatten_hierarchy: property '" + node.property +
                            "' assigned twice along one path");
            }
        }
        const double w = weight * child.proportion;
        if (child.subtree) {
            flatten_node(*child.subtree, entries, w, out);
        } else {
            out.emplace_back(MixtureKey(std::move(entries)), w);
        }
    }
}

}  // namespace

MixtureSpec flatten_hierarchy(const HierarchicalMixtureSpec& h) {
    std::vector<std::pair<MixtureKey, double>> leaves;
    flatten_node(h.root, {}, 1.0, leaves);
    return MixtureSpec::make(std::move(leaves), h.chunk_size, h.strict);
}

HierarchyNode hierarchy_from_json(const json& j) {
    HierarchyNode node;
    node.property = j.at("property").get<std::string>();
    for (const auto& c : j.at("children")) {
        HierarchyChild child;
        const auto& v = c.at("values");
        child.values = v.is_string() ? std::vector<std::string>{v.get<std::string>()}
                                     : v.get<std::vector<std::string>>();
        child.proportion = c.at("weight").get<double>();
        if (c.contains("subtree") && !c.at("subtree").is_null()) {
            child.subtree = std::make_shared<const HierarchyNode>(hierarchy_from_json(c.at("subtree")));
        }
        node.children.push_back(std::move(child));
    }
    return node;
}

//------------------------------------------------------------------------------
// Inference

MixtureSpec infer_mixture(const ChunkerIndex& index, std::uint64_t chunk_size, bool strict) {
    const std::uint64_t total = index.total_samples();
    if (total == 0) {
        throw Error("infer_mixture: empty index");
    }
    std::vector<std::pair<MixtureKey, double>> weights;
    for (const auto& [key, datasets] : index.components()) {
        weights.emplace_back(key, static_cast<double>(index.samples_under(key)) /
                                      static_cast<double>(total));
    }
    // Component keys can be empty when every property of a sample is null;
    // such samples cannot be addressed by a mixture.
    std::erase_if(weights, [](const auto& w) { return w.first.empty(); });
    double sum = 0.0;
    for (const auto& w : weights) {
        sum += w.second;
    }
    for (auto& w : weights) {
        w.second /= sum;
    }
    return MixtureSpec::make(std::move(weights), chunk_size, strict);
}

//------------------------------------------------------------------------------
// Schedules

MixtureSchedule::MixtureSchedule(std::vector<ScheduleStage> stages) : stages_(std::move(stages)) {
    if (stages_.empty()) {
        throw Error("MixtureSchedule: no stages");
    }
    if (stages_.front().activation_step != 0) {
        throw Error("MixtureSchedule: first stage must activate at step 0");
    }
    for (std::size_t i = 1; i < stages_.size(); ++i) {
        if (stages_[i].activation_step <= stages_[i - 1].activation_step) {
            throw Error("MixtureSchedule: activation steps must be strictly increasing");
        }
    }
}

const MixtureSpec& schedule_at(const MixtureSchedule& schedule, std::uint64_t step) {
    const auto& stages = schedule.stages();
    auto it = std::upper_bound(stages.begin(), stages.end(), step,
                               [](std::uint64_t s, const ScheduleStage& st) { return s < st.activation_step; });
    return std::prev(it)->spec;
}

}  // namespace mixplane
