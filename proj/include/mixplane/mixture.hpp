#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mixplane {

class ChunkerIndex;

//------------------------------------------------------------------------------
// MixtureKey

// A set of properties, each with one or more accepted values. Values are kept
// deduplicated and sorted so structurally equal keys compare equal.
class MixtureKey {
public:
    using Entries = std::map<std::string, std::vector<std::string>>;

    MixtureKey() = default;
    explicit MixtureKey(Entries entries);
    MixtureKey(std::initializer_list<std::pair<const std::string, std::vector<std::string>>> init)
        : MixtureKey(Entries(init)) {}

    // Parses "language:JavaScript,HTML;license:MIT".
    static MixtureKey parse(std::string_view text);

    const Entries& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    // True iff the value lists intersect for every property both keys carry.
    bool matches(const MixtureKey& other) const;

    std::string str() const;

    // Count of properties, then property names, then value lists.
    std::strong_ordering operator<=>(const MixtureKey& other) const;
    bool operator==(const MixtureKey& other) const = default;

private:
    Entries entries_;
};

bool key_matches(const MixtureKey& a, const MixtureKey& b);
std::strong_ordering key_compare(const MixtureKey& a, const MixtureKey& b);

nlohmann::json to_json(const MixtureKey& key);
MixtureKey key_from_json(const nlohmann::json& j);

//------------------------------------------------------------------------------
// Static mixtures

struct MixtureSpec {
    std::map<MixtureKey, double> weights;
    std::uint64_t chunk_size = 0;
    bool strict = true;

    // Drops zero weights, then checks the remaining weights sum to 1 (1e-9)
    // and every key is non-empty.
    static MixtureSpec make(std::vector<std::pair<MixtureKey, double>> weights,
                            std::uint64_t chunk_size, bool strict = true);

    bool operator==(const MixtureSpec&) const = default;
};

// Largest-remainders apportionment of chunk_size over the spec's keys.
// Remainder ties go to the smaller key.
std::map<MixtureKey, std::uint64_t> proportions_to_counts(const MixtureSpec& spec);

nlohmann::json to_json(const MixtureSpec& spec);
MixtureSpec spec_from_json(const nlohmann::json& j);

//------------------------------------------------------------------------------
// Hierarchical mixtures

struct HierarchyNode;

struct HierarchyChild {
    std::vector<std::string> values;
    double proportion = 0.0;
    std::shared_ptr<const HierarchyNode> subtree;
};

struct HierarchyNode {
    std::string property;
    std::vector<HierarchyChild> children;
};

struct HierarchicalMixtureSpec {
    HierarchyNode root;
    std::uint64_t chunk_size = 0;
    bool strict = true;
};

MixtureSpec flatten_hierarchy(const HierarchicalMixtureSpec& h);
HierarchyNode hierarchy_from_json(const nlohmann::json& j);

//------------------------------------------------------------------------------
// Inferred mixtures

// Proportion per component key = its sample count / all indexed samples.
MixtureSpec infer_mixture(const ChunkerIndex& index, std::uint64_t chunk_size, bool strict = true);

//------------------------------------------------------------------------------
// Schedules

struct ScheduleStage {
    std::uint64_t activation_step = 0;
    MixtureSpec spec;
};

class MixtureSchedule {
public:
    explicit MixtureSchedule(std::vector<ScheduleStage> stages);

    const std::vector<ScheduleStage>& stages() const { return stages_; }

private:
    std::vector<ScheduleStage> stages_;
};

// Spec of the last stage whose activation step is <= step (inclusive).
const MixtureSpec& schedule_at(const MixtureSchedule& schedule, std::uint64_t step);

//------------------------------------------------------------------------------
// MixtureProvider
//
// What a job consults before generating each chunk. Static, inferred, and
// hierarchical mixtures are fixed; schedules follow the training step; dynamic
// algorithms also consume feedback.

struct DomainFeedback {
    MixtureKey key;
    double loss_sum = 0.0;
    std::uint64_t tokens = 0;
};

class MixtureProvider {
public:
    virtual ~MixtureProvider() = default;

    virtual std::string algorithm() const = 0;
    virtual MixtureSpec current() const = 0;
    virtual bool dynamic() const { return false; }

    // Called with the step of every accepted feedback message.
    virtual void on_feedback(std::uint64_t step, const std::vector<DomainFeedback>& losses) {
        (void)step;
        (void)losses;
    }

    virtual nlohmann::json state() const { return nlohmann::json::object(); }
    virtual void restore(const nlohmann::json& state) { (void)state; }
};

class StaticMixtureProvider : public MixtureProvider {
public:
    StaticMixtureProvider(std::string algorithm, MixtureSpec spec)
        : algorithm_(std::move(algorithm)), spec_(std::move(spec)) {}

    std::string algorithm() const override { return algorithm_; }
    MixtureSpec current() const override { return spec_; }

private:
    std::string algorithm_;
    MixtureSpec spec_;
};

class ScheduleMixtureProvider : public MixtureProvider {
public:
    explicit ScheduleMixtureProvider(MixtureSchedule schedule) : schedule_(std::move(schedule)) {}

    std::string algorithm() const override { return "schedule"; }
    MixtureSpec current() const override { return schedule_at(schedule_, step_); }
    void on_feedback(std::uint64_t step, const std::vector<DomainFeedback>&) override { step_ = step; }

    nlohmann::json state() const override { return {{"step", step_}}; }
    void restore(const nlohmann::json& state) override { step_ = state.at("step").get<std::uint64_t>(); }

private:
    MixtureSchedule schedule_;
    std::uint64_t step_ = 0;
};

}  // namespace mixplane
