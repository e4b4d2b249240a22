#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixplane/ado.hpp"
#include "mixplane/client.hpp"
#include "mixplane/job.hpp"

namespace mixplane {

//------------------------------------------------------------------------------
// Simulated training

struct SimTrainSpec {
    std::string job_id = "sim";
    nlohmann::json query;
    QueryArgs args;
    Mode mode = Mode::Overall;
    std::uint64_t window_size = 0;
    std::uint64_t sequence_length = 0;
    bool strict_window = true;
    std::size_t prefetch_depth = 2;
    // Items each node pulls per step, from worker step % num_workers.
    std::uint64_t batch_size = 32;
    std::uint64_t steps = 100;
    // Hidden per-domain laws, keyed by MixtureKey::str() of the chunk keys.
    std::map<std::string, ado::DomainLaw> laws;
    std::optional<ado::DomainLaw> default_law;
    double noise = 0.0;
    std::uint64_t seed = 0;
    // Checkpoint after this step, tear down every stream, restore and resume.
    std::optional<std::uint64_t> checkpoint_at;
    // Per-step losses in the report (off for long runs).
    bool record_steps = true;

    nlohmann::json to_json() const;
    static SimTrainSpec from_json(const nlohmann::json& j);
};

// Runs the full loop against a server: submit, stream on every node identity,
// per-domain losses from the hidden laws, a sum over data-parallel groups,
// feedback. Throws Error with a diff if nodes of one group diverge. The
// report is a deterministic function of the spec and the catalog.
nlohmann::json sim_train(const SimTrainSpec& spec, const ClientOptions& server);

//------------------------------------------------------------------------------
// Throughput

struct BenchSpec {
    nlohmann::json query;
    std::vector<std::uint64_t> chunk_sizes{512, 1024, 2048};
    // Client prefetch workers (files loaded ahead of use).
    std::vector<std::size_t> workers{0, 4};
    int repetitions = 3;
    // Samples streamed per measurement.
    std::uint64_t samples = 20000;
};

struct BenchRow {
    std::uint64_t chunk_size = 0;
    std::size_t workers = 0;
    double samples_per_s = 0;
    double chunks_per_s = 0;
    double first_sample_s = 0;
    // Submit (filter, intervals, index) alone.
    double submit_s = 0;
};

// Medians over the repetitions, one row per (chunk size, workers).
std::vector<BenchRow> bench(const BenchSpec& spec, const ClientOptions& server);
std::string bench_table(const std::vector<BenchRow>& rows);

//------------------------------------------------------------------------------
// Mixture trajectory plots

struct TrajectoryPoint {
    std::uint64_t step = 0;
    std::uint64_t chunk_id = 0;
    std::map<std::string, double> weights;
};

std::vector<TrajectoryPoint> read_trajectory(const std::filesystem::path& log);
// One row per logged chunk, one column per key (keys sorted).
std::string trajectory_csv(const std::vector<TrajectoryPoint>& points);
// Line chart of every key's weight against the chunk index.
std::string trajectory_svg(const std::vector<TrajectoryPoint>& points);

}  // namespace mixplane
