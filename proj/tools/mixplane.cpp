// Operator CLI: corpus generation, catalog registration, the server, and the
// simulation / benchmark drivers.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cli_common.hpp"
#include "mixplane/corpus.hpp"
#include "mixplane/harness.hpp"
#include "mixplane/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mixplane;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError("cannot write " + path);
    }
}

std::shared_ptr<const Catalog> load_catalog(const std::string& path) {
    if (path.empty()) {
        return std::make_shared<Catalog>();
    }
    return std::make_shared<Catalog>(Catalog::load(path));
}

// Blocks SIGINT/SIGTERM in every thread started afterwards; wait_for_signal
// then picks them up synchronously.
sigset_t block_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return set;
}

int wait_for_signal(const sigset_t& set) {
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

// Either the given server or an in-process one on an ephemeral port.
struct ServerTarget {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string catalog;
    std::string checkpoint_dir;

    std::unique_ptr<TcpServer> local;

    ClientOptions open() {
        ClientOptions o;
        o.host = host;
        if (port != 0) {
            o.port = port;
            return o;
        }
        if (catalog.empty()) {
            throw Error("give --port of a running server or --catalog to start one");
        }
        fs::path dir = checkpoint_dir;
        if (dir.empty()) {
            dir = fs::temp_directory_path() / ("mixplane-ckpt-" + std::to_string(::getpid()));
        }
        fs::create_directories(dir);
        local = std::make_unique<TcpServer>(std::make_shared<JobManager>(load_catalog(catalog), dir), "127.0.0.1", 0);
        o.host = "127.0.0.1";
        o.port = local->port();
        return o;
    }

    void add_options(CLI::App* app) {
        app->add_option("--host", host, "Server host")->capture_default_str();
        app->add_option("--port", port, "Server port (0: start an in-process server)");
        app->add_option("--catalog", catalog, "Catalog snapshot for an in-process server");
        app->add_option("--checkpoint-dir", checkpoint_dir, "Checkpoint directory for an in-process server");
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixplane: mixture-aware streaming data server and tools"};
    app.require_subcommand(1);
    cli::add_config(app, argc, argv);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic jsonl corpus with a manifest");
    std::string gen_out, gen_spec, gen_layout = "clustered";
    std::uint32_t gen_domains = 2, gen_files = 1;
    std::uint64_t gen_samples = 1000, gen_seed = 0;
    double gen_mean = 64, gen_long = 1, gen_dispersion = 0.25;
    bool gen_compress = false;
    gen->add_option("--out", gen_out, "Target directory (must be empty)")->required();
    gen->add_option("--spec", gen_spec, "JSON corpus spec (overrides the shape flags)");
    gen->add_option("--domains", gen_domains, "Number of domains")->capture_default_str();
    gen->add_option("--samples", gen_samples, "Samples per domain")->capture_default_str();
    gen->add_option("--mean-length", gen_mean, "Mean words per sample")->capture_default_str();
    gen->add_option("--dispersion", gen_dispersion, "Log-normal length dispersion")->capture_default_str();
    gen->add_option("--long-factor", gen_long, "Length multiplier of domain d0")->capture_default_str();
    gen->add_option("--files-per-domain", gen_files, "Files per domain")->capture_default_str();
    gen->add_option("--layout", gen_layout, "clustered or interleaved")->capture_default_str();
    gen->add_flag("--compress", gen_compress, "Write .jsonl.zst files");
    gen->add_option("--seed", gen_seed, "RNG seed")->capture_default_str();

    // register
    auto* reg = app.add_subcommand("register", "Add a dataset to a catalog snapshot");
    std::string reg_catalog, reg_corpus, reg_name, reg_parser = "meta", reg_schema;
    std::vector<std::string> reg_files;
    unsigned reg_workers = 1;
    reg->add_option("--catalog", reg_catalog, "Catalog snapshot (created if missing)")->required();
    reg->add_option("--corpus", reg_corpus, "Corpus directory with manifest.json");
    reg->add_option("--name", reg_name, "Dataset name")->required();
    reg->add_option("--parser", reg_parser, "Metadata parser: json, meta, pile, json:<field>")->capture_default_str();
    reg->add_option("--schema", reg_schema, "JSON schema file (or 'pile')");
    reg->add_option("--workers", reg_workers, "Parsing threads")->capture_default_str();
    reg->add_option("files", reg_files, "Data files (without --corpus)");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the data server");
    std::string serve_host = "127.0.0.1", serve_catalog, serve_ckpt = "checkpoints";
    std::uint16_t serve_port = 7711;
    serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
    serve->add_option("--port", serve_port, "Port (0: ephemeral)")->capture_default_str();
    serve->add_option("--catalog", serve_catalog, "Catalog snapshot")->required();
    serve->add_option("--checkpoint-dir", serve_ckpt, "Checkpoint directory")->capture_default_str();

    // sim-train
    auto* sim = app.add_subcommand("sim-train", "Simulated training loop against a server");
    std::string sim_spec, sim_out;
    ServerTarget sim_target;
    sim->add_option("--spec", sim_spec, "JSON simulation spec")->required();
    sim->add_option("--out", sim_out, "Report file (default stdout)");
    sim_target.add_options(sim);

    // bench
    auto* bch = app.add_subcommand("bench", "Streaming throughput sweep");
    std::string bench_query;
    BenchSpec bench_spec;
    ServerTarget bench_target;
    bch->add_option("--query", bench_query, "JSON query file")->required();
    bch->add_option("--chunk-sizes", bench_spec.chunk_sizes, "Chunk sizes")->capture_default_str();
    bch->add_option("--workers", bench_spec.workers, "Prefetch worker counts")->capture_default_str();
    bch->add_option("--reps", bench_spec.repetitions, "Repetitions per row (median)")->capture_default_str();
    bch->add_option("--samples", bench_spec.samples, "Samples per measurement")->capture_default_str();
    bool bench_json = false;
    bch->add_flag("--json", bench_json, "Emit JSON rows");
    bench_target.add_options(bch);

    // plot-mixture
    auto* plot = app.add_subcommand("plot-mixture", "Render a mixture trajectory log as CSV / SVG");
    std::string plot_log, plot_csv, plot_svg;
    plot->add_option("--log", plot_log, "Trajectory JSONL")->required();
    plot->add_option("--csv", plot_csv, "CSV output");
    plot->add_option("--svg", plot_svg, "SVG output");

    cli::add_env_names(app);
    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            CorpusSpec spec;
            if (!gen_spec.empty()) {
                spec = CorpusSpec::from_json(read_json(gen_spec));
            } else {
                for (std::uint32_t d = 0; d < gen_domains; ++d) {
                    CorpusDomain dom;
                    dom.properties = {{"domain", {"d" + std::to_string(d)}}};
                    dom.samples = gen_samples;
                    dom.mean_length = d == 0 ? gen_mean * gen_long : gen_mean;
                    dom.dispersion = gen_dispersion;
                    spec.domains.push_back(std::move(dom));
                }
                spec.files_per_domain = gen_files;
                spec.compress = gen_compress;
                spec.seed = gen_seed;
                if (gen_layout == "interleaved") {
                    spec.layout = CorpusLayout::Interleaved;
                } else if (gen_layout != "clustered") {
                    throw Error("unknown layout '" + gen_layout + "'");
                }
            }
            const json manifest = gen_corpus(spec, gen_out);
            std::cout << "wrote " << manifest.at("files").size() << " files, " << manifest.at("total_samples")
                      << " samples to " << gen_out << '\n';
        } else if (*reg) {
            Catalog catalog = fs::exists(reg_catalog) ? Catalog::load(reg_catalog) : Catalog();
            DatasetId id;
            if (!reg_corpus.empty()) {
                id = register_corpus(catalog, reg_corpus, reg_name, reg_workers);
            } else {
                if (reg_files.empty() || reg_schema.empty()) {
                    throw Error("register needs --corpus, or --schema and data files");
                }
                const PropertySchema schema =
                    reg_schema == "pile" ? pile_schema() : PropertySchema::from_json(read_json(reg_schema));
                std::vector<fs::path> files;
                for (const auto& f : reg_files) {
                    files.push_back(fs::absolute(f));
                }
                id = catalog.register_dataset(reg_name, files, *make_parser(reg_parser), schema, reg_workers);
            }
            catalog.save(reg_catalog);
            std::cout << "dataset " << reg_name << " (id " << id << "): catalog now holds " << catalog.size()
                      << " samples\n";
        } else if (*serve) {
            const sigset_t signals = block_signals();
            fs::create_directories(serve_ckpt);
            auto jobs = std::make_shared<JobManager>(load_catalog(serve_catalog), serve_ckpt);
            TcpServer server(jobs, serve_host, serve_port);
            std::cout << "listening on " << serve_host << ':' << server.port() << std::endl;
            const int sig = wait_for_signal(signals);
            std::cerr << "signal " << sig << ", shutting down\n";
            server.stop();
        } else if (*sim) {
            const SimTrainSpec spec = SimTrainSpec::from_json(read_json(sim_spec));
            const ClientOptions opts = sim_target.open();
            write_text(sim_out, sim_train(spec, opts).dump(2) + "\n");
        } else if (*bch) {
            bench_spec.query = read_json(bench_query);
            const ClientOptions opts = bench_target.open();
            const auto rows = bench(bench_spec, opts);
            if (bench_json) {
                json out = json::array();
                for (const auto& r : rows) {
                    out.push_back({{"chunk_size", r.chunk_size},
                                   {"workers", r.workers},
                                   {"samples_per_s", r.samples_per_s},
                                   {"chunks_per_s", r.chunks_per_s},
                                   {"first_sample_s", r.first_sample_s},
                                   {"submit_s", r.submit_s}});
                }
                std::cout << out.dump(2) << '\n';
            } else {
                std::cout << bench_table(rows);
            }
        } else if (*plot) {
            if (plot_csv.empty() && plot_svg.empty()) {
                throw Error("plot-mixture needs --csv and/or --svg");
            }
            const auto points = read_trajectory(plot_log);
            if (!plot_csv.empty()) {
                write_text(plot_csv, trajectory_csv(points));
            }
            if (!plot_svg.empty()) {
                write_text(plot_svg, trajectory_svg(points));
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "mixplane: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
