// Client CLI: submit a query, stream one worker's samples, checkpoint and
// restore.

#include <fstream>
#include <iostream>

#include "cli_common.hpp"
#include "mixplane/client.hpp"

using nlohmann::json;
using namespace mixplane;

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path);
    }
    return json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixplane-client: talk to a mixplane server"};
    app.require_subcommand(1);
    cli::add_config(app, argc, argv);

    ClientOptions opts;
    opts.port = 7711;
    app.add_option("--host", opts.host, "Server host")->capture_default_str();
    app.add_option("--port", opts.port, "Server port")->capture_default_str();
    app.add_option("--max-attempts", opts.backoff.max_attempts, "Attempts per request")->capture_default_str();

    auto* submit = app.add_subcommand("submit", "Submit a query");
    std::string job, query_file, args_file;
    submit->add_option("--job", job, "Job id")->required();
    submit->add_option("--query", query_file, "JSON query {filters, mixture}")->required();
    submit->add_option("--args", args_file, "JSON query args");

    auto* stream = app.add_subcommand("stream", "Stream one worker's samples as JSON lines");
    ResultStreamingArgs sargs;
    std::string mode = "overall";
    std::uint64_t limit = 0;
    bool payloads = false;
    stream->add_option("--job", sargs.job_id, "Job id")->required();
    stream->add_option("--group", sargs.group, "Data-parallel group")->capture_default_str();
    stream->add_option("--node", sargs.node, "Node within the group")->capture_default_str();
    stream->add_option("--worker", sargs.worker, "Data-loader worker")->capture_default_str();
    stream->add_option("--mode", mode, "overall, window or tokenized")->capture_default_str();
    stream->add_option("--window", sargs.window_size, "Window size (window mode)");
    stream->add_flag("!--best-effort-window", sargs.strict_window, "Redistribute unfillable windows");
    stream->add_option("--seq-len", sargs.sequence_length, "Sequence length (tokenized mode)");
    stream->add_option("--prefetch", sargs.prefetch_depth, "Files loaded ahead")->capture_default_str();
    stream->add_flag("--resume", sargs.resume, "Continue from the server's in-flight chunk");
    stream->add_option("--limit", limit, "Stop after this many items (0: all)");
    stream->add_flag("--payloads", payloads, "Include sample payloads");

    auto* ckpt = app.add_subcommand("checkpoint", "Checkpoint a job");
    ckpt->add_option("--job", job, "Job id")->required();

    auto* restore = app.add_subcommand("restore", "Restore a checkpoint");
    std::string ckpt_id, progress_file;
    restore->add_option("--checkpoint", ckpt_id, "Checkpoint id")->required();
    restore->add_option("--progress", progress_file, "JSON {\"g/n/w\": samples yielded}");

    cli::add_env_names(app);
    CLI11_PARSE(app, argc, argv);

    try {
        if (*submit) {
            ControlClient c(opts);
            const QueryArgs args = args_file.empty() ? QueryArgs{} : QueryArgs::from_json(read_json(args_file));
            std::cout << c.submit(job, read_json(query_file), args).dump() << '\n';
        } else if (*stream) {
            sargs.mode = parse_mode(mode);
            ResultStream s(opts, sargs);
            std::uint64_t n = 0;
            while (limit == 0 || n < limit) {
                json line;
                if (sargs.mode == Mode::Tokenized) {
                    auto item = s.next_tokens();
                    if (!item) {
                        break;
                    }
                    line = {{"chunk_id", s.chunk()->chunk_id}, {"key", s.keys()[item->key].str()},
                            {"tokens", item->tokens}};
                } else {
                    auto item = s.next();
                    if (!item) {
                        break;
                    }
                    line = {{"chunk_id", item->chunk_id}, {"key", item->key_name}, {"file", item->file},
                            {"sample", item->sample}};
                    if (payloads) {
                        line["payload"] = item->payload;
                    }
                }
                std::cout << line.dump() << '\n';
                ++n;
            }
        } else if (*ckpt) {
            ControlClient c(opts);
            std::cout << c.checkpoint(job) << '\n';
        } else if (*restore) {
            ControlClient c(opts);
            std::map<std::string, std::uint64_t> progress;
            if (!progress_file.empty()) {
                progress = read_json(progress_file).get<std::map<std::string, std::uint64_t>>();
            }
            c.restore(ckpt_id, progress);
            std::cout << "restored " << ckpt_id << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "mixplane-client: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
