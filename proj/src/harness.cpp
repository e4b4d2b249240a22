#include "mixplane/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

namespace mixplane {

using nlohmann::json;

namespace {

json law_to_json(const ado::DomainLaw& l) {
    return {{"epsilon", l.epsilon}, {"beta", l.beta}, {"alpha", l.alpha}};
}

ado::DomainLaw law_from_json(const json& j) {
    ado::DomainLaw l;
    l.epsilon = j.at("epsilon").get<double>();
    l.beta = j.at("beta").get<double>();
    l.alpha = j.at("alpha").get<double>();
    return l;
}

}  // namespace

json SimTrainSpec::to_json() const {
    json laws_j = json::object();
    for (const auto& [k, l] : laws) {
        laws_j[k] = law_to_json(l);
    }
    json j = {{"job_id", job_id},
              {"query", query},
              {"args", args.to_json()},
              {"mode", mode_name(mode)},
              {"window_size", window_size},
              {"sequence_length", sequence_length},
              {"strict_window", strict_window},
              {"prefetch_depth", prefetch_depth},
              {"batch_size", batch_size},
              {"steps", steps},
              {"laws", std::move(laws_j)},
              {"noise", noise},
              {"seed", seed},
              {"record_steps", record_steps}};
    if (default_law) {
        j["default_law"] = law_to_json(*default_law);
    }
    if (checkpoint_at) {
        j["checkpoint_at"] = *checkpoint_at;
    }
    return j;
}

SimTrainSpec SimTrainSpec::from_json(const json& j) {
    SimTrainSpec s;
    s.job_id = j.value("job_id", s.job_id);
    s.query = j.at("query");
    if (j.contains("args")) {
        s.args = QueryArgs::from_json(j.at("args"));
    }
    s.mode = parse_mode(j.value("mode", "overall"));
    s.window_size = j.value("window_size", s.window_size);
    s.sequence_length = j.value("sequence_length", s.sequence_length);
    s.strict_window = j.value("strict_window", s.strict_window);
    s.prefetch_depth = j.value("prefetch_depth", s.prefetch_depth);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.steps = j.value("steps", s.steps);
    if (j.contains("laws")) {
        for (const auto& [k, l] : j.at("laws").items()) {
            s.laws[k] = law_from_json(l);
        }
    }
    if (j.contains("default_law")) {
        s.default_law = law_from_json(j.at("default_law"));
    }
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    if (j.contains("checkpoint_at") && !j.at("checkpoint_at").is_null()) {
        s.checkpoint_at = j.at("checkpoint_at").get<std::uint64_t>();
    }
    s.record_steps = j.value("record_steps", s.record_steps);
    return s;
}

//------------------------------------------------------------------------------

namespace {

struct Pulled {
    std::uint64_t chunk_id = 0;
    std::uint64_t index = 0;
    MixtureKey key;
    std::string key_name;
    std::uint64_t tokens = 0;
    // Identity of the item for divergence checks.
    std::uint64_t fingerprint = 0;
    std::string where;
};

struct NodeBatch {
    std::vector<Pulled> items;
    // Summaries of chunks first seen during this batch.
    std::map<std::uint64_t, json> chunks;
};

json counts_json(const std::map<MixtureKey, std::uint64_t>& counts) {
    json out = json::object();
    for (const auto& [k, n] : counts) {
        out[k.str()] = n;
    }
    return out;
}

json chunk_summary(const Chunk& c, std::uint32_t group, std::uint32_t worker, std::uint64_t position) {
    std::map<MixtureKey, std::uint64_t> realized;
    for (const auto& [k, _] : c.parts) {
        realized[k] = c.count(k);
    }
    json s = {{"chunk_id", c.chunk_id},
              {"group", group},
              {"worker", worker},
              {"position", position},
              {"size", c.size()},
              {"realized", counts_json(realized)}};
    if (c.mixture) {
        s["requested"] = counts_json(proportions_to_counts(*c.mixture));
        json w = json::object();
        for (const auto& [k, p] : c.mixture->weights) {
            w[k.str()] = p;
        }
        s["weights"] = std::move(w);
    }
    return s;
}

class Simulation {
public:
    Simulation(const SimTrainSpec& spec, const ClientOptions& server)
        : spec_(spec), server_(server), control_(server) {
        if (spec.batch_size == 0) {
            throw Error("sim_train: batch_size must be positive");
        }
        if (spec.args.dp_groups == 0 || spec.args.nodes_per_group == 0 || spec.args.num_workers == 0) {
            throw Error("sim_train: dp_groups, nodes_per_group and num_workers must be positive");
        }
    }

    json run() {
        report_["submit"] = control_.submit(spec_.job_id, spec_.query, spec_.args);
        open_streams(false);
        json steps = json::array();
        std::uint64_t ran = 0;
        for (std::uint64_t step = 1; step <= spec_.steps; ++step) {
            const std::uint32_t worker = static_cast<std::uint32_t>((step - 1) % spec_.args.num_workers);
            auto batches = pull_all(worker);
            bool any = false;
            for (const auto& group : batches) {
                any = any || !group.front().items.empty();
                verify_group(group, step);
            }
            if (!any) {
                report_["ended_at_step"] = step;
                break;
            }
            ran = step;
            for (std::uint32_t g = 0; g < batches.size(); ++g) {
                for (auto& [id, summary] : batches[g].front().chunks) {
                    chunks_.emplace(id, std::move(summary));
                }
                tally(batches[g].front());
            }
            json record = train_step(step, batches);
            if (spec_.record_steps) {
                steps.push_back(std::move(record));
            }
            if (spec_.checkpoint_at && step == *spec_.checkpoint_at) {
                restart();
            }
        }
        report_["steps_run"] = ran;
        if (spec_.record_steps) {
            report_["steps"] = std::move(steps);
        }
        json chunks = json::array();
        for (auto& [_, c] : chunks_) {
            chunks.push_back(std::move(c));
        }
        report_["chunks"] = std::move(chunks);
        json windows = json::array();
        for (const auto& [id, counts] : windows_) {
            json c = json::object();
            for (const auto& [k, n] : counts) {
                c[k] = n;
            }
            windows.push_back({{"chunk_id", id.first}, {"window", id.second}, {"counts", std::move(c)}});
        }
        report_["windows"] = std::move(windows);
        json samples = json::object();
        json tokens = json::object();
        for (const auto& [k, n] : samples_) {
            samples[k] = n;
        }
        for (const auto& [k, n] : consumed_) {
            tokens[k] = n;
        }
        report_["tallies"] = {{"samples", std::move(samples)}, {"tokens", std::move(tokens)}};
        report_["warnings"] = warnings_;
        // Order-sensitive digest of every consumed item; equal digests mean
        // equal training streams.
        report_["stream_digest"] = digest_;
        report_["steps_requested"] = spec_.steps;
        return report_;
    }

private:
    ResultStreamingArgs stream_args(std::uint32_t g, std::uint32_t n, std::uint32_t w, bool resume) const {
        ResultStreamingArgs a;
        a.job_id = spec_.job_id;
        a.group = g;
        a.node = n;
        a.worker = w;
        a.mode = spec_.mode;
        a.window_size = spec_.window_size;
        a.strict_window = spec_.strict_window;
        a.sequence_length = spec_.sequence_length;
        a.prefetch_depth = spec_.prefetch_depth;
        a.tokenizer = tokenizer_;
        a.resume = resume;
        return a;
    }

    void open_streams(bool resume) {
        const auto& a = spec_.args;
        streams_.clear();
        streams_.resize(a.dp_groups);
        for (std::uint32_t g = 0; g < a.dp_groups; ++g) {
            streams_[g].resize(a.nodes_per_group);
            for (std::uint32_t n = 0; n < a.nodes_per_group; ++n) {
                for (std::uint32_t w = 0; w < a.num_workers; ++w) {
                    streams_[g][n].push_back(std::make_unique<ResultStream>(server_, stream_args(g, n, w, resume)));
                }
            }
        }
    }

    NodeBatch pull(std::uint32_t g, std::uint32_t n, std::uint32_t w) {
        ResultStream& s = *streams_[g][n][w];
        NodeBatch out;
        for (std::uint64_t i = 0; i < spec_.batch_size; ++i) {
            Pulled p;
            if (spec_.mode == Mode::Tokenized) {
                auto item = s.next_tokens();
                if (!item) {
                    break;
                }
                p.key = s.keys()[item->key];
                p.tokens = item->tokens.size();
                std::uint64_t h = kFnvOffset;
                for (auto t : item->tokens) {
                    h = hash_combine(h, static_cast<std::uint64_t>(t));
                }
                p.fingerprint = h;
            } else {
                auto item = s.next();
                if (!item) {
                    break;
                }
                p.key = s.keys()[item->key];
                p.tokens = tokenizer_->encode(record_text(item->payload)).size();
                p.fingerprint = hash_combine(fnv1a(item->payload), hash_combine(item->file, item->sample));
                p.where = "file " + std::to_string(item->file) + " sample " + std::to_string(item->sample);
            }
            p.key_name = p.key.str();
            p.chunk_id = s.chunk()->chunk_id;
            p.index = s.samples_yielded() - 1;
            auto seen = seen_chunks_.find(g);
            if (!out.chunks.contains(p.chunk_id) &&
                (seen == seen_chunks_.end() || !seen->second.contains(p.chunk_id))) {
                out.chunks.emplace(p.chunk_id, chunk_summary(*s.chunk(), g, w, *s.position()));
            }
            out.items.push_back(std::move(p));
        }
        return out;
    }

    // batches[g][n]
    std::vector<std::vector<NodeBatch>> pull_all(std::uint32_t worker) {
        const auto& a = spec_.args;
        std::vector<std::vector<std::future<NodeBatch>>> futures(a.dp_groups);
        for (std::uint32_t g = 0; g < a.dp_groups; ++g) {
            for (std::uint32_t n = 0; n < a.nodes_per_group; ++n) {
                futures[g].push_back(std::async(std::launch::async, [this, g, n, worker] { return pull(g, n, worker); }));
            }
        }
        std::vector<std::vector<NodeBatch>> out(a.dp_groups);
        std::exception_ptr failure;
        for (std::uint32_t g = 0; g < a.dp_groups; ++g) {
            for (auto& f : futures[g]) {
                try {
                    out[g].push_back(f.get());
                } catch (...) {
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
        for (std::uint32_t g = 0; g < a.dp_groups; ++g) {
            for (const auto& [id, _] : out[g].front().chunks) {
                seen_chunks_[g].insert(id);
            }
        }
        return out;
    }

    void verify_group(const std::vector<NodeBatch>& group, std::uint64_t step) const {
        const auto& ref = group.front().items;
        for (std::size_t n = 1; n < group.size(); ++n) {
            const auto& other = group[n].items;
            const std::size_t common = std::min(ref.size(), other.size());
            for (std::size_t i = 0; i < common; ++i) {
                const auto& a = ref[i];
                const auto& b = other[i];
                if (a.chunk_id != b.chunk_id || a.index != b.index || a.fingerprint != b.fingerprint) {
                    throw Error("step " + std::to_string(step) + ": node 0 and node " + std::to_string(n) +
                                " of one group diverge at item " + std::to_string(i) + ": chunk " +
                                std::to_string(a.chunk_id) + " #" + std::to_string(a.index) + " (" + a.key_name +
                                (a.where.empty() ? "" : ", " + a.where) + ") vs chunk " + std::to_string(b.chunk_id) +
                                " #" + std::to_string(b.index) + " (" + b.key_name +
                                (b.where.empty() ? "" : ", " + b.where) + ")");
                }
            }
            if (ref.size() != other.size()) {
                throw Error("step " + std::to_string(step) + ": node 0 got " + std::to_string(ref.size()) +
                            " items, node " + std::to_string(n) + " got " + std::to_string(other.size()));
            }
        }
    }

    void tally(const NodeBatch& batch) {
        for (const auto& p : batch.items) {
            digest_ = hash_combine(digest_, hash_combine(p.chunk_id, p.fingerprint));
            ++samples_[p.key_name];
            std::uint64_t window = 0;
            if (spec_.mode == Mode::Window) {
                window = p.index / spec_.window_size;
            }
            ++windows_[{p.chunk_id, window}][p.key_name];
        }
    }

    const ado::DomainLaw& law(const std::string& key) const {
        if (auto it = spec_.laws.find(key); it != spec_.laws.end()) {
            return it->second;
        }
        if (spec_.default_law) {
            return *spec_.default_law;
        }
        throw Error("sim_train: no hidden law for domain '" + key + "'");
    }

    json train_step(std::uint64_t step, const std::vector<std::vector<NodeBatch>>& batches) {
        // Tokens per (group, domain); replicas inside a group hold the same
        // data, so each group contributes once.
        std::vector<std::map<std::string, std::uint64_t>> per_group(batches.size());
        std::map<std::string, MixtureKey> keys;
        for (std::size_t g = 0; g < batches.size(); ++g) {
            for (const auto& p : batches[g].front().items) {
                per_group[g][p.key_name] += p.tokens;
                keys.emplace(p.key_name, p.key);
            }
        }
        for (const auto& group : per_group) {
            for (const auto& [k, t] : group) {
                consumed_[k] += t;
            }
        }
        std::map<std::string, DomainFeedback> reduced;
        for (std::size_t g = 0; g < per_group.size(); ++g) {
            for (const auto& [k, t] : per_group[g]) {
                if (t == 0) {
                    continue;
                }
                const double n = std::max<double>(1.0, static_cast<double>(consumed_[k]));
                double loss = law(k)(n);
                if (spec_.noise > 0) {
                    Rng rng(hash_combine(hash_combine(spec_.seed, step), hash_combine(fnv1a(k), g)));
                    loss += spec_.noise * rng.normal();
                }
                auto& fb = reduced[k];
                fb.key = keys.at(k);
                fb.loss_sum += loss * static_cast<double>(t);
                fb.tokens += t;
            }
        }
        std::vector<DomainFeedback> losses;
        json record_losses = json::object();
        json record_tokens = json::object();
        for (auto& [k, fb] : reduced) {
            record_losses[k] = fb.loss_sum / static_cast<double>(fb.tokens);
            record_tokens[k] = fb.tokens;
            losses.push_back(std::move(fb));
        }
        if (!losses.empty()) {
            const FeedbackAck ack = control_.feedback(spec_.job_id, step, losses);
            if (!ack.warning.empty() && std::find(warnings_.begin(), warnings_.end(), ack.warning) == warnings_.end()) {
                warnings_.push_back(ack.warning);
            }
        }
        return {{"step", step},
                {"losses", std::move(record_losses)},
                {"tokens", std::move(record_tokens)},
                {"digest", digest_}};
    }

    void restart() {
        const std::string ckpt = control_.checkpoint(spec_.job_id);
        std::map<std::string, std::uint64_t> progress;
        for (auto& group : streams_) {
            for (auto& node : group) {
                for (auto& s : node) {
                    if (s->chunk()) {
                        progress[s->args().identity().str()] = s->samples_yielded();
                    }
                }
            }
        }
        streams_.clear();
        control_.restore(ckpt, progress);
        open_streams(true);
    }

    const SimTrainSpec& spec_;
    ClientOptions server_;
    ControlClient control_;
    std::shared_ptr<const Tokenizer> tokenizer_ = std::make_shared<WhitespaceTokenizer>();
    std::vector<std::vector<std::vector<std::unique_ptr<ResultStream>>>> streams_;
    std::map<std::uint32_t, std::set<std::uint64_t>> seen_chunks_;
    std::map<std::uint64_t, json> chunks_;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::map<std::string, std::uint64_t>> windows_;
    std::map<std::string, std::uint64_t> samples_;
    std::map<std::string, std::uint64_t> consumed_;
    std::uint64_t digest_ = kFnvOffset;
    json warnings_ = json::array();
    json report_ = json::object();
};

}  // namespace

json sim_train(const SimTrainSpec& spec, const ClientOptions& server) { return Simulation(spec, server).run(); }

//------------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

}  // namespace

std::vector<BenchRow> bench(const BenchSpec& spec, const ClientOptions& server) {
    using clock = std::chrono::steady_clock;
    if (spec.repetitions < 1) {
        throw Error("bench: repetitions must be positive");
    }
    static std::atomic<std::uint64_t> run_counter{0};
    const std::uint64_t run = run_counter++;
    std::vector<BenchRow> rows;
    ControlClient control(server);
    for (const std::uint64_t cs : spec.chunk_sizes) {
        for (const std::size_t workers : spec.workers) {
            std::vector<double> sps, cps, first, submit;
            for (int rep = 0; rep < spec.repetitions; ++rep) {
                json query = spec.query;
                query["mixture"]["chunk_size"] = cs;
                const std::string job = "bench-" + std::to_string(run) + "-" + std::to_string(cs) + "-" +
                                        std::to_string(workers) + "-" + std::to_string(rep);
                const auto t0 = clock::now();
                control.submit(job, query, QueryArgs{});
                const auto t1 = clock::now();
                ResultStreamingArgs a;
                a.job_id = job;
                a.prefetch_depth = workers;
                ResultStream stream(server, a);
                std::optional<clock::time_point> t_first;
                std::uint64_t n = 0;
                while (n < spec.samples) {
                    auto item = stream.next();
                    if (!item) {
                        break;
                    }
                    if (!t_first) {
                        t_first = clock::now();
                    }
                    ++n;
                }
                const auto t2 = clock::now();
                const double elapsed = std::chrono::duration<double>(t2 - t1).count();
                sps.push_back(static_cast<double>(n) / elapsed);
                cps.push_back(static_cast<double>(stream.chunks_received()) / elapsed);
                first.push_back(std::chrono::duration<double>(t_first.value_or(t2) - t0).count());
                submit.push_back(std::chrono::duration<double>(t1 - t0).count());
            }
            rows.push_back({cs, workers, median(sps), median(cps), median(first), median(submit)});
        }
    }
    return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%10s %8s %14s %12s %12s %10s\n", "chunk_size", "workers", "samples/s",
                  "chunks/s", "first_s", "submit_s");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%10llu %8zu %14.1f %12.2f %12.4f %10.4f\n",
                      static_cast<unsigned long long>(r.chunk_size), r.workers, r.samples_per_s, r.chunks_per_s,
                      r.first_sample_s, r.submit_s);
        out << line;
    }
    return out.str();
}

//------------------------------------------------------------------------------

std::vector<TrajectoryPoint> read_trajectory(const std::filesystem::path& log) {
    std::ifstream in(log);
    if (!in) {
        throw IoError("cannot read " + log.string());
    }
    std::vector<TrajectoryPoint> points;
    std::string line;
    std::uint64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            TrajectoryPoint p;
            p.step = j.at("step").get<std::uint64_t>();
            p.chunk_id = j.at("chunk_id").get<std::uint64_t>();
            for (const auto& w : j.at("pi")) {
                p.weights[w.at("key").get<std::string>()] = w.at("weight").get<double>();
            }
            points.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw IoError(log.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return points;
}

namespace {

std::vector<std::string> trajectory_keys(const std::vector<TrajectoryPoint>& points) {
    std::set<std::string> keys;
    for (const auto& p : points) {
        for (const auto& [k, _] : p.weights) {
            keys.insert(k);
        }
    }
    return {keys.begin(), keys.end()};
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c;
        if (c == '"') {
            out += '"';
        }
    }
    return out + '"';
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string trajectory_csv(const std::vector<TrajectoryPoint>& points) {
    const auto keys = trajectory_keys(points);
    std::ostringstream out;
    out.precision(10);
    out << "step,chunk_id";
    for (const auto& k : keys) {
        out << ',' << csv_field(k);
    }
    out << '\n';
    for (const auto& p : points) {
        out << p.step << ',' << p.chunk_id;
        for (const auto& k : keys) {
            auto it = p.weights.find(k);
            out << ',' << (it == p.weights.end() ? 0.0 : it->second);
        }
        out << '\n';
    }
    return out.str();
}

std::string trajectory_svg(const std::vector<TrajectoryPoint>& points) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const auto keys = trajectory_keys(points);
    const double w = 800, h = 400, left = 50, right = 200, top = 20, bottom = 40;
    const double pw = w - left - right, ph = h - top - bottom;
    double ymax = 0;
    for (const auto& p : points) {
        for (const auto& [_, v] : p.weights) {
            ymax = std::max(ymax, v);
        }
    }
    ymax = ymax > 0 ? std::min(1.0, std::ceil(ymax * 10) / 10) : 1.0;
    const double xs = points.size() > 1 ? pw / static_cast<double>(points.size() - 1) : 0;

    std::ostringstream out;
    out.precision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = ymax * i / 4;
        const double y = top + ph - ph * v / ymax;
        out << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
            << "</text>\n";
    }
    if (!points.empty()) {
        out << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"11\">step " << points.front().step
            << "</text>\n";
        out << "<text x=\"" << left + pw << "\" y=\"" << h - 10 << "\" font-size=\"11\" text-anchor=\"end\">step "
            << points.back().step << "</text>\n";
    }
    for (std::size_t k = 0; k < keys.size(); ++k) {
        const char* color = colors[k % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < points.size(); ++i) {
            auto it = points[i].weights.find(keys[k]);
            const double v = it == points[i].weights.end() ? 0.0 : it->second;
            out << (i ? " " : "") << left + xs * static_cast<double>(i) << ',' << top + ph - ph * v / ymax;
        }
        out << "\"/>\n";
        const double ly = top + 14 + 16 * static_cast<double>(k);
        out << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
            << color << "\"/>\n";
        out << "<text x=\"" << left + pw + 28 << "\" y=\"" << ly << "\" font-size=\"11\">" << xml_escape(keys[k])
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace mixplane
