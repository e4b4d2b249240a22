#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "mixplane/client.hpp"
#include "mixplane/reader.hpp"
#include "mixplane/server.hpp"
#include "support.hpp"

using namespace mixplane;
using namespace testing_support;
using nlohmann::json;

namespace {

const MixtureKey kA{{"language", {"JavaScript"}}};
const MixtureKey kB{{"language", {"HTML"}}};

// A chunk over explicit (key -> file -> ranges); file paths are optional.
Chunk make_chunk(std::map<MixtureKey, std::map<FileId, std::vector<Interval>>> parts, std::uint64_t seed,
                 std::optional<MixtureSpec> mixture = std::nullopt) {
    Chunk c;
    c.chunk_id = 0;
    c.seed = seed;
    c.mixture = std::move(mixture);
    for (auto& [key, files] : parts) {
        for (auto& [f, ivs] : files) {
            c.parts[key][0][f] = ivs;
            c.files.emplace(f, "/nonexistent/" + std::to_string(f) + ".jsonl");
        }
    }
    return c;
}

std::multiset<std::tuple<std::uint32_t, FileId, SampleId>> contents(const Chunk& c) {
    std::multiset<std::tuple<std::uint32_t, FileId, SampleId>> out;
    std::uint32_t k = 0;
    for (const auto& [key, ds] : c.parts) {
        for (const auto& [_, files] : ds) {
            for (const auto& [f, ivs] : files) {
                for (const auto& iv : ivs) {
                    for (SampleId s = iv.start; s < iv.end; ++s) {
                        out.insert({k, f, s});
                    }
                }
            }
        }
        ++k;
    }
    return out;
}

std::multiset<std::tuple<std::uint32_t, FileId, SampleId>> as_set(const std::vector<SamplePointer>& v) {
    std::multiset<std::tuple<std::uint32_t, FileId, SampleId>> out;
    for (const auto& p : v) {
        out.insert({p.key, p.file, p.sample});
    }
    return out;
}

// String of `words` words tagged with their origin.
std::string text_of(const std::string& tag, int words) {
    std::string s;
    for (int i = 0; i < words; ++i) {
        s += (i ? " " : "") + tag + std::to_string(i);
    }
    return s;
}

}  // namespace

TEST(OverallOrder, ConservesChunkContents) {
    const Chunk c = make_chunk({{kA, {{0, {{0, 2}}}}}, {kB, {{1, {{5, 6}}}}}}, 1);
    const auto order = overall_order(c);
    EXPECT_EQ(order.size(), 3u);
    EXPECT_EQ(as_set(order), contents(c));
}

TEST(OverallOrder, SingleKeyIsSequentialWithinFiles) {
    const Chunk c = make_chunk({{kA, {{0, {{0, 5}}}, {1, {{10, 13}}}}}}, 7);
    const auto order = overall_order(c);
    ASSERT_EQ(order.size(), 8u);
    // Each file is read contiguously and ascending.
    std::map<FileId, std::vector<SampleId>> per_file;
    std::vector<FileId> file_runs;
    for (const auto& p : order) {
        per_file[p.file].push_back(p.sample);
        if (file_runs.empty() || file_runs.back() != p.file) {
            file_runs.push_back(p.file);
        }
    }
    EXPECT_EQ(file_runs.size(), 2u);
    EXPECT_EQ(per_file[0], (std::vector<SampleId>{0, 1, 2, 3, 4}));
    EXPECT_EQ(per_file[1], (std::vector<SampleId>{10, 11, 12}));
}

TEST(OverallOrder, RepeatRunsIdentical) {
    const Chunk c = make_chunk({{kA, {{0, {{0, 40}}}, {2, {{3, 9}}}}}, {kB, {{1, {{0, 25}}}, {3, {{0, 4}}}}}}, 99);
    const auto first = overall_order(c);
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(overall_order(c), first);
    }
    EXPECT_EQ(as_set(first), contents(c));
}

TEST(OverallOrder, SeedChangesInterleave) {
    std::set<std::vector<std::uint32_t>> rotations;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Chunk c = make_chunk({{kA, {{0, {{0, 3}}}}}, {kB, {{1, {{0, 3}}}}}}, seed);
        rotations.insert(key_rotation(c));
    }
    EXPECT_EQ(rotations.size(), 2u);
}

TEST(OverallOrder, RoundRobinUntilDepletion) {
    const Chunk c = make_chunk({{kA, {{0, {{0, 5}}}}}, {kB, {{1, {{0, 2}}}}}}, 3);
    const auto rot = key_rotation(c);
    const auto order = overall_order(c);
    // Two full turns, then the remaining key (JavaScript, index 1) alone.
    EXPECT_EQ(order[0].key, rot[0]);
    EXPECT_EQ(order[1].key, rot[1]);
    EXPECT_EQ(order[2].key, rot[0]);
    EXPECT_EQ(order[3].key, rot[1]);
    for (std::size_t i = 4; i < order.size(); ++i) {
        EXPECT_EQ(order[i].key, 1u);
    }
}

//------------------------------------------------------------------------------

TEST(WindowOrder, SeventyThirtyWindowOf128) {
    const auto spec = MixtureSpec::make({{kA, 0.7}, {kB, 0.3}}, 1024);
    const Chunk c = make_chunk({{kA, {{0, {{0, 717}}}}}, {kB, {{1, {{0, 307}}}}}}, 5, spec);
    const auto strict = window_order(c, 128, true);
    // Keys are indexed in key order, which puts HTML first.
    const std::uint32_t a = 1, b = 0;
    ASSERT_EQ(strict.size() % 128, 0u);
    ASSERT_GE(strict.size(), 128u * 7);
    for (std::size_t w = 0; w < strict.size() / 128; ++w) {
        std::uint64_t na = 0, nb = 0;
        for (std::size_t i = w * 128; i < (w + 1) * 128; ++i) {
            (strict[i].key == a ? na : nb) += 1;
            EXPECT_TRUE(strict[i].key == a || strict[i].key == b);
        }
        EXPECT_EQ(na, 90u) << "window " << w;
        EXPECT_EQ(nb, 38u) << "window " << w;
    }
    // 8 x 90 exceeds 717: strict stops after seven windows.
    EXPECT_EQ(strict.size(), 7u * 128);
    // Best effort keeps going and yields the whole chunk.
    const auto loose = window_order(c, 128, false);
    EXPECT_EQ(as_set(loose), contents(c));
}

TEST(WindowOrder, WindowOfChunkSizeIsOneWindow) {
    const auto spec = MixtureSpec::make({{kA, 0.7}, {kB, 0.3}}, 1024);
    const Chunk c = make_chunk({{kA, {{0, {{0, 717}}}}}, {kB, {{1, {{0, 307}}}}}}, 5, spec);
    EXPECT_EQ(window_order(c, 1024, true).size(), 1024u);
}

TEST(WindowOrder, StrictStopsAtFirstUnfillableWindow) {
    // 50/50 windows of 20; B runs out after four windows.
    const auto spec = MixtureSpec::make({{kA, 0.5}, {kB, 0.5}}, 1040);
    const Chunk c = make_chunk({{kA, {{0, {{0, 1000}}}}}, {kB, {{1, {{0, 40}}}}}}, 2, spec);
    EXPECT_EQ(window_order(c, 20, true).size(), 4u * 20);
}

TEST(WindowOrder, MatchesSimulationOracle) {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint64_t na = 1 + rng.below(300), nb = 1 + rng.below(300);
        const std::uint64_t window = 1 + rng.below(64);
        const Chunk c = make_chunk({{kA, {{0, {{0, na}}}}}, {kB, {{1, {{0, nb}}}}}}, trial);
        const auto order = window_order(c, window, true);
        // Oracle: proportions are the realized composition; count complete
        // windows until one key cannot cover its share.
        const std::vector<double> props = {static_cast<double>(nb), static_cast<double>(na)};
        const auto per = largest_remainders(props, window);
        std::uint64_t left_b = nb, left_a = na, windows = 0;
        while (left_b >= per[0] && left_a >= per[1] && left_a + left_b > 0) {
            left_b -= per[0];
            left_a -= per[1];
            ++windows;
        }
        ASSERT_EQ(order.size(), windows * window) << na << "/" << nb << " window " << window;
    }
}

//------------------------------------------------------------------------------

TEST(ReadRange, HalfOpenZeroBased) {
    TempDir dir;
    std::vector<json> recs;
    for (int i = 0; i < 6; ++i) {
        recs.push_back({{"text", "line " + std::to_string(i)}});
    }
    write_lines(dir / "f.jsonl", recs);
    const auto got = read_range(dir / "f.jsonl", 1, 4);
    ASSERT_EQ(got.size(), 3u);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(json::parse(got[i]).at("text"), "line " + std::to_string(i + 1));
    }
    EXPECT_EQ(read_range(dir / "f.jsonl", 0, 6).size(), 6u);
    EXPECT_THROW(read_range(dir / "f.jsonl", 4, 7), IoError);
}

TEST(ReadRange, MalformedLineNamesFileAndLine) {
    TempDir dir;
    {
        std::ofstream out(dir / "bad.jsonl");
        out << "{\"text\":\"ok\"}\n{broken\n{\"text\":\"ok\"}\n";
    }
    try {
        read_range(dir / "bad.jsonl", 0, 3);
        FAIL() << "malformed record accepted";
    } catch (const IoError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("bad.jsonl"), std::string::npos) << msg;
        EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
    }
}

TEST(ReadRange, ZstdMatchesPlainTwin) {
    TempDir dir;
    std::vector<json> recs;
    Rng rng(5);
    for (int i = 0; i < 3000; ++i) {
        recs.push_back({{"text", text_of("w", 1 + static_cast<int>(rng.below(40)))}, {"i", i}});
    }
    write_lines(dir / "p.jsonl", recs);
    write_lines(dir / "p.jsonl.zst", recs);
    EXPECT_LT(std::filesystem::file_size(dir / "p.jsonl.zst"), std::filesystem::file_size(dir / "p.jsonl"));
    EXPECT_EQ(read_range(dir / "p.jsonl", 0, 3000), read_range(dir / "p.jsonl.zst", 0, 3000));
    const std::vector<Interval> ranges = {{3, 10}, {500, 501}, {2990, 3000}};
    EXPECT_EQ(read_ranges(dir / "p.jsonl", ranges), read_ranges(dir / "p.jsonl.zst", ranges));
    EXPECT_EQ(read_ranges(dir / "p.jsonl", ranges).size(), 18u);
}

//------------------------------------------------------------------------------

namespace {

// One file per key per `files_per_key`, `n` records each, on disk.
Chunk disk_chunk(const TempDir& dir, std::size_t files_per_key, SampleId n, int words_a, int words_b,
                 std::optional<MixtureSpec> mixture = std::nullopt) {
    Chunk c;
    c.seed = 17;
    c.mixture = std::move(mixture);
    FileId f = 0;
    for (const auto& [key, words, tag] :
         {std::tuple{kA, words_a, std::string("a")}, std::tuple{kB, words_b, std::string("b")}}) {
        for (std::size_t i = 0; i < files_per_key; ++i, ++f) {
            std::vector<json> recs;
            for (SampleId s = 0; s < n; ++s) {
                recs.push_back({{"text", text_of(tag + std::to_string(f) + "_" + std::to_string(s) + "_", words)}});
            }
            const auto path = dir / ("f" + std::to_string(f) + ".jsonl");
            write_lines(path, recs);
            c.parts[key][0][f] = {{0, n}};
            c.files.emplace(f, path.string());
        }
    }
    return c;
}

std::vector<std::string> drain(const Chunk& c, const std::vector<SamplePointer>& plan, std::size_t depth,
                               std::uint64_t* hot = nullptr) {
    ChunkPayloads p(c, plan, depth);
    std::vector<std::string> out;
    for (const auto& s : plan) {
        out.push_back(p.get(s.file, s.sample));
    }
    if (hot) {
        *hot = p.hot_path_opens();
    }
    return out;
}

}  // namespace

TEST(Prefetch, DepthDoesNotChangeOutput) {
    TempDir dir;
    const Chunk c = disk_chunk(dir, 6, 50, 5, 5);
    const auto plan = overall_order(c);
    std::uint64_t hot0 = 0, hot4 = 0;
    const auto a = drain(c, plan, 0, &hot0);
    const auto b = drain(c, plan, 4, &hot4);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 600u);
    EXPECT_EQ(hot0, 12u);
    EXPECT_LT(hot4, hot0);
}

TEST(Prefetch, MissingFileFailsAtConsumption) {
    TempDir dir;
    Chunk c = disk_chunk(dir, 2, 10, 3, 3);
    c.files[3] = (dir / "gone.jsonl").string();
    const auto plan = overall_order(c);
    ChunkPayloads p(c, plan, 4);
    bool threw = false;
    for (const auto& s : plan) {
        try {
            p.get(s.file, s.sample);
        } catch (const IoError& e) {
            EXPECT_EQ(s.file, 3u);
            EXPECT_NE(std::string(e.what()).find("gone.jsonl"), std::string::npos);
            threw = true;
            break;
        }
    }
    EXPECT_TRUE(threw);
}

//------------------------------------------------------------------------------

TEST(Tokenized, FiftyFiftyDespiteTenfoldLength) {
    TempDir dir;
    const auto spec = MixtureSpec::make({{kA, 0.5}, {kB, 0.5}}, 200);
    const Chunk c = disk_chunk(dir, 1, 100, 200, 20, spec);
    const auto plan = overall_order(c);
    ChunkPayloads p(c, plan, 2);
    const WhitespaceTokenizer tok;
    const auto w = tokenized_window(c, p, tok, 16, 200, true);
    ASSERT_FALSE(w.incomplete);
    ASSERT_EQ(w.items.size(), 200u);
    std::map<std::uint32_t, std::uint64_t> per_key;
    for (const auto& item : w.items) {
        ++per_key[item.key];
        ASSERT_EQ(item.tokens.size(), 16u);
        ASSERT_EQ(item.domains, std::vector<std::uint32_t>(16, item.key));
    }
    EXPECT_EQ(per_key[0], 100u);
    EXPECT_EQ(per_key[1], 100u);
}

TEST(Tokenized, SequencesComeFromOneKey) {
    TempDir dir;
    const Chunk c = disk_chunk(dir, 1, 60, 7, 9);
    const auto keys = chunk_keys(c);
    const auto plan = overall_order(c);
    ChunkPayloads p(c, plan, 0);
    // The tokenizer hashes words; re-encode each key's text to check purity.
    const WhitespaceTokenizer tok;
    std::map<std::uint32_t, std::set<std::int32_t>> vocab;
    for (const auto& s : plan) {
        for (auto t : tok.encode(record_text(p.get(s.file, s.sample)))) {
            vocab[s.key].insert(t);
        }
    }
    ChunkPayloads p2(c, plan, 0);
    const auto w = tokenized_window(c, p2, tok, 5, 40, true);
    ASSERT_FALSE(w.items.empty());
    for (const auto& item : w.items) {
        for (auto t : item.tokens) {
            ASSERT_TRUE(vocab[item.key].contains(t));
        }
    }
}

TEST(Tokenized, ExactLengthSamplesBehaveLikeWindows) {
    TempDir dir;
    const auto spec = MixtureSpec::make({{kA, 0.5}, {kB, 0.5}}, 40);
    const Chunk c = disk_chunk(dir, 1, 20, 8, 8, spec);
    ChunkPayloads p(c, overall_order(c), 0);
    const auto w = tokenized_window(c, p, WhitespaceTokenizer(), 8, 40, true);
    EXPECT_EQ(w.items.size(), 40u);
}

TEST(Tokenized, SequenceLength2048) {
    TempDir dir;
    const auto spec = MixtureSpec::make({{kA, 0.5}, {kB, 0.5}}, 4);
    const Chunk c = disk_chunk(dir, 1, 2, 4500, 4500, spec);
    ChunkPayloads p(c, overall_order(c), 0);
    const auto w = tokenized_window(c, p, WhitespaceTokenizer(), 2048, 4, true);
    ASSERT_EQ(w.items.size(), 4u);
    for (const auto& item : w.items) {
        EXPECT_EQ(item.tokens.size(), 2048u);
    }
}

TEST(Tokenized, EmptySamplesSkippedWithCounter) {
    TempDir dir;
    const Chunk c = disk_chunk(dir, 1, 10, 0, 4);
    ChunkPayloads p(c, overall_order(c), 0);
    const auto w = tokenized_window(c, p, WhitespaceTokenizer(), 2, 10, false);
    EXPECT_EQ(w.skipped_empty, 10u);
}

//------------------------------------------------------------------------------

TEST(PerDomainLoss, Examples) {
    const std::vector<double> l = {1, 2, 3};
    const std::vector<std::uint32_t> t = {0, 0, 1};
    const auto m = per_domain_loss(l, t);
    EXPECT_EQ(m.at(0), (DomainLoss{3, 2}));
    EXPECT_EQ(m.at(1), (DomainLoss{3, 1}));
    const std::vector<std::uint32_t> one = {4, 4, 4};
    EXPECT_EQ(per_domain_loss(l, one).at(4), (DomainLoss{6, 3}));
    const std::vector<std::uint32_t> short_tags = {0};
    EXPECT_THROW(per_domain_loss(l, short_tags), Error);
}

TEST(PerDomainLoss, MatchesGroupBy) {
    Rng rng(8);
    std::vector<double> losses(10000);
    std::vector<std::uint32_t> tags(10000);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        losses[i] = rng.uniform() * 5;
        tags[i] = static_cast<std::uint32_t>(rng.below(5));
    }
    const auto got = per_domain_loss(losses, tags);
    for (std::uint32_t d = 0; d < 5; ++d) {
        double sum = 0;
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < losses.size(); ++i) {
            if (tags[i] == d) {
                sum += losses[i];
                ++n;
            }
        }
        EXPECT_NEAR(got.at(d).loss_sum, sum, 1e-9);
        EXPECT_EQ(got.at(d).tokens, n);
    }
}

//------------------------------------------------------------------------------

namespace {

struct Served {
    TempDir dir;
    std::shared_ptr<JobManager> jobs;
    std::unique_ptr<TcpServer> server;
    ClientOptions opts;

    // 1500 JavaScript and 700 HTML samples over several files.
    Served() {
        auto cat = std::make_shared<Catalog>();
        std::vector<std::filesystem::path> files;
        for (int f = 0; f < 6; ++f) {
            std::vector<json> recs;
            for (int s = 0; s < (f < 3 ? 500 : 233); ++s) {
                recs.push_back(code_record(f < 3 ? "JavaScript" : "HTML", "CC",
                                           text_of("f" + std::to_string(f) + "s" + std::to_string(s) + "_", 12)));
            }
            const auto p = dir / ("c" + std::to_string(f) + (f % 2 ? ".jsonl.zst" : ".jsonl"));
            write_lines(p, recs);
            files.push_back(p);
        }
        cat->register_dataset("code", files, JsonFieldParser(), code_schema());
        jobs = std::make_shared<JobManager>(cat, dir / "ckpt");
        server = std::make_unique<TcpServer>(jobs, "127.0.0.1", 0);
        opts.port = server->port();
        opts.backoff.base = std::chrono::milliseconds(5);
        QueryArgs args;
        args.seed = 3;
        args.nodes_per_group = 2;
        ControlClient(opts).submit(
            "job",
            {{"filters", json::array()},
             {"mixture",
              {{"type", "static"},
               {"chunk_size", 200},
               {"weights",
                json::array({{{"key", to_json(kA)}, {"weight", 0.7}}, {{"key", to_json(kB)}, {"weight", 0.3}}})}}}},
            args);
    }
};

ResultStreamingArgs stream_args(std::uint32_t node, Mode mode = Mode::Overall) {
    ResultStreamingArgs a;
    a.job_id = "job";
    a.node = node;
    a.mode = mode;
    a.window_size = 20;
    return a;
}

std::vector<StreamItem> drain(ResultStream& s, std::size_t limit = SIZE_MAX) {
    std::vector<StreamItem> out;
    while (out.size() < limit) {
        auto item = s.next();
        if (!item) {
            break;
        }
        out.push_back(std::move(*item));
    }
    return out;
}

}  // namespace

TEST(ResultStream, SameIdentitySameSequence) {
    Served env;
    ResultStream a(env.opts, stream_args(0));
    ResultStream b(env.opts, stream_args(1));
    const auto xs = drain(a);
    const auto ys = drain(b);
    // JavaScript limits the job to floor(1500 / 140) = 10 chunks.
    EXPECT_EQ(xs.size(), 2000u);
    EXPECT_EQ(xs, ys);
    EXPECT_EQ(a.chunks_received(), 10u);
    EXPECT_TRUE(a.ended());
    std::set<std::pair<FileId, SampleId>> unique;
    for (const auto& x : xs) {
        unique.insert({x.file, x.sample});
    }
    EXPECT_EQ(unique.size(), xs.size());
}

TEST(ResultStream, PayloadsAreTheRecordedSamples) {
    Served env;
    ResultStream s(env.opts, stream_args(0));
    for (const auto& item : drain(s, 300)) {
        const json rec = json::parse(item.payload);
        const std::string text = rec.at("text");
        const std::string prefix = "f" + std::to_string(item.file) + "s" + std::to_string(item.sample) + "_";
        ASSERT_EQ(text.rfind(prefix, 0), 0u) << text;
        ASSERT_EQ(rec.at("language"), item.file < 3 ? "JavaScript" : "HTML");
    }
}

TEST(ResultStream, WindowModeHoldsPerWindowCounts) {
    Served env;
    ResultStream s(env.opts, stream_args(0, Mode::Window));
    const auto items = drain(s, 200);
    ASSERT_EQ(items.size(), 200u);
    for (std::size_t w = 0; w < 10; ++w) {
        std::size_t js = 0;
        for (std::size_t i = w * 20; i < (w + 1) * 20; ++i) {
            js += items[i].key_name.find("JavaScript") != std::string::npos;
        }
        EXPECT_EQ(js, 14u);
    }
}

TEST(ResultStream, DroppedConnectionResumesWithoutGaps) {
    Served env;
    ResultStream ref(env.opts, stream_args(0));
    const auto expect = drain(ref);
    ResultStream s(env.opts, stream_args(1));
    auto got = drain(s, 333);
    s.connection().drop();
    env.server->drop_connections();
    for (auto& x : drain(s)) {
        got.push_back(std::move(x));
    }
    EXPECT_EQ(got, expect);
}

TEST(ResultStream, TokenizedStream) {
    Served env;
    auto args = stream_args(0, Mode::Tokenized);
    args.sequence_length = 6;
    ResultStream s(env.opts, args);
    std::uint64_t n = 0;
    std::map<std::uint32_t, std::uint64_t> per_key;
    while (auto item = s.next_tokens()) {
        ASSERT_EQ(item->tokens.size(), 6u);
        if (n < 200) {
            ++per_key[item->key];
        }
        ++n;
    }
    // Each chunk is one window of 200 sequences.
    EXPECT_EQ(n, 2000u);
    EXPECT_EQ(per_key[0] + per_key[1], 200u);
    EXPECT_EQ(std::max(per_key[0], per_key[1]), 140u);
}

TEST(ResultStream, PrefetchDepthInvariant) {
    Served env;
    auto a_args = stream_args(0);
    auto b_args = stream_args(1);
    b_args.prefetch_depth = 4;
    ResultStream a(env.opts, a_args), b(env.opts, b_args);
    EXPECT_EQ(drain(a), drain(b));
    EXPECT_LT(b.hot_path_opens(), a.hot_path_opens());
}
