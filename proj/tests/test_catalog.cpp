#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mixplane/catalog.hpp"
#include "support.hpp"

using namespace mixplane;
using nlohmann::json;
using testing_support::code_record;
using testing_support::code_schema;
using testing_support::TempDir;
using testing_support::write_lines;

namespace {

SampleRecord rec(FileId file, SampleId sample, std::string lang, std::string lic) {
    return {0, file, sample, {{"language", {std::move(lang)}}, {"license", {std::move(lic)}}}};
}

// Oracle: one interval per sample, then merge neighbours that share file,
// properties and touch.
std::vector<IntervalRow> merge_oracle(const std::vector<SampleRecord>& rows) {
    std::vector<IntervalRow> out;
    for (const auto& r : rows) {
        out.push_back({r.file_id, r.dataset_id, r.values, r.sample_id, r.sample_id + 1});
    }
    bool merged = true;
    while (merged) {
        merged = false;
        for (std::size_t i = 0; i + 1 < out.size(); ++i) {
            if (out[i].file_id == out[i + 1].file_id && out[i].values == out[i + 1].values &&
                out[i].end == out[i + 1].start) {
                out[i].end = out[i + 1].end;
                out.erase(out.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                merged = true;
                break;
            }
        }
    }
    return out;
}

}  // namespace

TEST(IntervalDetection, SixRowExampleGivesThreeIntervals) {
    const std::vector<SampleRecord> rows = {
        rec(1, 1, "JavaScript", "MIT"), rec(1, 2, "JavaScript", "MIT"), rec(1, 3, "JavaScript", "MIT"),
        rec(1, 4, "Python", "Apache"),  rec(1, 5, "Python", "Apache"),  rec(2, 1, "Python", "Apache"),
    };
    const auto got = detect_intervals(rows);
    ASSERT_EQ(got.size(), 3u);
    EXPECT_EQ(got[0].file_id, 1u);
    EXPECT_EQ(got[0].start, 1u);
    EXPECT_EQ(got[0].end, 4u);
    EXPECT_EQ(got[0].values.at("language"), std::vector<std::string>{"JavaScript"});
    EXPECT_EQ(got[1].file_id, 1u);
    EXPECT_EQ(got[1].start, 4u);
    EXPECT_EQ(got[1].end, 6u);
    EXPECT_EQ(got[1].values.at("license"), std::vector<std::string>{"Apache"});
    EXPECT_EQ(got[2].file_id, 2u);
    EXPECT_EQ(got[2].start, 1u);
    EXPECT_EQ(got[2].end, 2u);
}

TEST(IntervalDetection, SingleSample) {
    const std::vector<SampleRecord> rows = {rec(0, 7, "C", "GPL")};
    const auto got = detect_intervals(rows);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].end - got[0].start, 1u);
}

TEST(IntervalDetection, GapSplitsRun) {
    const std::vector<SampleRecord> rows = {rec(0, 1, "C", "GPL"), rec(0, 2, "C", "GPL"), rec(0, 4, "C", "GPL")};
    const auto got = detect_intervals(rows);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0].start, 1u);
    EXPECT_EQ(got[0].end, 3u);
    EXPECT_EQ(got[1].start, 4u);
    EXPECT_EQ(got[1].end, 5u);
    EXPECT_EQ(got, merge_oracle(rows));
}

TEST(IntervalDetection, MatchesMergeOracleOnRandomRows) {
    Rng rng(42);
    const char* langs[] = {"C", "Python"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<SampleRecord> rows;
        for (FileId f = 0; f < 3; ++f) {
            for (SampleId s = 0; s < 30; ++s) {
                if (rng.below(4) == 0) {
                    continue;
                }
                rows.push_back(rec(f, s, langs[rng.below(2)], "MIT"));
            }
        }
        ASSERT_EQ(detect_intervals(rows), merge_oracle(rows));
    }
}

TEST(IntervalDetection, UnsortedRowsRejected) {
    const std::vector<SampleRecord> rows = {rec(0, 2, "C", "GPL"), rec(0, 1, "C", "GPL")};
    EXPECT_THROW(detect_intervals(rows), Error);
}

//------------------------------------------------------------------------------

TEST(Catalog, RegisterAssignsLineIndexIds) {
    TempDir dir;
    write_lines(dir / "a.jsonl", {code_record("C", "MIT"), code_record("C", "MIT"), code_record("Python", "GPL")});
    write_lines(dir / "b.jsonl", {code_record("HTML", "CC"), code_record("C", "MIT"), code_record("C", "MIT")});
    Catalog cat;
    cat.register_dataset("code", {dir / "a.jsonl", dir / "b.jsonl"}, JsonFieldParser(), code_schema());
    EXPECT_EQ(cat.size(), 6u);
    const auto all = cat.execute_filter({});
    ASSERT_EQ(all.size(), 6u);
    for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_EQ(all[i].sample_id, i % 3);
        EXPECT_EQ(all[i].file_id, i / 3);
    }
    EXPECT_EQ(all[2].values.at("language"), std::vector<std::string>{"Python"});
}

TEST(Catalog, PileStyleSchemaAccepted) {
    TempDir dir;
    write_lines(dir / "pile.jsonl", {{{"text", "a"}, {"meta", {{"pile_set_name", "Pile-CC"}}}},
                                     {{"text", "b"}, {"meta", {{"pile_set_name", "Books3"}}}}});
    Catalog cat;
    cat.register_dataset("pile", {dir / "pile.jsonl"}, *make_parser("pile"), pile_schema());
    EXPECT_EQ(cat.size(), 2u);
    const PropertyDef* def = cat.schema().find("pile_set_name");
    ASSERT_NE(def, nullptr);
    EXPECT_FALSE(def->nullable);
    EXPECT_EQ(def->kind, PropertyKind::Categorical);
}

TEST(Catalog, CategoricalViolationNamesFileAndSample) {
    TempDir dir;
    write_lines(dir / "bad.jsonl", {code_record("C", "MIT"), code_record("Fortran", "MIT")});
    Catalog cat;
    try {
        cat.register_dataset("code", {dir / "bad.jsonl"}, JsonFieldParser(), code_schema());
        FAIL() << "expected SchemaError";
    } catch (const SchemaError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("bad.jsonl"), std::string::npos) << what;
        EXPECT_NE(what.find("sample 1"), std::string::npos) << what;
        EXPECT_NE(what.find("Fortran"), std::string::npos) << what;
    }
    EXPECT_EQ(cat.size(), 0u);
}

TEST(Catalog, NonNullablePropertyMissing) {
    TempDir dir;
    write_lines(dir / "m.jsonl", {{{"text", "a"}, {"license", "MIT"}}});
    Catalog cat;
    EXPECT_THROW(cat.register_dataset("code", {dir / "m.jsonl"}, JsonFieldParser(), code_schema()), SchemaError);
}

TEST(Catalog, FailedRegistrationLeavesCatalogUnchanged) {
    TempDir dir;
    write_lines(dir / "ok.jsonl", {code_record("C", "MIT")});
    write_lines(dir / "ok2.jsonl", {code_record("C", "MIT")});
    write_lines(dir / "bad.jsonl", {code_record("Cobol", "MIT")});
    Catalog cat;
    cat.register_dataset("ok", {dir / "ok.jsonl"}, JsonFieldParser(), code_schema());
    EXPECT_THROW(cat.register_dataset("bad", {dir / "ok2.jsonl", dir / "bad.jsonl"}, JsonFieldParser(), code_schema()),
                 Error);
    EXPECT_EQ(cat.size(), 1u);
    EXPECT_EQ(cat.datasets().size(), 1u);
}

TEST(Catalog, ReRegisteringUnchangedFileIsNoop) {
    TempDir dir;
    write_lines(dir / "a.jsonl", {code_record("C", "MIT")});
    Catalog cat;
    const auto id = cat.register_dataset("code", {dir / "a.jsonl"}, JsonFieldParser(), code_schema());
    EXPECT_EQ(cat.register_dataset("code", {dir / "a.jsonl"}, JsonFieldParser(), code_schema()), id);
    EXPECT_EQ(cat.size(), 1u);
    write_lines(dir / "a.jsonl", {code_record("C", "MIT"), code_record("C", "GPL")});
    EXPECT_THROW(cat.register_dataset("code", {dir / "a.jsonl"}, JsonFieldParser(), code_schema()), Error);
}

TEST(Catalog, ParallelRegistrationMatchesSequential) {
    TempDir dir;
    std::vector<std::filesystem::path> files;
    Rng rng(5);
    const char* langs[] = {"JavaScript", "HTML", "Python", "C"};
    for (int f = 0; f < 9; ++f) {
        std::vector<json> recs;
        for (int s = 0; s < 50; ++s) {
            recs.push_back(code_record(langs[rng.below(4)], rng.below(2) ? "MIT" : "GPL"));
        }
        files.push_back(dir / ("f" + std::to_string(f) + ".jsonl"));
        write_lines(files.back(), recs);
    }
    Catalog one, four;
    one.register_dataset("d", files, JsonFieldParser(), code_schema(), 1);
    four.register_dataset("d", files, JsonFieldParser(), code_schema(), 4);
    EXPECT_EQ(one.execute_filter({}), four.execute_filter({}));
    EXPECT_EQ(one.filter_intervals({}), four.filter_intervals({}));
}

namespace {

// Catalog over the language/license fixture with ids as in the example:
// file 0 stands in for "file 1", one leading filler line shifts ids to 1.
Catalog example_catalog(const TempDir& dir) {
    write_lines(dir / "f1.jsonl", {code_record("C", "GPL"), code_record("JavaScript", "MIT"),
                                   code_record("JavaScript", "MIT"), code_record("JavaScript", "MIT"),
                                   code_record("Python", "Apache"), code_record("Python", "Apache")});
    write_lines(dir / "f2.jsonl", {code_record("C", "GPL"), code_record("Python", "Apache")});
    Catalog cat;
    cat.register_dataset("code", {dir / "f1.jsonl", dir / "f2.jsonl"}, JsonFieldParser(), code_schema());
    return cat;
}

}  // namespace

TEST(Catalog, FilterByLicense) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    const std::vector<FilterPredicate> preds = {{"license", FilterOp::Eq, {"MIT"}}};
    const auto recs = cat.execute_filter(preds);
    ASSERT_EQ(recs.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(recs[i].file_id, 0u);
        EXPECT_EQ(recs[i].sample_id, i + 1);
    }
    const auto iv = cat.filter_intervals(preds);
    ASSERT_EQ(iv.size(), 1u);
    EXPECT_EQ(iv[0].start, 1u);
    EXPECT_EQ(iv[0].end, 4u);
}

TEST(Catalog, NoPredicatesReturnsEverything) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    EXPECT_EQ(cat.execute_filter({}).size(), 8u);
}

TEST(Catalog, ExampleIntervalsThroughCatalog) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    const std::vector<FilterPredicate> preds = {{"license", FilterOp::NotIn, {"GPL"}}};
    const auto iv = cat.filter_intervals(preds);
    ASSERT_EQ(iv.size(), 3u);
    EXPECT_EQ(std::make_tuple(iv[0].file_id, iv[0].start, iv[0].end), std::make_tuple(0u, 1ull, 4ull));
    EXPECT_EQ(std::make_tuple(iv[1].file_id, iv[1].start, iv[1].end), std::make_tuple(0u, 4ull, 6ull));
    EXPECT_EQ(std::make_tuple(iv[2].file_id, iv[2].start, iv[2].end), std::make_tuple(1u, 1ull, 2ull));
}

TEST(Catalog, FilterOperatorsMatchBruteForceScan) {
    TempDir dir;
    // Ten samples, some holding several languages.
    const std::vector<std::vector<std::string>> langs = {
        {"Python", "C"}, {"C"}, {"Python"}, {"HTML"}, {"JavaScript", "HTML"},
        {"Python", "C"}, {"JavaScript"}, {"C", "HTML"}, {"Python"}, {"JavaScript", "Python"}};
    std::vector<json> recs;
    for (std::size_t i = 0; i < langs.size(); ++i) {
        recs.push_back({{"text", "t"}, {"language", langs[i]}, {"license", i % 2 ? "MIT" : "GPL"}});
    }
    write_lines(dir / "multi.jsonl", recs);
    Catalog cat;
    cat.register_dataset("m", {dir / "multi.jsonl"}, JsonFieldParser(), code_schema());

    auto holds_any = [](const std::vector<std::string>& held, const std::vector<std::string>& operand) {
        return std::any_of(held.begin(), held.end(), [&](const std::string& v) {
            return std::find(operand.begin(), operand.end(), v) != operand.end();
        });
    };
    const std::vector<std::pair<FilterOp, std::vector<std::string>>> cases = {
        {FilterOp::Eq, {"Python"}},          {FilterOp::In, {"Python"}},        {FilterOp::In, {"HTML", "C"}},
        {FilterOp::Ne, {"Python"}},          {FilterOp::NotIn, {"C", "HTML"}},
        {FilterOp::NotIn, {"JavaScript"}},
    };
    for (const auto& [op, operand] : cases) {
        std::vector<SampleId> expect;
        for (std::size_t i = 0; i < langs.size(); ++i) {
            const bool any = holds_any(langs[i], operand);
            const bool keep = (op == FilterOp::Eq || op == FilterOp::In) ? any : !any;
            if (keep) {
                expect.push_back(i);
            }
        }
        const std::vector<FilterPredicate> preds = {{"language", op, operand}};
        std::vector<SampleId> got;
        for (const auto& r : cat.execute_filter(preds)) {
            got.push_back(r.sample_id);
        }
        EXPECT_EQ(got, expect) << "op " << static_cast<int>(op) << " operand " << operand.front();
    }
    // Values outside the category set are rejected rather than matching nothing.
    const std::vector<FilterPredicate> fortran = {{"language", FilterOp::Eq, {"Fortran"}}};
    EXPECT_THROW(cat.execute_filter(fortran), QueryError);
    // Sample 0 holds [Python, C] and matches language in {Python}.
    const std::vector<FilterPredicate> py = {{"language", FilterOp::In, {"Python"}}};
    EXPECT_EQ(cat.execute_filter(py).front().sample_id, 0u);
}

TEST(Catalog, ConjunctionOfPredicates) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    const std::vector<FilterPredicate> preds = {{"language", FilterOp::Eq, {"Python"}},
                                                {"license", FilterOp::Eq, {"Apache"}}};
    EXPECT_EQ(cat.execute_filter(preds).size(), 3u);
}

TEST(Catalog, UnknownPropertyInFilterIsQueryError) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    const std::vector<FilterPredicate> preds = {{"stars", FilterOp::Eq, {"5"}}};
    EXPECT_THROW(cat.execute_filter(preds), QueryError);
}

TEST(Catalog, FilterPredicateJsonForms) {
    const auto a = FilterPredicate::from_json(json::array({"license", "==", "MIT"}));
    EXPECT_EQ(a.op, FilterOp::Eq);
    EXPECT_EQ(a.operand, std::vector<std::string>{"MIT"});
    const auto b = FilterPredicate::from_json({{"property", "language"}, {"op", "not-in"}, {"values", {"C", "HTML"}}});
    EXPECT_EQ(b.op, FilterOp::NotIn);
    EXPECT_EQ(b.operand.size(), 2u);
    EXPECT_THROW(FilterPredicate::from_json(json::array({"license", "~", "MIT"})), QueryError);
}

TEST(Catalog, SnapshotRoundTrip) {
    TempDir dir;
    const Catalog cat = example_catalog(dir);
    cat.save(dir / "cat.bin");
    const Catalog back = Catalog::load(dir / "cat.bin");
    EXPECT_EQ(back.size(), cat.size());
    EXPECT_EQ(back.schema(), cat.schema());
    EXPECT_EQ(back.execute_filter({}), cat.execute_filter({}));
    EXPECT_EQ(back.filter_intervals({}), cat.filter_intervals({}));
    ASSERT_TRUE(back.file(1).has_value());
    EXPECT_EQ(back.file(1)->path, cat.file(1)->path);
}

TEST(Catalog, CorruptSnapshotRejected) {
    TempDir dir;
    std::ofstream(dir / "junk.bin") << "not a catalog";
    EXPECT_THROW(Catalog::load(dir / "junk.bin"), Error);
}

TEST(Schema, JsonRoundTrip) {
    const PropertySchema s = code_schema();
    EXPECT_EQ(PropertySchema::from_json(s.to_json()), s);
}
