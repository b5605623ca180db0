#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ote/kg_data.hpp"

using namespace ote;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("ote_kg_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

} // namespace

TEST_CASE("loader interns names in first-seen order and keeps duplicates") {
    TempDir dir("loader");
    write_file(dir.path / "t.txt", "a\tr1\tb\nb\tr1\tc\na\tr2\tc\na\tr1\tb\n");
    Vocabulary vocab;
    const TripleStore ts = load_triples(dir.path / "t.txt", vocab, true, "train");
    REQUIRE(ts.size() == 4);
    CHECK(vocab.entity_count() == 3);
    CHECK(vocab.relation_count() == 2);
    CHECK(vocab.entity_id("a") == EntityId{0});
    CHECK(vocab.entity_id("b") == EntityId{1});
    CHECK(vocab.entity_id("c") == EntityId{2});
    CHECK(vocab.relation_id("r1") == RelationId{0});
    CHECK(ts.triples[0] == Triple{0, 0, 1});
    CHECK(ts.triples[3] == Triple{0, 0, 1});
    CHECK(vocab.entity_name(2) == "c");
}

TEST_CASE("loader skips blank lines and reports malformed rows with location") {
    TempDir dir("malformed");
    write_file(dir.path / "ok.txt", "a\tr\tb\n\n   \nb\tr\ta\n");
    Vocabulary vocab;
    CHECK(load_triples(dir.path / "ok.txt", vocab, true).size() == 2);

    write_file(dir.path / "bad.txt", "a\tr\tb\nc only_two_fields\n");
    Vocabulary v2;
    try {
        load_triples(dir.path / "bad.txt", v2, true);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.txt:2") != std::string::npos);
        CHECK(msg.find("3 tab-separated fields") != std::string::npos);
    }
    CHECK_THROWS_AS(load_triples(dir.path / "missing.txt", v2, true), DataError);
}

TEST_CASE("fixed-vocabulary mode rejects unseen names") {
    TempDir dir("fixed");
    write_file(dir.path / "train.txt", "a\tr\tb\n");
    write_file(dir.path / "extra.txt", "a\tr\tzzz\n");
    Vocabulary vocab;
    load_triples(dir.path / "train.txt", vocab, true);
    CHECK_THROWS_AS(load_triples(dir.path / "extra.txt", vocab, false), DataError);
}

TEST_CASE("dataset load wires the three standard splits") {
    TempDir dir("dataset");
    write_file(dir.path / "train.txt", "a\tr\tb\nb\tr\tc\n");
    write_file(dir.path / "valid.txt", "a\tr\tc\n");
    write_file(dir.path / "test.txt", "c\tr\ta\n");
    const Dataset d = Dataset::load(dir.path);
    CHECK(d.train.size() == 2);
    CHECK(d.valid.size() == 1);
    CHECK(d.test.size() == 1);
    CHECK(d.vocab.entity_count() == 3);
    CHECK(d.train.split == "train");

    // Hashes are order-sensitive content fingerprints.
    const auto h1 = d.vocab.entity_hash();
    TempDir dir2("dataset2");
    write_file(dir2.path / "train.txt", "b\tr\ta\nb\tr\tc\n");
    write_file(dir2.path / "valid.txt", "a\tr\tc\n");
    write_file(dir2.path / "test.txt", "c\tr\ta\n");
    CHECK(Dataset::load(dir2.path).vocab.entity_hash() != h1);
}

TEST_CASE("checked-in toy dataset matches its hand tally") {
    if (!fs::exists("data/toy/train.txt")) SKIP("toy dataset not reachable from cwd");
    const Dataset d = Dataset::load("data/toy");
    CHECK(d.vocab.entity_count() == 20);
    CHECK(d.vocab.relation_count() == 4);
    CHECK(d.train.size() == 40);
    CHECK(d.valid.size() == 8);
    CHECK(d.test.size() == 8);
    // Every evaluation entity and relation is trainable.
    std::set<EntityId> seen;
    for (const Triple& t : d.train.triples) {
        seen.insert(t.head);
        seen.insert(t.tail);
    }
    CHECK(seen.size() == 20);
}

TEST_CASE("context index mirrors the training edges") {
    TripleStore train;
    train.triples = {{0, 0, 1}, {2, 1, 1}, {1, 0, 2}, {0, 1, 2}};
    const ContextIndex idx = build_context_index(train, 4);
    CHECK(idx.entity_count() == 4);

    REQUIRE(idx.incoming(1).size() == 2);
    std::set<std::pair<EntityId, RelationId>> in1(idx.incoming(1).begin(), idx.incoming(1).end());
    CHECK(in1 == std::set<std::pair<EntityId, RelationId>>{{0, 0}, {2, 1}});

    REQUIRE(idx.outgoing(0).size() == 2);
    std::set<std::pair<RelationId, EntityId>> out0(idx.outgoing(0).begin(), idx.outgoing(0).end());
    CHECK(out0 == std::set<std::pair<RelationId, EntityId>>{{0, 1}, {1, 2}});

    CHECK(idx.incoming(0).empty());
    CHECK(idx.incoming(3).empty());
    CHECK(idx.outgoing(3).empty());
}

TEST_CASE("filter index answers exactly the known-true sets") {
    TripleStore train, valid, test;
    train.triples = {{0, 0, 1}, {0, 0, 2}, {1, 0, 2}};
    valid.triples = {{0, 0, 3}};
    test.triples = {{2, 1, 0}};
    const FilterIndex f = build_filter_index(train, valid, test);

    CHECK(f.contains({0, 0, 1}));
    CHECK(f.contains({0, 0, 3}));
    CHECK(f.contains({2, 1, 0}));
    CHECK_FALSE(f.contains({1, 1, 0}));

    const auto* tails = f.true_tails(0, 0);
    REQUIRE(tails != nullptr);
    CHECK(*tails == std::vector<EntityId>{1, 2, 3});
    const auto* heads = f.true_heads(0, 2);
    REQUIRE(heads != nullptr);
    CHECK(*heads == std::vector<EntityId>{0, 1});
    CHECK(f.true_tails(3, 1) == nullptr);
}

TEST_CASE("category classification follows the pair-count rule") {
    TripleStore train;
    // (0,r0,*) fans out to 3 tails; (*,r0,9) fans in from 3 heads.
    train.triples = {{0, 0, 1}, {0, 0, 2}, {0, 0, 3}, {4, 0, 9}, {5, 0, 9},
                     {6, 0, 9}, {7, 1, 8}, {0, 0, 9}};
    const PairCounts pc = build_pair_counts(train);
    CHECK(pc.c_hr(0, 0) == 4);
    CHECK(pc.c_rt(0, 9) == 4);
    CHECK(pc.c_hr(7, 1) == 1);

    // Naming is pinned by the counting rule: c(h,r) > 1 alone is N-to-1,
    // c(r,t) > 1 alone is 1-to-N, both is N-to-N.
    CHECK(classify_triple({0, 0, 1}, pc) == Category::n_to_1);
    CHECK(classify_triple({4, 0, 9}, pc) == Category::one_to_n);
    CHECK(classify_triple({0, 0, 9}, pc) == Category::n_to_n);
    CHECK(classify_triple({7, 1, 8}, pc) == Category::other);
    CHECK(std::string(to_string(Category::one_to_n)) == "1-to-N");
}
