#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "endx/common.hpp"
#include "endx/vocab.hpp"

using namespace endx;

TEST_SUITE_BEGIN("vocab");

TEST_CASE("split_tokens lowercases and separates punctuation") {
    auto toks = split_tokens("What is X?");
    REQUIRE(toks.size() == 4);
    CHECK(toks[0] == "what");
    CHECK(toks[1] == "is");
    CHECK(toks[2] == "x");
    CHECK(toks[3] == "?");

    auto abbrev = split_tokens("Dr. Smith's dog, born 1987!");
    // dr . smith ' s dog , born 1987 !
    REQUIRE(abbrev.size() == 10);
    CHECK(abbrev[0] == "dr");
    CHECK(abbrev[1] == ".");
    CHECK(abbrev[3] == "'");
    CHECK(abbrev[6] == ",");
    CHECK(abbrev[8] == "1987");
}

TEST_CASE("build orders by frequency then lexicographically and caps size") {
    Vocabulary v = Vocabulary::build({"b b b a a c", "a c"}, 100);
    // a:3, b:3, c:2 -> tie between a and b broken lexicographically.
    CHECK(v.id_of("a") == 2);
    CHECK(v.id_of("b") == 3);
    CHECK(v.id_of("c") == 4);
    CHECK(v.size() == 5);
    CHECK(v.id_of("zebra") == Vocabulary::unknown_id);

    Vocabulary capped = Vocabulary::build({"b b b a a c", "a c"}, 4);
    CHECK(capped.size() == 4);
    CHECK(capped.id_of("c") == Vocabulary::unknown_id);
}

TEST_CASE("tokenize maps unknowns to id 1 and truncates") {
    Vocabulary v = Vocabulary::build({"what is x ?"}, 100);
    auto ids = tokenize("What is X?", v, 512);
    REQUIRE(ids.size() == 4);
    for (int id : ids) CHECK(id >= 2);

    auto unk = tokenize("quux is x", v, 512);
    CHECK(unk[0] == Vocabulary::unknown_id);

    auto truncated = tokenize("a b c d e f g h", v, 3);
    CHECK(truncated.size() == 3);

    CHECK_THROWS_AS(tokenize("   \t\n ", v, 16), Error);
    CHECK_THROWS_AS(tokenize("", v, 16), Error);
}

TEST_CASE("save/load round trip preserves ids and hash") {
    Vocabulary v = Vocabulary::build({"alpha beta gamma alpha beta alpha"}, 100);
    auto path = std::filesystem::temp_directory_path() / "endx_vocab_test.txt";
    v.save(path);
    Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.size() == v.size());
    CHECK(loaded.id_of("alpha") == v.id_of("alpha"));
    CHECK(loaded.id_of("gamma") == v.id_of("gamma"));
    CHECK(loaded.content_hash() == v.content_hash());
    CHECK(loaded.token_of(2) == "alpha");
    std::filesystem::remove(path);

    CHECK_THROWS_AS(Vocabulary::load("/nonexistent/endx_vocab.txt"), Error);
}

TEST_SUITE_END();
