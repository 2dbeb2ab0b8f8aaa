#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bwsim/cache.hpp"

using namespace bwsim;

TEST_CASE("geometry: sets and ways derive from size, assoc and line size") {
    Cache c(32 * 1024, 8, 64);
    CHECK(c.sets() == 64);
    CHECK(c.ways() == 8);
    CHECK_THROWS_AS(Cache(48 * 1024, 8, 64), InvalidConfig);  // 96 sets, not a power of 2
}

TEST_CASE("insert then contains; access refreshes recency") {
    Cache c(4 * 1024, 4, 64);  // 16 sets x 4 ways
    Addr line = 0x1000 >> 6;
    CHECK(!c.contains(line));
    c.insert(line, 0, 1);
    CHECK(c.contains(line));
    CHECK(c.access(line, 2));
    CHECK(!c.access(line + 999999, 2));
}

TEST_CASE("LRU eviction within a set") {
    Cache c(4 * 1024, 4, 64);  // 16 sets
    // five lines mapping to set 0: line numbers 0, 16, 32, 48, 64
    for (int i = 0; i < 4; ++i) c.insert(static_cast<Addr>(i) * 16, 0, i);
    c.access(0, 10);  // line 0 becomes most recent; line 16 is now LRU
    c.insert(4 * 16, 0, 11);
    CHECK(c.contains(0));
    CHECK(!c.contains(16));
    CHECK(c.contains(32));
    CHECK(c.contains(48));
    CHECK(c.contains(64));
}

TEST_CASE("inserting a resident line does not duplicate or evict") {
    Cache c(4 * 1024, 4, 64);
    for (int i = 0; i < 4; ++i) c.insert(static_cast<Addr>(i) * 16, 0, i);
    c.insert(0, 1, 20);  // re-insert with a new owner
    for (int i = 0; i < 4; ++i) CHECK(c.contains(static_cast<Addr>(i) * 16));
}

TEST_CASE("flush_owner removes only that owner's lines") {
    Cache c(4 * 1024, 4, 64);
    c.insert(1, 0, 1);
    c.insert(2, 1, 1);
    c.flush_owner(0);
    CHECK(!c.contains(1));
    CHECK(c.contains(2));
    c.flush_all();
    CHECK(!c.contains(2));
}

TEST_CASE("invalidate drops a single line") {
    Cache c(4 * 1024, 4, 64);
    c.insert(7, 0, 1);
    c.insert(8, 0, 1);
    c.invalidate(7);
    CHECK(!c.contains(7));
    CHECK(c.contains(8));
}
