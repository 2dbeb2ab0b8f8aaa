#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "bwsim/config.hpp"

using namespace bwsim;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& body) {
        path = std::string(std::tmpnam(nullptr)) + ".cfg";
        std::ofstream out(path);
        out << body;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("defaults validate and match the documented profile") {
    MicroarchConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.lfb_entries == 12);
    CHECK(cfg.sq_entries == 16);
    CHECK(cfg.lfb_mode == BufferMode::Shared);
    CHECK(cfg.prefetchers.any());
}

TEST_CASE("from_file parses keys, comments and whitespace") {
    TempFile f(
        "# profile\n"
        "lfb_entries = 10\n"
        "  lat_l3=40   # inline comment\n"
        "lfb_mode = static_partitioned\n"
        "prefetch_stream = off\n"
        "clock_ghz = 3.5\n"
        "seed = 99\n");
    MicroarchConfig cfg = MicroarchConfig::from_file(f.path);
    CHECK(cfg.lfb_entries == 10);
    CHECK(cfg.lat_l3 == 40);
    CHECK(cfg.lfb_mode == BufferMode::StaticPartitioned);
    CHECK(!cfg.prefetchers.stream);
    CHECK(cfg.prefetchers.stride);  // untouched keys keep defaults
    CHECK(cfg.clock_ghz == 3.5);
    CHECK(cfg.seed == 99);
}

TEST_CASE("parse errors carry the file, line and offending key") {
    SUBCASE("missing file") {
        CHECK_THROWS_AS(MicroarchConfig::from_file("/nonexistent/x.cfg"), ConfigParseError);
    }
    SUBCASE("unknown key is named") {
        TempFile f("lfb_entrees = 12\n");
        try {
            MicroarchConfig::from_file(f.path);
            FAIL("expected ConfigParseError");
        } catch (const ConfigParseError& e) {
            std::string msg = e.what();
            CHECK(msg.find("lfb_entrees") != std::string::npos);
            CHECK(msg.find(":1:") != std::string::npos);  // line number
        }
    }
    SUBCASE("malformed line") {
        TempFile f("lfb_entries\n");
        CHECK_THROWS_AS(MicroarchConfig::from_file(f.path), ConfigParseError);
    }
    SUBCASE("bad value type") {
        TempFile f("lfb_entries = twelve\n");
        CHECK_THROWS_AS(MicroarchConfig::from_file(f.path), ConfigParseError);
    }
    SUBCASE("semantically invalid result") {
        // cross-field validation isn't tied to a line, so it reports as
        // InvalidConfig rather than a positional parse error
        TempFile f("lat_l1 = 50\n");  // breaks lat_l1 < lat_l2
        CHECK_THROWS_AS(MicroarchConfig::from_file(f.path), InvalidConfig);
    }
}

TEST_CASE("validate rejects broken geometry") {
    MicroarchConfig cfg;
    SUBCASE("non power-of-two line size") {
        cfg.line_size = 48;
        CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    }
    SUBCASE("zero buffers") {
        cfg.lfb_entries = 0;
        CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    }
    SUBCASE("zero link budget") {
        cfg.link_budget = 0;
        CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    }
    SUBCASE("associativity must divide line count") {
        cfg.assoc_l2 = 7;
        CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    }
}

TEST_CASE("buffer modes round-trip through their names") {
    CHECK(std::string(to_string(BufferMode::Shared)) == "shared");
    CHECK(std::string(to_string(BufferMode::StaticPartitioned)) == "static_partitioned");
    TempFile f("sq_mode = banana\n");
    CHECK_THROWS_AS(MicroarchConfig::from_file(f.path), ConfigParseError);
}
