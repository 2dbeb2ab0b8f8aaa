#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "bwsim/errors.hpp"

namespace bwsim {

enum class BufferMode { Shared, StaticPartitioned };

inline const char* to_string(BufferMode m) {
    return m == BufferMode::Shared ? "shared" : "static_partitioned";
}

struct PrefetcherFlags {
    bool next_line = true;
    bool stride = true;
    bool adjacent_line = true;
    bool stream = true;

    bool any() const { return next_line || stride || adjacent_line || stream; }

    static PrefetcherFlags all_off() { return {false, false, false, false}; }
};

// Every tunable hardware parameter of the simulated physical core.
// Defaults model a Comet-Lake-like client part: 12 LFB entries per core,
// 64B/cycle peak link bandwidth, 4 GHz clock.
struct MicroarchConfig {
    // Geometry (bytes / ways).
    std::uint64_t l1d_size = 32 * 1024;
    std::uint64_t l1i_size = 32 * 1024;
    std::uint64_t l2_size = 256 * 1024;
    std::uint64_t l3_size = 8 * 1024 * 1024;
    std::uint64_t line_size = 64;
    unsigned assoc_l1d = 8;
    unsigned assoc_l1i = 8;
    unsigned assoc_l2 = 8;
    unsigned assoc_l3 = 16;

    // Latencies in cycles. Only the 20-cycle L3-vs-L2 gap is load-bearing;
    // the rest are plausible defaults.
    unsigned lat_l1 = 4;
    unsigned lat_l2 = 12;
    unsigned lat_l3 = 32;
    unsigned lat_mem = 200;

    // Miss-tracking buffers.
    unsigned lfb_entries = 12;
    unsigned sq_entries = 16;
    BufferMode lfb_mode = BufferMode::Shared;
    BufferMode sq_mode = BufferMode::Shared;

    // An LFB/SQ entry stays occupied for this long after its fill arrives
    // (writeback/retire drain). This is what caps sustained bandwidth below
    // the 64B/cycle link peak.
    unsigned lfb_drain_cycles = 14;
    unsigned sq_drain_cycles = 6;

    // Inter-level links, bytes per cycle. The instruction-fetch port into
    // L1i is narrower than the data paths.
    unsigned link_budget = 64;
    unsigned l3_link_budget = 16;
    unsigned ifetch_link_budget = 16;

    PrefetcherFlags prefetchers;
    bool prefetch_disruption = false;

    // Per-core memory issue width and the shared L1 lookup port count.
    unsigned issue_width = 2;
    unsigned lookup_ports = 2;

    double clock_ghz = 4.0;
    std::uint64_t seed = 1;

    // --- validation -------------------------------------------------------

    void validate() const {
        if (line_size == 0 || (line_size & (line_size - 1)) != 0)
            throw InvalidConfig("line_size must be a nonzero power of two");
        check_cache("l1d", l1d_size, assoc_l1d);
        check_cache("l1i", l1i_size, assoc_l1i);
        check_cache("l2", l2_size, assoc_l2);
        check_cache("l3", l3_size, assoc_l3);
        if (!(lat_l1 < lat_l2 && lat_l2 < lat_l3 && lat_l3 < lat_mem))
            throw InvalidConfig("latencies must satisfy lat_l1 < lat_l2 < lat_l3 < lat_mem");
        if (lfb_entries < 1) throw InvalidConfig("lfb_entries must be >= 1");
        if (sq_entries < 1) throw InvalidConfig("sq_entries must be >= 1");
        if (link_budget < 1) throw InvalidConfig("link_budget must be >= 1");
        if (l3_link_budget < 1) throw InvalidConfig("l3_link_budget must be >= 1");
        if (ifetch_link_budget < 1) throw InvalidConfig("ifetch_link_budget must be >= 1");
        if (issue_width < 1) throw InvalidConfig("issue_width must be >= 1");
        if (lookup_ports < 1) throw InvalidConfig("lookup_ports must be >= 1");
        if (clock_ghz <= 0) throw InvalidConfig("clock_ghz must be positive");
    }

    // --- key-value config file -------------------------------------------
    //
    // One `key = value` per line, `#` starts a comment. Unknown keys are an
    // error so typos do not silently fall back to defaults.

    static MicroarchConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigParseError(path, 0, "cannot open file");
        MicroarchConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigParseError(path, lineno, "expected 'key = value'");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (key.empty() || val.empty())
                throw ConfigParseError(path, lineno, "empty key or value");
            try {
                cfg.set(key, val);
            } catch (const InvalidConfig& e) {
                throw ConfigParseError(path, lineno, e.what());
            }
        }
        cfg.validate();
        return cfg;
    }

    void set(const std::string& key, const std::string& val) {
        if (key == "l1d_size") l1d_size = to_u64(key, val);
        else if (key == "l1i_size") l1i_size = to_u64(key, val);
        else if (key == "l2_size") l2_size = to_u64(key, val);
        else if (key == "l3_size") l3_size = to_u64(key, val);
        else if (key == "line_size") line_size = to_u64(key, val);
        else if (key == "assoc_l1d") assoc_l1d = to_u32(key, val);
        else if (key == "assoc_l1i") assoc_l1i = to_u32(key, val);
        else if (key == "assoc_l2") assoc_l2 = to_u32(key, val);
        else if (key == "assoc_l3") assoc_l3 = to_u32(key, val);
        else if (key == "lat_l1") lat_l1 = to_u32(key, val);
        else if (key == "lat_l2") lat_l2 = to_u32(key, val);
        else if (key == "lat_l3") lat_l3 = to_u32(key, val);
        else if (key == "lat_mem") lat_mem = to_u32(key, val);
        else if (key == "lfb_entries") lfb_entries = to_u32(key, val);
        else if (key == "sq_entries") sq_entries = to_u32(key, val);
        else if (key == "lfb_mode") lfb_mode = to_mode(key, val);
        else if (key == "sq_mode") sq_mode = to_mode(key, val);
        else if (key == "lfb_drain_cycles") lfb_drain_cycles = to_u32(key, val);
        else if (key == "sq_drain_cycles") sq_drain_cycles = to_u32(key, val);
        else if (key == "link_budget") link_budget = to_u32(key, val);
        else if (key == "l3_link_budget") l3_link_budget = to_u32(key, val);
        else if (key == "ifetch_link_budget") ifetch_link_budget = to_u32(key, val);
        else if (key == "prefetch_next_line") prefetchers.next_line = to_bool(key, val);
        else if (key == "prefetch_stride") prefetchers.stride = to_bool(key, val);
        else if (key == "prefetch_adjacent_line") prefetchers.adjacent_line = to_bool(key, val);
        else if (key == "prefetch_stream") prefetchers.stream = to_bool(key, val);
        else if (key == "prefetch_disruption") prefetch_disruption = to_bool(key, val);
        else if (key == "issue_width") issue_width = to_u32(key, val);
        else if (key == "lookup_ports") lookup_ports = to_u32(key, val);
        else if (key == "clock_ghz") clock_ghz = to_double(key, val);
        else if (key == "seed") seed = to_u64(key, val);
        else throw InvalidConfig("unknown key '" + key + "'");
    }

private:
    static void check_cache(const char* name, std::uint64_t size, unsigned assoc) {
        std::string n(name);
        if (size == 0) throw InvalidConfig(n + "_size must be nonzero");
        if (size % 64 != 0) throw InvalidConfig("line_size must divide " + n + "_size");
        std::uint64_t lines = size / 64;
        if (assoc == 0 || lines % assoc != 0)
            throw InvalidConfig("associativity must divide " + n + " line count");
    }

    static std::string trim(std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }

    static std::uint64_t to_u64(const std::string& key, const std::string& val) {
        try {
            size_t pos = 0;
            auto v = std::stoull(val, &pos);
            if (pos != val.size()) throw std::invalid_argument(val);
            return v;
        } catch (...) {
            throw InvalidConfig(key + ": expected unsigned integer, got '" + val + "'");
        }
    }
    static unsigned to_u32(const std::string& key, const std::string& val) {
        auto v = to_u64(key, val);
        if (v > 0xffffffffULL) throw InvalidConfig(key + ": value out of range");
        return static_cast<unsigned>(v);
    }
    static double to_double(const std::string& key, const std::string& val) {
        try {
            size_t pos = 0;
            double v = std::stod(val, &pos);
            if (pos != val.size()) throw std::invalid_argument(val);
            return v;
        } catch (...) {
            throw InvalidConfig(key + ": expected number, got '" + val + "'");
        }
    }
    static bool to_bool(const std::string& key, const std::string& val) {
        if (val == "true" || val == "1" || val == "on") return true;
        if (val == "false" || val == "0" || val == "off") return false;
        throw InvalidConfig(key + ": expected boolean, got '" + val + "'");
    }
    static BufferMode to_mode(const std::string& key, const std::string& val) {
        if (val == "shared") return BufferMode::Shared;
        if (val == "static_partitioned") return BufferMode::StaticPartitioned;
        throw InvalidConfig(key + ": expected shared|static_partitioned");
    }
};

}  // namespace bwsim
