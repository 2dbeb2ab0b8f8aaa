#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bwsim {

// Inter-level transfer links. L2 feeds L1d and L1i separately; L3 feeds L2;
// memory feeds L3.
enum class LinkId : int { L2ToL1d = 0, L2ToL1i = 1, L3ToL2 = 2, MemToL3 = 3 };
inline constexpr int kNumLinks = 4;

inline const char* link_name(LinkId id) {
    switch (id) {
        case LinkId::L2ToL1d: return "l2_to_l1d";
        case LinkId::L2ToL1i: return "l2_to_l1i";
        case LinkId::L3ToL2: return "l3_to_l2";
        case LinkId::MemToL3: return "mem_to_l3";
    }
    return "?";
}

// Monotone per-run event counters, one column per Table-1/2-style field.
struct CycleStats {
    std::uint64_t l1d_miss = 0;
    std::uint64_t l1i_miss = 0;
    std::uint64_t l2_miss = 0;
    std::uint64_t l3_miss = 0;
    std::uint64_t lfb_saturation_events = 0;
    std::uint64_t sq_saturation_events = 0;
    std::uint64_t prefetch_issued = 0;
    std::uint64_t cycles_elapsed = 0;
    std::array<std::uint64_t, kNumLinks> bytes_moved{};

    CycleStats operator-(const CycleStats& rhs) const {
        CycleStats d;
        d.l1d_miss = l1d_miss - rhs.l1d_miss;
        d.l1i_miss = l1i_miss - rhs.l1i_miss;
        d.l2_miss = l2_miss - rhs.l2_miss;
        d.l3_miss = l3_miss - rhs.l3_miss;
        d.lfb_saturation_events = lfb_saturation_events - rhs.lfb_saturation_events;
        d.sq_saturation_events = sq_saturation_events - rhs.sq_saturation_events;
        d.prefetch_issued = prefetch_issued - rhs.prefetch_issued;
        d.cycles_elapsed = cycles_elapsed - rhs.cycles_elapsed;
        for (int i = 0; i < kNumLinks; ++i) d.bytes_moved[i] = bytes_moved[i] - rhs.bytes_moved[i];
        return d;
    }

    // Fixed column order shared by the CSV row and the flat JSON object.
    std::vector<std::pair<std::string, std::uint64_t>> fields() const {
        std::vector<std::pair<std::string, std::uint64_t>> f = {
            {"l1d_miss", l1d_miss},
            {"l1i_miss", l1i_miss},
            {"l2_miss", l2_miss},
            {"l3_miss", l3_miss},
            {"lfb_saturation_events", lfb_saturation_events},
            {"sq_saturation_events", sq_saturation_events},
            {"prefetch_issued", prefetch_issued},
            {"cycles_elapsed", cycles_elapsed},
        };
        for (int i = 0; i < kNumLinks; ++i)
            f.emplace_back(std::string("bytes_") + link_name(static_cast<LinkId>(i)),
                           bytes_moved[i]);
        return f;
    }

    static std::string csv_header() {
        std::ostringstream out;
        bool first = true;
        for (const auto& [name, _] : CycleStats{}.fields()) {
            if (!first) out << ',';
            out << name;
            first = false;
        }
        return out.str();
    }

    std::string csv_row() const {
        std::ostringstream out;
        bool first = true;
        for (const auto& [_, value] : fields()) {
            if (!first) out << ',';
            out << value;
            first = false;
        }
        return out.str();
    }
};

}  // namespace bwsim
