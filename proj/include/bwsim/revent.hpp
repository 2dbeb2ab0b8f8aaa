#pragma once

// Reverse-engineering experiments: recover the fill-buffer entry count from
// the nontemporal-store saturation knee, and reproduce the qualitative
// contention orderings of the twelve two-core scenarios.

#include <cstdint>
#include <string>
#include <vector>

#include "bwsim/agents.hpp"
#include "bwsim/errors.hpp"
#include "bwsim/sim.hpp"

namespace bwsim {

// ---------------------------------------------------------------------------
// LFB entry-count detection
// ---------------------------------------------------------------------------

struct KneeScan {
    unsigned sweep_min = 1;
    unsigned sweep_max = 0;
    double jump_factor = 10.0;
    std::uint64_t loop_count = 2000;
    // saturation_events[i] belongs to store_count = sweep_min + i
    std::vector<std::uint64_t> saturation_events;
    // smallest store count whose events exceed jump_factor x the previous
    // count's events; -1 when the sweep never jumps
    int knee_index = -1;
};

inline KneeScan scan_lfb_knee(const MicroarchConfig& cfg, unsigned sweep_max = 0,
                              double jump_factor = 10.0,
                              std::uint64_t loop_count = 2000) {
    KneeScan scan;
    scan.sweep_max = sweep_max ? sweep_max : 2 * cfg.lfb_entries;
    scan.jump_factor = jump_factor;
    scan.loop_count = loop_count;
    std::uint64_t prev = 0;
    for (unsigned count = scan.sweep_min; count <= scan.sweep_max; ++count) {
        Sim sim(cfg);
        NtStoreLoopConfig nc{count, loop_count};
        CycleStats d = ntstore_loop(sim, 0, nc);
        std::uint64_t sat = d.lfb_saturation_events;
        scan.saturation_events.push_back(sat);
        if (scan.knee_index < 0 && count > scan.sweep_min && sat > 0 &&
            static_cast<double>(sat) > jump_factor * static_cast<double>(prev)) {
            scan.knee_index = static_cast<int>(count);
        }
        prev = sat;
    }
    return scan;
}

// The saturation jump appears at N+1 outstanding stores, so the buffer holds
// knee - 1 entries.
inline unsigned detect_lfb_entries(const MicroarchConfig& cfg, unsigned sweep_max = 0,
                                   double jump_factor = 10.0,
                                   std::uint64_t loop_count = 2000) {
    KneeScan scan = scan_lfb_knee(cfg, sweep_max, jump_factor, loop_count);
    if (scan.knee_index < 0)
        throw KneeNotFound("no saturation jump above " +
                           std::to_string(jump_factor) + "x in sweep [" +
                           std::to_string(scan.sweep_min) + ", " +
                           std::to_string(scan.sweep_max) + "]");
    return static_cast<unsigned>(scan.knee_index) - 1;
}

// ---------------------------------------------------------------------------
// contention scenario catalog
// ---------------------------------------------------------------------------
//
// Twelve fixed two-core programs. The receiver (core 0) runs a timed walk;
// the sender (core 1) varies per scenario:
//   x1  both cores flood the same cache level
//   x2  receiver runs solo
//   x3  sender pinned to L1-resident work
//   x4  as x1, with all prefetchers disabled
// Families: A = data walks out of L2, B = data walks out of L3,
// C = code walks (instruction fetch) out of L2.

enum class ScenarioId {
    A1, A2, A3, A4,
    B1, B2, B3, B4,
    C1, C2, C3, C4,
};

inline const std::vector<ScenarioId>& scenario_catalog() {
    static const std::vector<ScenarioId> all = {
        ScenarioId::A1, ScenarioId::A2, ScenarioId::A3, ScenarioId::A4,
        ScenarioId::B1, ScenarioId::B2, ScenarioId::B3, ScenarioId::B4,
        ScenarioId::C1, ScenarioId::C2, ScenarioId::C3, ScenarioId::C4,
    };
    return all;
}

inline std::string to_string(ScenarioId id) {
    static const char* names[] = {"A1", "A2", "A3", "A4", "B1", "B2",
                                  "B3", "B4", "C1", "C2", "C3", "C4"};
    return names[static_cast<int>(id)];
}

inline ScenarioId parse_scenario(const std::string& name) {
    for (ScenarioId id : scenario_catalog())
        if (to_string(id) == name) return id;
    throw UnknownScenario("unknown scenario '" + name + "'");
}

struct ContentionReport {
    ScenarioId id{};
    CycleStats stats;
    double mean_iteration_latency = 0.0;
};

namespace detail {

// Per-family sender flood depth: how many demand misses the flood keeps in
// flight. Chosen so the shared buffers sit at the edge of saturation.
inline constexpr unsigned kFloodDepthA = 4;
inline constexpr unsigned kFloodDepthB = 7;
inline constexpr unsigned kFloodDepthL1 = 16;
inline constexpr unsigned kFloodStride = 192;
inline constexpr std::uint64_t kProbeIterations = 2000;
inline constexpr unsigned kCodeProbeBlocks = 448;   // 28 KiB walk
inline constexpr std::uint64_t kCodeProbePasses = 60;
inline constexpr unsigned kCodeFloodBlocks = 2048;  // 128 KiB of sender code
inline constexpr unsigned kCodeResidentBlocks = 256;  // 16 KiB, L1i-resident

inline ContentionReport run_data_scenario(ScenarioId id, Level level, int variant,
                                          const MicroarchConfig& base) {
    MicroarchConfig cfg = base;
    if (variant == 4) cfg.prefetchers = PrefetcherFlags::all_off();
    Sim sim(cfg);

    Addr rbase = core_region(0, 0);
    auto pcfg = ProbeLoopConfig::for_level(level, kProbeIterations);
    auto& recv = sim.add_agent<ProbeAgent>(0, pcfg, rbase);
    recv.set_recording(false);
    recv.set_warmup_passes(1);
    sim.preload(level, rbase, pcfg.buffer_bytes, 0);

    if (variant != 2) {
        Addr sbase = core_region(1, 0);
        std::uint64_t sbytes = variant == 3 ? 32 * 1024
                             : level == Level::L3 ? 512 * 1024
                                                  : 128 * 1024;
        Level slevel = variant == 3 ? Level::L1 : level;
        unsigned depth = variant == 3 ? kFloodDepthL1
                       : level == Level::L3 ? kFloodDepthB
                                            : kFloodDepthA;
        sim.preload(slevel, sbase, sbytes, 1);
        sim.add_agent<FloodAgent>(1, sbase, sbytes, kFloodStride, depth);
    }
    while (!recv.done()) sim.step(4096);

    ContentionReport r;
    r.id = id;
    r.stats = sim.stats();
    r.mean_iteration_latency = recv.take_bucket_mean();
    return r;
}

inline ContentionReport run_code_scenario(ScenarioId id, int variant,
                                          const MicroarchConfig& base) {
    MicroarchConfig cfg = base;
    if (variant == 4) cfg.prefetchers = PrefetcherFlags::all_off();
    Sim sim(cfg);

    Addr rbase = core_region(0, 0);
    IFetchLoopConfig icfg;
    icfg.block_count = kCodeProbeBlocks;
    icfg.passes = kCodeProbePasses;
    auto& recv = sim.add_agent<IFetchProbeAgent>(0, icfg, rbase);
    recv.set_recording(false);
    recv.set_warmup_passes(4);
    sim.preload_code(rbase, static_cast<std::uint64_t>(icfg.block_count) * icfg.block_size,
                     0, Level::L2);

    if (variant != 2) {
        Addr sbase = core_region(1, 0);
        IFetchLoopConfig fcfg;
        fcfg.block_count = variant == 3 ? kCodeResidentBlocks : kCodeFloodBlocks;
        sim.preload_code(sbase, static_cast<std::uint64_t>(fcfg.block_count) * fcfg.block_size,
                         1, Level::L2);
        sim.add_agent<IFetchFloodAgent>(1, fcfg, sbase);
    }
    while (!recv.done()) sim.step(4096);

    ContentionReport r;
    r.id = id;
    r.stats = sim.stats();
    r.mean_iteration_latency = recv.take_bucket_mean();
    return r;
}

}  // namespace detail

inline ContentionReport run_contention_scenario(ScenarioId id,
                                                const MicroarchConfig& base = {}) {
    int n = static_cast<int>(id);
    int variant = n % 4 + 1;
    switch (n / 4) {
        case 0: return detail::run_data_scenario(id, Level::L2, variant, base);
        case 1: return detail::run_data_scenario(id, Level::L3, variant, base);
        case 2: return detail::run_code_scenario(id, variant, base);
        default: throw UnknownScenario("scenario id out of range");
    }
}

inline ContentionReport run_contention_scenario(const std::string& name,
                                                const MicroarchConfig& base = {}) {
    return run_contention_scenario(parse_scenario(name), base);
}

// ---------------------------------------------------------------------------
// ordering verdict
// ---------------------------------------------------------------------------

struct OrderingVerdict {
    struct Relation {
        std::string name;      // "A1 > A3" etc.
        double lhs = 0.0;
        double rhs = 0.0;
        bool applicable = true;
        bool pass = false;
    };
    std::vector<Relation> relations;
    double margin = 1.0;
    std::vector<ContentionReport> reports;

    bool all_pass() const {
        for (const auto& r : relations)
            if (r.applicable && !r.pass) return false;
        return true;
    }
};

// Runs the full catalog under `base` and checks the relation set
//   A1 > A3 > A4, A1 > A2;  B1 > B3 > B2 > B4;  C1 > C3 > C2;  C4 > C1.
// A relation passes when lhs > margin x rhs. The C4 > C1 relation is gated on
// prefetch disruption being modeled; without it the relation is reported
// not-applicable.
inline OrderingVerdict check_orderings(const MicroarchConfig& base = {},
                                       double margin = 1.05) {
    OrderingVerdict v;
    v.margin = margin;
    double lat[12];
    for (ScenarioId id : scenario_catalog()) {
        ContentionReport r = run_contention_scenario(id, base);
        lat[static_cast<int>(id)] = r.mean_iteration_latency;
        v.reports.push_back(std::move(r));
    }
    auto L = [&](ScenarioId id) { return lat[static_cast<int>(id)]; };
    auto rel = [&](ScenarioId a, ScenarioId b, bool applicable = true) {
        OrderingVerdict::Relation r;
        r.name = to_string(a) + " > " + to_string(b);
        r.lhs = L(a);
        r.rhs = L(b);
        r.applicable = applicable;
        r.pass = r.lhs > margin * r.rhs;
        v.relations.push_back(r);
    };
    rel(ScenarioId::A1, ScenarioId::A3);
    rel(ScenarioId::A3, ScenarioId::A4);
    rel(ScenarioId::A1, ScenarioId::A2);
    rel(ScenarioId::B1, ScenarioId::B3);
    rel(ScenarioId::B3, ScenarioId::B2);
    rel(ScenarioId::B2, ScenarioId::B4);
    rel(ScenarioId::C1, ScenarioId::C3);
    rel(ScenarioId::C3, ScenarioId::C2);
    rel(ScenarioId::C4, ScenarioId::C1, /*applicable=*/base.prefetch_disruption);
    return v;
}

}  // namespace bwsim
