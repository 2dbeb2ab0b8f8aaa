#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "bwsim/cache.hpp"
#include "bwsim/config.hpp"
#include "bwsim/errors.hpp"
#include "bwsim/stats.hpp"

namespace bwsim {

inline constexpr Cycle kNoCycle = ~Cycle{0};
inline constexpr int kNumCores = 2;

enum class AccessKind { Load, Store, NtStore, IFetch, Prefetch };
enum class Origin { Demand, NextLine, Stride, AdjacentLine, Stream };
enum class Level { L1, L2, L3, Mem };

inline unsigned hit_latency(const MicroarchConfig& c, Level l) {
    switch (l) {
        case Level::L1: return c.lat_l1;
        case Level::L2: return c.lat_l2;
        case Level::L3: return c.lat_l3;
        case Level::Mem: return c.lat_mem;
    }
    return c.lat_mem;
}

// One in-flight memory operation as seen by the engine.
struct MemoryRequest {
    int requester = 0;
    AccessKind kind = AccessKind::Load;
    Addr address = 0;
    unsigned size = 8;
    Cycle issue_cycle = 0;
    Origin origin = Origin::Demand;
};

enum class EntryKind { Demand, Nontemporal, Prefetch };

struct LfbEntry {
    Addr line_address = 0;
    int owner = 0;
    Cycle alloc_cycle = 0;
    Level pending_level = Level::L2;
    std::uint32_t merge_count = 1;
    EntryKind kind = EntryKind::Demand;
    bool valid = false;
    Cycle free_at = kNoCycle;  // set once the fill lands; kNoCycle while pending
    int fill = -1;
};

struct SqEntry {
    Addr line_address = 0;
    int owner = 0;
    Cycle alloc_cycle = 0;
    Level pending_level = Level::L3;
    bool valid = false;
    Cycle free_at = kNoCycle;
};

using TicketId = std::uint32_t;

enum class LfbResult { Allocated, Merged, Saturated };

class Sim;

// A deterministic per-cycle request generator bound to one logical core.
class Agent {
public:
    explicit Agent(int core) : core_(core) {}
    virtual ~Agent() = default;
    int core() const { return core_; }
    virtual void tick(Sim& sim) = 0;
    virtual bool done() const { return false; }

private:
    int core_;
};

class Sim {
public:
    explicit Sim(const MicroarchConfig& cfg)
        : cfg_(cfg),
          l1d_(cfg.l1d_size, cfg.assoc_l1d, cfg.line_size),
          l1i_(cfg.l1i_size, cfg.assoc_l1i, cfg.line_size),
          l2_(cfg.l2_size, cfg.assoc_l2, cfg.line_size),
          l3_(cfg.l3_size, cfg.assoc_l3, cfg.line_size),
          lfb_(cfg.lfb_entries),
          sq_(cfg.sq_entries),
          rng_(cfg.seed) {
        cfg.validate();
        line_shift_ = l1d_.line_shift();
    }

    const MicroarchConfig& config() const { return cfg_; }
    Cycle now() const { return now_; }
    const CycleStats& stats() const { return stats_; }
    std::mt19937_64& rng() { return rng_; }
    Addr line_of(Addr a) const { return a >> line_shift_; }

    // ---- agents -----------------------------------------------------------

    template <typename T, typename... Args>
    T& add_agent(Args&&... args) {
        auto a = std::make_unique<T>(std::forward<Args>(args)...);
        T& ref = *a;
        agents_.push_back(std::move(a));
        return ref;
    }

    // ---- tickets ----------------------------------------------------------

    bool ticket_done(TicketId t) const { return tickets_[t].done != kNoCycle; }
    Cycle ticket_completion(TicketId t) const { return tickets_[t].done; }
    Level ticket_level(TicketId t) const { return tickets_[t].served_by; }

    void release_ticket(TicketId t) {
        tickets_[t].done = kNoCycle;
        ticket_free_.push_back(t);
    }

    // ---- issue ------------------------------------------------------------

    bool can_issue(int core) const {
        return issued_[core] < cfg_.issue_width && lookups_ < cfg_.lookup_ports;
    }

    bool can_fetch(int core) const { return fetch_issued_[core] < 1; }

    // Submit a demand access. Returns a ticket, or nullopt when the core is
    // out of issue slots / lookup ports this cycle (the caller retries next
    // cycle). Stalls inside the hierarchy are modeled as added cycles on the
    // ticket, never as failures.
    std::optional<TicketId> issue(MemoryRequest req) {
        req.issue_cycle = now_;
        if (req.kind == AccessKind::IFetch) {
            if (!can_fetch(req.requester)) return std::nullopt;
            ++fetch_issued_[req.requester];
            return submit_ifetch(req);
        }
        if (!can_issue(req.requester)) return std::nullopt;
        ++issued_[req.requester];
        ++lookups_;
        if (req.kind == AccessKind::NtStore) return submit_ntstore(req);
        return submit_data(req);
    }

    // ---- stepping ---------------------------------------------------------

    void step(std::uint64_t n_cycles) {
        for (std::uint64_t i = 0; i < n_cycles; ++i) cycle();
    }

    void step_until(Cycle target) {
        while (now_ < target) cycle();
    }

    // ---- flush ------------------------------------------------------------

    void flush_all() {
        l1d_.flush_all();
        l1i_.flush_all();
        l2_.flush_all();
        l3_.flush_all();
        for (int c = 0; c < kNumCores; ++c) drain_owner(c);
    }

    void flush_owner(int owner) {
        l1d_.flush_owner(owner);
        l1i_.flush_owner(owner);
        l2_.flush_owner(owner);
        l3_.flush_owner(owner);
        drain_owner(owner);
    }

    // Context-switch style flush: the owner's lines leave the on-core caches
    // (L1d/L1i/L2) but survive in the shared L3.
    void flush_owner_on_core(int owner) {
        l1d_.flush_owner(owner);
        l1i_.flush_owner(owner);
        l2_.flush_owner(owner);
        drain_owner(owner);
    }

    const Cache& data_cache(Level l) const {
        switch (l) {
            case Level::L1: return l1d_;
            case Level::L2: return l2_;
            default: return l3_;
        }
    }
    const Cache& code_cache(Level l) const {
        switch (l) {
            case Level::L1: return l1i_;
            case Level::L2: return l2_;
            default: return l3_;
        }
    }

    // Install lines directly into a level (experiment setup: off-core
    // residency without paying warmup traffic).
    void preload(Level level, Addr base, std::uint64_t bytes, int owner) {
        Addr first = line_of(base);
        Addr last = line_of(base + (bytes ? bytes - 1 : 0));
        for (Addr l = first; l <= last; ++l) {
            switch (level) {
                case Level::L1: l1d_.insert(l, owner, now_); [[fallthrough]];
                case Level::L2: l2_.insert(l, owner, now_); [[fallthrough]];
                case Level::L3: l3_.insert(l, owner, now_); break;
                case Level::Mem: break;
            }
        }
    }

    void preload_code(Addr base, std::uint64_t bytes, int owner, Level level) {
        Addr first = line_of(base);
        Addr last = line_of(base + (bytes ? bytes - 1 : 0));
        for (Addr l = first; l <= last; ++l) {
            if (level == Level::L1) l1i_.insert(l, owner, now_);
            if (level == Level::L1 || level == Level::L2) l2_.insert(l, owner, now_);
            l3_.insert(l, owner, now_);
        }
    }

    // ---- prefetcher training / emission ------------------------------------
    //
    // Called on every demand access; returns the prefetch requests the four
    // engines decided to emit (already filtered against present lines).
    // Public so the trainer can be exercised in isolation.

    std::vector<MemoryRequest> compute_prefetches(const MemoryRequest& access) {
        std::vector<MemoryRequest> out;
        if (access.origin != Origin::Demand) return out;
        int core = access.requester;
        PrefetchCore& pf = pf_[core];
        Addr line = line_of(access.address);

        bool disrupted = false;
        if (cfg_.prefetch_disruption && pf.foreign_since_last > 0) disrupted = true;
        pf.foreign_since_last = 0;
        pf_[core ^ 1].foreign_since_last++;

        if (access.kind == AccessKind::IFetch) {
            // code prefetches keep kind IFetch so dispatch routes them to L1i
            if (cfg_.prefetchers.next_line && !disrupted) {
                Addr next = line + 1;
                if (!l1i_.contains(next))
                    out.push_back({core, AccessKind::IFetch, next << line_shift_,
                                   static_cast<unsigned>(cfg_.line_size), now_,
                                   Origin::NextLine});
            }
            return out;
        }

        // next-line: the immediately following line, on every L1d access.
        if (cfg_.prefetchers.next_line && !disrupted) {
            Addr next = line + 1;
            if (!l1d_.contains(next))
                out.push_back({core, AccessKind::Prefetch, next << line_shift_,
                               static_cast<unsigned>(cfg_.line_size), now_,
                               Origin::NextLine});
        }

        // stride: per-region last/stride/confidence table, distance 2.
        if (cfg_.prefetchers.stride) {
            StrideSlot& slot = pf.stride[stride_index(access.address)];
            Addr region = access.address >> kStrideRegionShift;
            if (slot.valid && slot.region == region) {
                std::int64_t delta = static_cast<std::int64_t>(access.address) -
                                     static_cast<std::int64_t>(slot.last_address);
                if (delta != 0 && delta == slot.stride) {
                    if (slot.confidence < kConfidenceMax) ++slot.confidence;
                } else {
                    slot.stride = delta;
                    slot.confidence = delta != 0 ? 1 : 0;
                }
                if (disrupted && slot.confidence > 0) --slot.confidence;
                slot.last_address = access.address;
                if (slot.confidence >= kConfidenceThreshold && slot.stride != 0) {
                    Addr target = access.address + 2 * slot.stride;
                    if (!l1d_.contains(line_of(target)))
                        out.push_back({core, AccessKind::Prefetch, target,
                                       static_cast<unsigned>(cfg_.line_size), now_,
                                       Origin::Stride});
                }
            } else {
                slot = {region, access.address, 0, 0, true};
            }
        }
        return out;
    }

    // L2-level engines; triggered when a demand access reaches the L2.
    std::vector<MemoryRequest> compute_l2_prefetches(int core, Addr line, bool ifetch) {
        std::vector<MemoryRequest> out;
        PrefetchCore& pf = pf_[core];
        bool disrupted = cfg_.prefetch_disruption && pf.l2_foreign_since_last > 0;
        pf.l2_foreign_since_last = 0;
        pf_[core ^ 1].l2_foreign_since_last++;

        if (cfg_.prefetchers.adjacent_line && !ifetch && !disrupted) {
            Addr pair = line ^ 1;
            if (!l2_.contains(pair))
                out.push_back({core, AccessKind::Prefetch, pair << line_shift_,
                               static_cast<unsigned>(cfg_.line_size), now_,
                               Origin::AdjacentLine});
        }

        if (cfg_.prefetchers.stream) {
            StreamState& st = ifetch ? pf.stream_code : pf.stream_data;
            if (disrupted && st.run_length > 0) --st.run_length;
            std::int64_t dir = 0;
            if (line == st.last_line + 1) dir = 1;
            else if (line + 1 == st.last_line) dir = -1;
            if (dir != 0 && dir == st.direction) {
                if (st.run_length < 0xff) ++st.run_length;
            } else {
                st.direction = dir;
                st.run_length = dir != 0 ? 1 : 0;
            }
            st.last_line = line;
            if (st.run_length >= kStreamThreshold) {
                for (int k = 1; k <= kStreamDepth; ++k) {
                    Addr target = line + st.direction * (k + 1);
                    if (!l2_.contains(target))
                        out.push_back({core, AccessKind::Prefetch, target << line_shift_,
                                       static_cast<unsigned>(cfg_.line_size), now_,
                                       Origin::Stream});
                }
            }
        }
        return out;
    }

    // ---- introspection (tests, reports) ------------------------------------

    unsigned lfb_occupancy() const {
        unsigned n = 0;
        for (const auto& e : lfb_) n += e.valid;
        return n;
    }
    unsigned lfb_occupancy(int owner) const {
        unsigned n = 0;
        for (const auto& e : lfb_) n += e.valid && e.owner == owner;
        return n;
    }
    unsigned sq_occupancy() const {
        unsigned n = 0;
        for (const auto& e : sq_) n += e.valid;
        return n;
    }
    unsigned sq_occupancy(int owner) const {
        unsigned n = 0;
        for (const auto& e : sq_) n += e.valid && e.owner == owner;
        return n;
    }

    std::size_t link_queue_depth(LinkId id) const {
        return link_[static_cast<int>(id)].queue.size();
    }
    std::size_t parked_lfb(int core) const { return lfb_wait_[core].size(); }
    std::size_t parked_sq(int core) const { return sq_wait_[core].size(); }
    std::size_t parked_ifetch(int core) const { return ifetch_wait_[core].size(); }

    const LfbEntry* lfb_find(Addr line, int owner) const {
        for (const auto& e : lfb_)
            if (e.valid && e.line_address == line && e.owner == owner) return &e;
        return nullptr;
    }

    std::uint64_t last_cycle_link_bytes(LinkId id) const {
        return link_[static_cast<int>(id)].bytes_last_cycle;
    }

    std::uint64_t demand_requests() const { return demand_requests_; }
    std::uint64_t merged_requests() const { return merged_requests_; }
    std::uint64_t served_without_lfb() const { return served_without_lfb_; }
    std::uint64_t lfb_allocations() const { return lfb_allocations_; }

private:
    // ---- internal records ---------------------------------------------------

    struct Ticket {
        Cycle done = kNoCycle;
        Cycle issued = 0;
        Level served_by = Level::L1;
    };

    enum class FillDest { L1d, L1i, L2 };

    struct Fill {
        Addr line = 0;
        int owner = 0;
        FillDest dest = FillDest::L1d;
        bool prefetch = false;
        Level source = Level::L2;
        int lfb_slot = -1;
        int sq_slot = -1;
        Cycle ready = 0;          // earliest cycle data may move on current hop
        unsigned bytes_left = 0;
        int hop_idx = 0;
        int hop_count = 0;
        std::array<LinkId, 3> hops{};
        std::vector<TicketId> tickets;
        unsigned port_waits = 0;
        bool active = false;
    };

    struct ParkedMiss {
        MemoryRequest req;
        TicketId ticket;
        std::uint64_t seq = 0;
    };

    struct LinkState {
        std::deque<int> queue;  // fill ids, oldest first
        std::uint64_t bytes_last_cycle = 0;
    };

    static constexpr int kStrideSlots = 8;
    static constexpr unsigned kStrideRegionShift = 15;  // 32 KiB training regions
    static constexpr int kConfidenceMax = 3;
    static constexpr int kConfidenceThreshold = 2;
    static constexpr int kStreamThreshold = 4;
    static constexpr int kStreamDepth = 2;
    static constexpr unsigned kIFetchMshr = 4;

    struct StrideSlot {
        Addr region = 0;
        Addr last_address = 0;
        std::int64_t stride = 0;
        int confidence = 0;
        bool valid = false;
    };

    struct StreamState {
        Addr last_line = 0;
        std::int64_t direction = 0;
        int run_length = 0;
    };

    struct PrefetchCore {
        std::array<StrideSlot, kStrideSlots> stride{};
        StreamState stream_data;
        StreamState stream_code;
        unsigned foreign_since_last = 0;
        unsigned l2_foreign_since_last = 0;
    };

    static int stride_index(Addr addr) {
        return static_cast<int>((addr >> kStrideRegionShift) % kStrideSlots);
    }

    // ---- per-cycle loop ------------------------------------------------------

    void cycle() {
        for (int c = 0; c < kNumCores; ++c) issued_[c] = fetch_issued_[c] = 0;
        lookups_ = 0;

        release_expired();
        retry_parked();

        int first = static_cast<int>(now_ & 1);
        for (int k = 0; k < 2; ++k) {
            int core = first ^ k;
            for (auto& a : agents_)
                if (a->core() == core) a->tick(*this);
        }

        advance_links();
        ++now_;
        ++stats_.cycles_elapsed;
    }

    void release_expired() {
        for (auto& e : lfb_)
            if (e.valid && e.free_at != kNoCycle && e.free_at <= now_) e.valid = false;
        for (auto& e : sq_)
            if (e.valid && e.free_at != kNoCycle && e.free_at <= now_) e.valid = false;
    }

    void retry_parked() {
        // Round-robin across cores, oldest request first within a core.
        retry_queue(lfb_wait_, /*is_lfb=*/true);
        retry_queue(sq_wait_, /*is_lfb=*/false);
        retry_ifetch();
    }

    void retry_queue(std::array<std::deque<ParkedMiss>, kNumCores>& waits, bool is_lfb) {
        // Grants go to the oldest parked request across both cores. New
        // arrivals park behind existing ones, so no core can starve.
        std::array<bool, kNumCores> blocked{};
        for (;;) {
            int core = -1;
            std::uint64_t best = ~0ULL;
            for (int c = 0; c < kNumCores; ++c) {
                if (waits[c].empty() || blocked[c]) continue;
                if (waits[c].front().seq < best) {
                    best = waits[c].front().seq;
                    core = c;
                }
            }
            if (core < 0) break;
            auto& q = waits[core];
            bool ok = is_lfb ? try_start_data_fill(q.front().req, q.front().ticket, false)
                             : try_start_parked_sq(q.front());
            if (ok) {
                if (is_lfb && q.front().req.origin != Origin::Demand) {
                    if (parked_pf_[core] > 0) --parked_pf_[core];
                    ++stats_.prefetch_issued;
                }
                q.pop_front();
            } else {
                blocked[core] = true;
            }
        }
        // one refused-allocation event per still-waiting request this cycle
        for (int core = 0; core < kNumCores; ++core) {
            if (is_lfb) stats_.lfb_saturation_events += waits[core].size();
            else stats_.sq_saturation_events += waits[core].size();
        }
    }

    void retry_ifetch() {
        for (int core = 0; core < kNumCores; ++core) {
            auto& q = ifetch_wait_[core];
            while (!q.empty() && ifetch_outstanding_[core] < kIFetchMshr) {
                ParkedMiss pm = q.front();
                q.pop_front();
                start_ifetch_fill(pm.req, pm.ticket);
            }
        }
    }

    // ---- submit paths ----------------------------------------------------------

    TicketId submit_data(const MemoryRequest& req) {
        ++demand_requests_;
        TicketId t = new_ticket();
        Addr line = line_of(req.address);

        bool hit = l1d_.access(line, now_);
        issue_l1_prefetches(req);
        if (hit) {
            ++served_without_lfb_;
            resolve(t, now_ + cfg_.lat_l1, Level::L1);
            return t;
        }
        ++stats_.l1d_miss;
        handle_l1d_miss(req, t);
        return t;
    }

    void handle_l1d_miss(const MemoryRequest& req, TicketId t) {
        Addr line = line_of(req.address);
        // merge with a live same-line entry of the same owner
        for (auto& e : lfb_) {
            if (e.valid && e.line_address == line && e.owner == req.requester &&
                e.free_at == kNoCycle) {
                ++e.merge_count;
                ++merged_requests_;
                if (e.fill >= 0) {
                    fills_[e.fill].tickets.push_back(t);
                } else {
                    // nontemporal entry: the line is owned by an NT store,
                    // serve at L1 cost.
                    resolve(t, now_ + cfg_.lat_l1, Level::L1);
                }
                return;
            }
        }
        if (!try_start_data_fill(req, t, true)) {
            ++stats_.lfb_saturation_events;
            lfb_wait_[req.requester].push_back({req, t, park_seq_++});
        }
    }

    // Attempt LFB allocation + downstream routing. Returns false when no
    // entry is available under the current sharing mode.
    bool try_start_data_fill(const MemoryRequest& req, TicketId t, bool) {
        int slot = lfb_grab_slot(req.requester, req.kind == AccessKind::NtStore);
        if (slot < 0) return false;

        Addr line = line_of(req.address);
        LfbEntry& e = lfb_[slot];
        e = LfbEntry{};
        e.valid = true;
        e.line_address = line;
        e.owner = req.requester;
        e.alloc_cycle = now_;
        e.kind = req.origin == Origin::Demand ? EntryKind::Demand : EntryKind::Prefetch;
        ++lfb_allocations_;

        int f = new_fill();
        Fill& fill = fills_[f];
        fill.line = line;
        fill.owner = req.requester;
        fill.dest = FillDest::L1d;
        fill.prefetch = req.origin != Origin::Demand;
        fill.lfb_slot = slot;
        if (t != kNoTicket) fill.tickets.push_back(t);
        e.fill = f;

        route_from_l2(fill, f, req.requester, line, /*ifetch=*/false);
        e.pending_level = fill.source;
        return true;
    }

    TicketId submit_ntstore(const MemoryRequest& req) {
        ++demand_requests_;
        TicketId t = new_ticket();
        Addr line = line_of(req.address);
        resolve(t, now_ + 1, Level::L1);  // store retires into the buffer

        for (auto& e : lfb_) {
            if (e.valid && e.line_address == line && e.owner == req.requester &&
                e.kind == EntryKind::Nontemporal) {
                ++e.merge_count;
                ++merged_requests_;
                return t;
            }
        }
        int slot = lfb_grab_slot(req.requester, /*is_nt=*/true);
        if (slot < 0) {
            // full: evict the oldest nontemporal entry under pressure
            slot = evict_oldest_nt(req.requester);
            ++stats_.lfb_saturation_events;
            if (slot < 0) return t;  // nothing evictable; store absorbed
        }
        LfbEntry& e = lfb_[slot];
        e = LfbEntry{};
        e.valid = true;
        e.line_address = line;
        e.owner = req.requester;
        e.alloc_cycle = now_;
        e.kind = EntryKind::Nontemporal;
        e.pending_level = Level::Mem;
        ++lfb_allocations_;
        return t;
    }

    TicketId submit_ifetch(const MemoryRequest& req) {
        ++demand_requests_;
        TicketId t = new_ticket();
        Addr line = line_of(req.address);
        bool hit = l1i_.access(line, now_);
        issue_l1_prefetches(req);
        if (hit) {
            ++served_without_lfb_;
            resolve(t, now_ + cfg_.lat_l1, Level::L1);
            return t;
        }
        ++stats_.l1i_miss;
        // merge with an in-flight fill for the same line
        for (auto& f : fills_) {
            if (f.active && f.dest == FillDest::L1i && f.line == line &&
                f.owner == req.requester) {
                f.tickets.push_back(t);
                ++merged_requests_;
                return t;
            }
        }
        if (ifetch_outstanding_[req.requester] >= kIFetchMshr) {
            ifetch_wait_[req.requester].push_back({req, t, park_seq_++});
            return t;
        }
        start_ifetch_fill(req, t);
        return t;
    }

    void start_ifetch_fill(const MemoryRequest& req, TicketId t) {
        Addr line = line_of(req.address);
        ++ifetch_outstanding_[req.requester];
        int f = new_fill();
        Fill& fill = fills_[f];
        fill.line = line;
        fill.owner = req.requester;
        fill.dest = FillDest::L1i;
        fill.prefetch = req.origin != Origin::Demand;
        if (t != kNoTicket) fill.tickets.push_back(t);
        route_from_l2(fill, f, req.requester, line, /*ifetch=*/true);
    }

    // Resolve the source level for a line and enqueue the first hop.
    // SQ allocation happens here when the line misses L2.
    void route_from_l2(Fill& fill, int fill_id, int core, Addr line, bool ifetch) {
        LinkId last_hop = ifetch ? LinkId::L2ToL1i : LinkId::L2ToL1d;
        fill.bytes_left = static_cast<unsigned>(cfg_.line_size);
        if (l2_.access(line, now_)) {
            fill.source = Level::L2;
            if (fill.dest == FillDest::L2) {  // nothing to do, line already there
                complete_fill(fill_id);
                return;
            }
            fill.hops = {last_hop, last_hop, last_hop};
            fill.hop_count = 1;
            fill.ready = now_ + cfg_.lat_l2;
            enqueue(fill.hops[0], fill_id);
        } else {
            ++stats_.l2_miss;
            issue_l2_prefetches(core, line, ifetch);
            int sq = sq_grab_slot(core);
            if (sq < 0) {
                if (!fill.prefetch) {
                    ++stats_.sq_saturation_events;
                    park_for_sq(fill_id);
                    return;
                }
                ++stats_.sq_saturation_events;
                abandon_fill(fill_id);  // prefetches are dropped, not parked
                return;
            }
            attach_sq(fill, fill_id, sq, line, core);
        }
    }

    void attach_sq(Fill& fill, int fill_id, int sq, Addr line, int core) {
        SqEntry& e = sq_[sq];
        e = SqEntry{};
        e.valid = true;
        e.line_address = line;
        e.owner = core;
        e.alloc_cycle = now_;
        fill.sq_slot = sq;
        LinkId last_hop = fill.dest == FillDest::L1i ? LinkId::L2ToL1i : LinkId::L2ToL1d;
        if (l3_.access(line, now_)) {
            fill.source = Level::L3;
            e.pending_level = Level::L3;
            if (fill.dest == FillDest::L2) {
                fill.hops = {LinkId::L3ToL2, last_hop, last_hop};
                fill.hop_count = 1;
            } else {
                fill.hops = {LinkId::L3ToL2, last_hop, last_hop};
                fill.hop_count = 2;
            }
            fill.ready = now_ + cfg_.lat_l3;
            enqueue(LinkId::L3ToL2, fill_id);
        } else {
            ++stats_.l3_miss;
            fill.source = Level::Mem;
            e.pending_level = Level::Mem;
            if (fill.dest == FillDest::L2) {
                fill.hops = {LinkId::MemToL3, LinkId::L3ToL2, last_hop};
                fill.hop_count = 2;
            } else {
                fill.hops = {LinkId::MemToL3, LinkId::L3ToL2, last_hop};
                fill.hop_count = 3;
            }
            fill.ready = now_ + cfg_.lat_mem;
            enqueue(LinkId::MemToL3, fill_id);
        }
    }

    // Parked SQ retries re-run the L3 probe.
    bool try_start_parked_sq(ParkedMiss& pm) {
        int fill_id = pm.ticket;  // fill id smuggled through the ticket field
        Fill& fill = fills_[fill_id];
        int sq = sq_grab_slot(fill.owner);
        if (sq < 0) return false;
        attach_sq(fill, fill_id, sq, fill.line, fill.owner);
        return true;
    }

    void park_for_sq(int fill_id) {
        sq_wait_[fills_[fill_id].owner].push_back(
            {MemoryRequest{}, static_cast<TicketId>(fill_id), park_seq_++});
    }

    // ---- prefetch dispatch -----------------------------------------------------

    void issue_l1_prefetches(const MemoryRequest& access) {
        if (!cfg_.prefetchers.any()) return;
        auto reqs = compute_prefetches(access);
        for (auto& r : reqs) dispatch_prefetch(r);
    }

    void issue_l2_prefetches(int core, Addr line, bool ifetch) {
        if (!cfg_.prefetchers.adjacent_line && !cfg_.prefetchers.stream) return;
        auto reqs = compute_l2_prefetches(core, line, ifetch);
        for (auto& r : reqs) dispatch_l2_prefetch(r, ifetch);
    }

    void dispatch_prefetch(const MemoryRequest& r) {
        Addr line = line_of(r.address);
        if (r.kind == AccessKind::IFetch) {
            // code prefetch fills L1i, no LFB involvement
            if (l1i_.contains(line)) return;
            if (ifetch_outstanding_[r.requester] >= kIFetchMshr) return;
            ++stats_.prefetch_issued;
            MemoryRequest req = r;
            req.kind = AccessKind::Prefetch;
            start_ifetch_fill(req, kNoTicket);
            return;
        }
        if (l1d_.contains(line)) return;
        for (auto& e : lfb_)
            if (e.valid && e.line_address == line && e.owner == r.requester &&
                e.free_at == kNoCycle)
                return;  // already in flight
        if (!try_start_data_fill(r, kNoTicket, false)) {
            ++stats_.lfb_saturation_events;
            // a couple of refused prefetches queue at the buffer, the rest drop
            if (parked_pf_[r.requester] < kPrefetchParkQuota) {
                ++parked_pf_[r.requester];
                lfb_wait_[r.requester].push_back({r, kNoTicket, park_seq_++});
            }
            return;
        }
        ++stats_.prefetch_issued;
    }

    void dispatch_l2_prefetch(const MemoryRequest& r, bool) {
        Addr line = line_of(r.address);
        if (l2_.contains(line)) return;
        for (auto& f : fills_)
            if (f.active && f.line == line && f.owner == r.requester) return;
        int sq = sq_grab_slot(r.requester);
        if (sq < 0) {
            ++stats_.sq_saturation_events;
            return;
        }
        int fid = new_fill();
        Fill& fill = fills_[fid];
        fill.line = line;
        fill.owner = r.requester;
        fill.dest = FillDest::L2;
        fill.prefetch = true;
        attach_sq(fill, fid, sq, line, r.requester);
        ++stats_.prefetch_issued;
    }

    // ---- buffer slot management ---------------------------------------------

    int lfb_grab_slot(int owner, bool) {
        unsigned cap = cfg_.lfb_entries;
        if (cfg_.lfb_mode == BufferMode::StaticPartitioned) {
            unsigned mine = lfb_occupancy(owner);
            if (mine >= cap / 2 + (cap & 1u && owner == 0 ? 1u : 0u)) return -1;
        }
        for (int i = 0; i < static_cast<int>(lfb_.size()); ++i)
            if (!lfb_[i].valid) return i;
        return -1;
    }

    int sq_grab_slot(int owner) {
        unsigned cap = cfg_.sq_entries;
        if (cfg_.sq_mode == BufferMode::StaticPartitioned) {
            unsigned mine = sq_occupancy(owner);
            if (mine >= cap / 2 + (cap & 1u && owner == 0 ? 1u : 0u)) return -1;
        }
        for (int i = 0; i < static_cast<int>(sq_.size()); ++i)
            if (!sq_[i].valid) return i;
        return -1;
    }

    int evict_oldest_nt(int owner) {
        int best = -1;
        for (int i = 0; i < static_cast<int>(lfb_.size()); ++i) {
            const LfbEntry& e = lfb_[i];
            if (!e.valid || e.kind != EntryKind::Nontemporal) continue;
            if (cfg_.lfb_mode == BufferMode::StaticPartitioned && e.owner != owner) continue;
            if (best < 0 || e.alloc_cycle < lfb_[best].alloc_cycle) best = i;
        }
        if (best >= 0) lfb_[best].valid = false;
        return best;
    }

    // ---- link machinery -------------------------------------------------------

    void enqueue(LinkId id, int fill_id) { link_[static_cast<int>(id)].queue.push_back(fill_id); }

    void advance_links() {
        for (int i = 0; i < kNumLinks; ++i) {
            LinkState& link = link_[i];
            LinkId id = static_cast<LinkId>(i);
            std::uint64_t budget = id == LinkId::L2ToL1i ? cfg_.ifetch_link_budget
                                 : id == LinkId::L3ToL2  ? cfg_.l3_link_budget
                                                         : cfg_.link_budget;
            link.bytes_last_cycle = 0;
            // With a statically partitioned super queue the link scheduler is
            // partitioned along with it: each thread gets its own half of the
            // cycle budget and cannot queue-delay the sibling's transfers.
            bool split = cfg_.sq_mode == BufferMode::StaticPartitioned;
            std::array<std::uint64_t, kNumCores> share{};
            if (split) share = {budget / 2, budget - budget / 2};
            for (auto it = link.queue.begin(); budget > 0 && it != link.queue.end();) {
                Fill& f = fills_[*it];
                if (f.ready > now_) { ++it; continue; }
                std::uint64_t avail = split ? share[f.owner] : budget;
                if (avail == 0) { ++it; continue; }
                std::uint64_t moved = std::min<std::uint64_t>(avail, f.bytes_left);
                budget -= moved;
                if (split) share[f.owner] -= moved;
                f.bytes_left -= static_cast<unsigned>(moved);
                link.bytes_last_cycle += moved;
                stats_.bytes_moved[i] += moved;
                if (f.bytes_left > 0) { ++it; continue; }
                // Installing the line needs a cache port, shared with the
                // cores' own lookups. Contended installs wait, briefly.
                if (lookups_ >= cfg_.lookup_ports && f.port_waits < 2) {
                    ++f.port_waits;
                    f.ready = now_ + 1;
                    ++it;
                    continue;
                }
                ++lookups_;
                f.port_waits = 0;
                int fid = *it;
                it = link.queue.erase(it);
                hop_done(fid, static_cast<LinkId>(i));
            }
        }
    }

    void hop_done(int fill_id, LinkId hop) {
        Fill& f = fills_[fill_id];
        if (hop == LinkId::MemToL3) l3_.insert(f.line, f.owner, now_);
        if (hop == LinkId::L3ToL2) {
            l2_.insert(f.line, f.owner, now_);
            if (f.sq_slot >= 0) {
                sq_[f.sq_slot].free_at = now_ + cfg_.sq_drain_cycles;
                f.sq_slot = -1;
            }
        }
        ++f.hop_idx;
        if (f.hop_idx >= f.hop_count) {
            complete_fill(fill_id);
            return;
        }
        f.bytes_left = static_cast<unsigned>(cfg_.line_size);
        f.ready = now_ + 1;
        enqueue(f.hops[f.hop_idx], fill_id);
    }

    void complete_fill(int fill_id) {
        Fill& f = fills_[fill_id];
        if (f.dest == FillDest::L1d) l1d_.insert(f.line, f.owner, now_);
        if (f.dest == FillDest::L1i) {
            l1i_.insert(f.line, f.owner, now_);
            if (ifetch_outstanding_[f.owner] > 0) --ifetch_outstanding_[f.owner];
        }
        for (TicketId t : f.tickets) {
            Cycle floor = tickets_[t].issued + cfg_.lat_l1;
            resolve(t, std::max(now_, floor), f.source);
        }
        if (f.lfb_slot >= 0 && lfb_[f.lfb_slot].valid && lfb_[f.lfb_slot].fill == fill_id) {
            lfb_[f.lfb_slot].free_at = now_ + cfg_.lfb_drain_cycles;
            lfb_[f.lfb_slot].fill = -1;
        }
        free_fill(fill_id);
    }

    void abandon_fill(int fill_id) {
        Fill& f = fills_[fill_id];
        if (f.lfb_slot >= 0 && lfb_[f.lfb_slot].fill == fill_id) lfb_[f.lfb_slot].valid = false;
        if (f.dest == FillDest::L1i && ifetch_outstanding_[f.owner] > 0)
            --ifetch_outstanding_[f.owner];
        free_fill(fill_id);
    }

    void drain_owner(int owner) {
        // resolve in-flight work for this owner and drop its buffer entries
        for (int i = 0; i < static_cast<int>(fills_.size()); ++i) {
            Fill& f = fills_[i];
            if (!f.active || f.owner != owner) continue;
            for (int l = 0; l < kNumLinks; ++l) {
                auto& q = link_[l].queue;
                for (auto it = q.begin(); it != q.end();)
                    it = (*it == i) ? q.erase(it) : std::next(it);
            }
            for (TicketId t : f.tickets)
                resolve(t, std::max(now_, tickets_[t].issued + cfg_.lat_l1), f.source);
            f.active = false;
            fill_free_.push_back(i);
        }
        for (auto& e : lfb_)
            if (e.valid && e.owner == owner) e.valid = false;
        for (auto& e : sq_)
            if (e.valid && e.owner == owner) e.valid = false;
        for (auto& pm : lfb_wait_[owner]) resolve_parked(pm);
        lfb_wait_[owner].clear();
        parked_pf_[owner] = 0;
        ifetch_wait_[owner].clear();
        sq_wait_[owner].clear();
        ifetch_outstanding_[owner] = 0;
    }

    void resolve_parked(ParkedMiss& pm) {
        resolve(pm.ticket, std::max(now_, tickets_[pm.ticket].issued + cfg_.lat_l1), Level::Mem);
    }

    // ---- tickets / fills ---------------------------------------------------------

    static constexpr TicketId kNoTicket = ~TicketId{0};

    TicketId new_ticket() {
        TicketId t;
        if (!ticket_free_.empty()) {
            t = ticket_free_.back();
            ticket_free_.pop_back();
        } else {
            t = static_cast<TicketId>(tickets_.size());
            tickets_.push_back({});
        }
        tickets_[t].done = kNoCycle;
        tickets_[t].issued = now_;
        return t;
    }

    void resolve(TicketId t, Cycle done, Level served) {
        if (t == kNoTicket) return;
        tickets_[t].done = done;
        tickets_[t].served_by = served;
    }

    int new_fill() {
        int f;
        if (!fill_free_.empty()) {
            f = fill_free_.back();
            fill_free_.pop_back();
        } else {
            f = static_cast<int>(fills_.size());
            fills_.push_back({});
        }
        fills_[f] = Fill{};
        fills_[f].active = true;
        return f;
    }

    void free_fill(int f) {
        fills_[f].active = false;
        fills_[f].tickets.clear();
        fill_free_.push_back(f);
    }

    // ---- state -------------------------------------------------------------------

    MicroarchConfig cfg_;
    Cache l1d_, l1i_, l2_, l3_;
    std::vector<LfbEntry> lfb_;
    std::vector<SqEntry> sq_;
    std::array<LinkState, kNumLinks> link_;
    std::vector<Fill> fills_;
    std::vector<int> fill_free_;
    std::vector<Ticket> tickets_;
    std::vector<TicketId> ticket_free_;
    std::array<std::deque<ParkedMiss>, kNumCores> lfb_wait_;
    std::uint64_t park_seq_ = 0;
    static constexpr unsigned kPrefetchParkQuota = 8;
    std::array<unsigned, kNumCores> parked_pf_{};
    std::array<std::deque<ParkedMiss>, kNumCores> sq_wait_;
    std::array<std::deque<ParkedMiss>, kNumCores> ifetch_wait_;
    std::array<unsigned, kNumCores> ifetch_outstanding_{};
    std::array<PrefetchCore, kNumCores> pf_;
    std::vector<std::unique_ptr<Agent>> agents_;
    std::mt19937_64 rng_;
    CycleStats stats_;
    Cycle now_ = 0;
    unsigned line_shift_ = 6;
    std::array<unsigned, kNumCores> issued_{};
    std::array<unsigned, kNumCores> fetch_issued_{};
    unsigned lookups_ = 0;
    std::uint64_t demand_requests_ = 0;
    std::uint64_t merged_requests_ = 0;
    std::uint64_t served_without_lfb_ = 0;
    std::uint64_t lfb_allocations_ = 0;
};

}  // namespace bwsim
