#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "bwsim/sim.hpp"

namespace bwsim {

// Disjoint per-core address regions; region granule 16 MiB.
inline Addr core_region(int core, int index) {
    return (static_cast<Addr>(core + 1) << 32) | (static_cast<Addr>(index) << 24);
}

struct LatencySample {
    Cycle cycle;        // issue cycle of the measured iteration
    std::uint32_t latency;
};

struct LatencyTrace {
    std::vector<LatencySample> samples;

    double mean() const {
        if (samples.empty()) return 0.0;
        double s = 0;
        for (const auto& x : samples) s += x.latency;
        return s / static_cast<double>(samples.size());
    }

    double mean_in(Cycle from, Cycle to) const {
        double s = 0;
        std::uint64_t n = 0;
        for (const auto& x : samples)
            if (x.cycle >= from && x.cycle < to) { s += x.latency; ++n; }
        return n ? s / static_cast<double>(n) : 0.0;
    }
};

// Releases fire-and-forget tickets once they complete.
class TicketPool {
public:
    void add(TicketId t) { pending_.push_back(t); }
    std::size_t in_flight() const { return pending_.size(); }

    void poll(Sim& sim) {
        std::size_t w = 0;
        for (std::size_t r = 0; r < pending_.size(); ++r) {
            if (sim.ticket_done(pending_[r])) sim.release_ticket(pending_[r]);
            else pending_[w++] = pending_[r];
        }
        pending_.resize(w);
    }

private:
    std::vector<TicketId> pending_;
};

// ---------------------------------------------------------------------------
// probe loop: the timed two-load stride walk used by receivers and attackers
// ---------------------------------------------------------------------------

struct ProbeLoopConfig {
    std::uint64_t buffer_bytes = 128 * 1024;
    unsigned stride = 192;
    unsigned loads_per_iteration = 2;
    std::uint64_t repetitions = 0;  // 0: run until externally stopped
    Level target = Level::L2;

    static ProbeLoopConfig for_level(Level target, std::uint64_t repetitions = 0) {
        ProbeLoopConfig cfg;
        cfg.target = target;
        switch (target) {
            case Level::L1: cfg.buffer_bytes = 16 * 1024; break;
            case Level::L2: cfg.buffer_bytes = 128 * 1024; break;
            case Level::L3: cfg.buffer_bytes = 512 * 1024; break;
            default: throw InvalidConfig("probe target must be L1, L2 or L3");
        }
        cfg.repetitions = repetitions;
        return cfg;
    }

    void validate(const MicroarchConfig& mc) const {
        if (stride < mc.line_size)
            throw InvalidConfig("probe stride must be >= line_size");
        std::uint64_t expect = target == Level::L1 ? 16 * 1024
                             : target == Level::L2 ? 128 * 1024
                                                   : 512 * 1024;
        if (buffer_bytes != expect)
            throw InvalidConfig("probe buffer size does not match target level preset");
        if (loads_per_iteration < 1)
            throw InvalidConfig("loads_per_iteration must be >= 1");
    }
};

class ProbeAgent : public Agent {
public:
    ProbeAgent(int core, const ProbeLoopConfig& cfg, Addr base)
        : Agent(core), cfg_(cfg), base_(base) {
        stream_span_ = cfg.buffer_bytes / cfg.loads_per_iteration;
        offsets_.resize(cfg.loads_per_iteration, 0);
        iters_per_pass_ = stream_span_ / cfg.stride;
        // Walk the buffer in a permuted order so the probe's latency is not
        // masked by the hardware stride prefetcher.
        perm_mult_ = 1;
        for (auto k = static_cast<std::uint64_t>(iters_per_pass_ * 0.618); k > 1; --k) {
            if (std::gcd(k, iters_per_pass_) == 1) { perm_mult_ = k; break; }
        }
    }

    void tick(Sim& sim) override {
        if (waiting_) {
            Cycle last = 0;
            for (TicketId t : tickets_) {
                if (!sim.ticket_done(t)) return;
                last = std::max(last, sim.ticket_completion(t));
            }
            for (TicketId t : tickets_) sim.release_ticket(t);
            tickets_.clear();
            waiting_ = false;
            auto latency = static_cast<std::uint32_t>(last - iter_start_);
            if (warmup_left_ == 0) {
                if (recording_) trace_.samples.push_back({iter_start_, latency});
                bucket_sum_ += latency;
                ++bucket_count_;
                ++measured_;
            }
        }
        if (done()) return;
        if (tickets_.empty() && issued_in_iter_ == 0) iter_start_ = sim.now();
        while (issued_in_iter_ < cfg_.loads_per_iteration) {
            unsigned j = issued_in_iter_;
            Addr addr = base_ + j * stream_span_ + offsets_[j];
            auto t = sim.issue({core(), AccessKind::Load, addr, 8, 0, Origin::Demand});
            if (!t) return;  // out of issue slots, resume next cycle
            tickets_.push_back(*t);
            ++issued_in_iter_;
        }
        // full iteration in flight; advance the permuted walk
        if (++iter_in_pass_ >= iters_per_pass_) {
            iter_in_pass_ = 0;
            if (warmup_left_ > 0) --warmup_left_;
        }
        for (unsigned j = 0; j < cfg_.loads_per_iteration; ++j)
            offsets_[j] = (iter_in_pass_ * perm_mult_ % iters_per_pass_) * cfg_.stride;
        issued_in_iter_ = 0;
        waiting_ = true;
    }

    bool done() const override {
        return cfg_.repetitions != 0 && measured_ >= cfg_.repetitions;
    }

    void set_recording(bool on) { recording_ = on; }
    void set_warmup_passes(unsigned n) { warmup_left_ = n; }
    const LatencyTrace& trace() const { return trace_; }
    LatencyTrace take_trace() { return std::move(trace_); }
    std::uint64_t measured() const { return measured_; }

    // covert receiver interface: mean latency since the last call
    double take_bucket_mean() {
        double m = bucket_count_ ? bucket_sum_ / static_cast<double>(bucket_count_) : 0.0;
        bucket_sum_ = 0;
        bucket_count_ = 0;
        return m;
    }

    const ProbeLoopConfig& config() const { return cfg_; }
    Addr base() const { return base_; }

private:
    ProbeLoopConfig cfg_;
    Addr base_;
    std::uint64_t stream_span_;
    std::uint64_t iters_per_pass_;
    std::uint64_t perm_mult_ = 1;
    std::uint64_t iter_in_pass_ = 0;
    std::vector<std::uint64_t> offsets_;
    std::vector<TicketId> tickets_;
    unsigned issued_in_iter_ = 0;
    bool waiting_ = false;
    bool recording_ = true;
    unsigned warmup_left_ = 0;
    Cycle iter_start_ = 0;
    std::uint64_t measured_ = 0;
    LatencyTrace trace_;
    double bucket_sum_ = 0;
    std::uint64_t bucket_count_ = 0;
};

// Bandwidth-bound variant: fire-and-forget stride walk, used by senders and
// burst primitives. Toggling `active` gates traffic per covert-channel bit.
class FloodAgent : public Agent {
public:
    FloodAgent(int core, Addr base, std::uint64_t bytes, unsigned stride = 192,
               std::size_t max_in_flight = 16)
        : Agent(core), base_(base), bytes_(bytes), stride_(stride),
          max_in_flight_(max_in_flight) {}

    void set_active(bool on) { active_ = on; }
    bool active() const { return active_; }

    // While inactive, issue one paced access every `cycles` to keep the
    // flood's working set cache-resident between bursts. 0 stops completely.
    void set_idle_pace(unsigned cycles) { idle_pace_ = cycles; }

    void tick(Sim& sim) override {
        pool_.poll(sim);
        if (!active_) {
            if (idle_pace_ == 0 || ++idle_credit_ < idle_pace_) return;
            if (pool_.in_flight() > 0 || !sim.can_issue(core())) return;
            idle_credit_ = 0;
            auto t = sim.issue({core(), AccessKind::Load, base_ + offset_, 8, 0,
                                Origin::Demand});
            if (!t) return;
            pool_.add(*t);
            offset_ += stride_;
            if (offset_ + stride_ > bytes_) offset_ = 0;
            return;
        }
        while (pool_.in_flight() < max_in_flight_ && sim.can_issue(core())) {
            auto t = sim.issue({core(), AccessKind::Load, base_ + offset_, 8, 0,
                                Origin::Demand});
            if (!t) break;
            pool_.add(*t);
            offset_ += stride_;
            if (offset_ + stride_ > bytes_) offset_ = 0;
        }
    }

private:
    Addr base_;
    std::uint64_t bytes_;
    unsigned stride_;
    std::size_t max_in_flight_;
    std::uint64_t offset_ = 0;
    bool active_ = true;
    unsigned idle_pace_ = 0;
    unsigned idle_credit_ = 0;
    TicketPool pool_;
};

// ---------------------------------------------------------------------------
// instruction-fetch loop: jump-block walk
// ---------------------------------------------------------------------------

struct IFetchLoopConfig {
    unsigned block_count = 1024;  // 64 KiB of code: misses a 32 KiB L1i
    unsigned block_size = 64;
    std::uint64_t passes = 0;  // measured passes; 0: endless

    void validate(const MicroarchConfig& mc) const {
        if (block_size != mc.line_size)
            throw InvalidConfig("jump block size must equal line_size");
        if (block_count == 0) throw InvalidConfig("block_count must be >= 1");
    }
};

class IFetchProbeAgent : public Agent {
public:
    IFetchProbeAgent(int core, const IFetchLoopConfig& cfg, Addr base)
        : Agent(core), cfg_(cfg), base_(base) {}

    void tick(Sim& sim) override {
        if (waiting_) {
            if (!sim.ticket_done(ticket_)) return;
            Cycle done_at = sim.ticket_completion(ticket_);
            sim.release_ticket(ticket_);
            waiting_ = false;
            auto latency = static_cast<std::uint32_t>(done_at - fetch_start_);
            if (warmup_left_ == 0) {
                if (recording_) trace_.samples.push_back({fetch_start_, latency});
                bucket_sum_ += latency;
                ++bucket_count_;
            }
        }
        if (done()) return;
        Addr addr = base_ + static_cast<Addr>(block_) * cfg_.block_size;
        fetch_start_ = sim.now();
        auto t = sim.issue({core(), AccessKind::IFetch, addr,
                            cfg_.block_size, 0, Origin::Demand});
        if (!t) return;
        ticket_ = *t;
        waiting_ = true;
        if (++block_ >= cfg_.block_count) {
            block_ = 0;
            if (warmup_left_ > 0) --warmup_left_;
            else ++passes_done_;
        }
    }

    bool done() const override { return cfg_.passes != 0 && passes_done_ >= cfg_.passes; }

    void set_recording(bool on) { recording_ = on; }
    void set_warmup_passes(unsigned n) { warmup_left_ = n; }
    const LatencyTrace& trace() const { return trace_; }

    double take_bucket_mean() {
        double m = bucket_count_ ? bucket_sum_ / static_cast<double>(bucket_count_) : 0.0;
        bucket_sum_ = 0;
        bucket_count_ = 0;
        return m;
    }

private:
    IFetchLoopConfig cfg_;
    Addr base_;
    unsigned block_ = 0;
    std::uint64_t passes_done_ = 0;
    TicketId ticket_ = 0;
    bool waiting_ = false;
    bool recording_ = true;
    unsigned warmup_left_ = 0;
    Cycle fetch_start_ = 0;
    LatencyTrace trace_;
    double bucket_sum_ = 0;
    std::uint64_t bucket_count_ = 0;
};

class IFetchFloodAgent : public Agent {
public:
    IFetchFloodAgent(int core, const IFetchLoopConfig& cfg, Addr base)
        : Agent(core), cfg_(cfg), base_(base) {}

    void set_active(bool on) { active_ = on; }

    void tick(Sim& sim) override {
        pool_.poll(sim);
        if (!active_) return;
        if (pool_.in_flight() >= 4) return;
        Addr addr = base_ + static_cast<Addr>(block_) * cfg_.block_size;
        auto t = sim.issue({core(), AccessKind::IFetch, addr, cfg_.block_size, 0,
                            Origin::Demand});
        if (!t) return;
        pool_.add(*t);
        if (++block_ >= cfg_.block_count) block_ = 0;
    }

private:
    IFetchLoopConfig cfg_;
    Addr base_;
    unsigned block_ = 0;
    bool active_ = true;
    TicketPool pool_;
};

// ---------------------------------------------------------------------------
// nontemporal store loop (LFB entry-count probe)
// ---------------------------------------------------------------------------

struct NtStoreLoopConfig {
    unsigned store_count = 1;
    std::uint64_t loop_count = 1;

    void validate() const {
        if (store_count < 1) throw InvalidConfig("store_count must be >= 1");
    }
};

class NtStoreAgent : public Agent {
public:
    NtStoreAgent(int core, const NtStoreLoopConfig& cfg, Addr base)
        : Agent(core), cfg_(cfg), base_(base) {}

    void tick(Sim& sim) override {
        pool_.poll(sim);
        while (!done() && sim.can_issue(core())) {
            // line-distinct within one iteration, identical across iterations
            Addr addr = base_ + static_cast<Addr>(index_) * 64 + 32;
            auto t = sim.issue({core(), AccessKind::NtStore, addr, 32, 0,
                                Origin::Demand});
            if (!t) return;
            pool_.add(*t);
            if (++index_ >= cfg_.store_count) {
                index_ = 0;
                ++loops_done_;
            }
        }
    }

    bool done() const override { return loops_done_ >= cfg_.loop_count; }

private:
    NtStoreLoopConfig cfg_;
    Addr base_;
    unsigned index_ = 0;
    std::uint64_t loops_done_ = 0;
    TicketPool pool_;
};

// ---------------------------------------------------------------------------
// noise source ("stress" colocated with the sender)
// ---------------------------------------------------------------------------

class NoiseAgent : public Agent {
public:
    // The default working set models a busy but compute-bound neighbor: it
    // mostly hits the near caches and perturbs issue slots and lookup ports
    // rather than flooding the fill path outright.
    NoiseAgent(int core, double intensity, Addr base = 0,
               std::uint64_t bytes = 48 * 1024)
        : Agent(core), intensity_(intensity),
          base_(base ? base : core_region(core, 8)), bytes_(bytes) {
        if (intensity < 0) throw InvalidConfig("noise intensity must be >= 0");
    }

    void tick(Sim& sim) override {
        pool_.poll(sim);
        if (intensity_ <= 0) return;
        credit_ += intensity_;
        while (credit_ >= 1.0 && pool_.in_flight() < 8 && sim.can_issue(core())) {
            std::uint64_t lines = bytes_ / 64;
            Addr addr = base_ + (sim.rng()() % lines) * 64;
            auto t = sim.issue({core(), AccessKind::Load, addr, 8, 0, Origin::Demand});
            if (!t) break;
            pool_.add(*t);
            credit_ -= 1.0;
        }
        if (credit_ > 8.0) credit_ = 8.0;
    }

private:
    double intensity_;
    Addr base_;
    std::uint64_t bytes_;
    double credit_ = 0;
    TicketPool pool_;
};

// ---------------------------------------------------------------------------
// victims: square-and-multiply style key-dependent fetch bursts
// ---------------------------------------------------------------------------

struct FunctionFootprint {
    std::uint64_t code_bytes = 4 * 1024;
    std::uint64_t data_bytes = 8 * 1024;
};

enum class VictimKind { Rsa, Eddsa };

struct VictimModel {
    VictimKind kind = VictimKind::Rsa;
    std::string key_bits;  // "0"/"1" string, MSB first
    FunctionFootprint f1;
    FunctionFootprint f2;
    bool cold = true;

    void validate() const {
        if (key_bits.empty()) throw InvalidConfig("victim key must be non-empty");
        for (char c : key_bits)
            if (c != '0' && c != '1') throw InvalidConfig("victim key must be binary");
        if (f1.code_bytes + f1.data_bytes <= 64 || f2.code_bytes + f2.data_bytes <= 64)
            throw InvalidConfig("function footprints must exceed one cache line");
    }
};

struct BitWindow {
    int bit_index = 0;
    Cycle start = 0, end = 0;
    Cycle f1_start = 0, f1_end = 0;
    Cycle f2_start = kNoCycle, f2_end = kNoCycle;
};

class VictimAgent : public Agent {
public:
    VictimAgent(int core, const VictimModel& model, std::uint64_t bit_period = 6000,
                bool flush_between_bits = false)
        : Agent(core), model_(model), bit_period_(bit_period),
          flush_between_bits_(flush_between_bits) {
        model.validate();
        f1_code_ = core_region(core, 1);
        f1_data_ = core_region(core, 2);
        f2_code_ = core_region(core, 3);
        f2_data_ = core_region(core, 4);
    }

    // Place both functions' footprints in the off-core (L3) cache.
    void install_off_core(Sim& sim) {
        sim.preload_code(f1_code_, model_.f1.code_bytes, core(), Level::L3);
        sim.preload(Level::L3, f1_data_, model_.f1.data_bytes, core());
        sim.preload_code(f2_code_, model_.f2.code_bytes, core(), Level::L3);
        sim.preload(Level::L3, f2_data_, model_.f2.data_bytes, core());
    }

    void tick(Sim& sim) override {
        pool_.poll(sim);
        switch (phase_) {
            case Phase::StartBit: {
                if (bit_ >= static_cast<int>(model_.key_bits.size())) {
                    phase_ = Phase::Done;
                    return;
                }
                if (flush_between_bits_ && bit_ > 0) {
                    // context-switch model: on-core caches lose the victim's
                    // lines, the shared L3 keeps them
                    sim.flush_owner_on_core(core());
                }
                window_ = BitWindow{};
                window_.bit_index = bit_;
                window_.start = sim.now();
                begin_burst(f1_code_, model_.f1.code_bytes, f1_data_, model_.f1.data_bytes);
                window_.f1_start = sim.now();
                phase_ = Phase::F1;
                [[fallthrough]];
            }
            case Phase::F1:
                if (!burst_step(sim)) return;
                window_.f1_end = sim.now();
                if (model_.key_bits[bit_] == '1') {
                    begin_burst(f2_code_, model_.f2.code_bytes, f2_data_, model_.f2.data_bytes);
                    window_.f2_start = sim.now();
                    phase_ = Phase::F2;
                    return;
                }
                phase_ = Phase::Gap;
                return;
            case Phase::F2:
                if (!burst_step(sim)) return;
                window_.f2_end = sim.now();
                phase_ = Phase::Gap;
                return;
            case Phase::Gap:
                if (sim.now() < window_.start + bit_period_) return;
                window_.end = sim.now();
                schedule_.push_back(window_);
                ++bit_;
                phase_ = Phase::StartBit;
                return;
            case Phase::Done:
                return;
        }
    }

    bool done() const override { return phase_ == Phase::Done; }
    const std::vector<BitWindow>& schedule() const { return schedule_; }

private:
    enum class Phase { StartBit, F1, F2, Gap, Done };

    void begin_burst(Addr code, std::uint64_t code_bytes, Addr data,
                     std::uint64_t data_bytes) {
        burst_code_base_ = code;
        burst_code_lines_ = code_bytes / 64;
        burst_data_base_ = data;
        burst_data_lines_ = data_bytes / 64;
        burst_code_idx_ = burst_data_idx_ = 0;
    }

    // Returns true once every line of the burst has been fetched and landed.
    bool burst_step(Sim& sim) {
        if (burst_code_idx_ < burst_code_lines_) {
            Addr addr = burst_code_base_ + burst_code_idx_ * 64;
            if (auto t = sim.issue({core(), AccessKind::IFetch, addr, 64, 0,
                                    Origin::Demand})) {
                pool_.add(*t);
                ++burst_code_idx_;
            }
        }
        while (burst_data_idx_ < burst_data_lines_ && pool_.in_flight() < 8) {
            Addr addr = burst_data_base_ + burst_data_idx_ * 64;
            auto t = sim.issue({core(), AccessKind::Load, addr, 8, 0, Origin::Demand});
            if (!t) break;
            pool_.add(*t);
            ++burst_data_idx_;
        }
        return burst_code_idx_ >= burst_code_lines_ &&
               burst_data_idx_ >= burst_data_lines_ && pool_.in_flight() == 0;
    }

    VictimModel model_;
    std::uint64_t bit_period_;
    bool flush_between_bits_;
    Addr f1_code_, f1_data_, f2_code_, f2_data_;
    int bit_ = 0;
    Phase phase_ = Phase::StartBit;
    BitWindow window_;
    std::vector<BitWindow> schedule_;
    TicketPool pool_;
    Addr burst_code_base_ = 0, burst_data_base_ = 0;
    std::uint64_t burst_code_lines_ = 0, burst_data_lines_ = 0;
    std::uint64_t burst_code_idx_ = 0, burst_data_idx_ = 0;
};

// ---------------------------------------------------------------------------
// speculation model
// ---------------------------------------------------------------------------

struct SpeculationState {
    std::array<std::uint8_t, 16> counters{};  // 2-bit saturating, per branch id
    unsigned window = 64;        // speculative memory ops before squash
    unsigned resolve_latency = 20;

    std::uint8_t counter(int branch) const { return counters[branch & 15]; }
    bool predict_taken(int branch) const { return counter(branch) >= 2; }

    void update(int branch, bool taken) {
        std::uint8_t& c = counters[branch & 15];
        if (taken && c < 3) ++c;
        if (!taken && c > 0) --c;
    }
};

inline void train_branch(SpeculationState& spec, int branch, bool taken,
                         unsigned iterations) {
    if (iterations < 1) throw InvalidConfig("train_branch requires iterations >= 1");
    for (unsigned i = 0; i < iterations; ++i) spec.update(branch, taken);
}

enum class GadgetKind { SpectreV1, SpectreV2, BpTiming };

// One victim invocation per `period` cycles. The speculative path issues at
// most `window` loads, then squashes; cache/LFB/prefetcher effects of the
// squashed work persist (the fills run to completion).
class GadgetAgent : public Agent {
public:
    GadgetAgent(int core, GadgetKind kind, bool secret, SpeculationState spec,
                unsigned invocations = 32, std::uint64_t period = 3000,
                bool retrain = true, int branch = 0)
        : Agent(core), kind_(kind), secret_(secret), spec_(spec),
          invocations_(invocations), period_(period), retrain_(retrain),
          branch_(branch) {
        if (spec_.window == 0 && requires_misprediction())
            throw SpeculationDisabled("speculation window is zero");
        l1_region_ = core_region(core, 5);
        l2_region_ = core_region(core, 6);
    }

    // L1_access reads a small always-hot region; L2_access walks an
    // L2-resident one.
    void install_regions(Sim& sim) {
        sim.preload(Level::L1, l1_region_, 16 * 1024, core());
        sim.preload(Level::L2, l2_region_, 128 * 1024, core());
    }

    void tick(Sim& sim) override {
        pool_.poll(sim);
        switch (phase_) {
            case Phase::Idle:
                if (invocation_ >= invocations_) return;
                if (sim.now() < next_start_) return;
                start_invocation(sim);
                return;
            case Phase::Burst:
                if (!burst_step(sim)) return;
                if (squash_after_burst_) {
                    phase_ = Phase::Squash;
                    squash_until_ = sim.now() + spec_.resolve_latency;
                    return;
                }
                finish_invocation(sim);
                return;
            case Phase::Squash:
                if (sim.now() < squash_until_) return;
                if (post_squash_l2_) {
                    // bp_timing: re-execute the architectural else-path
                    post_squash_l2_ = false;
                    begin_l2_burst(kBurstOps);
                    phase_ = Phase::Burst;
                    return;
                }
                finish_invocation(sim);
                return;
            case Phase::Done:
                return;
        }
    }

    bool done() const override {
        return phase_ == Phase::Done ||
               (phase_ == Phase::Idle && invocation_ >= invocations_);
    }

private:
    enum class Phase { Idle, Burst, Squash, Done };
    static constexpr unsigned kBurstOps = 48;
    static constexpr unsigned kFastOps = 16;  // short architecturally-safe path
    // Speculative loads are not bounded by the retire window, so the burst
    // keeps more fills in flight than a demand loop would.
    static constexpr unsigned kBurstParallelism = 16;
    static constexpr std::uint64_t kL2Span = 128 * 1024;
    static constexpr std::uint64_t kL1Span = 8 * 1024;

    bool requires_misprediction() const {
        return kind_ == GadgetKind::SpectreV1 || kind_ == GadgetKind::SpectreV2;
    }

    void start_invocation(Sim& sim) {
        if (retrain_)
            train_branch(spec_, branch_, /*taken=*/true, 4);
        squash_after_burst_ = false;
        post_squash_l2_ = false;
        switch (kind_) {
            case GadgetKind::SpectreV1:
            case GadgetKind::SpectreV2:
                if (secret_ && spec_.predict_taken(branch_)) {
                    // mispredicted path: speculative L2 burst, then squash
                    begin_l2_burst(std::min(kBurstOps, spec_.window));
                    squash_after_burst_ = true;
                } else {
                    // in-bounds path: a short walk over an always-hot region
                    begin_burst(l1_region_, kFastOps, kL1Span, 0);
                }
                break;
            case GadgetKind::BpTiming:
                if (secret_ && spec_.predict_taken(branch_) && spec_.window > 0) {
                    // speculative if-path, squash, then the real else-path
                    begin_l2_burst(std::min(kBurstOps, spec_.window));
                    squash_after_burst_ = true;
                    post_squash_l2_ = true;
                } else {
                    begin_l2_burst(kBurstOps);
                }
                spec_.update(branch_, false);  // the branch resolves not-taken
                break;
        }
        phase_ = Phase::Burst;
        burst_step(sim);
    }

    void finish_invocation(Sim&) {
        ++invocation_;
        next_start_ = start_cycle_ + static_cast<Cycle>(invocation_) * period_;
        phase_ = invocation_ >= invocations_ ? Phase::Done : Phase::Idle;
    }

    void begin_burst(Addr base, unsigned ops, std::uint64_t span, std::uint64_t off) {
        burst_base_ = base;
        burst_ops_ = ops;
        burst_idx_ = 0;
        burst_span_ = span;
        burst_off_ = off;
    }

    // Each L2 burst walks fresh lines; revisiting the same few KiB would
    // leave later invocations L1-resident and erase the contention signal.
    void begin_l2_burst(unsigned ops) {
        begin_burst(l2_region_, ops, kL2Span, l2_cursor_);
        l2_cursor_ = (l2_cursor_ + static_cast<std::uint64_t>(ops) * 192) % kL2Span;
    }

    bool burst_step(Sim& sim) {
        if (start_cycle_ == kNoCycle) start_cycle_ = sim.now();
        while (burst_idx_ < burst_ops_ && pool_.in_flight() < kBurstParallelism) {
            Addr addr = burst_base_ + (burst_off_ + burst_idx_ * 192) % burst_span_;
            auto t = sim.issue({core(), AccessKind::Load, addr, 8, 0, Origin::Demand});
            if (!t) return false;
            pool_.add(*t);
            ++burst_idx_;
        }
        return burst_idx_ >= burst_ops_ && pool_.in_flight() == 0;
    }

    GadgetKind kind_;
    bool secret_;
    SpeculationState spec_;
    unsigned invocations_;
    std::uint64_t period_;
    bool retrain_;
    int branch_;
    Addr l1_region_ = 0, l2_region_ = 0;
    unsigned invocation_ = 0;
    Phase phase_ = Phase::Idle;
    Cycle next_start_ = 0;
    Cycle squash_until_ = 0;
    Cycle start_cycle_ = kNoCycle;
    bool squash_after_burst_ = false;
    bool post_squash_l2_ = false;
    Addr burst_base_ = 0;
    unsigned burst_ops_ = 0;
    unsigned burst_idx_ = 0;
    std::uint64_t burst_span_ = kL2Span;
    std::uint64_t burst_off_ = 0;
    std::uint64_t l2_cursor_ = 0;
    TicketPool pool_;
};

// ---------------------------------------------------------------------------
// spec-level operations
// ---------------------------------------------------------------------------

inline void verify_probe_residency(Sim& sim, const ProbeAgent& agent) {
    Addr mid = agent.base() + agent.config().buffer_bytes / 2;
    Addr line = sim.line_of(mid);
    Level t = agent.config().target;
    bool ok = (t == Level::L1 && sim.data_cache(Level::L1).contains(line)) ||
              (t == Level::L2 && sim.data_cache(Level::L2).contains(line)) ||
              (t == Level::L3 && sim.data_cache(Level::L3).contains(line));
    if (!ok) throw BufferPlacementFailed("probe buffer not resident at target level");
}

// Runs a measuring probe loop to completion on `core`; any other registered
// agents keep running concurrently.
inline LatencyTrace probe_loop(Sim& sim, int core, const ProbeLoopConfig& cfg) {
    cfg.validate(sim.config());
    if (cfg.repetitions == 0)
        throw InvalidConfig("probe_loop needs a repetition count");
    Addr base = core_region(core, 0);
    auto& agent = sim.add_agent<ProbeAgent>(core, cfg, base);
    agent.set_warmup_passes(1);
    Level lvl = cfg.target == Level::L1 ? Level::L1
              : cfg.target == Level::L2 ? Level::L2 : Level::L3;
    sim.preload(lvl, base, cfg.buffer_bytes, core);
    std::uint64_t warm_iters = cfg.buffer_bytes / cfg.stride;
    sim.step(warm_iters * 4);  // one warmup pass plus slack
    verify_probe_residency(sim, agent);
    while (!agent.done()) sim.step(1024);
    return agent.take_trace();
}

inline LatencyTrace ifetch_loop(Sim& sim, int core, const IFetchLoopConfig& cfg) {
    cfg.validate(sim.config());
    if (cfg.passes == 0) throw InvalidConfig("ifetch_loop needs a pass count");
    Addr base = core_region(core, 7);
    auto& agent = sim.add_agent<IFetchProbeAgent>(core, cfg, base);
    agent.set_warmup_passes(1);
    sim.preload_code(base, static_cast<std::uint64_t>(cfg.block_count) * cfg.block_size,
                     core, Level::L2);
    while (!agent.done()) sim.step(1024);
    LatencyTrace t = agent.trace();
    return t;
}

inline CycleStats ntstore_loop(Sim& sim, int core, const NtStoreLoopConfig& cfg) {
    cfg.validate();
    CycleStats before = sim.stats();
    auto& agent = sim.add_agent<NtStoreAgent>(core, cfg, core_region(core, 9));
    while (!agent.done()) sim.step(256);
    return sim.stats() - before;
}

// Runs the victim to completion; returns the ground-truth burst schedule.
inline std::vector<BitWindow> victim_run(Sim& sim, int core, const VictimModel& model,
                                         std::uint64_t bit_period = 6000,
                                         bool flush_between_bits = false) {
    model.validate();
    auto& v = sim.add_agent<VictimAgent>(core, model, bit_period, flush_between_bits);
    v.install_off_core(sim);
    if (model.cold) sim.flush_owner_on_core(core);
    while (!v.done()) sim.step(1024);
    return v.schedule();
}

inline NoiseAgent& noise_agent(Sim& sim, int core, double intensity) {
    return sim.add_agent<NoiseAgent>(core, intensity);
}

}  // namespace bwsim
