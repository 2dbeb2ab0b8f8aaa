#pragma once

// Contention-encoded covert channels between sibling hyperthreads: L2CC and
// L3CC (data-path bandwidth), LiCC (instruction-fetch bandwidth). A '1' is
// sent by flooding the shared pathway for one bit interval, a '0' by idling;
// the receiver times its own walk of the same pathway and thresholds the
// per-interval mean latency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bwsim/agents.hpp"
#include "bwsim/errors.hpp"
#include "bwsim/sim.hpp"

namespace bwsim {

// ---------------------------------------------------------------------------
// capacity arithmetic
// ---------------------------------------------------------------------------

inline double binary_entropy(double e) {
    if (!(e >= 0.0 && e <= 1.0)) throw DomainError("error rate outside [0, 1]");
    if (e == 0.0 || e == 1.0) return 0.0;  // continuity limit
    return -e * std::log2(e) - (1.0 - e) * std::log2(1.0 - e);
}

inline double capacity(double speed_bps, double error_rate) {
    if (speed_bps < 0.0) throw DomainError("speed must be >= 0");
    return speed_bps * (1.0 - binary_entropy(error_rate));
}

// ---------------------------------------------------------------------------
// channel configuration
// ---------------------------------------------------------------------------

enum class ChannelKind { L2CC, L3CC, LiCC };

inline std::string to_string(ChannelKind k) {
    switch (k) {
        case ChannelKind::L2CC: return "L2CC";
        case ChannelKind::L3CC: return "L3CC";
        default: return "LiCC";
    }
}

inline ChannelKind parse_channel_kind(const std::string& name) {
    if (name == "L2CC") return ChannelKind::L2CC;
    if (name == "L3CC") return ChannelKind::L3CC;
    if (name == "LiCC") return ChannelKind::LiCC;
    throw DomainError("unknown channel kind '" + name + "'");
}

inline std::string default_preamble() {
    std::string p;
    for (int i = 0; i < 64; ++i) p += (i & 1) ? '0' : '1';
    return p;
}

struct ChannelConfig {
    ChannelKind kind = ChannelKind::L2CC;
    std::uint64_t bit_interval = 10000;  // cycles per bit
    std::string preamble = default_preamble();
    double clock_ghz = 4.0;  // maps simulated cycles to wall-clock bit rates
    std::int64_t skew = 0;   // sender/receiver clock offset, cycles
    bool invert = false;     // contend-on-0 instead of contend-on-1

    void validate() const {
        // the interval must fit at least one receiver probe iteration; the
        // slowest iteration in the catalog is ~60 cycles
        if (bit_interval < 64)
            throw InvalidConfig("bit_interval must be >= 64 cycles");
        bool has0 = preamble.find('0') != std::string::npos;
        bool has1 = preamble.find('1') != std::string::npos;
        if (!has0 || !has1)
            throw InvalidConfig("preamble must contain both symbols");
        if (clock_ghz <= 0) throw InvalidConfig("clock_ghz must be > 0");
    }

    double speed_bps() const { return clock_ghz * 1e9 / static_cast<double>(bit_interval); }
};

struct ChannelMetrics {
    std::uint64_t bit_interval = 0;
    double speed_bps = 0.0;
    double error_rate = 0.0;
    double capacity_bps = 0.0;
};

struct BitFrame {
    std::string bits;                  // decoded payload
    std::vector<double> mean_latency;  // per-bit receiver mean
    double threshold = 0.0;
};

// ---------------------------------------------------------------------------
// channel rig: sender + receiver co-resident in one simulation
// ---------------------------------------------------------------------------

class CovertChannel {
public:
    explicit CovertChannel(const ChannelConfig& cfg, const MicroarchConfig& base = {},
                           double noise_intensity = 0.0)
        : cfg_(cfg), sim_(base) {
        cfg_.validate();
        Addr rbase = core_region(0, 0);
        Addr sbase = core_region(1, 0);
        if (cfg_.kind == ChannelKind::LiCC) {
            IFetchLoopConfig rc;
            rc.block_count = 448;  // 28 KiB walk, L1i-resident when idle
            auto& probe = sim_.add_agent<IFetchProbeAgent>(0, rc, rbase);
            probe.set_recording(false);
            sim_.preload_code(rbase, static_cast<std::uint64_t>(rc.block_count) * rc.block_size,
                              0, Level::L2);
            code_probe_ = &probe;

            IFetchLoopConfig sc;
            sc.block_count = 2048;  // 128 KiB of sender code
            sim_.preload_code(sbase, static_cast<std::uint64_t>(sc.block_count) * sc.block_size,
                              1, Level::L2);
            code_flood_ = &sim_.add_agent<IFetchFloodAgent>(1, sc, sbase);
            code_flood_->set_active(false);
        } else {
            Level lv = cfg_.kind == ChannelKind::L2CC ? Level::L2 : Level::L3;
            auto pc = ProbeLoopConfig::for_level(lv, 0);
            auto& probe = sim_.add_agent<ProbeAgent>(0, pc, rbase);
            probe.set_recording(false);
            sim_.preload(lv, rbase, pc.buffer_bytes, 0);
            data_probe_ = &probe;

            // Both data channels jam with the same L2-resident flood: its
            // demand hits keep the access rate high while its prefetches pin
            // the shared fill buffer, which every receiver miss must pass
            // through regardless of which level serves it.
            std::uint64_t sbytes = 128 * 1024;
            sim_.preload(Level::L2, sbase, sbytes, 1);
            data_flood_ = &sim_.add_agent<FloodAgent>(1, sbase, sbytes, 192, 4);
            data_flood_->set_active(false);
            // The L3 receiver's own fills march through the L2 and would
            // slowly evict an idle sender's working set, making bursts start
            // cold after long idle runs; a paced trickle keeps it resident.
            if (lv == Level::L3) data_flood_->set_idle_pace(8);
        }
        if (noise_intensity > 0.0) noise_agent(sim_, 1, noise_intensity);
        // Settle until the receiver's idle latency is stationary; the probe's
        // working set takes a while to reach its steady cache residency.
        double prev = -1.0;
        for (int round = 0; round < 100; ++round) {
            sim_.step(10000);
            double m = take_mean();
            if (round >= 40 && prev >= 0.0 && std::abs(m - prev) <= 0.005 * prev) break;
            prev = m;
        }
    }

    const ChannelConfig& config() const { return cfg_; }
    bool calibrated() const { return calibrated_; }
    double threshold() const {
        if (!calibrated_) throw NotCalibrated("calibrate() has not produced a threshold");
        return threshold_;
    }
    void set_threshold(double t) {
        threshold_ = t;
        calibrated_ = true;
    }

    // Transmits the preamble, recovers the sampling phase that best separates
    // the two symbol clusters (absorbing sender clock skew), and sets the
    // decode threshold to the midpoint of the cluster means.
    double calibrate() {
        constexpr int kPhases = 8;
        const std::uint64_t G = cfg_.bit_interval / kPhases;
        if (G == 0) throw InvalidConfig("bit_interval too small to calibrate");
        // sample the preamble (plus one idle tail bit) at sub-bit granularity
        std::vector<double> fine = run_fine(cfg_.preamble + "0", G, kPhases);
        const size_t n = cfg_.preamble.size();
        double best_sep = -1.0, best_mid = 0.0;
        std::uint64_t best_off = 0;
        for (int p = 0; p < kPhases; ++p) {
            double sum[2] = {0, 0};
            int cnt[2] = {0, 0};
            for (size_t k = 0; k < n; ++k) {
                double m = 0;
                for (int j = 0; j < kPhases; ++j) m += fine[k * kPhases + p + j];
                int b = cfg_.preamble[k] - '0';
                sum[b] += m / kPhases;
                ++cnt[b];
            }
            double m0 = sum[0] / cnt[0], m1 = sum[1] / cnt[1];
            double mid = (m0 + m1) / 2.0;
            double sep = mid > 0 ? std::abs(m1 - m0) / mid : 0.0;
            if (sep > best_sep) {
                best_sep = sep;
                best_mid = mid;
                best_off = static_cast<std::uint64_t>(p) * G;
            }
        }
        if (best_sep < 0.01)
            throw ClustersInseparable(to_string(cfg_.kind) +
                                      ": preamble clusters differ by < 1% at every phase");
        sample_offset_ = best_off;
        set_threshold(best_mid);
        return threshold_;
    }

    // Stages a payload for transmission; receive() clocks it through.
    void stage(const std::string& bits) { staged_ = bits; }
    const std::string& staged() const { return staged_; }

    // Runs the staged payload through the channel and decodes it.
    BitFrame receive() {
        if (!calibrated_) throw NotCalibrated("calibrate() has not produced a threshold");
        BitFrame f;
        f.threshold = threshold_;
        f.mean_latency = run_frame(staged_, sample_offset_);
        for (double m : f.mean_latency) {
            bool one = m > threshold_;  // ties decode as 0
            if (cfg_.invert) one = !one;
            f.bits += one ? '1' : '0';
        }
        return f;
    }

    BitFrame transmit(const std::string& bits) {
        stage(bits);
        return receive();
    }

    Sim& sim() { return sim_; }

private:
    void set_contending(bool on) {
        if (cfg_.invert) on = !on;
        contending_ = on;
        if (data_flood_) data_flood_->set_active(on);
        if (code_flood_) code_flood_->set_active(on);
    }

    double take_mean() {
        return data_probe_ ? data_probe_->take_bucket_mean()
                           : code_probe_->take_bucket_mean();
    }

    std::uint64_t skew_cycles() const {
        const auto I = static_cast<std::int64_t>(cfg_.bit_interval);
        return static_cast<std::uint64_t>(((cfg_.skew % I) + I) % I);
    }

    // Drives both agents through one frame. The sender toggles at
    // k*interval + skew on its own clock; the receiver averages latency over
    // windows [k*interval + offset, (k+1)*interval + offset).
    std::vector<double> run_frame(const std::string& bits, std::uint64_t offset) {
        const std::uint64_t I = cfg_.bit_interval;
        const std::uint64_t s = skew_cycles();
        const std::uint64_t o = offset % I;
        const size_t n = bits.size();

        struct Event {
            std::uint64_t t;
            int type;  // 0 = sample boundary, 1 = sender toggle
            size_t idx;
        };
        std::vector<Event> evs;
        evs.reserve(2 * n + 3);
        for (size_t k = 0; k <= n; ++k) evs.push_back({k * I + o, 0, k});
        for (size_t k = 0; k <= n; ++k) evs.push_back({k * I + s, 1, k});
        std::stable_sort(evs.begin(), evs.end(), [](const Event& a, const Event& b) {
            return a.t != b.t ? a.t < b.t : a.type < b.type;
        });

        std::vector<double> means;
        means.reserve(n);
        std::uint64_t cur = 0;
        for (const Event& e : evs) {
            sim_.step(e.t - cur);
            cur = e.t;
            if (e.type == 0) {
                double m = take_mean();
                if (e.idx >= 1) means.push_back(m);
            } else {
                set_contending(e.idx < n && bits[e.idx] == '1');
            }
        }
        set_contending(false);
        return means;
    }

    // Like run_frame, but samples at sub-bit granularity `grain` (phases per
    // bit) with no offset; used by calibration's phase recovery.
    std::vector<double> run_fine(const std::string& bits, std::uint64_t grain,
                                 int phases) {
        const std::uint64_t I = cfg_.bit_interval;
        const std::uint64_t s = skew_cycles();
        const size_t n = bits.size();
        std::vector<double> fine;
        fine.reserve(n * static_cast<size_t>(phases));
        take_mean();
        size_t next_toggle = 0;
        std::uint64_t cur = 0;
        for (size_t j = 0; j < n * static_cast<size_t>(phases); ++j) {
            std::uint64_t end = (j + 1) * grain;
            while (next_toggle <= n && next_toggle * I + s <= end) {
                std::uint64_t tt = next_toggle * I + s;
                if (tt > cur) { sim_.step(tt - cur); cur = tt; }
                set_contending(next_toggle < n && bits[next_toggle] == '1');
                ++next_toggle;
            }
            if (end > cur) { sim_.step(end - cur); cur = end; }
            fine.push_back(take_mean());
        }
        set_contending(false);
        return fine;
    }

    ChannelConfig cfg_;
    Sim sim_;
    ProbeAgent* data_probe_ = nullptr;
    IFetchProbeAgent* code_probe_ = nullptr;
    FloodAgent* data_flood_ = nullptr;
    IFetchFloodAgent* code_flood_ = nullptr;
    std::string staged_;
    double threshold_ = 0.0;
    std::uint64_t sample_offset_ = 0;
    bool calibrated_ = false;
    bool contending_ = false;
};

// Free-function faces of the protocol steps.
inline double calibrate(CovertChannel& ch) { return ch.calibrate(); }
inline void send(CovertChannel& ch, const std::string& bits) { ch.stage(bits); }
inline BitFrame receive(CovertChannel& ch) { return ch.receive(); }

inline std::string random_bits(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::string bits(n, '0');
    for (auto& c : bits) c = (rng() & 1) ? '1' : '0';
    return bits;
}

inline double bit_error_rate(const std::string& sent, const std::string& decoded) {
    if (sent.empty()) return 0.0;
    std::size_t errs = 0;
    for (std::size_t i = 0; i < sent.size(); ++i)
        if (decoded[i] != sent[i]) ++errs;
    return static_cast<double>(errs) / static_cast<double>(sent.size());
}

// Default interval ladders for speed/error curves. The instruction-fetch
// channel needs longer intervals: its jam has to thrash a 28 KiB code
// footprint before the receiver feels it.
inline std::vector<std::uint64_t> default_sweep_intervals(ChannelKind kind) {
    if (kind == ChannelKind::LiCC)
        return {12000, 10000, 8000, 6400, 5000, 4000, 3600, 3200};
    return {10000, 6000, 4000, 2500, 1600, 1400, 1250, 1100};
}

// Speed/error curve over a descending list of bit intervals: fresh channel
// per point, preamble calibration, then one random frame.
inline std::vector<ChannelMetrics> sweep(ChannelConfig cfg,
                                         const std::vector<std::uint64_t>& intervals,
                                         const MicroarchConfig& base = {},
                                         std::size_t frame_bits = 10000,
                                         double noise_intensity = 0.0,
                                         std::uint64_t seed = 1) {
    std::vector<ChannelMetrics> out;
    for (std::uint64_t interval : intervals) {
        cfg.bit_interval = interval;
        ChannelMetrics m;
        m.bit_interval = interval;
        m.speed_bps = cfg.speed_bps();
        try {
            CovertChannel ch(cfg, base, noise_intensity);
            ch.calibrate();
            std::string sent = random_bits(frame_bits, seed);
            BitFrame frame = ch.transmit(sent);
            m.error_rate = bit_error_rate(sent, frame.bits);
        } catch (const ClustersInseparable&) {
            // channel inoperative at this speed: indistinguishable symbols
            m.error_rate = 0.5;
        }
        m.capacity_bps = capacity(m.speed_bps, m.error_rate);
        out.push_back(m);
    }
    return out;
}

}  // namespace bwsim
