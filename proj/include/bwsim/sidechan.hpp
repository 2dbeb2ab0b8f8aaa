#pragma once

// Side-channel attacks built on bandwidth contention: an attacker thread
// times its own cache walks while a victim on the sibling thread executes
// key-dependent fetch bursts (square-and-multiply style), or while a
// speculation gadget issues secret-dependent loads that are later squashed.
// Key bits are recovered by segmenting the attacker's latency trace into
// per-bit windows and matching each window against calibrated templates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bwsim/agents.hpp"
#include "bwsim/errors.hpp"
#include "bwsim/sim.hpp"

namespace bwsim {

// ---------------------------------------------------------------------------
// attack channel selection
// ---------------------------------------------------------------------------

enum class AttackChannel { L2, IFetch };

inline std::string to_string(AttackChannel c) {
    return c == AttackChannel::L2 ? "l2" : "li";
}

inline AttackChannel parse_attack_channel(const std::string& name) {
    if (name == "l2") return AttackChannel::L2;
    if (name == "li") return AttackChannel::IFetch;
    throw DomainError("unknown attack channel '" + name + "'");
}

inline VictimModel make_victim(VictimKind kind, const std::string& key) {
    VictimModel m;
    m.kind = kind;
    m.key_bits = key;
    if (kind == VictimKind::Eddsa) {
        // smaller per-point footprints than the modular-exponentiation model:
        // shorter bursts, weaker contention signature
        m.f1 = {2 * 1024, 4 * 1024};
        m.f2 = {2 * 1024, 4 * 1024};
    }
    return m;
}

// ---------------------------------------------------------------------------
// trace collection
// ---------------------------------------------------------------------------

struct VictimRunSpec {
    VictimModel model;
    std::uint64_t bit_period = 6000;   // cycles per key bit
    bool flush_between_bits = true;    // context-switch model: on-core caches cold per bit
    double noise = 0.0;                // background load on the attacker's thread
    bool victim_present = true;        // absent: attacker measures an idle sibling
};

struct AttackTrace {
    LatencyTrace trace;                 // attacker samples over the victim run
    std::vector<BitWindow> schedule;    // ground-truth burst boundaries
    AttackChannel channel = AttackChannel::L2;
    std::uint64_t seed = 0;
};

namespace detail {

constexpr unsigned kIFetchProbeBlocks = 448;  // 28 KiB; victim code evicts part of it

struct AttackProbe {
    ProbeAgent* data = nullptr;
    IFetchProbeAgent* code = nullptr;

    const LatencyTrace& trace() const { return data ? data->trace() : code->trace(); }
};

inline AttackProbe add_attack_probe(Sim& sim, int core, AttackChannel ch) {
    AttackProbe p;
    if (ch == AttackChannel::L2) {
        auto cfg = ProbeLoopConfig::for_level(Level::L2, 0);  // endless
        Addr base = core_region(core, 0);
        p.data = &sim.add_agent<ProbeAgent>(core, cfg, base);
        p.data->set_warmup_passes(1);
        sim.preload(Level::L2, base, cfg.buffer_bytes, core);
    } else {
        IFetchLoopConfig cfg;
        cfg.block_count = kIFetchProbeBlocks;
        cfg.passes = 0;  // endless
        Addr base = core_region(core, 7);
        p.code = &sim.add_agent<IFetchProbeAgent>(core, cfg, base);
        p.code->set_warmup_passes(1);
        sim.preload_code(base, static_cast<std::uint64_t>(cfg.block_count) * cfg.block_size,
                         core, Level::L2);
    }
    return p;
}

}  // namespace detail

// Runs the victim (core 0) and the attacker probe (core 1) concurrently and
// returns the attacker's trace together with the victim's burst schedule.
inline AttackTrace collect_trace(Sim& sim, const VictimRunSpec& spec, AttackChannel ch) {
    spec.model.validate();
    detail::AttackProbe probe = detail::add_attack_probe(sim, 1, ch);
    if (spec.noise > 0.0) sim.add_agent<NoiseAgent>(1, spec.noise);
    sim.step(8192);  // attacker warm-up: one full measurement pass recorded

    AttackTrace out;
    out.channel = ch;
    out.seed = sim.config().seed;
    if (spec.victim_present) {
        auto& victim = sim.add_agent<VictimAgent>(0, spec.model, spec.bit_period,
                                                  spec.flush_between_bits);
        victim.install_off_core(sim);
        if (spec.model.cold) sim.flush_owner_on_core(0);
        while (!victim.done()) sim.step(1024);
        out.schedule = victim.schedule();
    } else {
        // idle sibling: synthesize the schedule the victim would have had so
        // the segmentation still yields one window per key bit
        Cycle t = sim.now();
        for (std::size_t i = 0; i < spec.model.key_bits.size(); ++i) {
            BitWindow w;
            w.bit_index = static_cast<int>(i);
            w.start = t + static_cast<Cycle>(i) * spec.bit_period;
            w.end = w.start + spec.bit_period;
            w.f1_start = w.start;
            w.f1_end = w.start;
            out.schedule.push_back(w);
        }
        while (sim.now() < out.schedule.back().end) sim.step(1024);
    }
    out.trace = probe.trace();
    return out;
}

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

struct BitSamples {
    int bit_index = 0;
    Cycle start = 0, end = 0;
    std::vector<LatencySample> samples;
};

inline std::vector<BitSamples> segment_trace(const LatencyTrace& trace,
                                             const std::vector<BitWindow>& schedule) {
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (schedule[i].start < schedule[i - 1].end)
            throw AlignmentFailed("bit windows overlap");
    std::vector<BitSamples> out;
    out.reserve(schedule.size());
    for (const BitWindow& w : schedule) {
        BitSamples b;
        b.bit_index = w.bit_index;
        b.start = w.start;
        b.end = w.end;
        for (const LatencySample& s : trace.samples)
            if (s.cycle >= w.start && s.cycle < w.end) b.samples.push_back(s);
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// template classifier
// ---------------------------------------------------------------------------

// Centered-template correlation over a fixed number of time bins per window.
// Centering makes classification invariant to a constant latency offset.
class BitClassifier {
public:
    static constexpr int kBins = 32;
    using Profile = std::array<double, kBins>;

    static Profile profile_of(const BitSamples& w) {
        Profile sum{};
        std::array<std::uint32_t, kBins> cnt{};
        double total = 0.0;
        const double span = w.end > w.start ? static_cast<double>(w.end - w.start) : 1.0;
        for (const LatencySample& s : w.samples) {
            auto bin = static_cast<int>(static_cast<double>(s.cycle - w.start) / span * kBins);
            bin = std::clamp(bin, 0, kBins - 1);
            sum[bin] += s.latency;
            ++cnt[bin];
            total += s.latency;
        }
        const double overall =
            w.samples.empty() ? 0.0 : total / static_cast<double>(w.samples.size());
        Profile p;
        for (int i = 0; i < kBins; ++i)
            p[i] = cnt[i] ? sum[i] / cnt[i] : overall;  // empty bins carry no deviation
        double mean = 0.0;
        for (double v : p) mean += v;
        mean /= kBins;
        for (double& v : p) v -= mean;
        return p;
    }

    void fit(const std::vector<BitSamples>& zeros, const std::vector<BitSamples>& ones) {
        if (zeros.empty() || ones.empty())
            throw Uncalibrated("need labeled windows for both bit values");
        template0_ = mean_profile(zeros);
        template1_ = mean_profile(ones);
        calibrated_ = true;
    }

    bool calibrated() const { return calibrated_; }

    // Returns (bit, score); score is the correlation margin, ties decode 0.
    std::pair<int, double> classify(const BitSamples& w) const {
        if (!calibrated_) throw Uncalibrated("classifier has no templates");
        Profile p = profile_of(w);
        const double score = dot(p, template1_) - dot(p, template0_);
        return {score > 0.0 ? 1 : 0, score};
    }

private:
    static Profile mean_profile(const std::vector<BitSamples>& windows) {
        Profile acc{};
        for (const BitSamples& w : windows) {
            Profile p = profile_of(w);
            for (int i = 0; i < kBins; ++i) acc[i] += p[i];
        }
        for (double& v : acc) v /= static_cast<double>(windows.size());
        return acc;
    }

    static double dot(const Profile& a, const Profile& b) {
        double s = 0.0;
        for (int i = 0; i < kBins; ++i) s += a[i] * b[i];
        return s;
    }

    Profile template0_{};
    Profile template1_{};
    bool calibrated_ = false;
};

inline std::pair<int, double> classify_bit(const BitClassifier& clf, const BitSamples& w) {
    return clf.classify(w);
}

// ---------------------------------------------------------------------------
// key recovery
// ---------------------------------------------------------------------------

struct KeyGuess {
    std::string bits;            // recovered key, MSB first
    std::vector<double> scores;  // per-bit classifier margin
    double accuracy = 0.0;       // fraction of bits matching ground truth
};

struct KeyRecoveryOptions {
    double noise = 0.0;
    std::uint64_t seed = 1;
    std::uint64_t bit_period = 6000;
    bool victim_present = true;
    unsigned jobs = 1;  // trials are independent sims; results indexed by trial
    std::string training_key = "0101101001011010";  // balanced calibration key
};

struct KeyRecoveryReport {
    VictimKind kind = VictimKind::Rsa;
    AttackChannel channel = AttackChannel::L2;
    std::vector<KeyGuess> trials;
    double mean_accuracy = 0.0;
};

inline std::string random_key(std::size_t bits, std::uint64_t seed) {
    if (bits == 0) throw InvalidConfig("key length must be >= 1");
    std::mt19937_64 rng(seed);
    std::string k;
    k.reserve(bits);
    for (std::size_t i = 0; i < bits; ++i) k += (rng() & 1) ? '1' : '0';
    return k;
}

namespace detail {

inline AttackTrace collect_one(VictimKind kind, AttackChannel ch, const std::string& key,
                               const KeyRecoveryOptions& opt, std::uint64_t seed,
                               bool victim_present) {
    MicroarchConfig mc;
    mc.seed = seed;
    Sim sim(mc);
    VictimRunSpec spec;
    spec.model = make_victim(kind, key);
    spec.bit_period = opt.bit_period;
    spec.noise = opt.noise;
    spec.victim_present = victim_present;
    return collect_trace(sim, spec, ch);
}

// Runs fn(i) for i in [0, n) across `jobs` threads; fn writes only to its
// own index, so the result is identical for any job count.
template <typename Fn>
inline void parallel_for(int n, unsigned jobs, Fn fn) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < jobs; ++w)
        pool.emplace_back([=] {
            for (int i = static_cast<int>(w); i < n; i += static_cast<int>(jobs)) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline BitClassifier train_classifier(VictimKind kind, AttackChannel ch,
                                      const KeyRecoveryOptions& opt) {
    AttackTrace run =
        collect_one(kind, ch, opt.training_key, opt, opt.seed * 7919 + 13, true);
    auto windows = segment_trace(run.trace, run.schedule);
    std::vector<BitSamples> zeros, ones;
    for (const BitSamples& w : windows) {
        if (opt.training_key[static_cast<std::size_t>(w.bit_index)] == '1')
            ones.push_back(w);
        else
            zeros.push_back(w);
    }
    BitClassifier clf;
    clf.fit(zeros, ones);
    return clf;
}

}  // namespace detail

inline KeyRecoveryReport run_key_recovery(VictimKind kind, AttackChannel ch,
                                          const std::string& key, int trials,
                                          const KeyRecoveryOptions& opt = {}) {
    if (trials < 1) throw InvalidConfig("key recovery needs >= 1 trial");
    VictimModel check = make_victim(kind, key);
    check.validate();

    BitClassifier clf = detail::train_classifier(kind, ch, opt);

    KeyRecoveryReport report;
    report.kind = kind;
    report.channel = ch;
    report.trials.resize(static_cast<std::size_t>(trials));
    detail::parallel_for(trials, opt.jobs, [&](int t) {
        AttackTrace run = detail::collect_one(kind, ch, key, opt,
                                              opt.seed + 1000003ULL * (t + 1),
                                              opt.victim_present);
        auto windows = segment_trace(run.trace, run.schedule);
        KeyGuess guess;
        unsigned correct = 0;
        for (const BitSamples& w : windows) {
            auto [bit, score] = clf.classify(w);
            guess.bits += bit ? '1' : '0';
            guess.scores.push_back(score);
            if ((key[static_cast<std::size_t>(w.bit_index)] == '1') == (bit == 1))
                ++correct;
        }
        guess.accuracy = static_cast<double>(correct) / static_cast<double>(key.size());
        report.trials[static_cast<std::size_t>(t)] = std::move(guess);
    });
    double acc_sum = 0.0;
    for (const KeyGuess& g : report.trials) acc_sum += g.accuracy;
    report.mean_accuracy = acc_sum / trials;
    return report;
}

// ---------------------------------------------------------------------------
// speculation gadgets: distribution separation
// ---------------------------------------------------------------------------

struct SeparationReport {
    GadgetKind kind = GadgetKind::SpectreV1;
    bool trained = true;
    std::vector<double> secret0;  // per-run attacker mean latency, secret = 0
    std::vector<double> secret1;
    double mean0 = 0.0, mean1 = 0.0;
    double var0 = 0.0, var1 = 0.0;
    double smd = 0.0;  // standardized mean difference
};

inline GadgetKind parse_gadget_kind(const std::string& name) {
    if (name == "v1") return GadgetKind::SpectreV1;
    if (name == "v2") return GadgetKind::SpectreV2;
    if (name == "bp") return GadgetKind::BpTiming;
    throw DomainError("unknown gadget kind '" + name + "'");
}

inline std::string to_string(GadgetKind k) {
    switch (k) {
        case GadgetKind::SpectreV1: return "spectre_v1";
        case GadgetKind::SpectreV2: return "spectre_v2";
        default: return "bp_timing";
    }
}

struct SpectreOptions {
    bool trained = true;
    std::uint64_t seed = 1;
    unsigned invocations = 24;
    std::uint64_t period = 1200;
    unsigned jobs = 1;  // runs are independent sims; results indexed by run
};

namespace detail {

inline double gadget_run_mean(GadgetKind kind, bool secret, const SpectreOptions& opt,
                              std::uint64_t seed, std::uint64_t jitter) {
    MicroarchConfig mc;
    mc.seed = seed;
    Sim sim(mc);
    AttackProbe probe = add_attack_probe(sim, 1, AttackChannel::L2);
    sim.step(4096 + jitter);  // warm-up plus per-run phase jitter

    SpeculationState spec;
    if (opt.trained) train_branch(spec, 0, /*taken=*/true, 4);
    auto& gadget = sim.add_agent<GadgetAgent>(0, kind, secret, spec, opt.invocations,
                                              opt.period, /*retrain=*/opt.trained);
    gadget.install_regions(sim);
    Cycle t0 = sim.now();
    while (!gadget.done()) sim.step(256);
    return probe.trace().mean_in(t0, sim.now());
}

}  // namespace detail

inline SeparationReport spectre_distributions(GadgetKind kind, int runs,
                                              const SpectreOptions& opt = {}) {
    if (runs < 100) throw InvalidConfig("spectre_distributions needs >= 100 runs per secret");
    SeparationReport rep;
    rep.kind = kind;
    rep.trained = opt.trained;
    rep.secret0.resize(static_cast<std::size_t>(runs));
    rep.secret1.resize(static_cast<std::size_t>(runs));
    detail::parallel_for(runs, opt.jobs, [&](int r) {
        std::uint64_t seed = opt.seed + 31ULL * (r + 1);
        std::uint64_t jitter = std::mt19937_64(seed)() % 512;
        rep.secret0[static_cast<std::size_t>(r)] =
            detail::gadget_run_mean(kind, false, opt, seed, jitter);
        rep.secret1[static_cast<std::size_t>(r)] =
            detail::gadget_run_mean(kind, true, opt, seed, jitter);
    });
    auto stats = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s2 = 0.0;
        for (double x : v) s2 += (x - m) * (x - m);
        s2 /= static_cast<double>(v.size() > 1 ? v.size() - 1 : 1);
        return std::pair{m, s2};
    };
    std::tie(rep.mean0, rep.var0) = stats(rep.secret0);
    std::tie(rep.mean1, rep.var1) = stats(rep.secret1);
    const double pooled = std::sqrt((rep.var0 + rep.var1) / 2.0);
    const double diff = rep.mean1 - rep.mean0;
    rep.smd = pooled > 1e-12 ? diff / pooled : (diff == 0.0 ? 0.0 : diff / 1e-12);
    return rep;
}

}  // namespace bwsim
