#pragma once

// Experiment runner and result persistence. Each runner executes one suite
// (reveng / covert / attack), writes its outputs under runs/<experiment>-<seed>/
// and returns a RunManifest describing them. Metric CSVs are byte-identical
// across re-runs of the same config and seed; only the manifest timestamp
// varies.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bwsim/covert.hpp"
#include "bwsim/errors.hpp"
#include "bwsim/revent.hpp"
#include "bwsim/sidechan.hpp"

namespace bwsim {

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

inline constexpr const char* kArtifactVersion = "1.0.0";

struct RunManifest {
    std::string experiment;
    std::uint64_t seed = 0;
    std::string artifact_version = kArtifactVersion;
    std::string started_at;              // wall clock; excluded from determinism
    MicroarchConfig config;
    std::filesystem::path run_dir;
    std::vector<std::string> outputs;    // file names relative to run_dir
    nlohmann::json summary;
};

inline nlohmann::json config_to_json(const MicroarchConfig& c) {
    return nlohmann::json{
        {"l1d_size", c.l1d_size},
        {"l1i_size", c.l1i_size},
        {"l2_size", c.l2_size},
        {"l3_size", c.l3_size},
        {"line_size", c.line_size},
        {"assoc_l1d", c.assoc_l1d},
        {"assoc_l1i", c.assoc_l1i},
        {"assoc_l2", c.assoc_l2},
        {"assoc_l3", c.assoc_l3},
        {"lat_l1", c.lat_l1},
        {"lat_l2", c.lat_l2},
        {"lat_l3", c.lat_l3},
        {"lat_mem", c.lat_mem},
        {"lfb_entries", c.lfb_entries},
        {"sq_entries", c.sq_entries},
        {"lfb_mode", to_string(c.lfb_mode)},
        {"sq_mode", to_string(c.sq_mode)},
        {"lfb_drain_cycles", c.lfb_drain_cycles},
        {"sq_drain_cycles", c.sq_drain_cycles},
        {"link_budget", c.link_budget},
        {"l3_link_budget", c.l3_link_budget},
        {"ifetch_link_budget", c.ifetch_link_budget},
        {"prefetch_next_line", c.prefetchers.next_line},
        {"prefetch_stride", c.prefetchers.stride},
        {"prefetch_adjacent_line", c.prefetchers.adjacent_line},
        {"prefetch_stream", c.prefetchers.stream},
        {"prefetch_disruption", c.prefetch_disruption},
        {"issue_width", c.issue_width},
        {"lookup_ports", c.lookup_ports},
        {"clock_ghz", c.clock_ghz},
        {"seed", c.seed},
    };
}

namespace detail {

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << body;
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline RunManifest new_manifest(const std::string& experiment, const MicroarchConfig& cfg,
                                const std::filesystem::path& out_root) {
    RunManifest m;
    m.experiment = experiment;
    m.seed = cfg.seed;
    m.config = cfg;
    m.started_at = iso_timestamp();
    m.run_dir = out_root / (experiment + "-" + std::to_string(cfg.seed));
    std::error_code ec;
    std::filesystem::create_directories(m.run_dir, ec);
    if (ec) throw IoError("cannot create '" + m.run_dir.string() + "': " + ec.message());
    return m;
}

inline void add_output(RunManifest& m, const std::string& name, const std::string& body) {
    write_file(m.run_dir / name, body);
    m.outputs.push_back(name);
}

// numbers in metric files use a fixed precision so re-runs are byte-identical
inline std::string num(double v, int precision = 6) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(precision) << v;
    return out.str();
}

}  // namespace detail

// Writes manifest.json (always the last artifact, so it can list the others).
inline void write_manifest(RunManifest& m) {
    m.outputs.push_back("manifest.json");
    nlohmann::json j{
        {"experiment", m.experiment},
        {"seed", m.seed},
        {"artifact_version", m.artifact_version},
        {"started_at", m.started_at},
        {"config", config_to_json(m.config)},
        {"outputs", m.outputs},
        {"summary", m.summary},
    };
    detail::write_file(m.run_dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// suite runners
// ---------------------------------------------------------------------------

inline RunManifest run_reveng_lfb(const MicroarchConfig& cfg,
                                  const std::filesystem::path& out_root = "runs") {
    RunManifest m = detail::new_manifest("reveng-lfb", cfg, out_root);
    KneeScan scan = scan_lfb_knee(cfg);
    unsigned detected = detect_lfb_entries(cfg);

    std::string csv = "outstanding,saturation_events\n";
    for (std::size_t i = 0; i < scan.saturation_events.size(); ++i)
        csv += std::to_string(scan.sweep_min + i) + "," +
               std::to_string(scan.saturation_events[i]) + "\n";
    detail::add_output(m, "metrics.csv", csv);

    m.summary = {{"detected_entries", detected}, {"knee_at", scan.knee_index}};
    write_manifest(m);
    return m;
}

inline RunManifest run_reveng_scenario(ScenarioId id, const MicroarchConfig& cfg,
                                       const std::filesystem::path& out_root = "runs") {
    RunManifest m = detail::new_manifest("reveng-scenario-" + to_string(id), cfg, out_root);
    ContentionReport r = run_contention_scenario(id, cfg);

    std::string csv = "scenario,mean_iteration_latency," + CycleStats::csv_header() + "\n";
    csv += to_string(id) + "," + detail::num(r.mean_iteration_latency) + "," +
           r.stats.csv_row() + "\n";
    detail::add_output(m, "metrics.csv", csv);

    m.summary = {{"scenario", to_string(id)},
                 {"mean_iteration_latency", r.mean_iteration_latency}};
    write_manifest(m);
    return m;
}

inline RunManifest run_reveng_orderings(const MicroarchConfig& cfg,
                                        const std::filesystem::path& out_root = "runs") {
    RunManifest m = detail::new_manifest("reveng-orderings", cfg, out_root);
    OrderingVerdict v = check_orderings(cfg);

    std::string csv = "relation,lhs_latency,rhs_latency,applicable,pass\n";
    for (const auto& r : v.relations)
        csv += r.name + "," + detail::num(r.lhs) + "," + detail::num(r.rhs) + "," +
               (r.applicable ? "1" : "0") + "," + (r.pass ? "1" : "0") + "\n";
    detail::add_output(m, "metrics.csv", csv);

    std::string trace = "scenario,mean_iteration_latency\n";
    for (const auto& r : v.reports)
        trace += to_string(r.id) + "," + detail::num(r.mean_iteration_latency) + "\n";
    detail::add_output(m, "trace.csv", trace);

    m.summary = {{"margin", v.margin}, {"all_pass", v.all_pass()}};
    write_manifest(m);
    return m;
}

inline RunManifest run_covert_transmit(const ChannelConfig& ch, std::size_t frame_bits,
                                       double noise, const MicroarchConfig& cfg,
                                       const std::filesystem::path& out_root = "runs") {
    RunManifest m =
        detail::new_manifest("covert-" + to_string(ch.kind) + "-run", cfg, out_root);
    CovertChannel channel(ch, cfg, noise);
    channel.calibrate();
    std::string sent = random_bits(frame_bits, cfg.seed);
    BitFrame frame = channel.transmit(sent);
    double e = bit_error_rate(sent, frame.bits);

    ChannelMetrics metrics;
    metrics.bit_interval = ch.bit_interval;
    metrics.speed_bps = ch.speed_bps();
    metrics.error_rate = e;
    metrics.capacity_bps = capacity(metrics.speed_bps, e);

    std::string csv = "interval,speed_bps,error_rate,capacity_bps\n";
    csv += std::to_string(metrics.bit_interval) + "," + detail::num(metrics.speed_bps) +
           "," + detail::num(metrics.error_rate) + "," +
           detail::num(metrics.capacity_bps) + "\n";
    detail::add_output(m, "metrics.csv", csv);

    std::string trace = "bit_index,sent,received,mean_latency\n";
    for (std::size_t i = 0; i < frame.bits.size(); ++i)
        trace += std::to_string(i) + "," + sent[i] + std::string(",") + frame.bits[i] +
                 "," + detail::num(frame.mean_latency[i]) + "\n";
    detail::add_output(m, "trace.csv", trace);

    m.summary = {{"kind", to_string(ch.kind)},
                 {"bits", frame_bits},
                 {"error_rate", e},
                 {"threshold", frame.threshold},
                 {"capacity_bps", metrics.capacity_bps}};
    write_manifest(m);
    return m;
}

inline RunManifest run_covert_sweep(ChannelConfig ch, std::vector<std::uint64_t> intervals,
                                    std::size_t frame_bits, double noise,
                                    const MicroarchConfig& cfg,
                                    const std::filesystem::path& out_root = "runs") {
    RunManifest m =
        detail::new_manifest("covert-" + to_string(ch.kind) + "-sweep", cfg, out_root);
    if (intervals.empty()) intervals = default_sweep_intervals(ch.kind);
    auto metrics = sweep(ch, intervals, cfg, frame_bits, noise, cfg.seed);

    std::string csv = "interval,speed_bps,error_rate,capacity_bps\n";
    double best = 0.0;
    for (const ChannelMetrics& p : metrics) {
        csv += std::to_string(p.bit_interval) + "," + detail::num(p.speed_bps) + "," +
               detail::num(p.error_rate) + "," + detail::num(p.capacity_bps) + "\n";
        best = std::max(best, p.capacity_bps);
    }
    detail::add_output(m, "metrics.csv", csv);

    m.summary = {{"kind", to_string(ch.kind)},
                 {"points", metrics.size()},
                 {"noise", noise},
                 {"best_capacity_bps", best}};
    write_manifest(m);
    return m;
}

inline RunManifest run_attack_key(VictimKind kind, AttackChannel channel,
                                  const std::string& key, int trials,
                                  const KeyRecoveryOptions& opt, const MicroarchConfig& cfg,
                                  const std::filesystem::path& out_root = "runs") {
    std::string name = std::string("attack-") +
                       (kind == VictimKind::Rsa ? "rsa" : "eddsa") + "-" +
                       to_string(channel);
    RunManifest m = detail::new_manifest(name, cfg, out_root);
    KeyRecoveryReport report = run_key_recovery(kind, channel, key, trials, opt);

    std::string csv = "trial,bit_index,truth,guess,score\n";
    for (std::size_t t = 0; t < report.trials.size(); ++t) {
        const KeyGuess& g = report.trials[t];
        for (std::size_t b = 0; b < g.bits.size(); ++b)
            csv += std::to_string(t) + "," + std::to_string(b) + "," + key[b] +
                   std::string(",") + g.bits[b] + "," + detail::num(g.scores[b]) + "\n";
    }
    detail::add_output(m, "metrics.csv", csv);

    m.summary = {{"victim", kind == VictimKind::Rsa ? "rsa" : "eddsa"},
                 {"channel", to_string(channel)},
                 {"key_bits", key.size()},
                 {"trials", trials},
                 {"noise", opt.noise},
                 {"mean_accuracy", report.mean_accuracy}};
    write_manifest(m);
    return m;
}

inline RunManifest run_attack_spectre(GadgetKind kind, int runs, const SpectreOptions& opt,
                                      const MicroarchConfig& cfg,
                                      const std::filesystem::path& out_root = "runs") {
    RunManifest m = detail::new_manifest("attack-" + to_string(kind), cfg, out_root);
    SeparationReport rep = spectre_distributions(kind, runs, opt);

    std::string csv = "run,secret,mean_latency\n";
    for (std::size_t r = 0; r < rep.secret0.size(); ++r)
        csv += std::to_string(r) + ",0," + detail::num(rep.secret0[r]) + "\n";
    for (std::size_t r = 0; r < rep.secret1.size(); ++r)
        csv += std::to_string(r) + ",1," + detail::num(rep.secret1[r]) + "\n";
    detail::add_output(m, "metrics.csv", csv);

    m.summary = {{"gadget", to_string(kind)},
                 {"trained", opt.trained},
                 {"runs", runs},
                 {"mean0", rep.mean0},
                 {"mean1", rep.mean1},
                 {"var0", rep.var0},
                 {"var1", rep.var1},
                 {"standardized_mean_difference", rep.smd}};
    write_manifest(m);
    return m;
}

}  // namespace bwsim
