#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bwsim/io.hpp"

using namespace bwsim;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("bwsim-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("lfb run detects 12 entries and lists every output") {
    TempDir tmp;
    MicroarchConfig cfg;
    RunManifest m = run_reveng_lfb(cfg, tmp.path);
    CHECK(m.summary.at("detected_entries") == 12);
    CHECK(m.run_dir == tmp.path / "reveng-lfb-1");

    // every output is listed; no orphans in the run directory
    auto listed = m.outputs;
    std::vector<std::string> on_disk;
    for (const auto& e : fs::directory_iterator(m.run_dir))
        on_disk.push_back(e.path().filename().string());
    std::sort(listed.begin(), listed.end());
    std::sort(on_disk.begin(), on_disk.end());
    CHECK(listed == on_disk);

    // manifest round-trips as JSON and mirrors the summary
    auto j = nlohmann::json::parse(slurp(m.run_dir / "manifest.json"));
    CHECK(j.at("experiment") == "reveng-lfb");
    CHECK(j.at("seed") == 1);
    CHECK(j.at("artifact_version") == kArtifactVersion);
    CHECK(j.at("summary").at("detected_entries") == 12);
    CHECK(j.at("config").at("lfb_entries") == 12);

    // metrics.csv has the documented header and one row per sweep point
    std::string csv = slurp(m.run_dir / "metrics.csv");
    CHECK(csv.rfind("outstanding,saturation_events\n", 0) == 0);
}

TEST_CASE("re-running the same config and seed gives byte-identical metrics") {
    TempDir a, b;
    MicroarchConfig cfg;
    cfg.seed = 17;
    ChannelConfig ch;
    ch.kind = ChannelKind::L2CC;
    RunManifest ma = run_covert_transmit(ch, 200, 0.0, cfg, a.path);
    RunManifest mb = run_covert_transmit(ch, 200, 0.0, cfg, b.path);
    CHECK(slurp(ma.run_dir / "metrics.csv") == slurp(mb.run_dir / "metrics.csv"));
    CHECK(slurp(ma.run_dir / "trace.csv") == slurp(mb.run_dir / "trace.csv"));
    CHECK(ma.summary == mb.summary);
}

TEST_CASE("scenario run emits a single table row") {
    TempDir tmp;
    MicroarchConfig cfg;
    RunManifest m = run_reveng_scenario(ScenarioId::A2, cfg, tmp.path);
    std::string csv = slurp(m.run_dir / "metrics.csv");
    std::string header = "scenario,mean_iteration_latency," + CycleStats::csv_header();
    CHECK(csv.rfind(header + "\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row
    CHECK(csv.find("A2,") != std::string::npos);
    CHECK(m.summary.at("mean_iteration_latency").get<double>() > 0.0);
}

TEST_CASE("covert sweep emits the documented column order") {
    TempDir tmp;
    MicroarchConfig cfg;
    ChannelConfig ch;
    ch.kind = ChannelKind::L2CC;
    RunManifest m = run_covert_sweep(ch, {10000, 6000}, 100, 0.0, cfg, tmp.path);
    std::string csv = slurp(m.run_dir / "metrics.csv");
    CHECK(csv.rfind("interval,speed_bps,error_rate,capacity_bps\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(m.summary.at("points") == 2);
    CHECK(m.summary.at("best_capacity_bps").get<double>() > 0.0);
}

TEST_CASE("attack runs emit per-trial rows and a summary statistic") {
    TempDir tmp;
    MicroarchConfig cfg;
    KeyRecoveryOptions opt;
    RunManifest m = run_attack_key(VictimKind::Rsa, AttackChannel::L2, "1010", 2, opt,
                                   cfg, tmp.path);
    std::string csv = slurp(m.run_dir / "metrics.csv");
    CHECK(csv.rfind("trial,bit_index,truth,guess,score\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4);  // 2 trials x 4 bits
    CHECK(m.summary.at("mean_accuracy") == 1.0);

    RunManifest s = run_attack_spectre(GadgetKind::SpectreV1, 100, SpectreOptions{}, cfg,
                                       tmp.path);
    CHECK(s.summary.at("standardized_mean_difference").get<double>() >= 2.0);
    CHECK(s.summary.contains("mean0"));
    CHECK(s.summary.contains("var1"));
    std::string scsv = slurp(s.run_dir / "metrics.csv");
    CHECK(scsv.rfind("run,secret,mean_latency\n", 0) == 0);
    CHECK(std::count(scsv.begin(), scsv.end(), '\n') == 1 + 200);
}

TEST_CASE("worker-pool results are identical to serial results") {
    TempDir a, b;
    MicroarchConfig cfg;
    SpectreOptions serial, pooled;
    pooled.jobs = 4;
    RunManifest ma = run_attack_spectre(GadgetKind::BpTiming, 100, serial, cfg, a.path);
    RunManifest mb = run_attack_spectre(GadgetKind::BpTiming, 100, pooled, cfg, b.path);
    CHECK(slurp(ma.run_dir / "metrics.csv") == slurp(mb.run_dir / "metrics.csv"));
}

TEST_CASE("io failures surface as IoError") {
    MicroarchConfig cfg;
    CHECK_THROWS_AS(run_reveng_lfb(cfg, "/proc/nope"), IoError);
}
