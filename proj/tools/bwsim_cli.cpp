// Experiment runner: binds config files to the reverse-engineering, covert
// channel and attack suites, and persists reproducible results under
// runs/<experiment>-<seed>/.
//
// Global flags (env override prefix BWSIM_, e.g. BWSIM_SEED=7):
//   --config PATH   key = value microarchitecture profile
//   --seed N        overrides the config seed
//   --out DIR       output root (default ./runs)
//   --jobs N        worker threads for independent trials/runs
//
// Exit status: 0 on success; 1 on any configuration, I/O or suite error,
// and when the ordering verdict fails.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bwsim/io.hpp"

namespace {

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    return s;
}

bwsim::ChannelKind channel_kind_arg(const std::string& name) {
    // accept l2cc / L2CC / l2 spellings
    std::string n = upper(name);
    if (n == "L2") n = "L2CC";
    if (n == "L3") n = "L3CC";
    if (n == "LI" || n == "LICC") n = "LiCC";
    return bwsim::parse_channel_kind(n);
}

// --key accepts a hex literal ("a3f...") or "random:N"
std::string key_arg(const std::string& key, std::uint64_t seed) {
    if (key.rfind("random:", 0) == 0) {
        std::size_t bits = std::stoull(key.substr(7));
        return bwsim::random_key(bits, seed);
    }
    std::string out;
    for (char c : key) {
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else throw bwsim::InvalidConfig("key must be hex or 'random:N'");
        for (int b = 3; b >= 0; --b) out += (v >> b) & 1 ? '1' : '0';
    }
    return out;
}

void print_summary(const bwsim::RunManifest& m) {
    std::cout << m.experiment << ": wrote " << (m.run_dir / "manifest.json").string()
              << "\n"
              << m.summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cache-bandwidth contention experiment runner"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_dir = "runs";
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned jobs = 1;
    app.add_option("--config", config_path, "microarchitecture profile (key = value)")
        ->envname("BWSIM_CONFIG");
    app.add_option("--seed", seed, "seed override")
        ->envname("BWSIM_SEED")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out_dir, "output root directory")->envname("BWSIM_OUT");
    app.add_option("--jobs", jobs, "worker threads for independent trials")
        ->envname("BWSIM_JOBS")
        ->check(CLI::Range(1u, 256u));

    // reveng ----------------------------------------------------------------
    auto* reveng = app.add_subcommand("reveng", "reverse-engineering experiments");
    reveng->require_subcommand(1);
    reveng->add_subcommand("lfb", "detect the LFB entry count from the saturation knee");
    auto* scenario = reveng->add_subcommand("scenario", "run one catalog scenario");
    std::string scenario_name;
    scenario->add_option("name", scenario_name, "scenario id (A1..C4)")->required();
    reveng->add_subcommand("orderings", "check the full contention-ordering catalog");

    // covert ----------------------------------------------------------------
    auto* covert = app.add_subcommand("covert", "covert-channel experiments");
    covert->require_subcommand(1);
    std::string channel_name = "L2CC";
    std::uint64_t interval = 10000;
    std::size_t bits = 10000;
    double noise = 0.0;
    std::int64_t skew = 0;
    bool invert = false;
    std::vector<std::uint64_t> intervals;
    auto* crun = covert->add_subcommand("run", "one calibrated frame round trip");
    auto* csweep = covert->add_subcommand("sweep", "speed/error/capacity sweep");
    for (CLI::App* sub : {crun, csweep}) {
        sub->add_option("--channel", channel_name, "L2CC | L3CC | LiCC");
        sub->add_option("--bits", bits, "payload bits per frame");
        sub->add_option("--noise", noise, "noise intensity on the receiver core");
    }
    crun->add_option("--interval", interval, "cycles per bit");
    crun->add_option("--skew", skew, "sender/receiver clock skew, cycles");
    crun->add_flag("--invert", invert, "contend on 0 instead of 1");
    csweep->add_option("--intervals", intervals,
                       "bit intervals to sweep (default: per-channel ladder)");

    // attack ----------------------------------------------------------------
    auto* attack = app.add_subcommand("attack", "side-channel attacks");
    attack->require_subcommand(1);
    std::string atk_channel = "l2", key = "random:64", gadget = "v1";
    int trials = 100, runs = 100;
    double atk_noise = 0.0;
    bool untrained = false;
    auto* rsa = attack->add_subcommand("rsa", "RSA key-bit recovery");
    auto* eddsa = attack->add_subcommand("eddsa", "EdDSA key-bit recovery");
    for (CLI::App* sub : {rsa, eddsa}) {
        sub->add_option("--channel", atk_channel, "l2 | li")
            ->check(CLI::IsMember({"l2", "li"}));
        sub->add_option("--key", key, "hex key or random:N");
        sub->add_option("--trials", trials, "independent runs")->check(CLI::PositiveNumber);
        sub->add_option("--noise", atk_noise, "noise intensity on the attacker core");
    }
    auto* spectre = attack->add_subcommand("spectre", "speculation-gadget distributions");
    spectre->add_option("--kind", gadget, "v1 | v2 | bp")
        ->check(CLI::IsMember({"v1", "v2", "bp"}));
    spectre->add_option("--runs", runs, "runs per secret value")->check(CLI::PositiveNumber);
    spectre->add_flag("--untrained", untrained, "leave the branch predictor untrained");

    CLI11_PARSE(app, argc, argv);

    try {
        bwsim::MicroarchConfig cfg;
        if (!config_path.empty()) cfg = bwsim::MicroarchConfig::from_file(config_path);
        if (seed_set) cfg.seed = seed;
        cfg.validate();

        bwsim::RunManifest manifest;
        if (reveng->parsed()) {
            if (reveng->get_subcommand("lfb")->parsed()) {
                manifest = bwsim::run_reveng_lfb(cfg, out_dir);
            } else if (scenario->parsed()) {
                manifest = bwsim::run_reveng_scenario(bwsim::parse_scenario(scenario_name),
                                                      cfg, out_dir);
            } else {
                manifest = bwsim::run_reveng_orderings(cfg, out_dir);
                print_summary(manifest);
                return manifest.summary.at("all_pass").get<bool>() ? 0 : 1;
            }
        } else if (covert->parsed()) {
            bwsim::ChannelConfig ch;
            ch.kind = channel_kind_arg(channel_name);
            ch.clock_ghz = cfg.clock_ghz;
            if (crun->parsed()) {
                ch.bit_interval = interval;
                ch.skew = skew;
                ch.invert = invert;
                manifest = bwsim::run_covert_transmit(ch, bits, noise, cfg, out_dir);
            } else {
                manifest = bwsim::run_covert_sweep(ch, intervals, bits, noise, cfg, out_dir);
            }
        } else if (attack->parsed()) {
            if (spectre->parsed()) {
                bwsim::SpectreOptions opt;
                opt.trained = !untrained;
                opt.seed = cfg.seed;
                opt.jobs = jobs;
                manifest = bwsim::run_attack_spectre(bwsim::parse_gadget_kind(gadget), runs,
                                                     opt, cfg, out_dir);
            } else {
                bwsim::KeyRecoveryOptions opt;
                opt.noise = atk_noise;
                opt.seed = cfg.seed;
                opt.jobs = jobs;
                auto kind = rsa->parsed() ? bwsim::VictimKind::Rsa : bwsim::VictimKind::Eddsa;
                manifest = bwsim::run_attack_key(kind, bwsim::parse_attack_channel(atk_channel),
                                                 key_arg(key, cfg.seed), trials, opt, cfg,
                                                 out_dir);
            }
        } else {
            throw bwsim::UnknownSubcommand("expected reveng, covert or attack");
        }
        print_summary(manifest);
        return 0;
    } catch (const bwsim::SimError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
