#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bwsim/covert.hpp"

using namespace bwsim;

TEST_CASE("binary entropy: endpoints, maximum, and a reference value") {
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK(binary_entropy(0.5) == doctest::Approx(1.0));
    CHECK(binary_entropy(0.092) == doctest::Approx(0.4432).epsilon(0.003));
    CHECK_THROWS_AS(binary_entropy(-0.01), DomainError);
    CHECK_THROWS_AS(binary_entropy(1.01), DomainError);
}

TEST_CASE("capacity arithmetic matches the published channel figures") {
    struct Row { double s_mbps, e, cap_mbps; };
    const Row rows[] = {
        {18.0, 0.092, 10.02}, {20.0, 0.104, 10.37}, {2.0, 0.010, 1.838},
        {9.5, 0.044, 7.03},   {9.5, 0.043, 7.07},   {15.0, 0.076, 9.18},
        {9.0, 0.039, 6.86},
    };
    for (const Row& r : rows)
        CHECK(capacity(r.s_mbps * 1e6, r.e) ==
              doctest::Approx(r.cap_mbps * 1e6).epsilon(0.005));
    CHECK(capacity(5e6, 0.0) == 5e6);
    CHECK(capacity(5e6, 0.5) == doctest::Approx(0.0));
    CHECK_THROWS_AS(capacity(-1.0, 0.1), DomainError);
    CHECK_THROWS_AS(capacity(1e6, 1.5), DomainError);
}

TEST_CASE("channel config validation") {
    ChannelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.bit_interval = 10;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg.bit_interval = 10000;
    cfg.preamble = "1111";
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg.preamble = "0000";
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = ChannelConfig{};
    CHECK(cfg.speed_bps() == doctest::Approx(4e9 / 10000));
}

TEST_CASE("round trip: every channel kind carries a random frame error-free") {
    for (auto kind : {ChannelKind::L2CC, ChannelKind::L3CC, ChannelKind::LiCC}) {
        ChannelConfig cfg;
        cfg.kind = kind;
        CovertChannel ch(cfg);
        double thr = ch.calibrate();
        CHECK(thr > 0.0);
        std::string sent = random_bits(200, 3);
        BitFrame f = ch.transmit(sent);
        INFO(to_string(kind));
        CHECK(bit_error_rate(sent, f.bits) == 0.0);
        CHECK(f.mean_latency.size() == sent.size());
        CHECK(f.threshold == thr);
    }
}

TEST_CASE("silent sender decodes as all zeros") {
    ChannelConfig cfg;
    CovertChannel ch(cfg);
    ch.calibrate();
    BitFrame f = ch.transmit(std::string(64, '0'));
    CHECK(f.bits == std::string(64, '0'));
}

TEST_CASE("receive before calibrate is an error") {
    ChannelConfig cfg;
    CovertChannel ch(cfg);
    send(ch, "1010");
    CHECK_THROWS_AS(receive(ch), NotCalibrated);
    CHECK_THROWS_AS(ch.threshold(), NotCalibrated);
}

TEST_CASE("decode is deterministic for identical frames") {
    ChannelConfig cfg;
    std::string sent = random_bits(100, 9);
    std::vector<double> lat[2];
    std::string bits[2];
    for (int i = 0; i < 2; ++i) {
        CovertChannel ch(cfg);
        ch.calibrate();
        BitFrame f = ch.transmit(sent);
        lat[i] = f.mean_latency;
        bits[i] = f.bits;
    }
    CHECK(lat[0] == lat[1]);
    CHECK(bits[0] == bits[1]);
}

TEST_CASE("symbol symmetry: contend-on-0 carries the same frame") {
    ChannelConfig cfg;
    cfg.invert = true;
    CovertChannel ch(cfg);
    ch.calibrate();
    std::string sent = random_bits(100, 5);
    BitFrame f = ch.transmit(sent);
    CHECK(bit_error_rate(sent, f.bits) == 0.0);
}

TEST_CASE("calibration recovers sender clock skew") {
    for (std::int64_t skew : {5000ll, 3777ll, -2500ll}) {
        ChannelConfig cfg;
        cfg.skew = skew;
        CovertChannel ch(cfg);
        CHECK_NOTHROW(ch.calibrate());
        std::string sent = random_bits(100, 17);
        BitFrame f = ch.transmit(sent);
        INFO("skew ", skew);
        CHECK(bit_error_rate(sent, f.bits) == 0.0);
    }
}

TEST_CASE("partitioned buffers plus disabled prefetchers kill both data channels") {
    MicroarchConfig def;
    def.lfb_mode = def.sq_mode = BufferMode::StaticPartitioned;
    def.prefetchers = PrefetcherFlags::all_off();
    for (auto kind : {ChannelKind::L2CC, ChannelKind::L3CC}) {
        ChannelConfig cfg;
        cfg.kind = kind;
        CovertChannel ch(cfg, def);
        INFO(to_string(kind));
        CHECK_THROWS_AS(ch.calibrate(), ClustersInseparable);
    }
}

TEST_CASE("sweep: metric identity and monotone error under shrinking intervals") {
    ChannelConfig cfg;
    auto curve = sweep(cfg, {10000, 2500, 1000}, {}, 300, 0.0, 13);
    REQUIRE(curve.size() == 3);
    double prev = -1.0;
    for (const auto& m : curve) {
        CHECK(m.capacity_bps ==
              doctest::Approx(m.speed_bps * (1.0 - binary_entropy(m.error_rate))));
        CHECK(m.capacity_bps <= m.speed_bps);
        CHECK(m.error_rate >= prev);
        prev = m.error_rate;
    }
    CHECK(curve[0].speed_bps == doctest::Approx(4e9 / 10000));
}

TEST_CASE("noise monotonicity: error does not drop as noise intensity rises") {
    ChannelConfig cfg;
    cfg.bit_interval = 800;
    double prev = -1.0;
    for (double intensity : {0.0, 0.5, 2.0}) {
        auto curve = sweep(cfg, {cfg.bit_interval}, {}, 400, intensity, 21);
        CHECK(curve[0].error_rate >= prev);
        prev = curve[0].error_rate;
    }
}
