#include <doctest.h>

#include <cmath>
#include <vector>

#include "hdexpit/rng.hpp"
#include "hdexpit/schedule.hpp"

using namespace hdexpit;

TEST_CASE("schedules satisfy the variance-preserving invariants") {
    for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear}) {
        const auto s = NoiseSchedule::make(kind, 100);
        REQUIRE(s.steps() == 100);
        for (int j = 0; j < 100; ++j) {
            CHECK(std::abs(s.alpha(j) * s.alpha(j) + s.beta(j) * s.beta(j) - 1.0) < 1e-9);
            if (j > 0) {
                CHECK(s.alpha(j) < s.alpha(j - 1));
                CHECK(s.beta(j) > s.beta(j - 1));
            }
        }
        CHECK(s.alpha(0) >= 0.999);
        CHECK(s.beta(99) >= 0.999);
    }
}

TEST_CASE("linear and cosine differ but both validate") {
    const auto a = NoiseSchedule::make(ScheduleKind::cosine, 100);
    const auto b = NoiseSchedule::make(ScheduleKind::linear, 100);
    bool same = true;
    for (int j = 0; j < 100; ++j) same = same && a.alpha(j) == b.alpha(j);
    CHECK_FALSE(same);
}

TEST_CASE("schedule construction rejects bad inputs") {
    CHECK_THROWS_AS(NoiseSchedule::make(ScheduleKind::cosine, 1), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({0.9985, 0.9986}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({0.5, 0.0005}), ConfigError);
}

TEST_CASE("forward noise matches the closed form") {
    // alpha_bar = 0.25 -> alpha 0.5, beta sqrt(0.75)
    const auto s = NoiseSchedule::from_alpha_bar({0.9985, 0.25, 5e-4});
    std::vector<double> x0{1.0}, eps{2.0}, out(1);
    forward_noise<double>(x0, 1, eps, s, out);
    CHECK(out[0] == doctest::Approx(0.5 + 2.0 * std::sqrt(0.75)).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(2.2320508).epsilon(1e-7));

    std::vector<double> zero{0.0};
    forward_noise<double>(zero, 1, eps, s, out);
    CHECK(out[0] == doctest::Approx(s.beta(1) * 2.0));

    // near-clean boundary: j = 0 output stays within beta_0 * |eps| of x0
    forward_noise<double>(x0, 0, eps, s, out);
    CHECK(std::abs(out[0] - x0[0]) <= s.beta(0) * 2.0 + 1e-12);

    std::vector<double> bad{1.0, 2.0};
    CHECK_THROWS_AS(forward_noise<double>(bad, 1, eps, s, out), ConfigError);
    CHECK_THROWS_AS(forward_noise<double>(x0, 7, eps, s, out), ConfigError);
}

TEST_CASE("velocity target closed forms") {
    // alpha 0.6 / beta 0.8 lives at alpha_bar 0.36
    const auto s = NoiseSchedule::from_alpha_bar({0.9985, 0.36, 5e-4});
    std::vector<double> x0{1.0}, eps{1.0}, v(1);
    velocity_target<double>(x0, eps, 1, s, v);
    CHECK(v[0] == doctest::Approx(-0.2).epsilon(1e-12));

    std::vector<double> zero{0.0};
    velocity_target<double>(x0, zero, 1, s, v);
    CHECK(v[0] == doctest::Approx(-s.beta(1)));
    velocity_target<double>(zero, eps, 1, s, v);
    CHECK(v[0] == doctest::Approx(s.alpha(1)));
}

TEST_CASE("VP recovery identity, acceptance tolerances") {
    const auto s = NoiseSchedule::make(ScheduleKind::cosine, 100);
    Rng rng(42);

    double worst64 = 0.0;
    float worst32 = 0.f;
    for (int trial = 0; trial < 1000; ++trial) {
        const int j = rng.uniform_int(0, 99);
        std::vector<double> x0(8), eps(8), xj(8), v(8), x0h(8), eh(8);
        for (int i = 0; i < 8; ++i) {
            x0[i] = rng.uniform();
            eps[i] = rng.normal();
        }
        forward_noise<double>(x0, j, eps, s, xj);
        velocity_target<double>(x0, eps, j, s, v);
        recover_from_velocity<double>(xj, v, j, s, x0h, eh);
        for (int i = 0; i < 8; ++i) {
            worst64 = std::max(worst64, std::abs(x0h[i] - x0[i]));
            worst64 = std::max(worst64, std::abs(eh[i] - eps[i]));
        }

        std::vector<float> x0f(8), ef(8), xjf(8), vf(8), x0hf(8), ehf(8);
        for (int i = 0; i < 8; ++i) {
            x0f[i] = static_cast<float>(x0[i]);
            ef[i] = static_cast<float>(eps[i]);
        }
        forward_noise<float>(x0f, j, ef, s, xjf);
        velocity_target<float>(x0f, ef, j, s, vf);
        recover_from_velocity<float>(xjf, vf, j, s, x0hf, ehf);
        for (int i = 0; i < 8; ++i) {
            worst32 = std::max(worst32, std::abs(x0hf[i] - x0f[i]));
            worst32 = std::max(worst32, std::abs(ehf[i] - ef[i]));
        }
    }
    CHECK(worst64 < 1e-12);
    CHECK(worst32 < 1e-6f);
}

TEST_CASE("recovery edge cases") {
    const auto s = NoiseSchedule::make(ScheduleKind::cosine, 50);
    std::vector<double> zero(4, 0.0), x0h(4), eh(4);
    recover_from_velocity<double>(zero, zero, 10, s, x0h, eh);
    for (double v : x0h) CHECK(v == 0.0);
    for (double v : eh) CHECK(v == 0.0);
}

TEST_CASE("cfg combine: endpoint exactness and affinity") {
    std::vector<float> vc{2.f, -1.f, 0.25f}, vu{1.f, 3.f, -0.5f}, out(3);

    cfg_combine<float>(vc, vu, 1.0, out);
    CHECK(out == vc);  // bitwise
    cfg_combine<float>(vc, vu, 0.0, out);
    CHECK(out == vu);  // bitwise

    cfg_combine<float>(vc, vu, 5.0, out);
    CHECK(out[0] == doctest::Approx(6.0));

    // affine in lambda: cfg(l) == vu + l * (cfg(1) - vu), bit-exact when the
    // right side is evaluated in the same operation order
    for (double lam : {-2.0, 0.3, 2.5, 5.0}) {
        std::vector<float> cfg1(3), o(3);
        cfg_combine<float>(vc, vu, 1.0, cfg1);
        cfg_combine<float>(vc, vu, lam, o);
        for (int i = 0; i < 3; ++i) {
            const float rhs = vu[i] + static_cast<float>(lam) * (cfg1[i] - vu[i]);
            CHECK(o[i] == rhs);
        }
    }

    // on dyadic inputs every intermediate is representable, so the
    // subtracted form of the affine identity holds exactly too
    std::vector<float> dc{2.f, 4.f, -8.f}, du{1.f, -2.f, 0.f};
    for (double lam : {0.5, 2.0, 5.0}) {
        std::vector<float> o(3);
        cfg_combine<float>(dc, du, lam, o);
        for (int i = 0; i < 3; ++i)
            CHECK(o[i] - du[i] == static_cast<float>(lam) * (dc[i] - du[i]));
    }

    std::vector<float> bad(2);
    CHECK_THROWS_AS(cfg_combine<float>(vc, bad, 1.0, out), ConfigError);
}

TEST_CASE("schedule json export and digest") {
    const auto s = NoiseSchedule::make(ScheduleKind::cosine, 10);
    const auto js = s.to_json();
    CHECK(js.find("\"steps\":10") != std::string::npos);
    CHECK(s.digest() == NoiseSchedule::make(ScheduleKind::cosine, 10).digest());
    CHECK(s.digest() != NoiseSchedule::make(ScheduleKind::linear, 10).digest());
}
