// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "oracles.hpp"
#include "test_support.hpp"

#include "rfslam/scenario.hpp"

#include <doctest.h>

using namespace rfslam;

namespace
{
    Scenario small_scenario()
    {
        Scenario s;
        s.bs_positions = {Vec2(0, 5), Vec2(20, 5)};
        s.walls = {Wall{Vec2(-5, 0), Vec2(25, 0)}, Wall{Vec2(-5, 10), Vec2(25, 10)}};
        s.trajectory.waypoints = {Vec2(2, 3), Vec2(18, 3), Vec2(18, 7)};
        s.trajectory.speed = 1.0;
        s.trajectory.steps = 20;
        s.blockage = {{BlockageInterval{5, 8}}};
        s.los_gamma = {1.0, 1.0};
        s.noise_eta = {1e9, 1e9};
        s.seed = 42;
        return s;
    }

    // Single static MT position with constant LOS flag and no anchors
    ScenarioTruth static_truth(const Vec2 &p, int K, int J, bool los)
    {
        ScenarioTruth t;
        t.states.assign(K + 1, MtState{p, Vec2::Zero(), 0.25});
        t.imu_orientation.assign(K + 1, 0.25);
        t.los_flags.assign(K, std::vector<char>(J, los ? 1 : 0));
        t.anchors.assign(J, {});
        return t;
    }
} // namespace

TEST_CASE("mirror anchor")
{
    const Wall x_axis{Vec2(-1, 0), Vec2(1, 0)};
    CHECK((mirror_anchor(x_axis, Vec2(2, 3)) - Vec2(2, -3)).norm() < 1e-15);
    CHECK((mirror_anchor(x_axis, Vec2(5, 0)) - Vec2(5, 0)).norm() < 1e-15);
    CHECK_THROWS_AS(mirror_anchor(Wall{Vec2(1, 1), Vec2(1, 1)}, Vec2(0, 0)), InvalidArgument);

    Rng rng(1);
    for (int i = 0; i < 100; ++i)
    {
        const Wall w{testing::random_point(rng), testing::random_point(rng)};
        const Vec2 p = testing::random_point(rng);
        const Vec2 img = mirror_anchor(w, p);
        const Vec2 mid = 0.5 * (p + img), d = (w.b - w.a).normalized();
        const Vec2 rel = mid - w.a;
        CHECK(std::abs(rel.x() * d.y() - rel.y() * d.x()) < 1e-10);
        CHECK(std::abs((img - p).dot(d)) < 1e-10);
    }
}

TEST_CASE("reflected path lengths match ray tracing")
{
    Rng rng(2);
    int valid = 0;
    for (int i = 0; i < 400; ++i)
    {
        const Wall w{Vec2(-10, 0), Vec2(10, 0)};
        const Vec2 bs = testing::random_point(rng, 10.0), mt = testing::random_point(rng, 10.0);
        if (!reflection_valid(w, bs, mt))
            continue;
        ++valid;
        const Vec2 s = specular_point(w, bs, mt);
        CHECK(std::abs(s.y()) < 1e-10);
        CHECK(s.x() >= -10.0 - 1e-12);
        CHECK(s.x() <= 10.0 + 1e-12);
        const double ray = (s - bs).norm() + (mt - s).norm();
        CHECK(std::abs((mirror_anchor(w, bs) - mt).norm() - ray) < 1e-10);
        CHECK(bs.y() * mt.y() > 0.0);
    }
    CHECK(valid > 50);
    // Opposite sides of the wall and specular point beyond the segment
    CHECK_FALSE(reflection_valid(Wall{Vec2(-1, 0), Vec2(1, 0)}, Vec2(0, 1), Vec2(0, -1)));
    CHECK_FALSE(reflection_valid(Wall{Vec2(-1, 0), Vec2(1, 0)}, Vec2(5, 1), Vec2(8, 1)));
}

TEST_CASE("trajectory")
{
    TrajectorySpec spec;
    spec.waypoints = {Vec2(0, 0), Vec2(10, 0)};
    spec.steps = 8;
    spec.sigma_o = 0.0;
    Rng rng(3);
    const TrajectoryResult t = synth_trajectory(spec, rng);
    REQUIRE(t.states.size() == 9);
    for (int k = 0; k <= 8; ++k)
    {
        CHECK((t.states[k].position - Vec2(k, 0)).norm() < 1e-12);
        CHECK(t.states[k].orientation == 0.0);
        CHECK(t.imu_orientation[k] == t.states[k].orientation);
    }

    SUBCASE("corner and hold at the last waypoint")
    {
        spec.waypoints = {Vec2(0, 0), Vec2(2, 0), Vec2(2, 2)};
        spec.steps = 6;
        const TrajectoryResult c = synth_trajectory(spec, rng);
        CHECK((c.states[3].position - Vec2(2, 1)).norm() < 1e-12);
        CHECK(c.states[3].orientation == doctest::Approx(kPi / 2));
        CHECK((c.states[6].position - Vec2(2, 2)).norm() < 1e-12);
    }
    SUBCASE("IMU noise level")
    {
        spec.sigma_o = 0.02;
        spec.steps = 10000;
        spec.waypoints = {Vec2(0, 0), Vec2(1e5, 0)};
        const TrajectoryResult n = synth_trajectory(spec, rng);
        double s2 = 0.0;
        for (int k = 0; k <= spec.steps; ++k)
            s2 += std::pow(n.imu_orientation[k] - n.states[k].orientation, 2);
        CHECK(std::sqrt(s2 / (spec.steps + 1)) == doctest::Approx(0.02).epsilon(0.05));
    }
    SUBCASE("invalid specs")
    {
        spec.speed = 0.0;
        CHECK_THROWS_AS(synth_trajectory(spec, rng), InvalidArgument);
        spec.speed = 1.0;
        spec.waypoints = {Vec2(1, 1), Vec2(1, 1)};
        CHECK_THROWS_AS(synth_trajectory(spec, rng), InvalidArgument);
        spec.waypoints = {Vec2(1, 1)};
        CHECK_THROWS_AS(synth_trajectory(spec, rng), InvalidArgument);
    }
}

TEST_CASE("measurement second moments")
{
    const RadioModel m = testing::make_model(6, 2);
    Scenario s = small_scenario();
    s.bs_positions = {Vec2(0, 0)};
    s.walls.clear();
    s.blockage.clear();
    s.los_gamma = {0.7};
    s.noise_eta = {1e9};
    const int K = 10000;
    const Vec2 p(6, 8);
    Rng rng(4);

    const CVec h = oracle::response(p, 0.25, s.bs_positions[0], 0.0, m);
    const double expect_los = s.los_gamma[0] * h.squaredNorm() + m.size() * s.noise_eta[0];
    const double expect_nlos = m.size() * s.noise_eta[0];

    auto mean_energy = [&](bool los) {
        const auto frames = synth_measurements(s, static_truth(p, K, 1, los), m, rng);
        double acc = 0.0;
        for (const auto &f : frames)
            acc += f.z[0].squaredNorm();
        return acc / K;
    };
    const double e1 = mean_energy(true), e0 = mean_energy(false);
    CHECK(e1 == doctest::Approx(expect_los).epsilon(0.03));
    CHECK(e0 == doctest::Approx(expect_nlos).epsilon(0.03));
    // Standard error of the difference is about (e1 + e0) / sqrt(K)
    CHECK(std::abs((e1 - e0) - s.los_gamma[0] * h.squaredNorm()) < 4.0 * (e1 + e0) / std::sqrt(K));

    SUBCASE("noise-only sample covariance is the identity")
    {
        s.noise_eta = {1.0};
        const auto frames = synth_measurements(s, static_truth(p, K, 1, false), m, rng);
        CMat S = CMat::Zero(m.size(), m.size());
        for (const auto &f : frames)
            S += f.z[0] * f.z[0].adjoint();
        S /= K;
        CHECK((S - CMat::Identity(m.size(), m.size())).cwiseAbs().maxCoeff() < 0.06);
    }
}

TEST_CASE("Swerling-1 phases are uniform")
{
    const RadioModel m = testing::make_model(4, 1);
    Scenario s = small_scenario();
    s.bs_positions = {Vec2(0, 0)};
    s.walls.clear();
    s.blockage.clear();
    s.los_gamma = {1.0};
    s.noise_eta = {1e-20};
    const int K = 16000, bins = 16;
    const Vec2 p(3, 4);
    Rng rng(5);
    const auto frames = synth_measurements(s, static_truth(p, K, 1, true), m, rng);
    const CVec h = oracle::response(p, 0.25, s.bs_positions[0], 0.0, m);
    std::vector<int> counts(bins, 0);
    for (const auto &f : frames)
    {
        const cplx rho = h.dot(f.z[0]) / h.squaredNorm();
        const double ph = std::arg(rho) + kPi;
        counts[std::min(bins - 1, static_cast<int>(ph / (2 * kPi) * bins))]++;
    }
    double chi2 = 0.0;
    const double e = static_cast<double>(K) / bins;
    for (int c : counts)
        chi2 += (c - e) * (c - e) / e;
    // 99.9 % quantile of chi-square with 15 degrees of freedom
    CHECK(chi2 < 37.7);
}

TEST_CASE("blockage, anchors and reproducibility")
{
    const RadioModel m = testing::make_model(8, 2);
    Scenario s = small_scenario();
    REQUIRE_NOTHROW(s.validate());
    CHECK(s.blocked(0, 5));
    CHECK(s.blocked(0, 8));
    CHECK_FALSE(s.blocked(0, 4));
    CHECK_FALSE(s.blocked(0, 9));
    CHECK_FALSE(s.blocked(1, 6));

    const auto anchors = virtual_anchors(s);
    REQUIRE(anchors.size() == 2);
    REQUIRE(anchors[0].size() == 2);
    CHECK((anchors[0][0].position - Vec2(0, -5)).norm() < 1e-12);
    CHECK((anchors[0][1].position - Vec2(0, 15)).norm() < 1e-12);
    CHECK(anchors[0][0].variance == doctest::Approx(s.los_gamma[0] * s.mpc_gamma_scale));

    const Simulation a = simulate(s, m), b = simulate(s, m);
    REQUIRE(a.frames.size() == 20);
    CHECK(a.truth.los_flags[4][0] == 0);
    CHECK(a.truth.los_flags[3][0] == 1);
    CHECK(a.truth.los_flags[4][1] == 1);
    for (std::size_t k = 0; k < a.frames.size(); ++k)
    {
        CHECK(a.frames[k].k == static_cast<int>(k) + 1);
        for (int j = 0; j < 2; ++j)
        {
            REQUIRE(a.frames[k].z[j].size() == m.size());
            CHECK((a.frames[k].z[j] - b.frames[k].z[j]).norm() == 0.0);
        }
    }
    Scenario s2 = s;
    s2.seed = 43;
    CHECK((simulate(s2, m).frames[0].z[0] - a.frames[0].z[0]).norm() > 0.0);

    s.blockage = {{BlockageInterval{0, 3}}};
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.blockage = {{BlockageInterval{3, 21}}};
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("scene bounds")
{
    const BoundingBox b = scene_bounds(small_scenario());
    CHECK((b.lo - Vec2(-5, 0)).norm() < 1e-12);
    CHECK((b.hi - Vec2(25, 10)).norm() < 1e-12);
    CHECK(b.expanded(1.0).diagonal() == doctest::Approx(std::hypot(32.0, 12.0)));
}
