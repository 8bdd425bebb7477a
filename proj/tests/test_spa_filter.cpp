// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "oracles.hpp"
#include "test_support.hpp"

#include "rfslam/spa_filter.hpp"

#include <doctest.h>

#include <chrono>

using namespace rfslam;

namespace
{
    FilterModels default_models()
    {
        FilterModels m;
        m.priors.position_mean = Vec2(5, 5);
        m.priors.los_variance = {1.0, 2.0};
        m.priors.noise_variance = {1e9, 10.0};
        return m;
    }

    double los_mass(const BsBelief &b)
    {
        double s = 0.0;
        for (double w : b.los_weight)
            s += w;
        return s;
    }

    // Hand-made equally weighted beliefs with one BS
    ParticleBeliefs flat_beliefs(int P, double visibility, double gamma, double eta, Rng &rng)
    {
        ParticleBeliefs b;
        std::uniform_real_distribution<double> u(0.0, 10.0);
        for (int p = 0; p < P; ++p)
            b.mt.push_back(MtState{Vec2(u(rng), u(rng)), Vec2(0.1, 0), 0.0});
        b.mt_weight.assign(P, 1.0 / P);
        BsBelief s;
        s.los_variance.assign(P, gamma);
        s.los_weight.assign(P, visibility / P);
        s.absent_mass = 1.0 - visibility;
        s.noise_variance.assign(P, eta);
        s.noise_weight.assign(P, 1.0 / P);
        b.bs.push_back(s);
        return b;
    }
} // namespace

TEST_CASE("systematic resampling counts")
{
    Rng rng(1);
    std::vector<double> w = {0.1, 0.35, 0.05, 0.5};
    for (int rep = 0; rep < 20; ++rep)
    {
        const int n = 40;
        const auto idx = systematic_resample(w, n, rng);
        std::vector<int> cnt(w.size(), 0);
        for (int i : idx)
            cnt[i]++;
        for (std::size_t i = 0; i < w.size(); ++i)
        {
            CHECK(cnt[i] >= static_cast<int>(std::floor(n * w[i])) - 1);
            CHECK(cnt[i] <= static_cast<int>(std::ceil(n * w[i])) + 1);
        }
    }
    // Unnormalized weights behave like their normalized counterparts
    std::vector<double> scaled = {0.0, 0.0, 3.0, 0.0};
    for (int i : systematic_resample(scaled, 10, rng))
        CHECK(i == 2);
}

TEST_CASE("prediction of the visibility mass")
{
    Rng rng(2);
    FilterModels m = default_models();

    SUBCASE("closed chain")
    {
        m.los.p_v = 1.0;
        m.los.p_a = 0.0;
        const ParticleBeliefs b = flat_beliefs(200, 1.0, 1.0, 1e9, rng);
        const ParticleBeliefs pr = predict_step(b, 0.0, m, 10, rng);
        CHECK(los_mass(pr.bs[0]) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(pr.bs[0].absent_mass == doctest::Approx(0.0));
        for (int p = 190; p < 200; ++p)
            CHECK(pr.bs[0].los_weight[p] == 0.0);
    }
    SUBCASE("appearance from full absence")
    {
        m.los.p_a = 0.05;
        const ParticleBeliefs b = flat_beliefs(200, 0.0, 1.0, 1e9, rng);
        const ParticleBeliefs pr = predict_step(b, 0.0, m, 10, rng);
        CHECK(los_mass(pr.bs[0]) == doctest::Approx(0.05).epsilon(1e-12));
    }
    SUBCASE("two-state chain oracle")
    {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 10; ++trial)
        {
            m.los.p_a = u(rng);
            m.los.p_v = u(rng);
            const double p = u(rng);
            const ParticleBeliefs b = flat_beliefs(10000, p, 1.0, 1e9, rng);
            const ParticleBeliefs pr = predict_step(b, 0.0, m, 500, rng);
            const double expect = m.los.p_v * p + m.los.p_a * (1.0 - p);
            CHECK(std::abs(los_mass(pr.bs[0]) - expect) < 1e-3);
            CHECK(los_mass(pr.bs[0]) + pr.bs[0].absent_mass == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("birth count bounds")
    {
        const ParticleBeliefs b = flat_beliefs(20, 0.5, 1.0, 1e9, rng);
        CHECK_THROWS_AS(predict_step(b, 0.0, m, 0, rng), InvalidArgument);
        CHECK_THROWS_AS(predict_step(b, 0.0, m, 20, rng), InvalidArgument);
    }
}

TEST_CASE("uninformative update leaves the weights unchanged")
{
    Rng rng(3);
    const RadioModel model = testing::make_model(8, 2);
    const std::vector<Vec2> bs = {Vec2(0, 0)};
    // Zero LOS variance and no features: the likelihood is eta-white noise for every particle
    ParticleBeliefs pred = flat_beliefs(300, 0.37, 0.0, 1e9, rng);
    MeasurementFrame f;
    f.k = 1;
    f.z.push_back(CVec::Zero(model.size()));
    Rng zr(4);
    std::normal_distribution<double> n(0.0, std::sqrt(0.5e9));
    for (Eigen::Index i = 0; i < f.z[0].size(); ++i)
        f.z[0][i] = cplx(n(zr), n(zr));

    const UpdateResult r = update_step(pred, f, bs, {}, model);
    CHECK(r.failed_evaluations == 0);
    for (int p = 0; p < 300; ++p)
    {
        CHECK(r.posterior.mt_weight[p] == doctest::Approx(1.0 / 300).epsilon(1e-10));
        CHECK(r.posterior.bs[0].noise_weight[p] == doctest::Approx(1.0 / 300).epsilon(1e-10));
    }
    CHECK(r.posterior.bs[0].visibility() == doctest::Approx(0.37).epsilon(1e-10));
    InvariantStats st;
    check_invariants(r.posterior, st);
    CHECK(st.violations == 0);
}

TEST_CASE("degenerate update raises")
{
    Rng rng(5);
    const RadioModel model = testing::make_model(8, 2);
    ParticleBeliefs pred = flat_beliefs(50, 0.5, 1.0, 1e9, rng);
    MeasurementFrame f;
    f.z.push_back(CVec::Constant(model.size(), cplx(std::nan(""), 0.0)));
    CHECK_THROWS_AS(update_step(pred, f, {Vec2(0, 0)}, {}, model), NumericalDegeneracy);
    f.z.push_back(f.z[0]);
    CHECK_THROWS_AS(update_step(pred, f, {Vec2(0, 0)}, {}, model), InvalidArgument);
}

TEST_CASE("estimates")
{
    Rng rng(6);
    ParticleBeliefs b = flat_beliefs(100, 0.8, 1.0, 2.0, rng);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    for (int p = 0; p < 100; ++p)
    {
        b.bs[0].los_variance[p] = u(rng);
        b.bs[0].noise_variance[p] = u(rng);
        b.mt[p].orientation = u(rng);
    }

    SUBCASE("point mass")
    {
        std::fill(b.mt_weight.begin(), b.mt_weight.end(), 0.0);
        b.mt_weight[17] = 1.0;
        const StateEstimates e = estimate(b);
        CHECK((e.mt.position - b.mt[17].position).norm() < 1e-14);
        CHECK(e.mt.orientation == doctest::Approx(b.mt[17].orientation));
    }
    SUBCASE("uniform weights give arithmetic means")
    {
        const StateEstimates e = estimate(b);
        Vec2 mean = Vec2::Zero();
        double g = 0.0, eta = 0.0;
        for (int p = 0; p < 100; ++p)
        {
            mean += b.mt[p].position / 100.0;
            g += b.bs[0].los_variance[p] / 100.0;
            eta += b.bs[0].noise_variance[p] / 100.0;
        }
        CHECK((e.mt.position - mean).norm() < 1e-12);
        REQUIRE(e.los_variance[0].has_value());
        CHECK(*e.los_variance[0] == doctest::Approx(g).epsilon(1e-12));
        CHECK(e.noise_variance[0] == doctest::Approx(eta).epsilon(1e-12));
        CHECK(e.visibility[0] == doctest::Approx(0.8).epsilon(1e-12));
    }
    SUBCASE("compensated summation oracle")
    {
        std::vector<double> w(100);
        for (auto &x : w)
            x = std::exp(5.0 * u(rng));
        double tot = oracle::kahan_sum(w);
        for (int p = 0; p < 100; ++p)
        {
            b.mt_weight[p] = w[p] / tot;
            b.bs[0].los_weight[p] = 0.8 * w[p] / tot;
        }
        std::vector<double> tx, tg;
        for (int p = 0; p < 100; ++p)
        {
            tx.push_back(b.mt_weight[p] * b.mt[p].position.x());
            tg.push_back(b.bs[0].los_weight[p] * b.bs[0].los_variance[p]);
        }
        const StateEstimates e = estimate(b);
        const double vis = oracle::kahan_sum(std::vector<double>(b.bs[0].los_weight));
        CHECK(std::abs(e.mt.position.x() - oracle::kahan_sum(tx)) < 1e-12 * std::abs(oracle::kahan_sum(tx)));
        CHECK(std::abs(*e.los_variance[0] - oracle::kahan_sum(tg) / vis) < 1e-12 * (oracle::kahan_sum(tg) / vis));
    }
    SUBCASE("zero visibility reports no LOS variance")
    {
        std::fill(b.bs[0].los_weight.begin(), b.bs[0].los_weight.end(), 0.0);
        b.bs[0].absent_mass = 1.0;
        const StateEstimates e = estimate(b);
        CHECK_FALSE(e.los_variance[0].has_value());
        CHECK(e.visibility[0] == 0.0);
    }
}

TEST_CASE("filter runs")
{
    const RadioModel model = testing::make_model(16, 2, 5e6);
    Scenario s;
    s.bs_positions = {Vec2(0, 0), Vec2(20, 0), Vec2(10, 20)};
    s.trajectory.waypoints = {Vec2(5, 5), Vec2(15, 5)};
    s.trajectory.steps = 6;
    s.los_gamma = {1.0, 1.0, 1.0};
    s.noise_eta = {1e9, 1e9, 1e9};
    s.seed = 11;
    const Simulation sim = simulate(s, model);
    FilterModels m = default_models();
    m.priors.position_mean = Vec2(5, 5);
    m.priors.velocity_mean = Vec2(1, 0);
    m.priors.orientation_mean = 0.0;
    FilterConfig cfg;
    cfg.num_particles = 300;
    cfg.num_birth = 15;
    cfg.subset_size = 32;
    cfg.seed = 3;
    std::vector<double> imu(sim.truth.imu_orientation.begin() + 1, sim.truth.imu_orientation.end());

    SUBCASE("no frames returns the prior estimate")
    {
        const FilterRun r = run_filter({}, {}, s.bs_positions, m, {}, model, cfg);
        REQUIRE(r.estimates.size() == 1);
        CHECK((r.estimates[0].mt.position - Vec2(5, 5)).norm() < 0.5);
        CHECK(r.snapshots.empty());
    }
    SUBCASE("determinism, snapshots and invariants")
    {
        const FilterRun a = run_filter(sim.frames, imu, s.bs_positions, m, {}, model, cfg);
        const FilterRun b = run_filter(sim.frames, imu, s.bs_positions, m, {}, model, cfg);
        REQUIRE(a.estimates.size() == 7);
        for (std::size_t k = 0; k < a.estimates.size(); ++k)
            CHECK(a.estimates[k].mt.position == b.estimates[k].mt.position);
        REQUIRE(a.snapshots.size() == 6);
        CHECK(a.snapshots[0].position.size() == 32);
        CHECK(a.snapshots[0].los_variance.size() == 3);
        CHECK(a.invariants.violations == 0);
        CHECK(a.invariants.checks > 0);
        CHECK(a.failed_evaluations == 0);
        for (const auto &e : a.estimates)
            for (double v : e.visibility)
            {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        // Missing orientation readings are accepted
        const FilterRun c = run_filter(sim.frames, {}, s.bs_positions, m, {}, model, cfg);
        CHECK(c.estimates.size() == 7);
        CHECK_THROWS_AS(run_filter(sim.frames, {0.0}, s.bs_positions, m, {}, model, cfg), InvalidArgument);
    }
    SUBCASE("runtime is linear in the particle count")
    {
        auto time_run = [&](int P) {
            FilterConfig c = cfg;
            c.num_particles = P;
            c.num_birth = P / 20;
            c.keep_snapshots = false;
            double best = 1e300;
            for (int rep = 0; rep < 3; ++rep)
            {
                const auto t0 = std::chrono::steady_clock::now();
                run_filter(sim.frames, imu, s.bs_positions, m, {}, model, c);
                best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            }
            return best;
        };
        const double t500 = time_run(500), t2000 = time_run(2000);
        CHECK(t2000 / t500 <= 5.0);
    }
}
