// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "oracles.hpp"
#include "test_support.hpp"

#include "rfslam/learning.hpp"

#include <doctest.h>

using namespace rfslam;

namespace
{
    struct Toy
    {
        RadioModel model;
        Scenario scenario;
        Simulation sim;
        FilterModels models;
        FilterConfig filter;
        NeuralMap map;
        std::vector<BeliefSnapshot> snapshots;
        std::vector<double> imu;

        QProblem problem(bool mmse = false) const
        {
            QProblem pb;
            pb.snapshots = &snapshots;
            pb.frames = &sim.frames;
            pb.bs_positions = scenario.bs_positions;
            pb.use_mmse_points = mmse;
            return pb;
        }
    };

    Toy make_toy(std::uint64_t seed, int K = 2, int J = 1)
    {
        Toy t{testing::make_model(8, 2, 10e6), {}, {}, {}, {}, {}, {}, {}};
        Scenario &s = t.scenario;
        s.bs_positions = {Vec2(0, 6), Vec2(14, 8)};
        s.bs_positions.resize(J);
        s.walls = {Wall{Vec2(-5, 0), Vec2(20, 0)}};
        s.trajectory.waypoints = {Vec2(3, 3), Vec2(12, 3)};
        s.trajectory.steps = K;
        s.los_gamma.assign(J, 1.0);
        s.noise_eta.assign(J, 1e9);
        s.seed = seed;
        t.sim = simulate(s, t.model);
        t.models.priors.position_mean = Vec2(3, 3);
        t.models.priors.position_std = 0.3;
        t.models.priors.velocity_mean = Vec2(1, 0);
        t.models.priors.velocity_std = 0.1;
        t.models.priors.noise_variance = {1e9, 10.0};
        t.filter.num_particles = 100;
        t.filter.num_birth = 5;
        t.filter.subset_size = 6;
        t.filter.seed = seed;
        t.imu.assign(t.sim.truth.imu_orientation.begin() + 1, t.sim.truth.imu_orientation.end());

        MapArchitecture a;
        a.num_features = 2;
        a.num_encodings = 1;
        a.hidden1 = 8;
        a.hidden2 = 6;
        a.position_scale = 5.0;
        a.variance_scale = 0.5;
        const BoundingBox box = scene_bounds(s).expanded(5.0);
        Rng rng(seed + 1000);
        t.map = NeuralMap::initialize(a, EncodingFrame::from_bounds(box), box, rng);
        const FilterRun r = run_filter(t.sim.frames, t.imu, s.bs_positions, t.models,
                                       map_features(t.map, s.bs_positions), t.model, t.filter);
        t.snapshots = r.snapshots;
        return t;
    }
} // namespace

TEST_CASE("segment scheduler")
{
    using Seg = std::vector<std::pair<int, int>>;
    CHECK(segment_scheduler(10, 10) == Seg{{1, 10}});
    CHECK(segment_scheduler(10, 0) == Seg{{1, 10}});
    CHECK(segment_scheduler(10, 4) == Seg{{1, 4}, {5, 8}, {9, 10}});
    Rng rng(1);
    for (int i = 0; i < 200; ++i)
    {
        const int K = std::uniform_int_distribution<int>(1, 60)(rng);
        const int k0 = std::uniform_int_distribution<int>(1, 70)(rng);
        std::vector<int> hits(K + 1, 0);
        int prev_end = 0;
        for (const auto &[a, b] : segment_scheduler(K, k0))
        {
            CHECK(a == prev_end + 1);
            CHECK(b - a + 1 <= k0);
            for (int k = a; k <= b; ++k)
                hits[k]++;
            prev_end = b;
        }
        for (int k = 1; k <= K; ++k)
            CHECK(hits[k] == 1);
    }
}

TEST_CASE("surrogate value")
{
    const Toy t = make_toy(5);
    REQUIRE(t.snapshots.size() == 2);

    SUBCASE("single MMSE term equals the selected hypothesis")
    {
        std::vector<BeliefSnapshot> one = {t.snapshots[0]};
        QProblem pb = t.problem(true);
        pb.snapshots = &one;
        const auto &e = one[0].estimate;
        CovarianceParams cp;
        cp.position = e.mt.position;
        cp.orientation = e.mt.orientation;
        cp.bs_position = t.scenario.bs_positions[0];
        cp.los_variance = e.los_variance[0].value_or(0.0);
        cp.noise_variance = e.noise_variance[0];
        cp.features = t.map.predict(cp.bs_position);
        const CVec &z = t.sim.frames[0].z[0];
        for (double vis : {1.0, 0.0})
        {
            one[0].visibility[0] = vis;
            cp.los = vis == 1.0;
            const double ref = oracle::log_likelihood(z, cp, t.model);
            CHECK(q_tilde(pb, t.map, t.model) == doctest::Approx(ref).epsilon(1e-10));
        }
    }
    SUBCASE("particle sum equals the dense oracle mixture")
    {
        const QProblem pb = t.problem();
        double ref = 0.0;
        for (const auto &s : t.snapshots)
        {
            const double vis = s.visibility[0];
            const int n = static_cast<int>(s.position.size());
            for (int p = 0; p < n; ++p)
            {
                CovarianceParams cp;
                cp.position = s.position[p];
                cp.orientation = s.orientation[p];
                cp.bs_position = t.scenario.bs_positions[0];
                cp.los_variance = s.los_variance[0][p];
                cp.noise_variance = s.noise_variance[0][p];
                cp.features = t.map.predict(cp.bs_position);
                const CVec &z = t.sim.frames[s.k - 1].z[0];
                cp.los = true;
                const double l1 = oracle::log_likelihood(z, cp, t.model);
                cp.los = false;
                const double l0 = oracle::log_likelihood(z, cp, t.model);
                ref += (vis * l1 + (1.0 - vis) * l0) / n;
            }
        }
        QEvaluation detail;
        const double q = q_tilde(pb, t.map, t.model, &detail);
        CHECK(std::abs(q - ref) <= 1e-8 * std::abs(ref));
        double sum = 0.0;
        for (double v : detail.terms)
            sum += v;
        CHECK(std::abs(sum - q) <= 1e-12 * std::abs(q));
        CHECK(detail.terms.size() == 2);
        const QEvaluation g = q_tilde_grad(pb, t.map, t.model, false, false);
        CHECK(g.value == doctest::Approx(q).epsilon(1e-12));
    }
    SUBCASE("mismatched frames are rejected")
    {
        std::vector<BeliefSnapshot> bad = t.snapshots;
        bad[0].k = 7;
        QProblem pb = t.problem();
        pb.snapshots = &bad;
        CHECK_THROWS_AS(q_tilde(pb, t.map, t.model), InvalidArgument);
    }
}

TEST_CASE("surrogate gradients match finite differences")
{
    for (int trial = 0; trial < 3; ++trial)
    {
        CAPTURE(trial);
        Toy t = make_toy(20 + trial, 2, 2);
        Rng rng(trial);
        testing::randomize_calibration(t.model, rng, 0.1);
        const QProblem pb = t.problem();
        const QEvaluation ev = q_tilde_grad(pb, t.map, t.model, true, true);

        const auto f_theta = [&](const Vec &th) {
            NeuralMap m = t.map;
            m.set_parameters(th);
            return q_tilde(pb, m, t.model);
        };
        CHECK(oracle::rel_error(ev.grad_theta, oracle::fd_gradient(f_theta, t.map.parameters(), 1e-6)) < 1e-4);

        const int mf = t.model.signal.num_freq, ma = t.model.signal.num_antennas;
        const Vec chi = t.model.calibration.to_vector();
        Vec step(chi.size());
        for (Eigen::Index i = 0; i < chi.size(); ++i)
            step[i] = i < 2 * (mf + ma) ? 1e-6 : 1e-9;
        const auto f_chi = [&](const Vec &c) {
            RadioModel m = t.model;
            m.calibration = Calibration::from_vector(c, mf, ma);
            return q_tilde(pb, t.map, m);
        };
        Vec fd(chi.size());
        for (Eigen::Index i = 0; i < chi.size(); ++i)
            fd[i] = oracle::central(f_chi, chi, i, step[i]);
        CHECK(oracle::rel_error(ev.grad_chi, fd) < 1e-4);
    }
}

TEST_CASE("zero-variance features give no position-head gradient")
{
    Toy t = make_toy(30);
    MlpParams p = t.map.params();
    p.variance_net = MlpParams::zeros(t.map.architecture()).variance_net;
    const NeuralMap m(t.map.architecture(), t.map.frame(), p);
    const QEvaluation ev = q_tilde_grad(t.problem(), m, t.model, true, false);
    CHECK(ev.grad_theta.norm() == 0.0);
}

TEST_CASE("supervised conditioning")
{
    const Toy t = make_toy(40);
    const auto sup = supervised_condition(t.snapshots, t.sim.truth);
    for (const auto &s : sup)
    {
        for (const auto &p : s.position)
            CHECK(p == t.sim.truth.states[s.k].position);
        CHECK(s.estimate.mt.position == t.sim.truth.states[s.k].position);
        CHECK(s.visibility == t.snapshots[&s - sup.data()].visibility);
    }

    SUBCASE("identity substitution")
    {
        ScenarioTruth fake = t.sim.truth;
        for (const auto &s : t.snapshots)
            fake.states[s.k] = s.estimate.mt;
        std::vector<BeliefSnapshot> pts = t.snapshots;
        for (auto &s : pts)
        {
            s.position.assign(1, s.estimate.mt.position);
            s.orientation.assign(1, s.estimate.mt.orientation);
            for (int j = 0; j < 1; ++j)
            {
                s.los_variance[j].resize(1);
                s.noise_variance[j].resize(1);
            }
        }
        const auto same = supervised_condition(pts, fake);
        for (std::size_t i = 0; i < pts.size(); ++i)
        {
            CHECK(same[i].position == pts[i].position);
            CHECK(same[i].orientation == pts[i].orientation);
        }
    }
    SUBCASE("perturbed truth changes the surrogate")
    {
        QProblem pb = t.problem(true);
        pb.snapshots = &sup;
        const double q0 = q_tilde(pb, t.map, t.model);
        ScenarioTruth moved = t.sim.truth;
        for (auto &x : moved.states)
            x.position += Vec2(1.0, 0.0);
        const auto sup2 = supervised_condition(t.snapshots, moved);
        pb.snapshots = &sup2;
        CHECK(q_tilde(pb, t.map, t.model) != q0);
    }
    SUBCASE("missing truth")
    {
        ScenarioTruth short_truth = t.sim.truth;
        short_truth.states.resize(1);
        CHECK_THROWS_AS(supervised_condition(t.snapshots, short_truth), InvalidArgument);
    }
}

TEST_CASE("M-step")
{
    const Toy t = make_toy(50, 3);
    const QProblem pb = t.problem();
    LearnState st{t.map, t.model, AdamState::create(t.map.parameter_count(), 1e-2),
                  AdamState::create(Calibration::parameter_count(8, 2), 1e-4)};
    LearnConfig cfg;

    SUBCASE("zero Adam steps is a no-op")
    {
        cfg.adam_steps = 0;
        const auto rows = m_step(pb, st, cfg);
        REQUIRE(rows.size() == 1);
        CHECK((st.map.parameters() - t.map.parameters()).norm() == 0.0);
        CHECK(rows[0].q_after == rows[0].q_before);
    }
    SUBCASE("ascent does not decrease the surrogate")
    {
        cfg.adam_steps = 15;
        cfg.learn_chi = true;
        const auto rows = m_step(pb, st, cfg);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].phase == "theta");
        CHECK(rows[1].phase == "chi");
        for (const auto &r : rows)
        {
            CHECK(r.q_after >= r.q_before - 1e-3 * std::abs(r.q_before));
            CHECK(r.grad_norm > 0.0);
            CHECK(r.features.size() == 1);
        }
        CHECK(q_tilde(pb, st.map, t.model) == doctest::Approx(rows[0].q_after).epsilon(1e-12));
        // The chi phase ran with theta_t
        CHECK(q_tilde(pb, t.map, st.model) == doctest::Approx(rows[1].q_after).epsilon(1e-12));
    }
}

TEST_CASE("learning loop")
{
    const Toy t = make_toy(60, 6);
    LearnInputs in;
    in.frames = t.sim.frames;
    in.imu = t.imu;
    in.bs_positions = t.scenario.bs_positions;
    in.models = t.models;
    in.filter = t.filter;
    in.truth = &t.sim.truth;
    LearnState st{t.map, t.model, {}, {}};
    LearnConfig cfg;
    cfg.segment_k0 = 3;
    cfg.em_iterations = 2;
    cfg.adam_steps = 3;
    cfg.supervised = true;
    const LearnResult r = learn(in, st, cfg);
    REQUIRE(r.log.size() == 4);
    for (std::size_t i = 0; i < r.log.size(); ++i)
    {
        CHECK(r.log[i].iteration == static_cast<int>(i));
        CHECK(r.log[i].segment == static_cast<int>(i / 2));
        CHECK(std::isfinite(r.log[i].q_after));
    }
    in.truth = nullptr;
    CHECK_THROWS_AS(learn(in, st, cfg), InvalidArgument);
}

TEST_CASE("feature search")
{
    const Toy t = make_toy(70, 6);
    const QProblem pb = t.problem(true);
    const Vec2 anchor = mirror_anchor(t.scenario.walls[0], t.scenario.bs_positions[0]);
    const BoundingBox box{anchor - Vec2(4, 4), anchor + Vec2(4, 4)};
    const auto found = search_features(pb, t.map, t.model, box, 0.5);
    REQUIRE(found.size() == 1);
    REQUIRE(found[0].size() == 2);
    const double best = std::min((found[0][0].position - anchor).norm(), (found[0][1].position - anchor).norm());
    CHECK(best < 1.0);
    for (const auto &f : found[0])
    {
        CHECK(f.position.x() >= box.lo.x() - 1e-12);
        CHECK(f.position.y() <= box.hi.y() + 1e-12);
    }
    CHECK_THROWS_AS(search_features(pb, t.map, t.model, BoundingBox{anchor, anchor - Vec2(1, 1)}, 0.5),
                    InvalidArgument);
}

TEST_CASE("feature position fit")
{
    const Toy t = make_toy(80, 2, 2);
    NeuralMap map = t.map;
    std::vector<MapFeatures> targets;
    for (std::size_t j = 0; j < t.scenario.bs_positions.size(); ++j)
    {
        MapFeatures f = map.predict(t.scenario.bs_positions[j]);
        for (std::size_t n = 0; n < f.size(); ++n)
            f[n].position = Vec2(1.5 * n - 2.0 * j, 7.0 + j);
        targets.push_back(f);
    }
    fit_feature_positions(map, t.scenario.bs_positions, targets);
    for (std::size_t j = 0; j < targets.size(); ++j)
    {
        const MapFeatures got = map.predict(t.scenario.bs_positions[j]);
        const MapFeatures before = t.map.predict(t.scenario.bs_positions[j]);
        for (std::size_t n = 0; n < got.size(); ++n)
        {
            CHECK((got[n].position - targets[j][n].position).norm() < 1e-8);
            CHECK(got[n].variance == doctest::Approx(before[n].variance).epsilon(1e-12));
        }
    }
}
