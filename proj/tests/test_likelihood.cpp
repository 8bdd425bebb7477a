// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace rfslam;

namespace
{
    // Central differences with an explicit per-coordinate step
    Vec fd(const std::function<double(const Vec &)> &f, const Vec &x, const Vec &step)
    {
        Vec g(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            g[i] = oracle::central(f, x, i, step[i]);
        return g;
    }

    struct Case
    {
        RadioModel model;
        CovarianceParams params;
        CVec z;
    };

    Case make_case(std::uint64_t seed, int mf, int ma, int D, bool los, bool calibrated)
    {
        Rng rng(seed);
        Case c{testing::make_model(mf, ma), testing::random_params(rng, D, los), {}};
        if (calibrated)
            testing::randomize_calibration(c.model, rng);
        c.z = testing::sample_z(oracle::covariance(c.params, c.model), rng);
        return c;
    }
} // namespace

TEST_CASE("projector removes the LOS direction")
{
    Rng rng(1);
    const RadioModel m = testing::make_model(8, 2);
    const CVec h = oracle::response(Vec2(0, 0), 0.2, Vec2(4, 3), 0.0, m);
    const CVec v = oracle::response(Vec2(0, 0), 0.2, Vec2(-2, 6), 1e-9, m);
    const CVec pv = projector_apply(h, v);
    CHECK(std::abs(h.dot(pv)) < 1e-12 * h.norm() * v.norm());
    CHECK((projector_apply(h, pv) - pv).norm() < 1e-12 * v.norm());
    CHECK(projector_apply(h, h).norm() < 1e-12 * h.norm());
    CHECK_THROWS_AS(projector_apply(CVec::Zero(16), v), InvalidArgument);
}

TEST_CASE("low-rank log-likelihood matches the dense oracle")
{
    for (int trial = 0; trial < 12; ++trial)
    {
        const bool los = trial % 2 == 0;
        const int D = trial % 4;
        const Case c = make_case(100 + trial, 9 + trial, 1 + trial % 3, D, los, trial % 3 == 0);
        CAPTURE(trial);
        const double ref = oracle::log_likelihood(c.z, c.params, c.model);
        const double got = log_likelihood(c.z, c.params, c.model);
        CHECK(std::abs(got - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
        const double dense = dense_log_likelihood(c.z, c.params, c.model);
        CHECK(std::abs(dense - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
        CHECK((dense_covariance(c.params, c.model) - oracle::covariance(c.params, c.model)).norm() <=
              1e-10 * oracle::covariance(c.params, c.model).norm());
    }
}

TEST_CASE("pair evaluation agrees with separate evaluations")
{
    for (int trial = 0; trial < 8; ++trial)
    {
        Case c = make_case(200 + trial, 17, 2, trial % 5, true, trial % 2 == 1);
        CAPTURE(trial);
        const PairValue pv = log_likelihood_pair(c.z, c.params, c.model);
        c.params.los = false;
        const double a = oracle::log_likelihood(c.z, c.params, c.model);
        c.params.los = true;
        const double p = oracle::log_likelihood(c.z, c.params, c.model);
        CHECK(std::abs(pv.absent - a) <= 1e-9 * std::abs(a));
        CHECK(std::abs(pv.present - p) <= 1e-9 * std::abs(p));
    }
}

TEST_CASE("zero-variance columns and the empty map")
{
    Case c = make_case(300, 12, 2, 3, true, false);
    for (auto &f : c.params.features)
        f.variance = 0.0;
    const double ref = oracle::log_likelihood(c.z, c.params, c.model);
    CHECK(std::abs(log_likelihood(c.z, c.params, c.model) - ref) <= 1e-9 * std::abs(ref));

    c.params.features.clear();
    c.params.los = false;
    const double eta = c.params.noise_variance;
    const double white = -c.z.squaredNorm() / eta - c.z.size() * std::log(kPi * eta);
    CHECK(log_likelihood(c.z, c.params, c.model) == doctest::Approx(white).epsilon(1e-12));
    const LowRankFactors f = stack_factors(c.z, c.params, c.model);
    CHECK(f.rank == 0);
}

TEST_CASE("noise variance floor")
{
    Case c = make_case(301, 10, 1, 1, true, false);
    c.params.noise_variance = 1e-300;
    const double v = log_likelihood(c.z, c.params, c.model);
    CHECK(std::isfinite(v));
    c.params.noise_variance = kMinNoiseVariance;
    CHECK(log_likelihood(c.z, c.params, c.model) == doctest::Approx(v));
}

TEST_CASE("invalid parameters are rejected")
{
    Case c = make_case(302, 10, 1, 1, true, false);
    CovarianceParams p = c.params;
    p.noise_variance = 0.0;
    CHECK_THROWS_AS(log_likelihood(c.z, p, c.model), InvalidArgument);
    p = c.params;
    p.los_variance = -1.0;
    CHECK_THROWS_AS(log_likelihood(c.z, p, c.model), InvalidArgument);
    p = c.params;
    p.features[0].bias = -1e-9;
    CHECK_THROWS_AS(log_likelihood(c.z, p, c.model), InvalidArgument);
    CHECK_THROWS_AS(log_likelihood(CVec::Zero(3), c.params, c.model), InvalidArgument);
}

TEST_CASE("sensitivities match finite differences")
{
    for (int trial = 0; trial < 6; ++trial)
    {
        const bool los = trial % 2 == 0;
        const Case c = make_case(400 + trial, 11, 3, 3, los, true);
        CAPTURE(trial);
        const LikelihoodSensitivities s = likelihood_sensitivities(c.z, c.params, c.model, true);
        CHECK(s.value == doctest::Approx(oracle::log_likelihood(c.z, c.params, c.model)).epsilon(1e-10));

        // Variances: [eta, gamma_lo, gamma_1..gamma_D]
        const int D = static_cast<int>(c.params.features.size());
        Vec x(2 + D), step(2 + D), g(2 + D);
        x[0] = c.params.noise_variance;
        x[1] = c.params.los_variance;
        g[0] = s.d_noise_variance;
        g[1] = s.d_los_variance;
        for (int n = 0; n < D; ++n)
        {
            x[2 + n] = c.params.features[n].variance;
            g[2 + n] = s.features[n].d_variance;
        }
        for (Eigen::Index i = 0; i < x.size(); ++i)
            step[i] = 1e-6 * x[i];
        const auto f_var = [&](const Vec &v) {
            CovarianceParams p = c.params;
            p.noise_variance = v[0];
            p.los_variance = v[1];
            for (int n = 0; n < D; ++n)
                p.features[n].variance = v[2 + n];
            return oracle::log_likelihood(c.z, p, c.model);
        };
        Vec gfd = fd(f_var, x, step);
        if (!los)
        {
            CHECK(g[1] == 0.0);
            CHECK(std::abs(gfd[1]) < 1e-6 * gfd.norm());
            g[1] = gfd[1] = 0.0;
        }
        CHECK(oracle::rel_error(g, gfd) < 1e-5);

        // Feature positions through delay and azimuth
        Vec xp(2 * D), sp = Vec::Constant(2 * D, 1e-6), gp(2 * D);
        for (int n = 0; n < D; ++n)
        {
            const Vec2 d = c.params.features[n].position - c.params.position;
            const double r = d.norm();
            const Vec2 dt = d / (kSpeedOfLight * r), da = Vec2(-d.y(), d.x()) / (r * r);
            xp.segment<2>(2 * n) = c.params.features[n].position;
            gp.segment<2>(2 * n) = s.features[n].d_delay * dt + s.features[n].d_azimuth * da;
        }
        const auto f_pos = [&](const Vec &v) {
            CovarianceParams p = c.params;
            for (int n = 0; n < D; ++n)
                p.features[n].position = v.segment<2>(2 * n);
            return oracle::log_likelihood(c.z, p, c.model);
        };
        CHECK(oracle::rel_error(gp, fd(f_pos, xp, sp)) < 1e-5);

        // Feature biases act on the delay directly
        Vec xb(D), sb = Vec::Constant(D, 1e-15), gb(D);
        for (int n = 0; n < D; ++n)
        {
            xb[n] = c.params.features[n].bias;
            gb[n] = s.features[n].d_delay;
        }
        const auto f_bias = [&](const Vec &v) {
            CovarianceParams p = c.params;
            for (int n = 0; n < D; ++n)
                p.features[n].bias = v[n];
            return oracle::log_likelihood(c.z, p, c.model);
        };
        CHECK(oracle::rel_error(gb, fd(f_bias, xb, sb)) < 1e-5);

        // Calibration
        const Vec xc = c.model.calibration.to_vector();
        Vec sc(xc.size());
        const int mf = c.model.signal.num_freq, ma = c.model.signal.num_antennas;
        for (Eigen::Index i = 0; i < xc.size(); ++i)
            sc[i] = i < 2 * (mf + ma) ? 1e-6 : 1e-9;
        const auto f_cal = [&](const Vec &v) {
            RadioModel m = c.model;
            m.calibration = Calibration::from_vector(v, mf, ma);
            return oracle::log_likelihood(c.z, c.params, m);
        };
        REQUIRE(s.d_calibration.size() == xc.size());
        CHECK(oracle::rel_error(s.d_calibration, fd(f_cal, xc, sc)) < 1e-5);
    }
}

TEST_CASE("sensitivities without calibration leave the vector empty")
{
    const Case c = make_case(450, 9, 2, 2, true, false);
    const LikelihoodSensitivities s = likelihood_sensitivities(c.z, c.params, c.model);
    CHECK(s.d_calibration.size() == 0);
    CHECK(s.features.size() == 2);
}

TEST_CASE("batch evaluation")
{
    Rng rng(500);
    const RadioModel m = testing::make_model(13, 2);
    std::vector<Channel> channels(2);
    for (auto &ch : channels)
    {
        const CovarianceParams p = testing::random_params(rng, 2, true);
        ch.bs_position = p.bs_position;
        ch.features = p.features;
        ch.measurement = testing::sample_z(oracle::covariance(p, m), rng);
    }
    std::vector<PairQuery> queries;
    for (int i = 0; i < 40; ++i)
    {
        PairQuery q;
        q.channel = i % 2;
        q.position = testing::point_away(rng, channels[q.channel].bs_position, 1.0, 10.0);
        q.orientation = 0.1 * i;
        q.los_variance = 0.5;
        q.noise_variance = 1e9;
        queries.push_back(q);
    }
    queries[5].noise_variance = -1.0;
    queries[7].channel = 9;

    const auto res = batch_log_likelihood(channels, queries, m);
    REQUIRE(res.size() == queries.size());
    CHECK_FALSE(res[5].ok());
    CHECK_FALSE(res[7].ok());
    for (std::size_t i = 0; i < res.size(); ++i)
    {
        if (i == 5 || i == 7)
            continue;
        REQUIRE(res[i].ok());
        const PairQuery &q = queries[i];
        CovarianceParams p;
        p.position = q.position;
        p.orientation = q.orientation;
        p.bs_position = channels[q.channel].bs_position;
        p.features = channels[q.channel].features;
        p.los_variance = q.los_variance;
        p.noise_variance = q.noise_variance;
        const PairValue ref = log_likelihood_pair(channels[q.channel].measurement, p, m);
        CHECK(res[i].value.absent == doctest::Approx(ref.absent).epsilon(1e-12));
        CHECK(res[i].value.present == doctest::Approx(ref.present).epsilon(1e-12));
    }
}

TEST_CASE("coincident feature and MT position stays finite")
{
    Case c = make_case(600, 10, 2, 1, true, false);
    c.params.features[0].position = c.params.position;
    c.params.features[0].bias = 0.0;
    const double v = log_likelihood(c.z, c.params, c.model);
    CHECK(std::isfinite(v));
}
