// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/state_models.hpp"

#include <cmath>

namespace rfslam
{
    double GammaSpec::sample(Rng &rng) const
    {
        if (deterministic())
            return mean;
        std::gamma_distribution<double> g(shape, mean / shape);
        // Guard against underflow to exactly zero for tiny shapes
        return std::max(g(rng), std::numeric_limits<double>::min());
    }

    void GammaSpec::validate(const char *what) const
    {
        if (!(mean > 0.0) || !std::isfinite(mean) || !(shape > 0.0))
            throw InvalidArgument(std::string(what) + ": Gamma mean and shape must be positive");
    }

    void MotionParams::validate() const
    {
        if (!(dt > 0.0))
            throw InvalidArgument("MotionParams: dt must be positive");
        if (!(sigma_acc >= 0.0) || !(sigma_o_walk >= 0.0) || !(sigma_o_meas >= 0.0))
            throw InvalidArgument("MotionParams: standard deviations must be non-negative");
    }

    void LosTransitionParams::validate() const
    {
        if (!(p_a >= 0.0 && p_a <= 1.0) || !(p_v >= 0.0 && p_v <= 1.0))
            throw InvalidArgument("LosTransitionParams: probabilities must lie in [0, 1]");
        if (!(shape_gamma > 0.0))
            throw InvalidArgument("LosTransitionParams: c_gamma must be positive");
        if (!(dummy_mean > 0.0))
            throw InvalidArgument("LosTransitionParams: dummy mean must be positive");
        appearance.validate("LosTransitionParams.appearance");
    }

    void NoiseTransitionParams::validate() const
    {
        if (!(shape_eta > 0.0))
            throw InvalidArgument("NoiseTransitionParams: c_eta must be positive");
    }

    void Priors::validate() const
    {
        if (!(position_std >= 0.0) || !(velocity_std >= 0.0) || !(orientation_std >= 0.0))
            throw InvalidArgument("Priors: standard deviations must be non-negative");
        if (!(los_probability >= 0.0 && los_probability <= 1.0))
            throw InvalidArgument("Priors: LOS probability must lie in [0, 1]");
        los_variance.validate("Priors.los_variance");
        noise_variance.validate("Priors.noise_variance");
    }

    std::pair<double, double> fuse_orientation(double o_prev, double z_o, const MotionParams &params)
    {
        const double vw = params.sigma_o_walk * params.sigma_o_walk;
        const double vm = params.sigma_o_meas * params.sigma_o_meas;
        if (std::isnan(z_o))
            return {o_prev, params.sigma_o_walk};
        const double innov = wrap_angle(z_o - o_prev);
        if (vw == 0.0)
            return {o_prev, 0.0};
        if (vm == 0.0)
            return {o_prev + innov, 0.0};
        const double w = vw / (vw + vm);
        return {o_prev + w * innov, std::sqrt(vw * vm / (vw + vm))};
    }

    MtState sample_mt_transition(const MtState &prev, double z_o, const MotionParams &params, Rng &rng)
    {
        std::normal_distribution<double> n01(0.0, 1.0);
        MtState x;
        const double dt = params.dt;
        const Vec2 w(params.sigma_acc * n01(rng), params.sigma_acc * n01(rng));
        x.position = prev.position + prev.velocity * dt + 0.5 * w * dt * dt;
        x.velocity = prev.velocity + w * dt;
        const auto [mu, sd] = fuse_orientation(prev.orientation, z_o, params);
        x.orientation = sd > 0.0 ? mu + sd * n01(rng) : mu;
        return x;
    }

    double sample_gamma_survival(double gamma_prev, const LosTransitionParams &params, Rng &rng)
    {
        if (!(gamma_prev > 0.0))
            return GammaSpec{params.dummy_mean, 1.0}.sample(rng);
        return GammaSpec{gamma_prev, params.shape_gamma}.sample(rng);
    }

    LosSample sample_los_transition(double gamma_prev, bool r_prev, const LosTransitionParams &params, Rng &rng)
    {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const GammaSpec dummy{params.dummy_mean, 1.0};
        if (!r_prev)
        {
            if (u01(rng) < params.p_a)
                return {params.appearance.sample(rng), true};
            return {dummy.sample(rng), false};
        }
        if (u01(rng) < params.p_v)
            return {sample_gamma_survival(gamma_prev, params, rng), true};
        return {dummy.sample(rng), false};
    }

    double sample_eta_transition(double eta_prev, const NoiseTransitionParams &params, Rng &rng)
    {
        if (!(eta_prev > 0.0))
            throw InvalidArgument("sample_eta_transition: eta must be positive");
        return GammaSpec{eta_prev, params.shape_eta}.sample(rng);
    }

    MtState sample_mt_prior(const Priors &priors, Rng &rng)
    {
        std::normal_distribution<double> n01(0.0, 1.0);
        MtState x;
        x.position = priors.position_mean + priors.position_std * Vec2(n01(rng), n01(rng));
        x.velocity = priors.velocity_mean + priors.velocity_std * Vec2(n01(rng), n01(rng));
        x.orientation = priors.orientation_mean + priors.orientation_std * n01(rng);
        return x;
    }

    InitialParticles sample_priors(const Priors &priors, int num_bs, int num_particles, Rng &rng)
    {
        priors.validate();
        if (num_bs < 0 || num_particles < 0)
            throw InvalidArgument("sample_priors: counts must be non-negative");
        InitialParticles out;
        out.mt.reserve(num_particles);
        for (int p = 0; p < num_particles; ++p)
            out.mt.push_back(sample_mt_prior(priors, rng));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        out.los_variance.assign(num_bs, std::vector<double>(num_particles));
        out.los_flag.assign(num_bs, std::vector<char>(num_particles));
        out.noise_variance.assign(num_bs, std::vector<double>(num_particles));
        for (int j = 0; j < num_bs; ++j)
            for (int p = 0; p < num_particles; ++p)
            {
                out.los_flag[j][p] = u01(rng) < priors.los_probability;
                out.los_variance[j][p] = priors.los_variance.sample(rng);
                out.noise_variance[j][p] = priors.noise_variance.sample(rng);
            }
        return out;
    }

} // namespace rfslam
