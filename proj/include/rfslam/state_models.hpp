// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// First-order Markov transitions and priors for the MT state, the per-BS LOS amplitude
// variance/visibility pair and the per-BS noise variance.

#ifndef RFSLAM_STATE_MODELS_HPP
#define RFSLAM_STATE_MODELS_HPP

#include "rfslam/common.hpp"

#include <limits>
#include <utility>

namespace rfslam
{
    // Gamma density given by mean and shape (scale = mean / shape). An infinite shape is a point mass.
    struct GammaSpec
    {
        double mean = 1.0;
        double shape = 1.0;

        static GammaSpec point(double value) { return {value, std::numeric_limits<double>::infinity()}; }
        bool deterministic() const { return std::isinf(shape); }
        double sample(Rng &rng) const;
        void validate(const char *what) const;
    };

    struct MtState
    {
        Vec2 position = Vec2::Zero(); // [m]
        Vec2 velocity = Vec2::Zero(); // [m/s]
        double orientation = 0.0;     // [rad], kept unwrapped
    };

    struct MotionParams
    {
        double dt = 1.0;             // [s]
        double sigma_acc = 0.2;      // [m/s^2]
        double sigma_o_walk = 0.05;  // [rad]
        double sigma_o_meas = 0.02;  // [rad]
        void validate() const;
    };

    struct LosTransitionParams
    {
        double p_a = 0.05;            // appearance probability
        double p_v = 0.999;           // survival probability
        double shape_gamma = 100.0;   // c_gamma
        GammaSpec appearance{1.0, 2.0}; // f_a
        double dummy_mean = 1e-6;     // f_D, only sampled for bookkeeping
        void validate() const;
    };

    struct NoiseTransitionParams
    {
        double shape_eta = 1000.0; // c_eta
        void validate() const;
    };

    struct Priors
    {
        Vec2 position_mean = Vec2::Zero();
        double position_std = 1.0;      // per coordinate [m]
        Vec2 velocity_mean = Vec2::Zero();
        double velocity_std = 0.5;      // per coordinate [m/s]
        double orientation_mean = 0.0;
        double orientation_std = 0.05;
        double los_probability = 0.9;   // P(r_0 = 1)
        GammaSpec los_variance{1.0, 2.0};
        GammaSpec noise_variance{1.0, 10.0};
        void validate() const;
    };

    // Orientation mean/std after fusing the random-walk prediction with the IMU reading (NaN: no reading)
    std::pair<double, double> fuse_orientation(double o_prev, double z_o, const MotionParams &params);

    MtState sample_mt_transition(const MtState &prev, double z_o, const MotionParams &params, Rng &rng);

    struct LosSample
    {
        double variance;
        bool visible;
    };
    LosSample sample_los_transition(double gamma_prev, bool r_prev, const LosTransitionParams &params, Rng &rng);

    double sample_eta_transition(double eta_prev, const NoiseTransitionParams &params, Rng &rng);

    // Survival-path LOS variance draw: Gamma(c_gamma, gamma_prev / c_gamma)
    double sample_gamma_survival(double gamma_prev, const LosTransitionParams &params, Rng &rng);

    struct InitialParticles
    {
        std::vector<MtState> mt;                     // P
        std::vector<std::vector<double>> los_variance; // J x P
        std::vector<std::vector<char>> los_flag;     // J x P
        std::vector<std::vector<double>> noise_variance; // J x P
    };
    InitialParticles sample_priors(const Priors &priors, int num_bs, int num_particles, Rng &rng);

    MtState sample_mt_prior(const Priors &priors, Rng &rng);

} // namespace rfslam

#endif
