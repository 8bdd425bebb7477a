// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Zero-mean complex Gaussian measurement likelihood with identity-plus-low-rank covariance
//
//     C = eta I + r gamma_lo h_lo h_lo^H + P (sum_n gamma_n h_n h_n^H) P^H,
//     P = I - h_lo h_lo^H / |h_lo|^2,
//
// evaluated through the Woodbury identity and the matrix determinant lemma on the R x R
// capacitance matrix G = I + U^H U / eta, where U stacks sqrt(gamma_lo) h_lo (if r = 1) and the
// projected feature columns sqrt(gamma_n) P h_n. Columns with zero variance are dropped.

#ifndef RFSLAM_LIKELIHOOD_HPP
#define RFSLAM_LIKELIHOOD_HPP

#include "rfslam/rf_signal.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>

namespace rfslam
{
    // One environment-induced multipath feature (a virtual point source)
    struct MapFeature
    {
        Vec2 position = Vec2::Zero(); // [m]
        double bias = 0.0;            // Extra delay [s], >= 0
        double variance = 0.0;        // Amplitude variance, >= 0
    };
    using MapFeatures = std::vector<MapFeature>;

    struct CovarianceParams
    {
        Vec2 position = Vec2::Zero();    // MT position [m]
        double orientation = 0.0;        // MT orientation [rad]
        Vec2 bs_position = Vec2::Zero(); // BS position [m]
        bool los = true;                 // r
        double los_variance = 0.0;       // gamma_lo
        double noise_variance = 1.0;     // eta
        MapFeatures features;

        void validate() const;
    };

    struct LowRankFactors
    {
        CMat U;            // M x R
        CMat B;            // U / sqrt(eta)
        CVec q;            // z / sqrt(eta)
        CMat G;            // I_R + U^H U / eta
        CMat chol_G;       // Lower Cholesky factor of G (+ jitter, if any was needed)
        int rank = 0;      // R
        double jitter = 0; // Diagonal loading that was required (0 in the regular case)
        double noise_variance = 1.0;
        std::vector<int> columns; // Source of each column: -1 for LOS, n for feature n

        double log_det_G() const;
    };

    struct FeatureSensitivity
    {
        double d_variance = 0.0; // d ell / d gamma_n
        double d_delay = 0.0;    // d ell / d tau_n [1/s]
        double d_azimuth = 0.0;  // d ell / d (MT-local azimuth of feature n)
    };

    struct LikelihoodSensitivities
    {
        double value = 0.0;
        double d_los_variance = 0.0;   // zero when r = 0
        double d_noise_variance = 0.0;
        std::vector<FeatureSensitivity> features;
        Vec d_calibration;             // Layout of Calibration::to_vector(); empty unless requested
    };

    // v - h_lo (h_lo^H v) / |h_lo|^2
    CVec projector_apply(const CVec &h_lo, const CVec &v);

    LowRankFactors stack_factors(const CVec &z, const CovarianceParams &params, const RadioModel &model);

    double log_likelihood(const CVec &z, const CovarianceParams &params, const RadioModel &model);

    // Values for r = 0 and r = 1 (params.los is ignored). The r = 1 value extends the Cholesky
    // factor of the feature-only capacitance matrix by the LOS column.
    struct PairValue
    {
        double absent = 0.0;  // r = 0
        double present = 0.0; // r = 1
    };
    PairValue log_likelihood_pair(const CVec &z, const CovarianceParams &params, const RadioModel &model);

    // Analytic partials of ell for the hypothesis selected by params.los
    LikelihoodSensitivities likelihood_sensitivities(const CVec &z, const CovarianceParams &params,
                                                     const RadioModel &model, bool with_calibration = false);

    // Batched pair evaluation across (BS, particle) queries. A channel bundles what is shared by
    // all queries of one BS at one time step.
    struct Channel
    {
        CVec measurement;
        Vec2 bs_position = Vec2::Zero();
        MapFeatures features;
    };
    struct PairQuery
    {
        int channel = 0;
        Vec2 position = Vec2::Zero();
        double orientation = 0.0;
        double los_variance = 0.0;
        double noise_variance = 1.0;
    };
    struct PairResult
    {
        PairValue value;
        std::string error; // empty on success
        bool ok() const { return error.empty(); }
    };
    // Output order equals query order; errors are reported per element
    std::vector<PairResult> batch_log_likelihood(std::span<const Channel> channels, std::span<const PairQuery> queries,
                                                 const RadioModel &model);

    // Dense O(M^3) reference path
    CMat dense_covariance(const CovarianceParams &params, const RadioModel &model);
    double dense_log_likelihood(const CVec &z, const CovarianceParams &params, const RadioModel &model);

} // namespace rfslam

#endif
