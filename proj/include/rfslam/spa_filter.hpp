// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Particle-based sum-product filter over the MT state, the per-BS (LOS variance, visibility)
// pair and the per-BS noise variance. Particles of all latents are stacked by index so one
// likelihood pair per (BS, particle) drives every weight update.
//
// The r = 0 hypothesis of each BS is carried as a scalar mass; LOS particles hold the r = 1 mass
// in their (unnormalized) weights, so that visibility = sum of LOS weights.

#ifndef RFSLAM_SPA_FILTER_HPP
#define RFSLAM_SPA_FILTER_HPP

#include "rfslam/likelihood.hpp"
#include "rfslam/scenario.hpp"
#include "rfslam/state_models.hpp"

#include <optional>

namespace rfslam
{
    struct FilterConfig
    {
        int num_particles = 1000; // P
        int num_birth = 50;       // P_a
        int subset_size = 128;    // P_0, particles kept per snapshot
        std::uint64_t seed = 1;
        bool keep_snapshots = true;
        void validate() const;
    };

    struct FilterModels
    {
        MotionParams motion;
        LosTransitionParams los;
        NoiseTransitionParams noise;
        Priors priors;
        void validate() const;
    };

    struct BsBelief
    {
        std::vector<double> los_variance;   // gamma^(j,p)
        std::vector<double> los_weight;     // w_y^(j,p), sums to the visibility
        double absent_mass = 0.0;           // r = 0 mass
        std::vector<double> noise_variance; // eta^(j,p)
        std::vector<double> noise_weight;   // w_eta^(j,p), sums to 1

        double visibility() const;
    };

    struct ParticleBeliefs
    {
        std::vector<MtState> mt;
        std::vector<double> mt_weight;
        std::vector<BsBelief> bs;

        int size() const { return static_cast<int>(mt.size()); }
    };

    struct StateEstimates
    {
        MtState mt;
        std::vector<double> visibility;                  // p_k^(j)
        std::vector<std::optional<double>> los_variance; // conditional on r = 1; empty if p = 0
        std::vector<double> noise_variance;
    };

    // Equal-weight particle subset and point estimates of one time step, as used by learning
    struct BeliefSnapshot
    {
        int k = 0;
        std::vector<Vec2> position;               // P_0
        std::vector<double> orientation;          // P_0
        std::vector<std::vector<double>> los_variance;   // J x P_0
        std::vector<std::vector<double>> noise_variance; // J x P_0
        std::vector<double> visibility;           // J
        StateEstimates estimate;
    };

    // Running tally of the normalization / bound checks done after every update
    struct InvariantStats
    {
        long checks = 0;
        long violations = 0;
        double max_deviation = 0.0;
        void check(double deviation, double tol);
        void merge(const InvariantStats &o);
    };

    // Indices of a systematic resample of n draws from normalized weights
    std::vector<int> systematic_resample(std::span<const double> weights, int n, Rng &rng);

    StateEstimates estimate(const ParticleBeliefs &beliefs);

    // Initial beliefs from the priors: all LOS particles carry P(r_0 = 1)/P
    ParticleBeliefs initial_beliefs(const FilterModels &models, int num_bs, int num_particles, Rng &rng);

    // Prediction/birth. Expects equally weighted input particle sets (as left by update_step).
    // z_o may be NaN for a step without orientation reading.
    ParticleBeliefs predict_step(const ParticleBeliefs &prev, double z_o, const FilterModels &models, int num_birth,
                                 Rng &rng);

    struct UpdateResult
    {
        ParticleBeliefs posterior;  // weighted, before resampling
        int failed_evaluations = 0; // likelihood evaluations that raised and were dropped
    };
    // Measurement update; throws NumericalDegeneracy if all weights of a set vanish
    UpdateResult update_step(const ParticleBeliefs &predicted, const MeasurementFrame &frame,
                             const std::vector<Vec2> &bs_positions, const std::vector<MapFeatures> &features,
                             const RadioModel &model);

    // Systematic resampling of every set followed by an independent random permutation of each
    ParticleBeliefs resample(const ParticleBeliefs &posterior, Rng &rng);

    // Normalization and bound checks of a posterior
    void check_invariants(const ParticleBeliefs &b, InvariantStats &stats);

    // Sequential filter with state carried across calls
    class ParticleFilter
    {
    public:
        ParticleFilter(std::vector<Vec2> bs_positions, FilterModels models, FilterConfig cfg);

        const ParticleBeliefs &beliefs() const { return beliefs_; }
        StateEstimates current_estimate() const { return estimate(beliefs_); }

        struct Step
        {
            StateEstimates estimate;
            std::optional<BeliefSnapshot> snapshot;
        };
        Step step(const MeasurementFrame &frame, double z_o, const std::vector<MapFeatures> &features,
                  const RadioModel &model);

        const InvariantStats &invariants() const { return invariants_; }
        int failed_evaluations() const { return failed_; }

    private:
        std::vector<Vec2> bs_;
        FilterModels models_;
        FilterConfig cfg_;
        Rng rng_;
        ParticleBeliefs beliefs_;
        InvariantStats invariants_;
        int failed_ = 0;
    };

    struct FilterRun
    {
        std::vector<StateEstimates> estimates; // k = 0..K (prior first)
        std::vector<BeliefSnapshot> snapshots; // k = 1..K when kept
        InvariantStats invariants;
        int failed_evaluations = 0;
    };

    // features: one list per BS, or empty for the LOS-only model. imu: z_o per frame (k = 1..K).
    FilterRun run_filter(const std::vector<MeasurementFrame> &frames, const std::vector<double> &imu,
                         const std::vector<Vec2> &bs_positions, const FilterModels &models,
                         const std::vector<MapFeatures> &features, const RadioModel &model, const FilterConfig &cfg);

} // namespace rfslam

#endif
