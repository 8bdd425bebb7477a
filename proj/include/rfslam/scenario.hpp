// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Ground-truth scenario synthesis: trajectories, image-source virtual anchors of single-bounce
// wall reflections, LOS blockage schedules and Swerling-1 measurement frames.

#ifndef RFSLAM_SCENARIO_HPP
#define RFSLAM_SCENARIO_HPP

#include "rfslam/rf_signal.hpp"
#include "rfslam/state_models.hpp"

namespace rfslam
{
    struct Wall
    {
        Vec2 a = Vec2::Zero();
        Vec2 b = Vec2::UnitX();
    };

    struct TrajectorySpec
    {
        std::vector<Vec2> waypoints;
        double speed = 1.0;        // [m/s]
        double dt = 1.0;           // [s]
        int steps = 1;             // K
        double sigma_o = 0.02;     // IMU orientation noise [rad]
    };

    // Steps start..end (1-based, inclusive) during which the LOS of one BS is blocked
    struct BlockageInterval
    {
        int start = 1;
        int end = 1;
    };

    struct Scenario
    {
        std::vector<Vec2> bs_positions;
        std::vector<Wall> walls;
        TrajectorySpec trajectory;
        std::vector<std::vector<BlockageInterval>> blockage; // per BS, may be shorter than J
        std::vector<double> los_gamma;                       // per BS
        double mpc_gamma_scale = 0.25;
        bool mpc_distance_scaling = false; // extra (d_lo / d_refl)^2 factor on reflection variances
        std::vector<double> noise_eta;     // per BS
        std::uint64_t seed = 1;

        int num_bs() const { return static_cast<int>(bs_positions.size()); }
        bool blocked(int j, int k) const;
        void validate() const;
    };

    struct VirtualAnchor
    {
        Vec2 position = Vec2::Zero();
        double variance = 0.0; // reference amplitude variance
        int wall = 0;
    };

    struct ScenarioTruth
    {
        std::vector<MtState> states;                   // k = 0..K
        std::vector<double> imu_orientation;           // z_o for k = 0..K
        std::vector<std::vector<char>> los_flags;      // [k-1][j] for k = 1..K
        std::vector<std::vector<VirtualAnchor>> anchors; // per BS

        int steps() const { return static_cast<int>(los_flags.size()); }
    };

    struct MeasurementFrame
    {
        int k = 0;
        std::vector<CVec> z; // per BS, length M
    };

    // Reflection of p across the infinite line through the wall
    Vec2 mirror_anchor(const Wall &wall, const Vec2 &p);

    // True if the single-bounce path BS -> wall -> MT exists: BS and MT on the same side and the
    // specular point inside the segment
    bool reflection_valid(const Wall &wall, const Vec2 &p_bs, const Vec2 &p_mt);

    // Specular point on the wall line (intersection of the image-to-MT segment with the line)
    Vec2 specular_point(const Wall &wall, const Vec2 &p_bs, const Vec2 &p_mt);

    struct TrajectoryResult
    {
        std::vector<MtState> states;         // k = 0..K
        std::vector<double> imu_orientation; // k = 0..K
    };
    TrajectoryResult synth_trajectory(const TrajectorySpec &spec, Rng &rng);

    // Anchors with variances los_gamma * mpc_gamma_scale (distance factor applied per step if enabled)
    std::vector<std::vector<VirtualAnchor>> virtual_anchors(const Scenario &scenario);

    ScenarioTruth synth_truth(const Scenario &scenario, Rng &rng);

    std::vector<MeasurementFrame> synth_measurements(const Scenario &scenario, const ScenarioTruth &truth,
                                                     const RadioModel &model, Rng &rng);

    struct Simulation
    {
        ScenarioTruth truth;
        std::vector<MeasurementFrame> frames;
    };
    // Full pipeline from the scenario seed
    Simulation simulate(const Scenario &scenario, const RadioModel &model);

    // Axis-aligned bounds of BSs, walls and waypoints
    struct BoundingBox
    {
        Vec2 lo = Vec2::Zero();
        Vec2 hi = Vec2::Zero();
        Vec2 center() const { return 0.5 * (lo + hi); }
        double diagonal() const { return (hi - lo).norm(); }
        BoundingBox expanded(double margin) const { return {lo.array() - margin, hi.array() + margin}; }
    };
    BoundingBox scene_bounds(const Scenario &scenario);

} // namespace rfslam

#endif
