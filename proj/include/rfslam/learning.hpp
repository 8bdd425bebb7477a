// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Unsupervised map learning by alternating particle filtering (beliefs under the current map)
// with Adam ascent of the particle surrogate
//
//     Q~ = sum_k sum_j 1/P~ sum_p [ p_k^(j) log l(z | r=1, particle p) + (1 - p_k^(j)) log l(z | r=0, particle p) ].
//
// Because beliefs act as the auxiliary density of an evidence lower bound, every increase of Q~ on
// frozen beliefs cannot decrease that bound; the M-step therefore keeps the best iterate it visits.

#ifndef RFSLAM_LEARNING_HPP
#define RFSLAM_LEARNING_HPP

#include "rfslam/neural_map.hpp"
#include "rfslam/spa_filter.hpp"

#include <optional>

namespace rfslam
{
    struct LearnConfig
    {
        int segment_k0 = 0;       // 0: full track
        int em_iterations = 20;   // T
        int adam_steps = 100;     // per learning phase
        bool use_subset = true;   // P~ = P_0 (else all P particles)
        bool use_mmse_points = false; // P~ = 1 using MMSE estimates
        bool supervised = false;  // MT entries replaced by ground truth
        bool learn_chi = false;   // alternate calibration updates
        bool init_search = false; // grid search of the initial feature positions before the first M-step
        double search_spacing = 0.0; // [m], 0: c / (4 B)
        double lr_theta = 1e-3;
        double lr_chi = 1e-4;
        void validate() const;
    };

    struct QEvaluation
    {
        double value = 0.0;
        std::vector<double> terms; // per (snapshot, BS), row-major
        Vec grad_theta;            // empty unless requested
        Vec grad_chi;              // empty unless requested
    };

    // Everything the surrogate depends on besides the parameters being learned
    struct QProblem
    {
        const std::vector<BeliefSnapshot> *snapshots = nullptr;
        const std::vector<MeasurementFrame> *frames = nullptr; // indexed by k - 1
        std::vector<Vec2> bs_positions;
        bool use_mmse_points = false;
    };

    double q_tilde(const QProblem &problem, const NeuralMap &map, const RadioModel &model, QEvaluation *detail = nullptr);

    QEvaluation q_tilde_grad(const QProblem &problem, const NeuralMap &map, const RadioModel &model, bool with_theta,
                             bool with_chi);

    // Windows [1, k0], [k0 + 1, 2 k0], ... (1-based, inclusive); k0 <= 0 gives the full track
    std::vector<std::pair<int, int>> segment_scheduler(int K, int k0);

    // Replaces MT particles and MT estimates by the ground-truth state of each step
    std::vector<BeliefSnapshot> supervised_condition(const std::vector<BeliefSnapshot> &snapshots,
                                                     const ScenarioTruth &truth);

    struct TrainingLogRow
    {
        int segment = 0;
        int iteration = 0;
        std::string phase; // "theta" or "chi"
        double q_before = 0.0;
        double q_after = 0.0;
        double grad_norm = 0.0;
        double seconds = 0.0;
        std::vector<MapFeatures> features; // per BS after the phase
    };

    struct LearnInputs
    {
        std::vector<MeasurementFrame> frames;
        std::vector<double> imu; // per frame, may be empty
        std::vector<Vec2> bs_positions;
        FilterModels models;
        FilterConfig filter;
        const ScenarioTruth *truth = nullptr; // required for supervised mode
        std::optional<BoundingBox> search_bounds; // required with init_search
    };

    struct LearnState
    {
        NeuralMap map;
        RadioModel model; // carries the calibration
        AdamState adam_theta;
        AdamState adam_chi;
        bool searched = false; // set once the initial feature search has run
    };

    // Greedy grid search per BS: feature n is placed on the grid point of bounds that maximizes the
    // surrogate terms of that BS with features 0..n-1 already placed. Variances and biases are taken
    // from the map's current prediction.
    std::vector<MapFeatures> search_features(const QProblem &problem, const NeuralMap &map, const RadioModel &model,
                                             const BoundingBox &bounds, double spacing);

    // Minimum-norm change of the last position-network layer so that the map predicts the target
    // feature positions for every BS; biases and variances are left as predicted
    void fit_feature_positions(NeuralMap &map, const std::vector<Vec2> &bs_positions,
                               const std::vector<MapFeatures> &targets);

    // M-step on frozen snapshots; returns the log rows of the phases run
    std::vector<TrainingLogRow> m_step(const QProblem &problem, LearnState &state, const LearnConfig &cfg);

    // E-step (filter over the frames of one segment starting from filter) followed by the M-step
    std::vector<TrainingLogRow> em_iteration(const LearnInputs &in, std::pair<int, int> segment,
                                             const ParticleFilter &filter, LearnState &state, const LearnConfig &cfg);

    struct LearnResult
    {
        std::vector<TrainingLogRow> log;
    };
    LearnResult learn(const LearnInputs &in, LearnState &state, const LearnConfig &cfg);

    // Features for every BS from the current map
    std::vector<MapFeatures> map_features(const NeuralMap &map, const std::vector<Vec2> &bs_positions);

} // namespace rfslam

#endif
