// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#ifndef RFSLAM_METRICS_HPP
#define RFSLAM_METRICS_HPP

#include "rfslam/likelihood.hpp"
#include "rfslam/scenario.hpp"

namespace rfslam
{
    struct ErrorSummary
    {
        double rmse = 0.0;
        double median = 0.0;
        double mean = 0.0;
    };

    // Per-step Euclidean errors
    std::vector<double> position_errors(const std::vector<Vec2> &truth, const std::vector<Vec2> &estimate);
    ErrorSummary position_rmse(const std::vector<Vec2> &truth, const std::vector<Vec2> &estimate);
    double median(std::vector<double> v);

    struct VisibilityScore
    {
        double accuracy = 0.0;
        double precision = 0.0; // 1 when nothing was declared visible and nothing was
        double recall = 0.0;    // 1 when nothing was visible
        int tp = 0, fp = 0, tn = 0, fn = 0;
    };

    // flags and probabilities indexed [k][j]; declaration r^ = [p >= threshold]
    std::vector<VisibilityScore> visibility_scores(const std::vector<std::vector<char>> &flags,
                                                   const std::vector<std::vector<double>> &probabilities,
                                                   double threshold = 0.5);

    struct MapMatch
    {
        double mean_distance = 0.0; // variance-weighted mean distance of matched pairs
        int matched = 0;
        int unmatched_true = 0;
        int unmatched_learned = 0;
        std::vector<std::pair<int, int>> pairs; // (true index, learned index)
    };

    // Exhaustive assignment (most matches, then least total distance) when both sides have at most
    // four entries; otherwise learned features in descending variance grab their nearest free anchor.
    MapMatch map_error(const std::vector<VirtualAnchor> &truth, const MapFeatures &learned, double radius = 2.0);

    struct MetricsReport
    {
        ErrorSummary position;
        std::vector<VisibilityScore> visibility;
        std::vector<MapMatch> map;          // per BS, empty without a map
        double blocked_error = 0.0;         // mean error on steps with any LOS blocked
        double unblocked_error = 0.0;       // mean error on the remaining steps
        double blocked_ratio = 0.0;         // blocked / unblocked (0 if either is empty)
    };

    MetricsReport evaluate(const ScenarioTruth &truth, const std::vector<Vec2> &estimate,
                           const std::vector<std::vector<double>> &visibility,
                           const std::vector<MapFeatures> *map = nullptr, double radius = 2.0);

} // namespace rfslam

#endif
