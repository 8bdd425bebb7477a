// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rfslam
{
    std::vector<double> position_errors(const std::vector<Vec2> &truth, const std::vector<Vec2> &estimate)
    {
        if (truth.size() != estimate.size())
            throw InvalidArgument("position_errors: track lengths differ");
        std::vector<double> e(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
            e[i] = (truth[i] - estimate[i]).norm();
        return e;
    }

    double median(std::vector<double> v)
    {
        if (v.empty())
            return 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }

    ErrorSummary position_rmse(const std::vector<Vec2> &truth, const std::vector<Vec2> &estimate)
    {
        const std::vector<double> e = position_errors(truth, estimate);
        ErrorSummary s;
        if (e.empty())
            return s;
        double sq = 0.0, ab = 0.0;
        for (double v : e)
        {
            sq += v * v;
            ab += v;
        }
        s.rmse = std::sqrt(sq / e.size());
        s.mean = ab / e.size();
        s.median = median(e);
        return s;
    }

    std::vector<VisibilityScore> visibility_scores(const std::vector<std::vector<char>> &flags,
                                                   const std::vector<std::vector<double>> &prob, double threshold)
    {
        if (flags.size() != prob.size())
            throw InvalidArgument("visibility_scores: lengths differ");
        const std::size_t J = flags.empty() ? 0 : flags.front().size();
        std::vector<VisibilityScore> out(J);
        for (std::size_t k = 0; k < flags.size(); ++k)
        {
            if (flags[k].size() != J || prob[k].size() != J)
                throw InvalidArgument("visibility_scores: BS counts differ");
            for (std::size_t j = 0; j < J; ++j)
            {
                const bool t = flags[k][j] != 0, d = prob[k][j] >= threshold;
                auto &s = out[j];
                if (t && d)
                    ++s.tp;
                else if (!t && d)
                    ++s.fp;
                else if (!t && !d)
                    ++s.tn;
                else
                    ++s.fn;
            }
        }
        for (auto &s : out)
        {
            const int n = s.tp + s.fp + s.tn + s.fn;
            s.accuracy = n ? static_cast<double>(s.tp + s.tn) / n : 1.0;
            s.precision = (s.tp + s.fp) ? static_cast<double>(s.tp) / (s.tp + s.fp) : 1.0;
            s.recall = (s.tp + s.fn) ? static_cast<double>(s.tp) / (s.tp + s.fn) : 1.0;
        }
        return out;
    }

    namespace
    {
        void finish(MapMatch &m, const std::vector<VirtualAnchor> &truth, const MapFeatures &learned)
        {
            m.matched = static_cast<int>(m.pairs.size());
            m.unmatched_true = static_cast<int>(truth.size()) - m.matched;
            m.unmatched_learned = static_cast<int>(learned.size()) - m.matched;
            double wsum = 0.0, dsum = 0.0, plain = 0.0;
            for (const auto &[t, l] : m.pairs)
            {
                const double d = (truth[t].position - learned[l].position).norm();
                wsum += learned[l].variance;
                dsum += learned[l].variance * d;
                plain += d;
            }
            if (m.pairs.empty())
                m.mean_distance = 0.0;
            else if (wsum > 0.0)
                m.mean_distance = dsum / wsum;
            else
                m.mean_distance = plain / m.pairs.size();
        }

        // Recursive search over injective partial assignments true -> learned
        void search(const std::vector<VirtualAnchor> &truth, const MapFeatures &learned, double radius, std::size_t t,
                    std::vector<char> &used, std::vector<std::pair<int, int>> &cur, double cur_d,
                    std::vector<std::pair<int, int>> &best, double &best_d)
        {
            if (t == truth.size())
            {
                if (cur.size() > best.size() || (cur.size() == best.size() && cur_d < best_d))
                {
                    best = cur;
                    best_d = cur_d;
                }
                return;
            }
            search(truth, learned, radius, t + 1, used, cur, cur_d, best, best_d);
            for (std::size_t l = 0; l < learned.size(); ++l)
            {
                if (used[l])
                    continue;
                const double d = (truth[t].position - learned[l].position).norm();
                if (d > radius)
                    continue;
                used[l] = 1;
                cur.emplace_back(static_cast<int>(t), static_cast<int>(l));
                search(truth, learned, radius, t + 1, used, cur, cur_d + d, best, best_d);
                cur.pop_back();
                used[l] = 0;
            }
        }
    } // namespace

    MapMatch map_error(const std::vector<VirtualAnchor> &truth, const MapFeatures &learned, double radius)
    {
        MapMatch m;
        if (truth.size() <= 4 && learned.size() <= 4)
        {
            std::vector<char> used(learned.size(), 0);
            std::vector<std::pair<int, int>> cur;
            double best_d = std::numeric_limits<double>::infinity();
            search(truth, learned, radius, 0, used, cur, 0.0, m.pairs, best_d);
        }
        else
        {
            std::vector<int> order(learned.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return learned[a].variance > learned[b].variance; });
            std::vector<char> taken(truth.size(), 0);
            for (int l : order)
            {
                int best = -1;
                double bd = radius;
                for (std::size_t t = 0; t < truth.size(); ++t)
                {
                    if (taken[t])
                        continue;
                    const double d = (truth[t].position - learned[l].position).norm();
                    if (d <= bd)
                    {
                        bd = d;
                        best = static_cast<int>(t);
                    }
                }
                if (best >= 0)
                {
                    taken[best] = 1;
                    m.pairs.emplace_back(best, l);
                }
            }
            std::sort(m.pairs.begin(), m.pairs.end());
        }
        finish(m, truth, learned);
        return m;
    }

    MetricsReport evaluate(const ScenarioTruth &truth, const std::vector<Vec2> &estimate,
                           const std::vector<std::vector<double>> &visibility, const std::vector<MapFeatures> *map,
                           double radius)
    {
        const int K = truth.steps();
        if (static_cast<int>(estimate.size()) != K || static_cast<int>(visibility.size()) != K)
            throw InvalidArgument("evaluate: estimate track must have one entry per step");
        std::vector<Vec2> tp(K);
        for (int k = 1; k <= K; ++k)
            tp[k - 1] = truth.states[k].position;
        MetricsReport r;
        r.position = position_rmse(tp, estimate);
        r.visibility = visibility_scores(truth.los_flags, visibility);
        const auto err = position_errors(tp, estimate);
        double sb = 0.0, su = 0.0;
        int nb = 0, nu = 0;
        for (int k = 0; k < K; ++k)
        {
            const bool any = std::any_of(truth.los_flags[k].begin(), truth.los_flags[k].end(), [](char f) { return !f; });
            (any ? sb : su) += err[k];
            ++(any ? nb : nu);
        }
        r.blocked_error = nb ? sb / nb : 0.0;
        r.unblocked_error = nu ? su / nu : 0.0;
        r.blocked_ratio = (nb && nu && r.unblocked_error > 0.0) ? r.blocked_error / r.unblocked_error : 0.0;
        if (map)
        {
            if (map->size() != truth.anchors.size())
                throw InvalidArgument("evaluate: one feature list per BS is required");
            for (std::size_t j = 0; j < map->size(); ++j)
                r.map.push_back(map_error(truth.anchors[j], (*map)[j], radius));
        }
        return r;
    }

} // namespace rfslam
