// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/scenario.hpp"

#include <cmath>

namespace rfslam
{
    namespace
    {
        void check_wall(const Wall &w)
        {
            if (!((w.b - w.a).norm() > 0.0))
                throw InvalidArgument("wall has zero length");
        }

        double side(const Wall &w, const Vec2 &p)
        {
            const Vec2 d = w.b - w.a;
            const Vec2 e = p - w.a;
            return d.x() * e.y() - d.y() * e.x();
        }

        // Swerling-1 draw with variance v
        cplx cn(double v, Rng &rng)
        {
            std::normal_distribution<double> n01(0.0, 1.0);
            const double s = std::sqrt(0.5 * v);
            return {s * n01(rng), s * n01(rng)};
        }
    } // namespace

    bool Scenario::blocked(int j, int k) const
    {
        if (j < 0 || j >= static_cast<int>(blockage.size()))
            return false;
        for (const auto &iv : blockage[j])
            if (k >= iv.start && k <= iv.end)
                return true;
        return false;
    }

    void Scenario::validate() const
    {
        const int J = num_bs();
        if (J < 1)
            throw InvalidArgument("scenario: at least one BS is required");
        if (trajectory.steps < 1)
            throw InvalidArgument("scenario: trajectory.steps must be >= 1");
        if (static_cast<int>(los_gamma.size()) != J || static_cast<int>(noise_eta.size()) != J)
            throw InvalidArgument("scenario: los_gamma and noise_eta need one entry per BS");
        for (int j = 0; j < J; ++j)
            if (!(los_gamma[j] > 0.0) || !(noise_eta[j] > 0.0))
                throw InvalidArgument("scenario: variances must be positive");
        if (!(mpc_gamma_scale >= 0.0))
            throw InvalidArgument("scenario: mpc_gamma_scale must be non-negative");
        if (static_cast<int>(blockage.size()) > J)
            throw InvalidArgument("scenario: more blockage schedules than BSs");
        for (const auto &list : blockage)
            for (const auto &iv : list)
                if (iv.start < 1 || iv.end > trajectory.steps || iv.start > iv.end)
                    throw InvalidArgument("scenario: blockage interval outside [1, K]");
        for (const auto &w : walls)
            check_wall(w);
    }

    Vec2 mirror_anchor(const Wall &wall, const Vec2 &p)
    {
        check_wall(wall);
        const Vec2 d = (wall.b - wall.a).normalized();
        const Vec2 e = p - wall.a;
        const Vec2 foot = wall.a + d * d.dot(e);
        return 2.0 * foot - p;
    }

    Vec2 specular_point(const Wall &wall, const Vec2 &p_bs, const Vec2 &p_mt)
    {
        const Vec2 img = mirror_anchor(wall, p_bs);
        const double si = side(wall, img), sm = side(wall, p_mt);
        const double t = si / (si - sm);
        return img + t * (p_mt - img);
    }

    bool reflection_valid(const Wall &wall, const Vec2 &p_bs, const Vec2 &p_mt)
    {
        check_wall(wall);
        const double sb = side(wall, p_bs), sm = side(wall, p_mt);
        if (!(sb * sm > 0.0))
            return false;
        const Vec2 s = specular_point(wall, p_bs, p_mt);
        const Vec2 d = wall.b - wall.a;
        const double t = d.dot(s - wall.a) / d.squaredNorm();
        return t >= 0.0 && t <= 1.0;
    }

    TrajectoryResult synth_trajectory(const TrajectorySpec &spec, Rng &rng)
    {
        if (spec.waypoints.size() < 2)
            throw InvalidArgument("trajectory: at least two waypoints are required");
        if (!(spec.speed > 0.0) || !(spec.dt > 0.0))
            throw InvalidArgument("trajectory: speed and dt must be positive");
        if (spec.steps < 0)
            throw InvalidArgument("trajectory: steps must be non-negative");
        if (!(spec.sigma_o >= 0.0))
            throw InvalidArgument("trajectory: sigma_o must be non-negative");
        std::vector<double> cum{0.0};
        for (std::size_t i = 1; i < spec.waypoints.size(); ++i)
            cum.push_back(cum.back() + (spec.waypoints[i] - spec.waypoints[i - 1]).norm());
        if (!(cum.back() > 0.0))
            throw InvalidArgument("trajectory: path has zero length");

        TrajectoryResult out;
        std::normal_distribution<double> n01(0.0, 1.0);
        double last_heading = 0.0;
        for (std::size_t i = 1; i < spec.waypoints.size(); ++i)
        {
            const Vec2 d = spec.waypoints[i] - spec.waypoints[i - 1];
            if (d.norm() > 0.0)
            {
                last_heading = std::atan2(d.y(), d.x());
                break;
            }
        }
        std::size_t seg = 1;
        for (int k = 0; k <= spec.steps; ++k)
        {
            const double s = spec.speed * spec.dt * k;
            MtState x;
            if (s >= cum.back())
            {
                x.position = spec.waypoints.back();
                x.velocity = Vec2::Zero();
                for (std::size_t i = spec.waypoints.size() - 1; i >= 1; --i)
                {
                    const Vec2 d = spec.waypoints[i] - spec.waypoints[i - 1];
                    if (d.norm() > 0.0)
                    {
                        last_heading = std::atan2(d.y(), d.x());
                        break;
                    }
                }
                x.orientation = last_heading;
            }
            else
            {
                while (seg + 1 < cum.size() && s >= cum[seg])
                    ++seg;
                const Vec2 a = spec.waypoints[seg - 1], b = spec.waypoints[seg];
                const double len = cum[seg] - cum[seg - 1];
                const Vec2 dir = (b - a) / len;
                x.position = a + dir * (s - cum[seg - 1]);
                x.velocity = dir * spec.speed;
                x.orientation = std::atan2(dir.y(), dir.x());
                last_heading = x.orientation;
            }
            out.states.push_back(x);
            out.imu_orientation.push_back(spec.sigma_o > 0.0 ? x.orientation + spec.sigma_o * n01(rng) : x.orientation);
        }
        return out;
    }

    std::vector<std::vector<VirtualAnchor>> virtual_anchors(const Scenario &scenario)
    {
        std::vector<std::vector<VirtualAnchor>> out(scenario.num_bs());
        for (int j = 0; j < scenario.num_bs(); ++j)
            for (std::size_t w = 0; w < scenario.walls.size(); ++w)
                out[j].push_back({mirror_anchor(scenario.walls[w], scenario.bs_positions[j]),
                                  scenario.los_gamma[j] * scenario.mpc_gamma_scale, static_cast<int>(w)});
        return out;
    }

    ScenarioTruth synth_truth(const Scenario &scenario, Rng &rng)
    {
        scenario.validate();
        ScenarioTruth truth;
        auto traj = synth_trajectory(scenario.trajectory, rng);
        truth.states = std::move(traj.states);
        truth.imu_orientation = std::move(traj.imu_orientation);
        const int K = scenario.trajectory.steps, J = scenario.num_bs();
        truth.los_flags.assign(K, std::vector<char>(J, 1));
        for (int k = 1; k <= K; ++k)
            for (int j = 0; j < J; ++j)
                truth.los_flags[k - 1][j] = scenario.blocked(j, k) ? 0 : 1;
        truth.anchors = virtual_anchors(scenario);
        return truth;
    }

    std::vector<MeasurementFrame> synth_measurements(const Scenario &scenario, const ScenarioTruth &truth,
                                                     const RadioModel &model, Rng &rng)
    {
        model.validate();
        const int K = truth.steps(), J = scenario.num_bs();
        if (static_cast<int>(truth.states.size()) != K + 1 || static_cast<int>(truth.anchors.size()) != J)
            throw InvalidArgument("synth_measurements: truth does not match the scenario");
        const Eigen::Index M = model.size();
        std::vector<MeasurementFrame> frames;
        frames.reserve(K);
        CVec h(M);
        for (int k = 1; k <= K; ++k)
        {
            const MtState &x = truth.states[k];
            MeasurementFrame f;
            f.k = k;
            for (int j = 0; j < J; ++j)
            {
                const Vec2 &bs = scenario.bs_positions[j];
                CVec z = CVec::Zero(M);
                const PathTerms lo = path_terms(x.position, x.orientation, bs, 0.0);
                if (truth.los_flags[k - 1][j])
                {
                    joint_response_into(lo.delay, lo.azimuth, model, h);
                    z += cn(scenario.los_gamma[j], rng) * h;
                }
                for (const auto &va : truth.anchors[j])
                {
                    if (!reflection_valid(scenario.walls[va.wall], bs, x.position))
                        continue;
                    const PathTerms t = path_terms(x.position, x.orientation, va.position, 0.0);
                    double var = va.variance;
                    if (scenario.mpc_distance_scaling)
                        var *= (lo.distance * lo.distance) / (t.distance * t.distance);
                    joint_response_into(t.delay, t.azimuth, model, h);
                    z += cn(var, rng) * h;
                }
                const double eta = scenario.noise_eta[j];
                for (Eigen::Index m = 0; m < M; ++m)
                    z[m] += cn(eta, rng);
                f.z.push_back(std::move(z));
            }
            frames.push_back(std::move(f));
        }
        return frames;
    }

    Simulation simulate(const Scenario &scenario, const RadioModel &model)
    {
        Rng rng(derive_seed(scenario.seed, stream::scenario));
        Simulation sim;
        sim.truth = synth_truth(scenario, rng);
        sim.frames = synth_measurements(scenario, sim.truth, model, rng);
        return sim;
    }

    BoundingBox scene_bounds(const Scenario &scenario)
    {
        BoundingBox b;
        bool first = true;
        auto add = [&](const Vec2 &p)
        {
            if (first)
            {
                b.lo = b.hi = p;
                first = false;
                return;
            }
            b.lo = b.lo.cwiseMin(p);
            b.hi = b.hi.cwiseMax(p);
        };
        for (const auto &p : scenario.bs_positions)
            add(p);
        for (const auto &w : scenario.walls)
        {
            add(w.a);
            add(w.b);
        }
        for (const auto &p : scenario.trajectory.waypoints)
            add(p);
        if ((b.hi - b.lo).norm() == 0.0)
            b = b.expanded(1.0);
        return b;
    }

} // namespace rfslam
