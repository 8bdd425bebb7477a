// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace rfslam
{
    namespace
    {
        struct Term
        {
            int snapshot;
            int bs;
            Vec2 position;
            double orientation;
            double los_variance;
            double noise_variance;
            double visibility;
            double weight; // 1 / P~
        };

        std::vector<Term> collect_terms(const QProblem &pb)
        {
            if (!pb.snapshots || !pb.frames)
                throw InvalidArgument("q_tilde: snapshots and frames are required");
            const auto &snaps = *pb.snapshots;
            const int J = static_cast<int>(pb.bs_positions.size());
            std::vector<Term> terms;
            for (std::size_t s = 0; s < snaps.size(); ++s)
            {
                const BeliefSnapshot &sn = snaps[s];
                if (sn.k < 1 || sn.k > static_cast<int>(pb.frames->size()) || (*pb.frames)[sn.k - 1].k != sn.k)
                    throw InvalidArgument("q_tilde: snapshot step has no matching frame");
                if (static_cast<int>((*pb.frames)[sn.k - 1].z.size()) != J || static_cast<int>(sn.visibility.size()) != J)
                    throw InvalidArgument("q_tilde: snapshot and frame disagree on the number of BSs");
                for (int j = 0; j < J; ++j)
                {
                    const double vis = std::clamp(sn.visibility[j], 0.0, 1.0);
                    if (pb.use_mmse_points)
                    {
                        const auto &e = sn.estimate;
                        if (static_cast<int>(e.noise_variance.size()) != J)
                            throw InvalidArgument("q_tilde: snapshot lacks point estimates");
                        terms.push_back({static_cast<int>(s), j, e.mt.position, e.mt.orientation,
                                         e.los_variance[j].value_or(0.0), e.noise_variance[j], vis, 1.0});
                        continue;
                    }
                    const int n = static_cast<int>(sn.position.size());
                    if (n == 0 || static_cast<int>(sn.los_variance[j].size()) != n ||
                        static_cast<int>(sn.noise_variance[j].size()) != n)
                        throw InvalidArgument("q_tilde: malformed particle snapshot");
                    for (int p = 0; p < n; ++p)
                        terms.push_back({static_cast<int>(s), j, sn.position[p], sn.orientation[p],
                                         sn.los_variance[j][p], sn.noise_variance[j][p], vis, 1.0 / n});
                }
            }
            return terms;
        }

        constexpr std::size_t kChunk = 64;
        constexpr double kMaxSearchPoints = 4096.0;
    } // namespace

    void LearnConfig::validate() const
    {
        if (segment_k0 < 0)
            throw InvalidArgument("LearnConfig: segment length must be >= 1 (or 0 for the full track)");
        if (em_iterations < 0)
            throw InvalidArgument("LearnConfig: EM iteration count must be >= 0");
        if (adam_steps < 0)
            throw InvalidArgument("LearnConfig: Adam step count must be >= 0");
        if (!(lr_theta > 0.0) || !(lr_chi > 0.0))
            throw InvalidArgument("LearnConfig: learning rates must be positive");
        if (!(search_spacing >= 0.0))
            throw InvalidArgument("LearnConfig: search spacing must be >= 0");
    }

    std::vector<MapFeatures> map_features(const NeuralMap &map, const std::vector<Vec2> &bs_positions)
    {
        std::vector<MapFeatures> out;
        out.reserve(bs_positions.size());
        for (const auto &p : bs_positions)
            out.push_back(map.predict(p));
        return out;
    }

    double q_tilde(const QProblem &pb, const NeuralMap &map, const RadioModel &model, QEvaluation *detail)
    {
        const std::vector<Term> terms = collect_terms(pb);
        const std::vector<MapFeatures> feats = map_features(map, pb.bs_positions);
        const int J = static_cast<int>(pb.bs_positions.size());
        const auto &snaps = *pb.snapshots;

        std::vector<Channel> channels(snaps.size() * J);
        for (std::size_t s = 0; s < snaps.size(); ++s)
            for (int j = 0; j < J; ++j)
            {
                Channel &c = channels[s * J + j];
                c.measurement = (*pb.frames)[snaps[s].k - 1].z[j];
                c.bs_position = pb.bs_positions[j];
                c.features = feats[j];
            }
        std::vector<PairQuery> queries(terms.size());
        for (std::size_t i = 0; i < terms.size(); ++i)
        {
            const Term &t = terms[i];
            queries[i] = {t.snapshot * J + t.bs, t.position, t.orientation, t.los_variance, t.noise_variance};
        }
        const auto res = batch_log_likelihood(channels, queries, model);
        std::vector<double> per(channels.size(), 0.0);
        for (std::size_t i = 0; i < terms.size(); ++i)
        {
            if (!res[i].ok())
                throw NumericalDegeneracy("q_tilde: " + res[i].error);
            const Term &t = terms[i];
            per[queries[i].channel] +=
                t.weight * (t.visibility * res[i].value.present + (1.0 - t.visibility) * res[i].value.absent);
        }
        double total = 0.0;
        for (double v : per)
            total += v;
        if (detail)
        {
            detail->value = total;
            detail->terms = per;
        }
        return total;
    }

    QEvaluation q_tilde_grad(const QProblem &pb, const NeuralMap &map, const RadioModel &model, bool with_theta,
                             bool with_chi)
    {
        const std::vector<Term> terms = collect_terms(pb);
        const std::vector<MapFeatures> feats = map_features(map, pb.bs_positions);
        const int J = static_cast<int>(pb.bs_positions.size());
        const int D = map.architecture().num_features;
        const int nchi = Calibration::parameter_count(model.signal.num_freq, model.signal.num_antennas);
        const auto &snaps = *pb.snapshots;

        struct Acc
        {
            std::vector<std::vector<FeatureGradient>> up; // J x D
            Vec chi;
            std::vector<std::pair<int, double>> values;   // (channel, value)
        };
        const std::size_t nchunks = (terms.size() + kChunk - 1) / kChunk;
        std::vector<Acc> acc(nchunks);
        std::vector<std::string> errors(nchunks);

#pragma omp parallel for schedule(dynamic)
        for (long c = 0; c < static_cast<long>(nchunks); ++c)
        {
            Acc &a = acc[c];
            a.up.assign(J, std::vector<FeatureGradient>(D));
            a.chi = Vec::Zero(with_chi ? nchi : 0);
            try
            {
                for (std::size_t i = c * kChunk; i < std::min(terms.size(), (c + 1) * kChunk); ++i)
                {
                    const Term &t = terms[i];
                    CovarianceParams cp;
                    cp.position = t.position;
                    cp.orientation = t.orientation;
                    cp.bs_position = pb.bs_positions[t.bs];
                    cp.los_variance = t.los_variance;
                    cp.noise_variance = t.noise_variance;
                    cp.features = feats[t.bs];
                    const CVec &z = (*pb.frames)[snaps[t.snapshot].k - 1].z[t.bs];
                    const double w1 = t.weight * t.visibility, w0 = t.weight * (1.0 - t.visibility);
                    double value = 0.0;
                    for (int r = 0; r < 2; ++r)
                    {
                        const double w = r ? w1 : w0;
                        if (w == 0.0)
                            continue;
                        cp.los = r == 1;
                        const LikelihoodSensitivities s = likelihood_sensitivities(z, cp, model, with_chi);
                        value += w * s.value;
                        if (with_chi)
                            a.chi += w * s.d_calibration;
                        if (!with_theta)
                            continue;
                        for (int n = 0; n < D; ++n)
                        {
                            const auto &fs = s.features[n];
                            FeatureGradient &g = a.up[t.bs][n];
                            g.d_variance += w * fs.d_variance;
                            g.d_bias += w * fs.d_delay;
                            const Vec2 d = cp.features[n].position - t.position;
                            const double r2 = d.squaredNorm();
                            if (r2 > 0.0)
                            {
                                const double rn = std::sqrt(r2);
                                g.d_position += w * (fs.d_delay * d / (kSpeedOfLight * rn) +
                                                     fs.d_azimuth * Vec2(-d.y(), d.x()) / r2);
                            }
                        }
                    }
                    a.values.emplace_back(t.snapshot * J + t.bs, value);
                }
            }
            catch (const std::exception &e)
            {
                errors[c] = e.what();
            }
        }
        for (const auto &e : errors)
            if (!e.empty())
                throw NumericalDegeneracy("q_tilde_grad: " + e);

        QEvaluation out;
        out.terms.assign(snaps.size() * J, 0.0);
        std::vector<std::vector<FeatureGradient>> up(J, std::vector<FeatureGradient>(D));
        if (with_chi)
            out.grad_chi = Vec::Zero(nchi);
        for (const Acc &a : acc)
        {
            for (const auto &[ch, v] : a.values)
                out.terms[ch] += v;
            for (int j = 0; j < J; ++j)
                for (int n = 0; n < D; ++n)
                {
                    up[j][n].d_position += a.up[j][n].d_position;
                    up[j][n].d_bias += a.up[j][n].d_bias;
                    up[j][n].d_variance += a.up[j][n].d_variance;
                }
            if (with_chi)
                out.grad_chi += a.chi;
        }
        for (double v : out.terms)
            out.value += v;
        if (with_theta)
        {
            out.grad_theta = Vec::Zero(map.parameter_count());
            for (int j = 0; j < J; ++j)
                out.grad_theta += map.backward(pb.bs_positions[j], up[j]);
        }
        return out;
    }

    std::vector<std::pair<int, int>> segment_scheduler(int K, int k0)
    {
        std::vector<std::pair<int, int>> out;
        if (K <= 0)
            return out;
        if (k0 <= 0 || k0 >= K)
            return {{1, K}};
        for (int s = 1; s <= K; s += k0)
            out.emplace_back(s, std::min(K, s + k0 - 1));
        return out;
    }

    std::vector<BeliefSnapshot> supervised_condition(const std::vector<BeliefSnapshot> &snapshots,
                                                     const ScenarioTruth &truth)
    {
        std::vector<BeliefSnapshot> out = snapshots;
        for (auto &s : out)
        {
            if (s.k < 0 || s.k >= static_cast<int>(truth.states.size()))
                throw InvalidArgument("supervised_condition: no ground truth for step " + std::to_string(s.k));
            const MtState &x = truth.states[s.k];
            for (auto &p : s.position)
                p = x.position;
            for (auto &o : s.orientation)
                o = x.orientation;
            s.estimate.mt = x;
        }
        return out;
    }

    std::vector<TrainingLogRow> m_step(const QProblem &pb, LearnState &st, const LearnConfig &cfg)
    {
        std::vector<TrainingLogRow> rows;
        const NeuralMap map_t = st.map;
        const RadioModel model_t = st.model;

        // theta phase with chi frozen at chi_t
        {
            const auto t0 = std::chrono::steady_clock::now();
            TrainingLogRow row;
            row.phase = "theta";
            Vec theta = map_t.parameters();
            NeuralMap work = map_t;
            double best_q = q_tilde(pb, work, model_t);
            row.q_before = best_q;
            Vec best = theta;
            for (int s = 0; s < cfg.adam_steps; ++s)
            {
                work.set_parameters(theta);
                const QEvaluation ev = q_tilde_grad(pb, work, model_t, true, false);
                if (!std::isfinite(ev.value) || !ev.grad_theta.allFinite())
                    break;
                if (ev.value > best_q)
                {
                    best_q = ev.value;
                    best = theta;
                }
                if (s == 0)
                    row.grad_norm = ev.grad_theta.norm();
                const Vec g = -ev.grad_theta;
                adam_step(theta, g, st.adam_theta);
            }
            if (cfg.adam_steps > 0 && theta.allFinite())
            {
                work.set_parameters(theta);
                const double q = q_tilde(pb, work, model_t);
                if (std::isfinite(q) && q > best_q)
                {
                    best_q = q;
                    best = theta;
                }
            }
            st.map.set_parameters(best);
            row.q_after = best_q;
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back(std::move(row));
        }

        // chi phase with theta frozen at theta_t
        if (cfg.learn_chi)
        {
            const auto t0 = std::chrono::steady_clock::now();
            TrainingLogRow row;
            row.phase = "chi";
            const int mf = model_t.signal.num_freq, ma = model_t.signal.num_antennas;
            Vec chi = model_t.calibration.to_vector();
            RadioModel work = model_t;
            double best_q = q_tilde(pb, map_t, work);
            row.q_before = best_q;
            Vec best = chi;
            for (int s = 0; s < cfg.adam_steps; ++s)
            {
                work.calibration = Calibration::from_vector(chi, mf, ma);
                const QEvaluation ev = q_tilde_grad(pb, map_t, work, false, true);
                if (!std::isfinite(ev.value) || !ev.grad_chi.allFinite())
                    break;
                if (ev.value > best_q)
                {
                    best_q = ev.value;
                    best = chi;
                }
                if (s == 0)
                    row.grad_norm = ev.grad_chi.norm();
                const Vec g = -ev.grad_chi;
                adam_step(chi, g, st.adam_chi);
            }
            if (cfg.adam_steps > 0 && chi.allFinite())
            {
                work.calibration = Calibration::from_vector(chi, mf, ma);
                const double q = q_tilde(pb, map_t, work);
                if (std::isfinite(q) && q > best_q)
                {
                    best_q = q;
                    best = chi;
                }
            }
            st.model.calibration = Calibration::from_vector(best, mf, ma);
            row.q_after = best_q;
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back(std::move(row));
        }
        for (auto &r : rows)
            r.features = map_features(st.map, pb.bs_positions);
        return rows;
    }

    namespace
    {
        std::vector<BeliefSnapshot> run_segment(const LearnInputs &in, std::pair<int, int> seg, ParticleFilter &filter,
                                                const LearnState &st)
        {
            const std::vector<MapFeatures> feats = map_features(st.map, in.bs_positions);
            std::vector<BeliefSnapshot> snaps;
            for (int k = seg.first; k <= seg.second; ++k)
            {
                const double z_o = in.imu.empty() ? std::numeric_limits<double>::quiet_NaN() : in.imu[k - 1];
                auto step = filter.step(in.frames[k - 1], z_o, feats, st.model);
                if (step.snapshot)
                    snaps.push_back(std::move(*step.snapshot));
            }
            return snaps;
        }
    } // namespace

    std::vector<MapFeatures> search_features(const QProblem &pb, const NeuralMap &map, const RadioModel &model,
                                             const BoundingBox &box, double spacing)
    {
        const std::vector<Term> terms = collect_terms(pb);
        const Vec2 ext = box.hi - box.lo;
        if (!(ext.x() > 0.0 && ext.y() > 0.0))
            throw InvalidArgument("search_features: empty search bounds");
        if (spacing <= 0.0)
            spacing = kSpeedOfLight / (4.0 * model.signal.bandwidth_hz);
        const auto count = [&](double h) {
            return (std::floor(ext.x() / h) + 1.0) * (std::floor(ext.y() / h) + 1.0);
        };
        while (count(spacing) > kMaxSearchPoints)
            spacing *= 1.25;
        std::vector<Vec2> grid;
        for (double y = box.lo.y(); y <= box.hi.y(); y += spacing)
            for (double x = box.lo.x(); x <= box.hi.x(); x += spacing)
                grid.emplace_back(x, y);

        const auto &snaps = *pb.snapshots;
        const int J = static_cast<int>(pb.bs_positions.size());
        const int D = map.architecture().num_features;
        std::vector<MapFeatures> out = map_features(map, pb.bs_positions);
        for (int j = 0; j < J; ++j)
        {
            std::vector<Channel> base(snaps.size());
            for (std::size_t s = 0; s < snaps.size(); ++s)
                base[s] = {(*pb.frames)[snaps[s].k - 1].z[j], pb.bs_positions[j], {}};
            std::vector<PairQuery> queries;
            std::vector<double> w1, w0;
            for (const Term &t : terms)
            {
                if (t.bs != j)
                    continue;
                queries.push_back({t.snapshot, t.position, t.orientation, t.los_variance, t.noise_variance});
                w1.push_back(t.weight * t.visibility);
                w0.push_back(t.weight * (1.0 - t.visibility));
            }
            MapFeatures placed;
            for (int n = 0; n < D; ++n)
            {
                std::vector<double> value(grid.size(), -std::numeric_limits<double>::infinity());
#pragma omp parallel
                {
                    std::vector<Channel> ch = base;
#pragma omp for schedule(dynamic, 16)
                    for (long g = 0; g < static_cast<long>(grid.size()); ++g)
                    {
                        MapFeature f = out[j][n];
                        f.position = grid[g];
                        for (auto &c : ch)
                        {
                            c.features = placed;
                            c.features.push_back(f);
                        }
                        const auto res = batch_log_likelihood(ch, queries, model);
                        double v = 0.0;
                        bool ok = true;
                        for (std::size_t i = 0; i < res.size() && ok; ++i)
                        {
                            ok = res[i].ok();
                            v += w1[i] * res[i].value.present + w0[i] * res[i].value.absent;
                        }
                        if (ok && std::isfinite(v))
                            value[g] = v;
                    }
                }
                const auto best = std::max_element(value.begin(), value.end());
                if (std::isfinite(*best))
                    out[j][n].position = grid[best - value.begin()];
                placed.push_back(out[j][n]);
            }
        }
        return out;
    }

    void fit_feature_positions(NeuralMap &map, const std::vector<Vec2> &bs, const std::vector<MapFeatures> &targets)
    {
        const MapArchitecture &arch = map.architecture();
        if (targets.size() != bs.size())
            throw InvalidArgument("fit_feature_positions: one feature list per BS is required");
        Mlp &net = map.mutable_params().position_net;
        const Eigen::Index h = net.l3.W.cols(), rows = net.l3.W.rows();
        const Eigen::Index J = static_cast<Eigen::Index>(bs.size());
        Eigen::MatrixXd A(J, h + 1), R(J, rows);
        for (Eigen::Index j = 0; j < J; ++j)
        {
            if (static_cast<int>(targets[j].size()) != arch.num_features)
                throw InvalidArgument("fit_feature_positions: wrong number of target features");
            const Vec x = encode_position(bs[j], arch.num_encodings, map.frame());
            A.row(j) << net.hidden(x).transpose(), 1.0;
            const Vec y = net.forward(x);
            Vec t = y;
            for (int n = 0; n < arch.num_features; ++n)
            {
                t[3 * n] = targets[j][n].position.x() / arch.position_scale;
                t[3 * n + 1] = targets[j][n].position.y() / arch.position_scale;
            }
            R.row(j) = (t - y).transpose();
        }
        const Eigen::MatrixXd delta = A.completeOrthogonalDecomposition().solve(R);
        net.l3.W += delta.topRows(h).transpose();
        net.l3.b += delta.row(h).transpose();
    }

    std::vector<TrainingLogRow> em_iteration(const LearnInputs &in, std::pair<int, int> seg,
                                             const ParticleFilter &filter, LearnState &st, const LearnConfig &cfg)
    {
        cfg.validate();
        if (seg.first < 1 || seg.second > static_cast<int>(in.frames.size()) || seg.first > seg.second)
            throw InvalidArgument("em_iteration: segment outside the track");
        ParticleFilter f = filter;
        std::vector<BeliefSnapshot> snaps = run_segment(in, seg, f, st);
        if (cfg.supervised)
        {
            if (!in.truth)
                throw InvalidArgument("em_iteration: supervised mode needs ground truth");
            snaps = supervised_condition(snaps, *in.truth);
        }
        QProblem pb;
        pb.snapshots = &snaps;
        pb.frames = &in.frames;
        pb.bs_positions = in.bs_positions;
        pb.use_mmse_points = cfg.use_mmse_points;
        if (cfg.init_search && !st.searched)
        {
            if (!in.search_bounds)
                throw InvalidArgument("em_iteration: the initial feature search needs bounds");
            fit_feature_positions(st.map, in.bs_positions,
                                  search_features(pb, st.map, st.model, *in.search_bounds, cfg.search_spacing));
            st.searched = true;
        }
        return m_step(pb, st, cfg);
    }

    LearnResult learn(const LearnInputs &in, LearnState &st, const LearnConfig &cfg)
    {
        cfg.validate();
        if (cfg.supervised && !in.truth)
            throw InvalidArgument("learn: supervised mode needs ground truth");
        if (!in.imu.empty() && in.imu.size() != in.frames.size())
            throw InvalidArgument("learn: one orientation reading per frame is required");
        FilterConfig fc = in.filter;
        fc.keep_snapshots = true;
        if (!cfg.use_subset)
            fc.subset_size = fc.num_particles;
        if (st.adam_theta.m.size() != st.map.parameter_count())
            st.adam_theta = AdamState::create(st.map.parameter_count(), cfg.lr_theta);
        const int nchi = Calibration::parameter_count(st.model.signal.num_freq, st.model.signal.num_antennas);
        if (st.adam_chi.m.size() != nchi)
            st.adam_chi = AdamState::create(nchi, cfg.lr_chi);

        ParticleFilter filter(in.bs_positions, in.models, fc);
        LearnResult out;
        const auto segments = segment_scheduler(static_cast<int>(in.frames.size()), cfg.segment_k0);
        for (std::size_t si = 0; si < segments.size(); ++si)
        {
            for (int t = 0; t < cfg.em_iterations; ++t)
            {
                auto rows = em_iteration(in, segments[si], filter, st, cfg);
                for (auto &r : rows)
                {
                    r.segment = static_cast<int>(si);
                    r.iteration = static_cast<int>(si) * cfg.em_iterations + t;
                    out.log.push_back(std::move(r));
                }
            }
            if (si + 1 < segments.size())
                run_segment(in, segments[si], filter, st);
        }
        return out;
    }

} // namespace rfslam
