// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/spa_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace rfslam
{
    namespace
    {
        constexpr double kNegInf = -std::numeric_limits<double>::infinity();

        double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

        // Normalizes log weights in place to linear weights summing to one; returns the log normalizer
        double normalize_log(std::vector<double> &lw, const char *what)
        {
            const double lse = log_sum_exp(lw);
            if (!std::isfinite(lse))
            {
                std::ostringstream os;
                os << "update_step: all " << what << " weights vanished (log normalizer " << lse << ", "
                   << lw.size() << " particles)";
                throw NumericalDegeneracy(os.str());
            }
            for (double &v : lw)
                v = std::exp(v - lse);
            return lse;
        }

        std::vector<double> uniform(int n) { return std::vector<double>(n, n > 0 ? 1.0 / n : 0.0); }
    } // namespace

    void FilterConfig::validate() const
    {
        if (num_particles < 2)
            throw InvalidArgument("FilterConfig: at least two particles are required");
        if (num_birth <= 0 || num_birth >= num_particles)
            throw InvalidArgument("FilterConfig: birth count must satisfy 0 < P_a < P");
        if (subset_size <= 0 || subset_size > num_particles)
            throw InvalidArgument("FilterConfig: subset size must satisfy 0 < P_0 <= P");
    }

    void FilterModels::validate() const
    {
        motion.validate();
        los.validate();
        noise.validate();
        priors.validate();
    }

    double BsBelief::visibility() const { return std::accumulate(los_weight.begin(), los_weight.end(), 0.0); }

    void InvariantStats::check(double deviation, double tol)
    {
        ++checks;
        if (!(deviation <= tol))
            ++violations;
        if (std::isnan(deviation))
            max_deviation = std::numeric_limits<double>::infinity();
        else
            max_deviation = std::max(max_deviation, deviation);
    }

    void InvariantStats::merge(const InvariantStats &o)
    {
        checks += o.checks;
        violations += o.violations;
        max_deviation = std::max(max_deviation, o.max_deviation);
    }

    std::vector<int> systematic_resample(std::span<const double> weights, int n, Rng &rng)
    {
        std::vector<int> idx(n);
        if (n == 0 || weights.empty())
            return idx;
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (!(total > 0.0) || !std::isfinite(total))
        {
            // Degenerate weights: evenly spaced selection
            for (int i = 0; i < n; ++i)
                idx[i] = static_cast<int>((static_cast<long>(i) * static_cast<long>(weights.size())) / n);
            return idx;
        }
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double step = total / n;
        double u = u01(rng) * step;
        double cum = weights[0];
        std::size_t m = 0;
        for (int i = 0; i < n; ++i)
        {
            while (u > cum && m + 1 < weights.size())
                cum += weights[++m];
            idx[i] = static_cast<int>(m);
            u += step;
        }
        return idx;
    }

    StateEstimates estimate(const ParticleBeliefs &b)
    {
        StateEstimates e;
        e.mt.position.setZero();
        e.mt.velocity.setZero();
        e.mt.orientation = 0.0;
        for (int p = 0; p < b.size(); ++p)
        {
            const double w = b.mt_weight[p];
            e.mt.position += w * b.mt[p].position;
            e.mt.velocity += w * b.mt[p].velocity;
            e.mt.orientation += w * b.mt[p].orientation;
        }
        for (const auto &bs : b.bs)
        {
            double p = 0.0, g = 0.0, eta = 0.0;
            for (std::size_t i = 0; i < bs.los_weight.size(); ++i)
            {
                p += bs.los_weight[i];
                g += bs.los_weight[i] * bs.los_variance[i];
            }
            for (std::size_t i = 0; i < bs.noise_weight.size(); ++i)
                eta += bs.noise_weight[i] * bs.noise_variance[i];
            e.visibility.push_back(std::clamp(p, 0.0, 1.0));
            e.los_variance.push_back(p > 0.0 ? std::optional<double>(g / p) : std::nullopt);
            e.noise_variance.push_back(eta);
        }
        return e;
    }

    ParticleBeliefs initial_beliefs(const FilterModels &models, int num_bs, int num_particles, Rng &rng)
    {
        models.validate();
        const InitialParticles init = sample_priors(models.priors, num_bs, num_particles, rng);
        ParticleBeliefs b;
        b.mt = init.mt;
        b.mt_weight = uniform(num_particles);
        const double pr = models.priors.los_probability;
        for (int j = 0; j < num_bs; ++j)
        {
            BsBelief s;
            s.los_variance = init.los_variance[j];
            s.los_weight.assign(num_particles, pr / num_particles);
            s.absent_mass = 1.0 - pr;
            s.noise_variance = init.noise_variance[j];
            s.noise_weight = uniform(num_particles);
            b.bs.push_back(std::move(s));
        }
        return b;
    }

    ParticleBeliefs predict_step(const ParticleBeliefs &prev, double z_o, const FilterModels &models, int num_birth,
                                 Rng &rng)
    {
        const int P = prev.size();
        if (num_birth <= 0 || num_birth >= P)
            throw InvalidArgument("predict_step: birth count must satisfy 0 < P_a < P");
        const int survivors = P - num_birth;
        ParticleBeliefs out;
        out.mt.resize(P);
        out.mt_weight = prev.mt_weight;
        for (int p = 0; p < P; ++p)
            out.mt[p] = sample_mt_transition(prev.mt[p], z_o, models.motion, rng);

        const auto &lp = models.los;
        for (const auto &s : prev.bs)
        {
            BsBelief o;
            const double p_prev = std::clamp(s.visibility(), 0.0, 1.0);
            o.los_variance.resize(P);
            o.los_weight.resize(P);
            const std::vector<int> keep = systematic_resample(s.los_weight, survivors, rng);
            for (int i = 0; i < survivors; ++i)
            {
                o.los_variance[i] = sample_gamma_survival(s.los_variance[keep[i]], lp, rng);
                o.los_weight[i] = lp.p_v * p_prev / survivors;
            }
            for (int i = survivors; i < P; ++i)
            {
                o.los_variance[i] = lp.appearance.sample(rng);
                o.los_weight[i] = lp.p_a * (1.0 - p_prev) / num_birth;
            }
            o.absent_mass = (1.0 - lp.p_v) * p_prev + (1.0 - lp.p_a) * (1.0 - p_prev);
            o.noise_variance.resize(P);
            for (int p = 0; p < P; ++p)
                o.noise_variance[p] = sample_eta_transition(s.noise_variance[p], models.noise, rng);
            o.noise_weight = s.noise_weight;
            out.bs.push_back(std::move(o));
        }
        return out;
    }

    UpdateResult update_step(const ParticleBeliefs &pred, const MeasurementFrame &frame,
                             const std::vector<Vec2> &bs_positions, const std::vector<MapFeatures> &features,
                             const RadioModel &model)
    {
        const int P = pred.size();
        const int J = static_cast<int>(pred.bs.size());
        if (static_cast<int>(frame.z.size()) != J || static_cast<int>(bs_positions.size()) != J)
            throw InvalidArgument("update_step: frame, BS list and beliefs disagree on the number of BSs");
        if (!features.empty() && static_cast<int>(features.size()) != J)
            throw InvalidArgument("update_step: map features must be given for every BS or none");

        std::vector<Channel> channels(J);
        for (int j = 0; j < J; ++j)
        {
            channels[j].measurement = frame.z[j];
            channels[j].bs_position = bs_positions[j];
            if (!features.empty())
                channels[j].features = features[j];
        }
        std::vector<PairQuery> queries(static_cast<std::size_t>(J) * P);
        for (int j = 0; j < J; ++j)
            for (int p = 0; p < P; ++p)
            {
                PairQuery &q = queries[static_cast<std::size_t>(j) * P + p];
                q.channel = j;
                q.position = pred.mt[p].position;
                q.orientation = pred.mt[p].orientation;
                q.los_variance = pred.bs[j].los_variance[p];
                q.noise_variance = pred.bs[j].noise_variance[p];
            }
        const std::vector<PairResult> res = batch_log_likelihood(channels, queries, model);

        UpdateResult out;
        out.posterior = pred;
        ParticleBeliefs &post = out.posterior;
        std::vector<double> log_mt(P);
        for (int p = 0; p < P; ++p)
            log_mt[p] = safe_log(pred.mt_weight[p]);
        const double w_total = std::accumulate(pred.mt_weight.begin(), pred.mt_weight.end(), 0.0);

        std::vector<double> l0(P), l1(P), log_iota(P), log_los(P + 1), log_eta(P), tmp(P);
        for (int j = 0; j < J; ++j)
        {
            const BsBelief &s = pred.bs[j];
            const double log_b0 = safe_log(s.absent_mass);
            for (int p = 0; p < P; ++p)
            {
                const PairResult &r = res[static_cast<std::size_t>(j) * P + p];
                if (r.ok() && std::isfinite(r.value.absent) && std::isfinite(r.value.present))
                {
                    l0[p] = r.value.absent;
                    l1[p] = r.value.present;
                }
                else
                {
                    l0[p] = l1[p] = kNegInf;
                    ++out.failed_evaluations;
                }
            }
            for (int p = 0; p < P; ++p)
            {
                const double a = log_b0 + l0[p];
                const double b = safe_log(P * s.los_weight[p]) + l1[p];
                const double two[2] = {a, b};
                log_iota[p] = log_sum_exp(two);
                log_mt[p] += log_iota[p];
                log_los[p] = safe_log(s.los_weight[p]) + l1[p];
                log_eta[p] = safe_log(s.noise_weight[p]) + log_iota[p];
            }
            // r = 0 mass: beta0 times the predicted-MT average of the r = 0 likelihood
            for (int p = 0; p < P; ++p)
                tmp[p] = safe_log(pred.mt_weight[p] / w_total) + l0[p];
            log_los[P] = log_b0 + log_sum_exp(tmp);

            normalize_log(log_los, "LOS");
            BsBelief &o = post.bs[j];
            std::copy(log_los.begin(), log_los.begin() + P, o.los_weight.begin());
            o.absent_mass = log_los[P];
            normalize_log(log_eta, "noise-variance");
            o.noise_weight = log_eta;
        }
        normalize_log(log_mt, "MT");
        post.mt_weight = log_mt;
        return out;
    }

    ParticleBeliefs resample(const ParticleBeliefs &post, Rng &rng)
    {
        const int P = post.size();
        ParticleBeliefs out;
        std::vector<int> idx = systematic_resample(post.mt_weight, P, rng);
        std::shuffle(idx.begin(), idx.end(), rng);
        out.mt.resize(P);
        for (int p = 0; p < P; ++p)
            out.mt[p] = post.mt[idx[p]];
        out.mt_weight = uniform(P);
        for (const auto &s : post.bs)
        {
            BsBelief o;
            const double vis = std::clamp(s.visibility(), 0.0, 1.0);
            idx = systematic_resample(s.los_weight, P, rng);
            std::shuffle(idx.begin(), idx.end(), rng);
            o.los_variance.resize(P);
            for (int p = 0; p < P; ++p)
                o.los_variance[p] = s.los_variance[idx[p]];
            o.los_weight.assign(P, vis / P);
            o.absent_mass = 1.0 - vis;
            idx = systematic_resample(s.noise_weight, P, rng);
            std::shuffle(idx.begin(), idx.end(), rng);
            o.noise_variance.resize(P);
            for (int p = 0; p < P; ++p)
                o.noise_variance[p] = s.noise_variance[idx[p]];
            o.noise_weight = uniform(P);
            out.bs.push_back(std::move(o));
        }
        return out;
    }

    void check_invariants(const ParticleBeliefs &b, InvariantStats &stats)
    {
        constexpr double tol = 1e-10;
        double sx = 0.0;
        bool finite = true;
        for (double w : b.mt_weight)
        {
            sx += w;
            finite = finite && std::isfinite(w) && w >= 0.0;
        }
        stats.check(std::abs(sx - 1.0), tol);
        stats.check(finite ? 0.0 : 1.0, tol);
        for (const auto &s : b.bs)
        {
            double se = 0.0, sy = 0.0;
            bool fin = std::isfinite(s.absent_mass) && s.absent_mass >= 0.0;
            for (double w : s.noise_weight)
            {
                se += w;
                fin = fin && std::isfinite(w) && w >= 0.0;
            }
            for (double w : s.los_weight)
            {
                sy += w;
                fin = fin && std::isfinite(w) && w >= 0.0;
            }
            stats.check(std::abs(se - 1.0), tol);
            stats.check(std::abs(sy + s.absent_mass - 1.0), tol);
            stats.check(sy >= 0.0 && sy <= 1.0 + tol ? 0.0 : std::abs(sy), tol);
            stats.check(fin ? 0.0 : 1.0, tol);
        }
    }

    ParticleFilter::ParticleFilter(std::vector<Vec2> bs_positions, FilterModels models, FilterConfig cfg)
        : bs_(std::move(bs_positions)), models_(std::move(models)), cfg_(cfg), rng_(derive_seed(cfg.seed, stream::filter))
    {
        cfg_.validate();
        models_.validate();
        if (bs_.empty())
            throw InvalidArgument("ParticleFilter: at least one BS is required");
        beliefs_ = initial_beliefs(models_, static_cast<int>(bs_.size()), cfg_.num_particles, rng_);
    }

    ParticleFilter::Step ParticleFilter::step(const MeasurementFrame &frame, double z_o,
                                              const std::vector<MapFeatures> &features, const RadioModel &model)
    {
        const ParticleBeliefs pred = predict_step(beliefs_, z_o, models_, cfg_.num_birth, rng_);
        UpdateResult up = update_step(pred, frame, bs_, features, model);
        failed_ += up.failed_evaluations;
        check_invariants(up.posterior, invariants_);
        Step out;
        out.estimate = estimate(up.posterior);
        beliefs_ = resample(up.posterior, rng_);
        if (cfg_.keep_snapshots)
        {
            BeliefSnapshot s;
            s.k = frame.k;
            const int n = cfg_.subset_size;
            const int J = static_cast<int>(bs_.size());
            for (int p = 0; p < n; ++p)
            {
                s.position.push_back(beliefs_.mt[p].position);
                s.orientation.push_back(beliefs_.mt[p].orientation);
            }
            s.los_variance.resize(J);
            s.noise_variance.resize(J);
            for (int j = 0; j < J; ++j)
            {
                const auto &b = beliefs_.bs[j];
                s.los_variance[j].assign(b.los_variance.begin(), b.los_variance.begin() + n);
                s.noise_variance[j].assign(b.noise_variance.begin(), b.noise_variance.begin() + n);
                s.visibility.push_back(out.estimate.visibility[j]);
            }
            s.estimate = out.estimate;
            out.snapshot = std::move(s);
        }
        return out;
    }

    FilterRun run_filter(const std::vector<MeasurementFrame> &frames, const std::vector<double> &imu,
                         const std::vector<Vec2> &bs_positions, const FilterModels &models,
                         const std::vector<MapFeatures> &features, const RadioModel &model, const FilterConfig &cfg)
    {
        if (!imu.empty() && imu.size() != frames.size())
            throw InvalidArgument("run_filter: one orientation reading per frame is required");
        ParticleFilter filter(bs_positions, models, cfg);
        FilterRun run;
        run.estimates.push_back(filter.current_estimate());
        for (std::size_t k = 0; k < frames.size(); ++k)
        {
            const double z_o = imu.empty() ? std::numeric_limits<double>::quiet_NaN() : imu[k];
            auto st = filter.step(frames[k], z_o, features, model);
            run.estimates.push_back(std::move(st.estimate));
            if (st.snapshot)
                run.snapshots.push_back(std::move(*st.snapshot));
        }
        run.invariants = filter.invariants();
        run.failed_evaluations = filter.failed_evaluations();
        return run;
    }

} // namespace rfslam
