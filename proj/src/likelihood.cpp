// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/likelihood.hpp"

#include <cmath>
#include <sstream>

namespace rfslam
{
    namespace
    {
        std::string describe(const CovarianceParams &p)
        {
            std::ostringstream os;
            os << "p_mt=(" << p.position.x() << "," << p.position.y() << ") o=" << p.orientation << " r=" << p.los
               << " gamma_lo=" << p.los_variance << " eta=" << p.noise_variance << " D=" << p.features.size();
            return os.str();
        }

        // Lower Cholesky factor of a Hermitian matrix with bounded diagonal loading on failure
        CMat cholesky_with_jitter(const CMat &G, double &jitter, const CovarianceParams *params)
        {
            jitter = 0.0;
            const Eigen::Index r = G.rows();
            if (r == 0)
                return CMat(0, 0);
            Eigen::LLT<CMat> llt(G);
            auto good = [&](const Eigen::LLT<CMat> &f)
            {
                if (f.info() != Eigen::Success)
                    return false;
                const CMat L = f.matrixL();
                for (Eigen::Index i = 0; i < r; ++i)
                    if (!(L(i, i).real() > 0.0) || !std::isfinite(L(i, i).real()))
                        return false;
                return true;
            };
            if (good(llt))
                return llt.matrixL();
            const double scale = G.diagonal().real().sum() / static_cast<double>(r);
            for (double f = 1e-12; f <= 1e-6 * (1.0 + 1e-9); f *= 10.0)
            {
                jitter = f * scale;
                CMat Gj = G;
                Gj.diagonal().array() += jitter;
                llt.compute(Gj);
                if (good(llt))
                    return llt.matrixL();
            }
            throw NumericalDegeneracy("Cholesky of capacitance matrix failed after jitter escalation" +
                                      (params ? std::string(": ") + describe(*params) : std::string()));
        }

        double noise_floor(double eta) { return std::max(eta, kMinNoiseVariance); }

        // Scratch space for the hot pair evaluation
        struct PairWorkspace
        {
            CVec h_lo;
            CMat V;  // projected, variance-scaled feature columns
            CVec hn; // single feature response
            CMat W;  // V^H V
            CVec Vz; // V^H z
            CVec Vh; // V^H h_lo
            Eigen::LLT<CMat> llt;
        };

        PairValue evaluate_pair(const CVec &z, double z_norm2, const Vec2 &p_mt, double orientation, const Vec2 &p_bs,
                                double gamma_lo, double eta_in, std::span<const MapFeature> features,
                                const RadioModel &model, PairWorkspace &ws)
        {
            const Eigen::Index M = model.size();
            if (z.size() != M)
                throw InvalidArgument("likelihood: measurement length does not match the radio model");
            const double eta = noise_floor(eta_in);
            const double log_norm = -static_cast<double>(M) * std::log(kPi * eta);

            ws.h_lo.resize(M);
            const PathTerms lo = path_terms(p_mt, orientation, p_bs, 0.0);
            joint_response_into(lo.delay, lo.azimuth, model, ws.h_lo);
            const double s = ws.h_lo.squaredNorm();

            int D = 0;
            for (const auto &f : features)
                if (f.variance > 0.0)
                    ++D;

            double ell0 = -z_norm2 / eta + log_norm;
            Eigen::VectorXcd y0;
            if (D > 0)
            {
                ws.V.resize(M, D);
                ws.hn.resize(M);
                int c = 0;
                for (const auto &f : features)
                {
                    if (!(f.variance > 0.0))
                        continue;
                    const PathTerms t = path_terms(p_mt, orientation, f.position, f.bias);
                    joint_response_into(t.delay, t.azimuth, model, ws.hn);
                    if (s > 0.0)
                    {
                        const cplx proj = ws.h_lo.dot(ws.hn) / s; // h_lo^H h_n / s
                        ws.V.col(c) = std::sqrt(f.variance) * (ws.hn - proj * ws.h_lo);
                    }
                    else
                        ws.V.col(c) = std::sqrt(f.variance) * ws.hn;
                    ++c;
                }
                ws.W.noalias() = ws.V.adjoint() * ws.V;
                ws.Vz.noalias() = ws.V.adjoint() * z;
                CMat G = CMat::Identity(D, D) + ws.W / eta;
                ws.llt.compute(G);
                if (ws.llt.info() != Eigen::Success)
                {
                    double jitter = 0.0;
                    CovarianceParams diag;
                    diag.position = p_mt;
                    diag.orientation = orientation;
                    diag.noise_variance = eta;
                    diag.los_variance = gamma_lo;
                    G = cholesky_with_jitter(G, jitter, &diag);
                    ws.llt.compute(G * G.adjoint());
                }
                y0 = ws.llt.matrixL().solve(ws.Vz / eta);
                double logdet = 0.0;
                const auto &L = ws.llt.matrixLLT();
                for (int i = 0; i < D; ++i)
                    logdet += 2.0 * std::log(L(i, i).real());
                ell0 += y0.squaredNorm() - logdet;
            }

            PairValue out;
            out.absent = ell0;
            if (!(gamma_lo > 0.0) || !(s > 0.0))
            {
                out.present = ell0;
                return out;
            }
            // Append the LOS column b = sqrt(gamma/eta) h_lo to the Cholesky factor:
            // [L 0; l^H d] with L l = B^H b, d^2 = 1 + |b|^2 - |l|^2
            const double sg = std::sqrt(gamma_lo);
            const cplx hz = ws.h_lo.dot(z); // h_lo^H z
            double d2 = 1.0 + gamma_lo * s / eta;
            cplx num = sg * hz / eta;
            if (D > 0)
            {
                ws.Vh.noalias() = ws.V.adjoint() * ws.h_lo;
                const CVec l = ws.llt.matrixL().solve(ws.Vh * (sg / eta));
                d2 -= l.squaredNorm();
                num -= l.dot(y0);
            }
            if (!(d2 > 0.0))
                throw NumericalDegeneracy("likelihood: rank-one capacitance extension is not positive definite");
            out.present = ell0 + std::norm(num) / d2 - std::log(d2);
            return out;
        }

        thread_local PairWorkspace tls_workspace;
    } // namespace

    void CovarianceParams::validate() const
    {
        if (!(noise_variance > 0.0))
            throw InvalidArgument("CovarianceParams: noise variance must be positive");
        if (!(los_variance >= 0.0))
            throw InvalidArgument("CovarianceParams: LOS variance must be non-negative");
        for (const auto &f : features)
            if (!(f.variance >= 0.0) || !(f.bias >= 0.0))
                throw InvalidArgument("CovarianceParams: feature variances and biases must be non-negative");
    }

    double LowRankFactors::log_det_G() const
    {
        double s = 0.0;
        for (Eigen::Index i = 0; i < chol_G.rows(); ++i)
            s += 2.0 * std::log(chol_G(i, i).real());
        return s;
    }

    CVec projector_apply(const CVec &h_lo, const CVec &v)
    {
        const double s = h_lo.squaredNorm();
        if (!(s > 0.0))
            throw InvalidArgument("projector_apply: LOS response has zero norm");
        if (v.size() != h_lo.size())
            throw InvalidArgument("projector_apply: length mismatch");
        return v - h_lo * (h_lo.dot(v) / s);
    }

    LowRankFactors stack_factors(const CVec &z, const CovarianceParams &params, const RadioModel &model)
    {
        params.validate();
        const Eigen::Index M = model.size();
        if (z.size() != M)
            throw InvalidArgument("stack_factors: measurement length does not match the radio model");
        const double eta = noise_floor(params.noise_variance);

        CVec h_lo(M);
        const PathTerms lo = path_terms(params.position, params.orientation, params.bs_position, 0.0);
        joint_response_into(lo.delay, lo.azimuth, model, h_lo);
        const bool can_project = h_lo.squaredNorm() > 0.0;

        LowRankFactors f;
        f.noise_variance = eta;
        std::vector<CVec> cols;
        if (params.los && params.los_variance > 0.0)
        {
            cols.push_back(std::sqrt(params.los_variance) * h_lo);
            f.columns.push_back(-1);
        }
        CVec hn(M);
        for (std::size_t n = 0; n < params.features.size(); ++n)
        {
            const auto &feat = params.features[n];
            if (!(feat.variance > 0.0))
                continue;
            const PathTerms t = path_terms(params.position, params.orientation, feat.position, feat.bias);
            joint_response_into(t.delay, t.azimuth, model, hn);
            cols.push_back(std::sqrt(feat.variance) * (can_project ? projector_apply(h_lo, hn) : hn));
            f.columns.push_back(static_cast<int>(n));
        }
        f.rank = static_cast<int>(cols.size());
        f.U.resize(M, f.rank);
        for (int c = 0; c < f.rank; ++c)
            f.U.col(c) = cols[c];
        const double rs = 1.0 / std::sqrt(eta);
        f.B = f.U * rs;
        f.q = z * rs;
        f.G = CMat::Identity(f.rank, f.rank) + f.B.adjoint() * f.B;
        f.chol_G = cholesky_with_jitter(f.G, f.jitter, &params);
        return f;
    }

    double log_likelihood(const CVec &z, const CovarianceParams &params, const RadioModel &model)
    {
        const LowRankFactors f = stack_factors(z, params, model);
        const double M = static_cast<double>(model.size());
        double value = -f.q.squaredNorm() - M * std::log(kPi * f.noise_variance);
        if (f.rank > 0)
        {
            const CVec w = f.chol_G.triangularView<Eigen::Lower>().solve(f.B.adjoint() * f.q);
            value += w.squaredNorm() - f.log_det_G();
        }
        return value;
    }

    PairValue log_likelihood_pair(const CVec &z, const CovarianceParams &params, const RadioModel &model)
    {
        params.validate();
        return evaluate_pair(z, z.squaredNorm(), params.position, params.orientation, params.bs_position,
                             params.los_variance, params.noise_variance, params.features, model, tls_workspace);
    }

    std::vector<PairResult> batch_log_likelihood(std::span<const Channel> channels, std::span<const PairQuery> queries,
                                                 const RadioModel &model)
    {
        std::vector<double> norms(channels.size());
        for (std::size_t c = 0; c < channels.size(); ++c)
            norms[c] = channels[c].measurement.squaredNorm();

        std::vector<PairResult> out(queries.size());
        const long n = static_cast<long>(queries.size());
#pragma omp parallel for schedule(static)
        for (long i = 0; i < n; ++i)
        {
            const PairQuery &q = queries[i];
            PairResult &res = out[i];
            try
            {
                if (q.channel < 0 || q.channel >= static_cast<int>(channels.size()))
                    throw InvalidArgument("batch_log_likelihood: channel index out of range");
                if (!(q.noise_variance > 0.0) || !(q.los_variance >= 0.0))
                    throw InvalidArgument("batch_log_likelihood: invalid variances");
                const Channel &ch = channels[q.channel];
                res.value = evaluate_pair(ch.measurement, norms[q.channel], q.position, q.orientation, ch.bs_position,
                                          q.los_variance, q.noise_variance, ch.features, model, tls_workspace);
            }
            catch (const std::exception &e)
            {
                res.error = e.what();
            }
        }
        return out;
    }

    namespace
    {
        // Propagates dell/dh* of one joint response into delay/azimuth/calibration partials
        void backprop_response(const ResponseFactors &rf, const CVec &g_h, const RadioModel &model, double *d_delay,
                               double *d_azimuth, Vec *d_cal)
        {
            const Eigen::Index mf = rf.freq.size(), ma = rf.array.size();
            CVec g_f = CVec::Zero(mf), g_a = CVec::Zero(ma);
            for (Eigen::Index i = 0; i < mf; ++i)
                for (Eigen::Index k = 0; k < ma; ++k)
                {
                    const cplx g = g_h[i * ma + k];
                    g_f[i] += g * std::conj(rf.array[k]);
                    g_a[k] += g * std::conj(rf.freq[i]);
                }
            const double kappa = 2.0 * kPi / model.signal.wavelength();
            const Vec2 u(std::cos(rf.azimuth), std::sin(rf.azimuth));
            if (d_delay)
            {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < mf; ++i)
                {
                    const cplx dh = rf.freq[i] * cplx(-1.0 / rf.delay, -2.0 * kPi * model.signal.frequency(static_cast<int>(i)));
                    acc += 2.0 * std::real(std::conj(g_f[i]) * dh);
                }
                *d_delay += acc;
            }
            if (d_azimuth)
            {
                const Vec2 du(-std::sin(rf.azimuth), std::cos(rf.azimuth));
                double acc = 0.0;
                for (Eigen::Index k = 0; k < ma; ++k)
                {
                    const Vec2 pos = model.array.elements[k] + model.calibration.position_offsets[k];
                    const cplx da = rf.array[k] * cplx(0.0, -kappa * du.dot(pos));
                    acc += 2.0 * std::real(std::conj(g_a[k]) * da);
                }
                *d_azimuth += acc;
            }
            if (d_cal)
            {
                Vec &g = *d_cal;
                for (Eigen::Index i = 0; i < mf; ++i)
                {
                    const cplx gw = g_f[i] * std::conj(rf.freq_base[i]);
                    g[i] += 2.0 * gw.real();
                    g[mf + i] += 2.0 * gw.imag();
                }
                for (Eigen::Index k = 0; k < ma; ++k)
                {
                    const cplx gw = g_a[k] * std::conj(rf.array_base[k]);
                    g[2 * mf + k] += 2.0 * gw.real();
                    g[2 * mf + ma + k] += 2.0 * gw.imag();
                    const double s = 2.0 * std::real(std::conj(g_a[k]) * rf.array[k] * cplx(0.0, -kappa));
                    g[2 * mf + 2 * ma + k] += s * u.x();
                    g[2 * mf + 3 * ma + k] += s * u.y();
                }
            }
        }
    } // namespace

    LikelihoodSensitivities likelihood_sensitivities(const CVec &z, const CovarianceParams &params,
                                                     const RadioModel &model, bool with_calibration)
    {
        params.validate();
        const Eigen::Index M = model.size();
        if (z.size() != M)
            throw InvalidArgument("likelihood_sensitivities: measurement length does not match the radio model");
        const double eta = noise_floor(params.noise_variance);
        const std::size_t D = params.features.size();

        const PathTerms lo = path_terms(params.position, params.orientation, params.bs_position, 0.0);
        const ResponseFactors rf_lo = response_factors(lo.delay, lo.azimuth, model);
        CVec h_lo(M);
        kron_into(rf_lo.freq, rf_lo.array, h_lo);
        const double s = h_lo.squaredNorm();
        const bool can_project = s > 0.0;

        std::vector<ResponseFactors> rf_feat(D);
        std::vector<PathTerms> t_feat(D);
        std::vector<CVec> h_feat(D), v_feat(D); // raw and projected responses
        for (std::size_t n = 0; n < D; ++n)
        {
            const auto &f = params.features[n];
            t_feat[n] = path_terms(params.position, params.orientation, f.position, f.bias);
            rf_feat[n] = response_factors(t_feat[n].delay, t_feat[n].azimuth, model);
            h_feat[n].resize(M);
            kron_into(rf_feat[n].freq, rf_feat[n].array, h_feat[n]);
            v_feat[n] = can_project ? projector_apply(h_lo, h_feat[n]) : h_feat[n];
        }

        // Assemble U with the same column policy as stack_factors
        std::vector<int> source;
        if (params.los && params.los_variance > 0.0)
            source.push_back(-1);
        for (std::size_t n = 0; n < D; ++n)
            if (params.features[n].variance > 0.0)
                source.push_back(static_cast<int>(n));
        const Eigen::Index R = static_cast<Eigen::Index>(source.size());
        CMat U(M, R);
        for (Eigen::Index c = 0; c < R; ++c)
        {
            const int src = source[c];
            U.col(c) = src < 0 ? CVec(std::sqrt(params.los_variance) * h_lo)
                               : CVec(std::sqrt(params.features[src].variance) * v_feat[src]);
        }
        const CMat G = CMat::Identity(R, R) + U.adjoint() * U / eta;
        double jitter = 0.0;
        const CMat L = cholesky_with_jitter(G, jitter, &params);
        const auto Lv = L.triangularView<Eigen::Lower>();
        auto G_solve = [&](const CMat &X) -> CMat { return Lv.adjoint().solve(Lv.solve(X)); };

        LikelihoodSensitivities out;
        out.features.resize(D);
        if (with_calibration)
            out.d_calibration = Vec::Zero(Calibration::parameter_count(model.signal.num_freq, model.signal.num_antennas));

        // Value, a = C^{-1} z
        CVec a = z / eta;
        double value = -z.squaredNorm() / eta - static_cast<double>(M) * std::log(kPi * eta);
        CMat Ginv;
        if (R > 0)
        {
            const CVec Uz = U.adjoint() * z;
            const CVec w = Lv.solve(Uz / eta);
            double logdet = 0.0;
            for (Eigen::Index i = 0; i < R; ++i)
                logdet += 2.0 * std::log(L(i, i).real());
            value += w.squaredNorm() - logdet;
            a -= U * G_solve(Uz) / (eta * eta);
            Ginv = G_solve(CMat::Identity(R, R));
        }
        out.value = value;

        auto Cinv_apply = [&](const CVec &v) -> CVec
        {
            CVec r = v / eta;
            if (R > 0)
                r -= U * G_solve(U.adjoint() * v) / (eta * eta);
            return r;
        };

        // d/d eta
        {
            const double trGinv = R > 0 ? Ginv.trace().real() : 0.0;
            const double d = a.squaredNorm() - static_cast<double>(M) / eta + (static_cast<double>(R) - trGinv) / eta;
            out.d_noise_variance = params.noise_variance >= kMinNoiseVariance ? d : 0.0;
        }
        // d/d gamma for LOS and features: |a^H v|^2 - v^H C^{-1} v
        if (params.los)
            out.d_los_variance = std::norm(a.dot(h_lo)) - std::real(h_lo.dot(Cinv_apply(h_lo)));
        for (std::size_t n = 0; n < D; ++n)
            out.features[n].d_variance = std::norm(a.dot(v_feat[n])) - std::real(v_feat[n].dot(Cinv_apply(v_feat[n])));

        if (R == 0)
            return out;

        // Column adjoint E = dell/dU* = a (a^H U) - U G^{-1} / eta
        const CMat E = a * (a.adjoint() * U) - U * Ginv / eta;

        CVec g_hlo = CVec::Zero(M);
        for (Eigen::Index c = 0; c < R; ++c)
        {
            const int src = source[c];
            const CVec e = E.col(c);
            if (src < 0)
            {
                g_hlo += std::sqrt(params.los_variance) * e;
                continue;
            }
            const double sg = std::sqrt(params.features[src].variance);
            const CVec &hn = h_feat[src];
            CVec g_hn;
            if (can_project)
            {
                const cplx cn = h_lo.dot(hn) / s; // h_lo^H h_n / s
                const cplx alpha = e.dot(h_lo);   // e^H h_lo
                g_hn = sg * (e - h_lo * (std::conj(alpha) / s));
                g_hlo += sg * (-std::conj(cn) * e - hn * (alpha / s) + h_lo * (2.0 * std::real(alpha * cn) / s));
            }
            else
                g_hn = sg * e;
            auto &fs = out.features[src];
            double *dd = t_feat[src].floored ? nullptr : &fs.d_delay;
            backprop_response(rf_feat[src], g_hn, model, dd, &fs.d_azimuth, with_calibration ? &out.d_calibration : nullptr);
        }
        if (with_calibration)
            backprop_response(rf_lo, g_hlo, model, nullptr, nullptr, &out.d_calibration);
        return out;
    }

    CMat dense_covariance(const CovarianceParams &params, const RadioModel &model)
    {
        params.validate();
        const Eigen::Index M = model.size();
        const double eta = noise_floor(params.noise_variance);
        const PathGeometry lo = los_geometry(params.position, params.orientation, params.bs_position);
        const CVec h_lo = joint_response(lo.delay, lo.direction, model.signal, model.array, model.calibration);

        // P (sum_n gamma_n h_n h_n^H) P^H = V diag(gamma) V^H with V = P H and P formed explicitly
        const Eigen::Index D = static_cast<Eigen::Index>(params.features.size());
        CMat H(M, D + 1);
        Vec g(D + 1);
        for (Eigen::Index n = 0; n < D; ++n)
        {
            const auto &f = params.features[n];
            const PathGeometry geo = feature_geometry(params.position, params.orientation, f.position, f.bias);
            H.col(n) = joint_response(geo.delay, geo.direction, model.signal, model.array, model.calibration);
            g[n] = f.variance;
        }
        const CMat P = CMat::Identity(M, M) - h_lo * h_lo.adjoint() / h_lo.squaredNorm();
        CMat V(M, D + 1);
        V.leftCols(D).noalias() = P * H.leftCols(D);
        V.col(D) = h_lo;
        g[D] = params.los ? params.los_variance : 0.0;
        CMat C = CMat::Identity(M, M) * eta;
        C.noalias() += V * g.asDiagonal() * V.adjoint();
        return C;
    }

    double dense_log_likelihood(const CVec &z, const CovarianceParams &params, const RadioModel &model)
    {
        const CMat C = dense_covariance(params, model);
        Eigen::LLT<CMat> llt(C);
        if (llt.info() != Eigen::Success)
            throw NumericalDegeneracy("dense_log_likelihood: covariance is not positive definite");
        const CMat L = llt.matrixL();
        const CVec w = L.triangularView<Eigen::Lower>().solve(z);
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < L.rows(); ++i)
            logdet += 2.0 * std::log(L(i, i).real());
        return -w.squaredNorm() - static_cast<double>(C.rows()) * std::log(kPi) - logdet;
    }

} // namespace rfslam
