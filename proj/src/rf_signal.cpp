// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/rf_signal.hpp"

#include <cmath>
#include <string>

namespace rfslam
{
    SignalConfig SignalConfig::create(double carrier_hz, double bandwidth_hz, double spacing_hz, int num_antennas)
    {
        if (!(carrier_hz > 0.0) || !(bandwidth_hz > 0.0) || !(spacing_hz > 0.0))
            throw InvalidArgument("SignalConfig: carrier, bandwidth and spacing must be positive");
        SignalConfig cfg;
        cfg.carrier_hz = carrier_hz;
        cfg.bandwidth_hz = bandwidth_hz;
        cfg.spacing_hz = spacing_hz;
        cfg.num_freq = static_cast<int>(std::lround(bandwidth_hz / spacing_hz)) + 1;
        cfg.num_antennas = num_antennas;
        cfg.baseband = CVec::Ones(cfg.num_freq);
        cfg.validate();
        return cfg;
    }

    double SignalConfig::frequency(int m) const
    {
        return (m - 0.5 * (num_freq - 1)) * spacing_hz;
    }

    double SignalConfig::wavelength() const { return kSpeedOfLight / carrier_hz; }

    double SignalConfig::max_distance() const { return kSpeedOfLight / spacing_hz; }

    void SignalConfig::validate() const
    {
        if (!(carrier_hz > 0.0) || !(bandwidth_hz > 0.0) || !(spacing_hz > 0.0))
            throw InvalidArgument("SignalConfig: carrier, bandwidth and spacing must be positive");
        if (num_freq < 2)
            throw InvalidArgument("SignalConfig: need at least 2 frequency samples");
        if (num_freq != static_cast<int>(std::lround(bandwidth_hz / spacing_hz)) + 1)
            throw InvalidArgument("SignalConfig: num_freq must equal round(B/spacing)+1");
        if (num_antennas < 1)
            throw InvalidArgument("SignalConfig: need at least one antenna");
        if (baseband.size() != num_freq)
            throw InvalidArgument("SignalConfig: baseband spectrum length must equal num_freq");
        for (Eigen::Index m = 0; m < baseband.size(); ++m)
            if (std::abs(std::abs(baseband[m]) - 1.0) > 1e-9)
                throw InvalidArgument("SignalConfig: baseband spectrum must have unit magnitude");
    }

    ArrayGeometry ArrayGeometry::from_positions(std::vector<Vec2> positions)
    {
        if (positions.empty())
            throw InvalidArgument("ArrayGeometry: need at least one element");
        Vec2 mean = Vec2::Zero();
        for (const auto &p : positions)
            mean += p;
        mean /= static_cast<double>(positions.size());
        for (auto &p : positions)
            p -= mean;
        return ArrayGeometry{std::move(positions)};
    }

    ArrayGeometry ArrayGeometry::uniform_linear(int n, double spacing_m)
    {
        if (n < 1)
            throw InvalidArgument("ArrayGeometry: need at least one element");
        std::vector<Vec2> pos;
        for (int i = 0; i < n; ++i)
            pos.emplace_back(i * spacing_m, 0.0);
        return from_positions(std::move(pos));
    }

    ArrayGeometry ArrayGeometry::uniform_rectangular(int nx, int ny, double spacing_m)
    {
        if (nx < 1 || ny < 1)
            throw InvalidArgument("ArrayGeometry: need at least one element");
        std::vector<Vec2> pos;
        for (int iy = 0; iy < ny; ++iy)
            for (int ix = 0; ix < nx; ++ix)
                pos.emplace_back(ix * spacing_m, iy * spacing_m);
        return from_positions(std::move(pos));
    }

    void ArrayGeometry::validate() const
    {
        if (elements.empty())
            throw InvalidArgument("ArrayGeometry: need at least one element");
        Vec2 mean = Vec2::Zero();
        for (const auto &p : elements)
            mean += p;
        mean /= static_cast<double>(elements.size());
        if (mean.norm() > 1e-12)
            throw InvalidArgument("ArrayGeometry: element positions must have zero mean");
    }

    Calibration Calibration::unit(const SignalConfig &cfg)
    {
        Calibration cal;
        cal.freq_weights = CVec::Ones(cfg.num_freq);
        cal.antenna_weights = CVec::Ones(cfg.num_antennas);
        cal.position_offsets.assign(cfg.num_antennas, Vec2::Zero());
        return cal;
    }

    void Calibration::validate(const SignalConfig &cfg) const
    {
        if (freq_weights.size() != cfg.num_freq)
            throw InvalidArgument("Calibration: frequency weight count must equal M_f");
        if (antenna_weights.size() != cfg.num_antennas || static_cast<int>(position_offsets.size()) != cfg.num_antennas)
            throw InvalidArgument("Calibration: antenna weight/offset count must equal M_a");
    }

    Vec Calibration::to_vector() const
    {
        const auto mf = freq_weights.size(), ma = antenna_weights.size();
        Vec v(2 * mf + 4 * ma);
        v.segment(0, mf) = freq_weights.real();
        v.segment(mf, mf) = freq_weights.imag();
        v.segment(2 * mf, ma) = antenna_weights.real();
        v.segment(2 * mf + ma, ma) = antenna_weights.imag();
        for (Eigen::Index m = 0; m < ma; ++m)
        {
            v[2 * mf + 2 * ma + m] = position_offsets[m].x();
            v[2 * mf + 3 * ma + m] = position_offsets[m].y();
        }
        return v;
    }

    Calibration Calibration::from_vector(const Vec &v, int num_freq, int num_antennas)
    {
        if (v.size() != parameter_count(num_freq, num_antennas))
            throw InvalidArgument("Calibration: parameter vector has wrong length");
        const Eigen::Index mf = num_freq, ma = num_antennas;
        Calibration cal;
        cal.freq_weights.resize(mf);
        for (Eigen::Index m = 0; m < mf; ++m)
            cal.freq_weights[m] = cplx(v[m], v[mf + m]);
        cal.antenna_weights.resize(ma);
        cal.position_offsets.resize(ma);
        for (Eigen::Index m = 0; m < ma; ++m)
        {
            cal.antenna_weights[m] = cplx(v[2 * mf + m], v[2 * mf + ma + m]);
            cal.position_offsets[m] = Vec2(v[2 * mf + 2 * ma + m], v[2 * mf + 3 * ma + m]);
        }
        return cal;
    }

    double PathGeometry::azimuth() const { return std::atan2(direction.y(), direction.x()); }

    RadioModel RadioModel::uncalibrated(SignalConfig signal, ArrayGeometry array)
    {
        RadioModel m{std::move(signal), std::move(array), {}};
        m.calibration = Calibration::unit(m.signal);
        m.validate();
        return m;
    }

    void RadioModel::validate() const
    {
        signal.validate();
        array.validate();
        if (array.size() != signal.num_antennas)
            throw InvalidArgument("RadioModel: array element count must equal num_antennas");
        calibration.validate(signal);
    }

    namespace
    {
        // exp(-j 2 pi f_m tau) * c/(4 pi f_c tau) * S[m], for all m
        void freq_base_into(double delay, const SignalConfig &cfg, CVec &out)
        {
            out.resize(cfg.num_freq);
            const double loss = kSpeedOfLight / (4.0 * kPi * cfg.carrier_hz * delay);
            const double phase0 = -2.0 * kPi * cfg.frequency(0) * delay;
            const double dphase = -2.0 * kPi * cfg.spacing_hz * delay;
            // Exact phasor every 16 samples, recurrence in between
            cplx step = std::polar(1.0, dphase);
            cplx e;
            for (int m = 0; m < cfg.num_freq; ++m)
            {
                if ((m & 15) == 0)
                    e = std::polar(1.0, phase0 + m * dphase);
                else
                    e *= step;
                out[m] = loss * cfg.baseband[m] * e;
            }
        }

        void array_base_into(const Vec2 &u, const ArrayGeometry &geo, const Calibration &cal, const SignalConfig &cfg,
                             CVec &out)
        {
            const double k = 2.0 * kPi / cfg.wavelength();
            out.resize(geo.size());
            for (int m = 0; m < geo.size(); ++m)
                out[m] = std::polar(1.0, -k * u.dot(geo.elements[m] + cal.position_offsets[m]));
        }
    } // namespace

    CVec frequency_response(double delay, const SignalConfig &cfg, const Calibration &cal)
    {
        if (!(delay > 0.0))
            throw InvalidArgument("frequency_response: delay must be positive");
        if (cal.freq_weights.size() != cfg.num_freq)
            throw InvalidArgument("frequency_response: calibration does not match M_f");
        CVec base;
        freq_base_into(delay, cfg, base);
        return cal.freq_weights.cwiseProduct(base);
    }

    CVec array_response(const Vec2 &direction, const ArrayGeometry &geo, const Calibration &cal, const SignalConfig &cfg)
    {
        if (std::abs(direction.norm() - 1.0) > 1e-9)
            throw InvalidArgument("array_response: direction must be a unit vector");
        if (cal.antenna_weights.size() != geo.size() || static_cast<int>(cal.position_offsets.size()) != geo.size())
            throw InvalidArgument("array_response: calibration does not match M_a");
        CVec base;
        array_base_into(direction, geo, cal, cfg, base);
        return cal.antenna_weights.cwiseProduct(base);
    }

    void kron_into(const CVec &freq, const CVec &array, Eigen::Ref<CVec> out)
    {
        const Eigen::Index ma = array.size();
        for (Eigen::Index i = 0; i < freq.size(); ++i)
            out.segment(i * ma, ma) = freq[i] * array;
    }

    CVec joint_response(double delay, const Vec2 &direction, const SignalConfig &cfg, const ArrayGeometry &geo,
                        const Calibration &cal)
    {
        const CVec hf = frequency_response(delay, cfg, cal);
        const CVec au = array_response(direction, geo, cal, cfg);
        CVec h(hf.size() * au.size());
        kron_into(hf, au, h);
        return h;
    }

    PathGeometry los_geometry(const Vec2 &p_mt, double orientation, const Vec2 &p_bs)
    {
        const Vec2 d = p_bs - p_mt;
        const double dist = d.norm();
        if (!(dist > 0.0))
            throw InvalidArgument("los_geometry: MT and BS positions coincide");
        PathGeometry g;
        g.delay = dist / kSpeedOfLight;
        g.direction = rotation(orientation) * (d / dist);
        g.direction.normalize();
        return g;
    }

    PathGeometry feature_geometry(const Vec2 &p_mt, double orientation, const Vec2 &feature_position, double bias)
    {
        if (!(bias >= 0.0))
            throw InvalidArgument("feature_geometry: bias must be non-negative");
        PathGeometry g;
        try
        {
            g = los_geometry(p_mt, orientation, feature_position);
        }
        catch (const InvalidArgument &)
        {
            throw InvalidArgument("feature_geometry: MT and feature positions coincide");
        }
        g.delay += bias;
        return g;
    }

    PathTerms path_terms(const Vec2 &p_mt, double orientation, const Vec2 &target, double bias)
    {
        PathTerms t;
        t.offset = target - p_mt;
        t.distance = t.offset.norm();
        t.azimuth = t.distance > 0.0 ? std::atan2(t.offset.y(), t.offset.x()) + orientation : orientation;
        const double delay = t.distance / kSpeedOfLight + bias;
        t.floored = delay < kMinDelay;
        t.delay = t.floored ? kMinDelay : delay;
        return t;
    }

    ResponseFactors response_factors(double delay, double azimuth, const RadioModel &model)
    {
        ResponseFactors f;
        f.delay = std::max(delay, kMinDelay);
        f.azimuth = azimuth;
        freq_base_into(f.delay, model.signal, f.freq_base);
        f.freq = model.calibration.freq_weights.cwiseProduct(f.freq_base);
        const Vec2 u(std::cos(azimuth), std::sin(azimuth));
        array_base_into(u, model.array, model.calibration, model.signal, f.array_base);
        f.array = model.calibration.antenna_weights.cwiseProduct(f.array_base);
        return f;
    }

    void joint_response_into(double delay, double azimuth, const RadioModel &model, Eigen::Ref<CVec> out)
    {
        thread_local CVec fb, ab;
        const double tau = std::max(delay, kMinDelay);
        freq_base_into(tau, model.signal, fb);
        const Vec2 u(std::cos(azimuth), std::sin(azimuth));
        array_base_into(u, model.array, model.calibration, model.signal, ab);
        const Eigen::Index ma = ab.size();
        const auto &wf = model.calibration.freq_weights;
        const auto &wu = model.calibration.antenna_weights;
        for (Eigen::Index k = 0; k < ma; ++k)
            ab[k] *= wu[k];
        for (Eigen::Index i = 0; i < fb.size(); ++i)
        {
            const cplx s = wf[i] * fb[i];
            for (Eigen::Index k = 0; k < ma; ++k)
                out[i * ma + k] = s * ab[k];
        }
    }

} // namespace rfslam
