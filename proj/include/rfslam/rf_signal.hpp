// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Frequency, array and joint frequency-array response vectors of a planar-wave,
// narrow-band multi-antenna receiver, plus the position-to-(delay, direction) geometry.
//
// Conventions used throughout the library:
// - Frequency samples are f_m = (m - (M_f - 1)/2) * spacing for m = 0 .. M_f-1 (0-based).
// - Frequency response entry m: c/(4 pi f_c tau) * w_f[m] * S[m] * exp(-j 2 pi f_m tau).
// - Array response entry m: w_u[m] * exp(-j 2 pi / lambda_c * u^T (a_m + da_m)), lambda_c = c/f_c.
// - Joint response: kron(frequency response, array response), i.e. antenna index runs fastest.
// - Directions are MT-local: u = R(o) (p_target - p_mt) / |p_target - p_mt| with R(o) the
//   counterclockwise rotation by o. The local azimuth is therefore atan2(global direction) + o.

#ifndef RFSLAM_RF_SIGNAL_HPP
#define RFSLAM_RF_SIGNAL_HPP

#include "rfslam/common.hpp"

namespace rfslam
{
    struct SignalConfig
    {
        double carrier_hz = 6e9;
        double bandwidth_hz = 100e6;
        double spacing_hz = 2e6;
        int num_freq = 51;     // M_f = round(B / spacing) + 1
        int num_antennas = 4;  // M_a
        CVec baseband;         // S(f_m), unit magnitude, length M_f

        // Builds a config with a flat unit spectrum; throws InvalidArgument on inconsistent values
        static SignalConfig create(double carrier_hz, double bandwidth_hz, double spacing_hz, int num_antennas);

        double frequency(int m) const; // Baseband frequency of sample m (0-based) [Hz]
        double wavelength() const;     // Carrier wavelength [m]
        double max_distance() const;   // Unambiguous distance c / spacing [m]
        int size() const { return num_freq * num_antennas; }
        void validate() const;
    };

    struct ArrayGeometry
    {
        std::vector<Vec2> elements; // Element positions in the MT frame [m], zero mean

        // Centers the given positions so that their mean is zero
        static ArrayGeometry from_positions(std::vector<Vec2> positions);
        static ArrayGeometry uniform_linear(int n, double spacing_m);
        static ArrayGeometry uniform_rectangular(int nx, int ny, double spacing_m);

        int size() const { return static_cast<int>(elements.size()); }
        void validate() const;
    };

    // Response calibration parameters; unit() is the uncalibrated state
    struct Calibration
    {
        CVec freq_weights;              // w_f, length M_f
        CVec antenna_weights;           // w_u, length M_a
        std::vector<Vec2> position_offsets; // da_m [m], length M_a

        static Calibration unit(const SignalConfig &cfg);
        void validate(const SignalConfig &cfg) const;

        // Real parameter view: [Re w_f, Im w_f, Re w_u, Im w_u, da_x, da_y]
        static int parameter_count(int num_freq, int num_antennas) { return 2 * num_freq + 4 * num_antennas; }
        Vec to_vector() const;
        static Calibration from_vector(const Vec &v, int num_freq, int num_antennas);
    };

    struct PathGeometry
    {
        double delay = 0.0;           // [s]
        Vec2 direction = Vec2::UnitX(); // MT-local unit vector
        double azimuth() const;       // atan2 of direction
    };

    // Everything needed to evaluate response vectors
    struct RadioModel
    {
        SignalConfig signal;
        ArrayGeometry array;
        Calibration calibration;

        static RadioModel uncalibrated(SignalConfig signal, ArrayGeometry array);
        int size() const { return signal.size(); }
        void validate() const;
    };

    CVec frequency_response(double delay, const SignalConfig &cfg, const Calibration &cal);
    CVec array_response(const Vec2 &direction, const ArrayGeometry &geo, const Calibration &cal, const SignalConfig &cfg);
    CVec joint_response(double delay, const Vec2 &direction, const SignalConfig &cfg, const ArrayGeometry &geo,
                        const Calibration &cal);

    PathGeometry los_geometry(const Vec2 &p_mt, double orientation, const Vec2 &p_bs);
    PathGeometry feature_geometry(const Vec2 &p_mt, double orientation, const Vec2 &feature_position, double bias);

    // Non-throwing geometry used inside likelihood loops: distances below c * kMinDelay are floored
    // and the direction of a coincident target defaults to the MT-local x axis.
    struct PathTerms
    {
        double delay;     // floored at kMinDelay
        double azimuth;   // MT-local
        double distance;  // |target - p_mt| (unfloored)
        Vec2 offset;      // target - p_mt, global frame
        bool floored;     // true if the delay floor was active
    };
    PathTerms path_terms(const Vec2 &p_mt, double orientation, const Vec2 &target, double bias);

    // Factorized response kept for differentiation. freq_base excludes w_f; array_base excludes w_u
    // but includes the position offsets.
    // freq = freq_weights .* freq_base, array = antenna_weights .* array_base
    struct ResponseFactors
    {
        double delay;
        double azimuth;
        CVec freq_base;
        CVec freq;
        CVec array_base;
        CVec array;
    };
    // Delay is clamped at kMinDelay; azimuth is the MT-local direction angle
    ResponseFactors response_factors(double delay, double azimuth, const RadioModel &model);

    // Writes kron(freq, array) into out (length M)
    void kron_into(const CVec &freq, const CVec &array, Eigen::Ref<CVec> out);

    // Joint response from (delay, local azimuth) without precondition checks
    void joint_response_into(double delay, double azimuth, const RadioModel &model, Eigen::Ref<CVec> out);

} // namespace rfslam

#endif
