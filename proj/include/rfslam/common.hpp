// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#ifndef RFSLAM_COMMON_HPP
#define RFSLAM_COMMON_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfslam
{
    using cplx = std::complex<double>;
    using CVec = Eigen::VectorXcd;
    using CMat = Eigen::MatrixXcd;
    using Vec = Eigen::VectorXd;
    using Vec2 = Eigen::Vector2d;
    using Rng = std::mt19937_64;

    inline constexpr double kSpeedOfLight = 299792458.0; // [m/s]
    inline constexpr double kPi = 3.14159265358979323846;
    inline constexpr double kMinDelay = 1e-9;          // Delay floor [s], path loss is unbounded at zero delay
    inline constexpr double kMinNoiseVariance = 1e-12; // Floor for eta

    // Raised for malformed inputs (bad dimensions, non-positive delays, degenerate geometry, ...)
    class InvalidArgument : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    // Raised when a numerical routine cannot produce a trustworthy result
    // (Cholesky failure after jitter escalation, all particle weights underflowing, non-finite activations)
    class NumericalDegeneracy : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Stable log(sum(exp(x))); returns -inf for an empty or all -inf input
    double log_sum_exp(std::span<const double> x);

    // Deterministic seed for a named sub-stream, derived from a root seed (splitmix64 mixing)
    std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

    // Stream identifiers used with derive_seed
    namespace stream
    {
        inline constexpr std::uint64_t scenario = 1;
        inline constexpr std::uint64_t filter = 2;
        inline constexpr std::uint64_t map_init = 3;
        inline constexpr std::uint64_t learning = 4;
        inline constexpr std::uint64_t bench = 5;
    } // namespace stream

    // Wrap angle to (-pi, pi]
    double wrap_angle(double a);

    // 2-D rotation by angle o (counterclockwise)
    Eigen::Matrix2d rotation(double o);

} // namespace rfslam

#endif
