// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rfslam
{
    double log_sum_exp(std::span<const double> x)
    {
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : x)
            mx = std::max(mx, v);
        if (!std::isfinite(mx))
            return mx;
        double acc = 0.0;
        for (double v : x)
            acc += std::exp(v - mx);
        return mx + std::log(acc);
    }

    std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream_id)
    {
        std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double wrap_angle(double a)
    {
        a = std::remainder(a, 2.0 * kPi);
        if (a <= -kPi)
            a += 2.0 * kPi;
        return a;
    }

    Eigen::Matrix2d rotation(double o)
    {
        const double c = std::cos(o), s = std::sin(o);
        Eigen::Matrix2d r;
        r << c, -s, s, c;
        return r;
    }

} // namespace rfslam
