// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Timing harness comparing the low-rank batch path with the dense O(M^3) reference.

#ifndef RFSLAM_BENCH_HPP
#define RFSLAM_BENCH_HPP

#include "rfslam/likelihood.hpp"

#include <filesystem>

namespace rfslam
{
    struct BenchRow
    {
        int M = 0;
        int R = 0;
        int batch = 0;
        double woodbury_ns = 0.0; // whole batch
        double dense_ns = 0.0;    // whole batch
        double max_rel_err = 0.0;
    };

    struct BenchOptions
    {
        int num_antennas = 4;
        int repeats = 3; // best of
        std::uint64_t seed = 1;
    };

    // Random instance batch with rank R = 1 (LOS) + (R - 1) features at M = num_freq * num_antennas.
    // M must be a multiple of num_antennas.
    BenchRow bench_likelihood(int M, int R, int batch, const BenchOptions &opt);

    void write_bench_csv(const std::filesystem::path &path, const std::vector<BenchRow> &rows);

    // Least-squares slope of log(y) against log(x)
    double loglog_slope(const std::vector<double> &x, const std::vector<double> &y);

} // namespace rfslam

#endif
