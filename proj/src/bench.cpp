// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace rfslam
{
    namespace
    {
        using Clock = std::chrono::steady_clock;

        double ns_since(Clock::time_point t0)
        {
            return std::chrono::duration<double, std::nano>(Clock::now() - t0).count();
        }
    } // namespace

    BenchRow bench_likelihood(int M, int R, int batch, const BenchOptions &opt)
    {
        if (opt.num_antennas < 1 || M % opt.num_antennas != 0 || M / opt.num_antennas < 2)
            throw InvalidArgument("bench_likelihood: M must be a multiple of the antenna count with M_f >= 2");
        if (R < 1 || batch < 1)
            throw InvalidArgument("bench_likelihood: R and batch must be >= 1");
        const int mf = M / opt.num_antennas;
        const double fc = 6e9, spacing = 2e6;
        const RadioModel model = RadioModel::uncalibrated(
            SignalConfig::create(fc, spacing * (mf - 1), spacing, opt.num_antennas),
            ArrayGeometry::uniform_linear(opt.num_antennas, 0.5 * kSpeedOfLight / fc));

        Rng rng(derive_seed(opt.seed, stream::bench));
        std::uniform_real_distribution<double> upos(-20.0, 20.0), uang(-kPi, kPi), uvar(0.1, 1.0);
        // One channel per query keeps the dense and low-rank paths on identical inputs
        std::vector<Channel> channels(batch);
        std::vector<PairQuery> queries(batch);
        std::vector<CovarianceParams> params(batch);
        for (int b = 0; b < batch; ++b)
        {
            CovarianceParams &p = params[b];
            p.position = Vec2(upos(rng), upos(rng));
            p.orientation = uang(rng);
            do
                p.bs_position = Vec2(upos(rng), upos(rng));
            while ((p.bs_position - p.position).norm() < 1.0);
            p.los = true;
            p.los_variance = uvar(rng);
            // Path gain is of order 1e6 / d, so the noise floor sits near the response power
            p.noise_variance = 1e9 * uvar(rng);
            for (int n = 0; n < R - 1; ++n)
            {
                MapFeature f;
                do
                    f.position = Vec2(upos(rng), upos(rng));
                while ((f.position - p.position).norm() < 1.0);
                f.bias = 1e-9 * uvar(rng);
                f.variance = 0.25 * uvar(rng);
                p.features.push_back(f);
            }
            CVec z(M);
            std::normal_distribution<double> n01(0.0, 1.0);
            const double s = std::sqrt(0.5 * 1e10);
            for (int m = 0; m < M; ++m)
                z[m] = cplx(s * n01(rng), s * n01(rng));
            channels[b] = {z, p.bs_position, p.features};
            queries[b] = {b, p.position, p.orientation, p.los_variance, p.noise_variance};
        }

        BenchRow row;
        row.M = M;
        row.R = R;
        row.batch = batch;
        std::vector<PairResult> fast;
        row.woodbury_ns = std::numeric_limits<double>::infinity();
        for (int r = 0; r < std::max(1, opt.repeats); ++r)
        {
            const auto t0 = Clock::now();
            fast = batch_log_likelihood(channels, queries, model);
            row.woodbury_ns = std::min(row.woodbury_ns, ns_since(t0));
        }
        std::vector<double> dense(batch);
        const auto t0 = Clock::now();
        for (int b = 0; b < batch; ++b)
            dense[b] = dense_log_likelihood(channels[b].measurement, params[b], model);
        row.dense_ns = ns_since(t0);
        for (int b = 0; b < batch; ++b)
        {
            if (!fast[b].ok())
                throw NumericalDegeneracy("bench_likelihood: " + fast[b].error);
            const double e = std::abs(fast[b].value.present - dense[b]) / std::max(1.0, std::abs(dense[b]));
            row.max_rel_err = std::max(row.max_rel_err, e);
        }
        return row;
    }

    void write_bench_csv(const std::filesystem::path &path, const std::vector<BenchRow> &rows)
    {
        std::ofstream os(path, std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot open " + path.string() + " for writing");
        os.imbue(std::locale::classic());
        os.precision(17);
        os << "M,R,batch,woodbury_ns,dense_ns,max_rel_err\n";
        for (const auto &r : rows)
            os << r.M << ',' << r.R << ',' << r.batch << ',' << r.woodbury_ns << ',' << r.dense_ns << ','
               << r.max_rel_err << '\n';
        if (!os)
            throw std::runtime_error("write to " + path.string() + " failed");
    }

    double loglog_slope(const std::vector<double> &x, const std::vector<double> &y)
    {
        if (x.size() != y.size() || x.size() < 2)
            throw InvalidArgument("loglog_slope: need at least two points");
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
        {
            const double lx = std::log(x[i]), ly = std::log(y[i]);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }

} // namespace rfslam
