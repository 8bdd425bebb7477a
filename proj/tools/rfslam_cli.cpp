// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Command-line front end: simulate, infer, learn, eval, bench.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numerical error.

#include "rfslam/bench.hpp"
#include "rfslam/config.hpp"
#include "rfslam/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <omp.h>

#include <fstream>
#include <iostream>

using namespace rfslam;
namespace fs = std::filesystem;
using nlohmann::json;

namespace
{
    // Bad flag combinations detected after parsing
    class UsageError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct CommonOptions
    {
        std::string config;
        std::optional<std::uint64_t> seed;
        int threads = 0;
    };

    void add_common(CLI::App *cmd, CommonOptions &o, bool need_config = true)
    {
        auto *c = cmd->add_option("--config", o.config, "Run configuration (JSON)");
        if (need_config)
            c->required()->check(CLI::ExistingFile);
        cmd->add_option("--seed", o.seed, "Root seed, overrides the configuration");
        cmd->add_option("--threads", o.threads, "Worker thread cap (0: configuration or library default)")
            ->check(CLI::NonNegativeNumber);
    }

    void apply_threads(int threads)
    {
        if (threads > 0)
            omp_set_num_threads(threads);
    }

    RunConfig load(const CommonOptions &o)
    {
        RunConfig cfg = load_config(o.config);
        if (o.seed)
            cfg.set_seed(*o.seed);
        apply_threads(o.threads > 0 ? o.threads : cfg.threads);
        return cfg;
    }

    void check_dimensions(const RadioModel &model, int num_freq, int num_antennas, const std::string &what)
    {
        if (num_freq != model.signal.num_freq || num_antennas != model.signal.num_antennas)
            throw UsageError(what + " has M_f = " + std::to_string(num_freq) + ", M_a = " +
                             std::to_string(num_antennas) + " but the configuration gives M_f = " +
                             std::to_string(model.signal.num_freq) + ", M_a = " +
                             std::to_string(model.signal.num_antennas));
    }

    // Checkpoint map plus calibration applied to model
    std::vector<MapFeatures> load_map(const std::string &path, const std::vector<Vec2> &bs, RadioModel &model,
                                      std::optional<NeuralMap> *map_out = nullptr)
    {
        if (path.empty())
            return {};
        Checkpoint ck = read_checkpoint(path);
        if (ck.calibration)
        {
            check_dimensions(model, ck.num_freq, ck.num_antennas, path);
            model.calibration = *ck.calibration;
        }
        if (map_out)
            *map_out = ck.map;
        return map_features(ck.map, bs);
    }

    fs::path sibling(const fs::path &p, const std::string &suffix) { return fs::path(p.string() + suffix); }

    // ---------------------------------------------------------------- simulate

    struct SimulateOptions
    {
        CommonOptions common;
        std::string out, truth;
    };

    int cmd_simulate(const SimulateOptions &o)
    {
        const RunConfig cfg = load(o.common);
        const RadioModel model = cfg.radio_model();
        const Simulation sim = simulate(cfg.scenario, model);
        MeasurementFile mf{model.signal.num_freq, model.signal.num_antennas, sim.frames,
                           std::vector<double>(sim.truth.imu_orientation.begin() + 1, sim.truth.imu_orientation.end())};
        const fs::path truth = o.truth.empty() ? sibling(o.out, ".truth") : fs::path(o.truth);
        write_measurements(o.out, mf);
        write_truth(truth, {mf.num_freq, mf.num_antennas, cfg.scenario.bs_positions, sim.truth});
        std::cout << "simulate: J=" << cfg.scenario.num_bs() << " K=" << sim.frames.size() << " M=" << model.size()
                  << " (M_f=" << mf.num_freq << ", M_a=" << mf.num_antennas << ")\n"
                  << "  measurements: " << o.out << "\n  truth: " << truth.string() << "\n";
        return 0;
    }

    // ---------------------------------------------------------------- infer

    struct InferOptions
    {
        CommonOptions common;
        std::string measurements, checkpoint, out, snapshots;
        std::optional<int> subset;
    };

    int cmd_infer(const InferOptions &o)
    {
        RunConfig cfg = load(o.common);
        if (o.subset)
            cfg.filter.subset_size = *o.subset;
        RadioModel model = cfg.radio_model();
        const MeasurementFile mf = read_measurements(o.measurements);
        check_dimensions(model, mf.num_freq, mf.num_antennas, o.measurements);
        if (!mf.frames.empty() && static_cast<int>(mf.frames[0].z.size()) != cfg.scenario.num_bs())
            throw UsageError(o.measurements + ": BS count differs from the configuration");
        const auto features = load_map(o.checkpoint, cfg.scenario.bs_positions, model);
        const int D = features.empty() ? 0 : static_cast<int>(features[0].size());

        FilterConfig fc = cfg.filter;
        fc.keep_snapshots = !o.snapshots.empty();
        const FilterRun run = run_filter(mf.frames, mf.imu, cfg.scenario.bs_positions, cfg.models, features, model, fc);
        write_track_csv(o.out, run.estimates);
        if (!o.snapshots.empty())
            write_snapshots(o.snapshots, {mf.num_freq, mf.num_antennas, run.snapshots});
        std::cout << "infer: K=" << mf.frames.size() << " P=" << fc.num_particles << " D=" << D
                  << " rows=" << run.estimates.size() << " invariant_violations=" << run.invariants.violations
                  << " failed_evaluations=" << run.failed_evaluations << "\n  track: " << o.out << "\n";
        return 0;
    }

    // ---------------------------------------------------------------- learn

    struct LearnOptions
    {
        CommonOptions common;
        std::string measurements, truth, checkpoint, out, log;
        std::optional<int> segment_k0, em_iters, adam_steps, subset;
        bool supervised = false, learn_chi = false, mmse_points = false, init_search = false;
    };

    int cmd_learn(const LearnOptions &o)
    {
        RunConfig cfg = load(o.common);
        LearnConfig lc = cfg.learn;
        if (o.segment_k0)
            lc.segment_k0 = *o.segment_k0;
        if (o.em_iters)
            lc.em_iterations = *o.em_iters;
        if (o.adam_steps)
            lc.adam_steps = *o.adam_steps;
        if (o.subset)
            cfg.filter.subset_size = *o.subset;
        lc.supervised = lc.supervised || o.supervised;
        lc.learn_chi = lc.learn_chi || o.learn_chi;
        lc.use_mmse_points = lc.use_mmse_points || o.mmse_points;
        lc.init_search = lc.init_search || o.init_search;
        if (lc.supervised && o.truth.empty())
            throw UsageError("supervised learning needs --truth");
        lc.validate();
        cfg.filter.validate();

        RadioModel model = cfg.radio_model();
        const MeasurementFile mf = read_measurements(o.measurements);
        check_dimensions(model, mf.num_freq, mf.num_antennas, o.measurements);
        std::optional<TruthFile> truth;
        if (!o.truth.empty())
            truth = read_truth(o.truth);

        std::optional<NeuralMap> map;
        load_map(o.checkpoint, cfg.scenario.bs_positions, model, &map);
        const bool resumed = map.has_value();
        if (!map)
        {
            Rng rng(derive_seed(cfg.seed, stream::map_init));
            map = NeuralMap::initialize(cfg.map, cfg.encoding_frame(), cfg.scatter_bounds(), rng);
        }

        LearnInputs in{mf.frames, mf.imu, cfg.scenario.bs_positions, cfg.models, cfg.filter,
                       truth ? &truth->truth : nullptr, cfg.scatter_bounds()};
        LearnState st{*map, model, {}, {}, resumed};
        const LearnResult res = learn(in, st, lc);

        Checkpoint ck{st.map, std::nullopt, std::nullopt, 0, 0};
        if (st.adam_theta.m.size() == st.map.parameter_count())
            ck.adam = st.adam_theta;
        if (lc.learn_chi)
        {
            ck.calibration = st.model.calibration;
            ck.num_freq = model.signal.num_freq;
            ck.num_antennas = model.signal.num_antennas;
        }
        write_checkpoint(o.out, ck);
        const fs::path log = o.log.empty() ? sibling(o.out, ".log.csv") : fs::path(o.log);
        write_training_log_csv(log, res.log);

        std::cout << "learn: K=" << mf.frames.size() << " T=" << lc.em_iterations << " adam_steps=" << lc.adam_steps
                  << " D=" << cfg.map.num_features << " log_rows=" << res.log.size() << "\n";
        if (!res.log.empty())
            std::cout << "  Q: " << res.log.front().q_before << " -> " << res.log.back().q_after << "\n";
        std::cout << "  checkpoint: " << o.out << "\n  log: " << log.string() << "\n";
        return 0;
    }

    // ---------------------------------------------------------------- eval

    struct EvalOptions
    {
        std::string truth, track, checkpoint, out;
        double radius = 2.0;
    };

    json score_json(const VisibilityScore &s)
    {
        return {{"accuracy", s.accuracy}, {"precision", s.precision}, {"recall", s.recall},
                {"tp", s.tp},             {"fp", s.fp},               {"tn", s.tn},
                {"fn", s.fn}};
    }

    int cmd_eval(const EvalOptions &o)
    {
        const TruthFile tf = read_truth(o.truth);
        const TrackCsv track = read_track_csv(o.track);
        const int K = tf.truth.steps();
        if (static_cast<int>(track.k.size()) != K)
            throw UsageError(o.track + ": " + std::to_string(track.k.size()) + " estimate rows for " +
                             std::to_string(K) + " truth steps");

        std::vector<MapFeatures> map;
        if (!o.checkpoint.empty())
            map = map_features(read_checkpoint(o.checkpoint).map, tf.bs_positions);
        const MetricsReport r = evaluate(tf.truth, track.position, track.visibility, map.empty() ? nullptr : &map,
                                         o.radius);

        json j;
        j["steps"] = K;
        j["position"] = {{"rmse", r.position.rmse}, {"median", r.position.median}, {"mean", r.position.mean}};
        j["visibility"] = json::array();
        for (const auto &s : r.visibility)
            j["visibility"].push_back(score_json(s));
        j["blocked_error"] = r.blocked_error;
        j["unblocked_error"] = r.unblocked_error;
        j["blocked_ratio"] = r.blocked_ratio;
        if (!r.map.empty())
        {
            j["map"] = json::array();
            for (const auto &m : r.map)
            {
                json pairs = json::array();
                for (const auto &[t, l] : m.pairs)
                    pairs.push_back({t, l});
                j["map"].push_back({{"mean_distance", m.mean_distance},
                                    {"matched", m.matched},
                                    {"unmatched_true", m.unmatched_true},
                                    {"unmatched_learned", m.unmatched_learned},
                                    {"pairs", pairs}});
            }
        }
        std::ofstream os(o.out);
        if (!os)
            throw IoError("cannot write " + o.out);
        os << j.dump(2) << "\n";
        if (!os)
            throw IoError("write failed: " + o.out);
        std::cout << "eval: rmse=" << r.position.rmse << " m median=" << r.position.median << " m\n  report: " << o.out
                  << "\n";
        return 0;
    }

    // ---------------------------------------------------------------- bench

    struct BenchCliOptions
    {
        bool likelihood = false;
        std::vector<int> sizes{64, 128, 256};
        int rank = 8;
        int batch = 256;
        int antennas = 4;
        int repeats = 3;
        std::uint64_t seed = 1;
        int threads = 0;
        std::string out;
    };

    int cmd_bench(const BenchCliOptions &o)
    {
        if (!o.likelihood)
            throw UsageError("bench: select a benchmark (--likelihood)");
        apply_threads(o.threads);
        BenchOptions bo;
        bo.num_antennas = o.antennas;
        bo.repeats = o.repeats;
        bo.seed = o.seed;
        std::vector<BenchRow> rows;
        std::vector<double> m, wd, dn;
        for (int M : o.sizes)
        {
            const BenchRow r = bench_likelihood(M, o.rank, o.batch, bo);
            std::cout << "M=" << r.M << " R=" << r.R << " batch=" << r.batch << " woodbury=" << r.woodbury_ns * 1e-6
                      << " ms dense=" << r.dense_ns * 1e-6 << " ms speedup=" << r.dense_ns / r.woodbury_ns
                      << " max_rel_err=" << r.max_rel_err << "\n";
            rows.push_back(r);
            m.push_back(r.M);
            wd.push_back(r.woodbury_ns);
            dn.push_back(r.dense_ns);
        }
        write_bench_csv(o.out, rows);
        if (rows.size() >= 2)
            std::cout << "log-log slope: woodbury " << loglog_slope(m, wd) << ", dense " << loglog_slope(m, dn) << "\n";
        std::cout << "  csv: " << o.out << "\n";
        return 0;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"rfslam - direct radio SLAM on raw multi-antenna RF samples"};
    app.require_subcommand(1);

    SimulateOptions so;
    auto *sim = app.add_subcommand("simulate", "Synthesize measurement and truth files from a scenario");
    add_common(sim, so.common);
    sim->add_option("--out", so.out, "Measurement file")->required();
    sim->add_option("--truth", so.truth, "Truth file (default: <out>.truth)");

    InferOptions io;
    auto *inf = app.add_subcommand("infer", "Run the particle filter and write the estimate track");
    add_common(inf, io.common);
    inf->add_option("--measurements", io.measurements, "Measurement file")->required()->check(CLI::ExistingFile);
    inf->add_option("--checkpoint", io.checkpoint, "Map checkpoint (default: LOS-only model)")
        ->check(CLI::ExistingFile);
    inf->add_option("--out", io.out, "Track CSV")->required();
    inf->add_option("--snapshots", io.snapshots, "Belief snapshot file for learning");
    inf->add_option("--subset-p0", io.subset, "Particles kept per snapshot")->check(CLI::PositiveNumber);

    LearnOptions lo;
    auto *lrn = app.add_subcommand("learn", "Learn the neural map (and optionally calibration)");
    add_common(lrn, lo.common);
    lrn->add_option("--measurements", lo.measurements, "Measurement file")->required()->check(CLI::ExistingFile);
    lrn->add_option("--truth", lo.truth, "Truth file (required with --supervised)")->check(CLI::ExistingFile);
    lrn->add_option("--checkpoint", lo.checkpoint, "Start from this checkpoint")->check(CLI::ExistingFile);
    lrn->add_option("--out", lo.out, "Output checkpoint")->required();
    lrn->add_option("--log", lo.log, "Training log CSV (default: <out>.log.csv)");
    lrn->add_option("--segment-k0", lo.segment_k0, "Segment length in steps (0: full track)")
        ->check(CLI::NonNegativeNumber);
    lrn->add_option("--em-iters", lo.em_iters, "EM iterations per segment")->check(CLI::NonNegativeNumber);
    lrn->add_option("--adam-steps", lo.adam_steps, "Adam steps per learning phase")->check(CLI::NonNegativeNumber);
    lrn->add_option("--subset-p0", lo.subset, "Particles per snapshot")->check(CLI::PositiveNumber);
    lrn->add_flag("--supervised", lo.supervised, "Condition on ground-truth MT states");
    lrn->add_flag("--learn-chi", lo.learn_chi, "Alternate calibration updates");
    lrn->add_flag("--mmse-points", lo.mmse_points, "Use MMSE point estimates instead of particles");
    lrn->add_flag("--init-search", lo.init_search, "Grid-search the initial feature positions (skipped when resuming)");

    EvalOptions eo;
    auto *ev = app.add_subcommand("eval", "Score an estimate track (and map) against ground truth");
    ev->add_option("--truth", eo.truth, "Truth file")->required()->check(CLI::ExistingFile);
    ev->add_option("--track", eo.track, "Track CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--checkpoint", eo.checkpoint, "Map checkpoint")->check(CLI::ExistingFile);
    ev->add_option("--out", eo.out, "Report (JSON)")->required();
    ev->add_option("--radius", eo.radius, "Map match radius [m]")->check(CLI::PositiveNumber);

    BenchCliOptions bo;
    auto *bn = app.add_subcommand("bench", "Time the low-rank likelihood against the dense reference");
    bn->add_flag("--likelihood", bo.likelihood, "Likelihood kernel benchmark");
    bn->add_option("--sizes", bo.sizes, "Measurement lengths M")->delimiter(',');
    bn->add_option("--rank", bo.rank, "Rank R")->check(CLI::PositiveNumber);
    bn->add_option("--batch", bo.batch, "Evaluations per timing")->check(CLI::PositiveNumber);
    bn->add_option("--antennas", bo.antennas, "Antennas M_a (M must be a multiple)")->check(CLI::PositiveNumber);
    bn->add_option("--repeats", bo.repeats, "Repeats (best of)")->check(CLI::PositiveNumber);
    bn->add_option("--seed", bo.seed, "Seed");
    bn->add_option("--threads", bo.threads, "Worker thread cap")->check(CLI::NonNegativeNumber);
    bn->add_option("--out", bo.out, "Benchmark CSV")->required();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try
    {
        if (*sim)
            return cmd_simulate(so);
        if (*inf)
            return cmd_infer(io);
        if (*lrn)
            return cmd_learn(lo);
        if (*ev)
            return cmd_eval(eo);
        if (*bn)
            return cmd_bench(bo);
    }
    catch (const ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    catch (const UsageError &e)
    {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }
    catch (const IoError &e)
    {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    }
    catch (const NumericalDegeneracy &e)
    {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
