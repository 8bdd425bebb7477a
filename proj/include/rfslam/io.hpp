// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// Binary containers (all little-endian):
//   measurements  "RFSL" u32 version, u32 J, K, M_f, M_a, then K*J vectors of M (re, im) f64 pairs,
//                 optionally followed by "IMUO" and K f64 orientation readings
//   truth         RFSL header, "TRTH", states, readings, LOS flags, anchors, BS positions
//   snapshots     RFSL header, "SNAP", belief snapshots for learning
//   checkpoint    "RFNN" u32 version, architecture, encoding frame, parameters, optional Adam
//                 state, optional calibration section

#ifndef RFSLAM_IO_HPP
#define RFSLAM_IO_HPP

#include "rfslam/learning.hpp"
#include "rfslam/metrics.hpp"

#include <filesystem>
#include <optional>

namespace rfslam
{
    // Raised for unreadable, truncated or malformed files
    class IoError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    inline constexpr std::uint32_t kFormatVersion = 1;

    struct MeasurementFile
    {
        int num_freq = 0;
        int num_antennas = 0;
        std::vector<MeasurementFrame> frames;
        std::vector<double> imu; // per frame, empty if absent
    };

    void write_measurements(const std::filesystem::path &path, const MeasurementFile &m);
    MeasurementFile read_measurements(const std::filesystem::path &path);

    struct TruthFile
    {
        int num_freq = 0;
        int num_antennas = 0;
        std::vector<Vec2> bs_positions;
        ScenarioTruth truth;
    };
    void write_truth(const std::filesystem::path &path, const TruthFile &t);
    TruthFile read_truth(const std::filesystem::path &path);

    struct SnapshotFile
    {
        int num_freq = 0;
        int num_antennas = 0;
        std::vector<BeliefSnapshot> snapshots;
    };
    void write_snapshots(const std::filesystem::path &path, const SnapshotFile &s);
    SnapshotFile read_snapshots(const std::filesystem::path &path);

    struct Checkpoint
    {
        NeuralMap map;
        std::optional<AdamState> adam;
        std::optional<Calibration> calibration;
        int num_freq = 0;     // calibration dimensions, if present
        int num_antennas = 0;
    };
    void write_checkpoint(const std::filesystem::path &path, const Checkpoint &c);
    Checkpoint read_checkpoint(const std::filesystem::path &path);

    // CSV writers (header row, '.' decimal, full precision)
    void write_track_csv(const std::filesystem::path &path, const std::vector<StateEstimates> &estimates);
    // Rows of k >= 1: positions and visibility columns; prior row (k = 0) is skipped
    struct TrackCsv
    {
        std::vector<int> k;
        std::vector<Vec2> position;
        std::vector<std::vector<double>> visibility;
    };
    TrackCsv read_track_csv(const std::filesystem::path &path);
    void write_training_log_csv(const std::filesystem::path &path, const std::vector<TrainingLogRow> &rows);

} // namespace rfslam

#endif
