// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------
//
// JSON run configuration. Every object rejects unknown keys; errors carry the offending field path.
// See schema/run_config.schema.json for the layout.

#ifndef RFSLAM_CONFIG_HPP
#define RFSLAM_CONFIG_HPP

#include "rfslam/learning.hpp"

#include <filesystem>
#include <optional>

namespace rfslam
{
    class ConfigError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct RunConfig
    {
        std::uint64_t seed = 1;
        double carrier_hz = 6e9;
        double bandwidth_hz = 100e6;
        double spacing_hz = 2e6;
        ArrayGeometry array;
        Scenario scenario;
        FilterConfig filter;
        FilterModels models;
        MapArchitecture map;
        std::optional<BoundingBox> map_bounds; // feature scatter region; default: scene bounds + margin
        double map_margin = 10.0;              // [m]
        LearnConfig learn;
        int threads = 0;                       // 0: library default

        RadioModel radio_model() const;
        BoundingBox scatter_bounds() const;
        EncodingFrame encoding_frame() const;
        // Applies the global seed to the scenario and filter streams
        void set_seed(std::uint64_t s);
    };

    RunConfig parse_config(const std::string &text, const std::string &source = "<config>");
    RunConfig load_config(const std::filesystem::path &path);

} // namespace rfslam

#endif
