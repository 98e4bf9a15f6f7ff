#ifndef DEMLOOP_CONFIG_HPP
#define DEMLOOP_CONFIG_HPP

#include <cstdint>
#include <string>

#include "demloop/canonicalize.hpp"
#include "demloop/close.hpp"
#include "demloop/codec.hpp"
#include "demloop/dem.hpp"
#include "demloop/dyt.hpp"
#include "demloop/ingest.hpp"

namespace demloop {

/// Synthetic trajectory: laps around a closed circuit with per-scan attitude
/// perturbations; later laps revisit the first within the loop radius.
struct TrajectoryConfig {
    int laps = 2;
    int scans_per_lap = 110;
    double path_radius = 30.0;     // m
    double sensor_height = 6.0;    // m above ground
    double rp_max_deg = 15.0;      // roll/pitch perturbation bound
    double lap_offset = 1.0;       // lateral offset between laps, m
    bool revisits = true;          // false: spiral outward, no loop pairs
};

struct DetectConfig {
    std::int64_t exclusion_window = 50;
    double tp_radius = 4.0;
    double triplet_margin = 0.75;
};

struct CloseConfig {
    AlignmentParams alignment;
    IcpParams icp;
};

struct RunConfig {
    std::uint64_t seed = 7;
    SceneSpec scene;
    SensorModel sensor;
    TrajectoryConfig trajectory;
    RansacParams ransac;
    DemConfig dem;
    CodecConfig codec;
    YawOptions dyt;
    DetectConfig detect;
    CloseConfig close;
};

/// Flat key=value config with [section] headers; unknown keys are errors.
RunConfig load_config(const std::string& path);
void apply_config_text(RunConfig& cfg, const std::string& text);
std::string config_to_text(const RunConfig& cfg);

} // namespace demloop

#endif
