#include "demloop/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "demloop/util.hpp"

namespace demloop {

namespace {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_value(const std::string& s) {
    std::istringstream is(s);
    T v;
    if (!(is >> v)) throw Error("config parse", "bad value '" + s + "'");
    return v;
}

template <>
bool parse_value<bool>(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error("config parse", "bad bool '" + s + "'");
}

template <typename T>
std::string format_value(T v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <>
std::string format_value<bool>(bool v) {
    return v ? "true" : "false";
}

template <typename T>
Field make_field(std::function<T&(RunConfig&)> ref) {
    return {[ref](RunConfig& c, const std::string& s) { ref(c) = parse_value<T>(s); },
            [ref](const RunConfig& c) { return format_value(ref(const_cast<RunConfig&>(c))); }};
}

#define DEMLOOP_FIELD(key, member, type)                                        \
    {key, make_field<type>(std::function<type&(RunConfig&)>(                     \
              [](RunConfig& c) -> type& { return c.member; }))}

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> fields = {
        DEMLOOP_FIELD("run.seed", seed, std::uint64_t),
        DEMLOOP_FIELD("scene.extent", scene.extent, double),
        DEMLOOP_FIELD("scene.n_buildings", scene.n_buildings, int),
        DEMLOOP_FIELD("scene.n_trees", scene.n_trees, int),
        DEMLOOP_FIELD("scene.ground_roughness", scene.ground_roughness, double),
        DEMLOOP_FIELD("scene.building_height_min", scene.building_height_min, double),
        DEMLOOP_FIELD("scene.building_height_max", scene.building_height_max, double),
        DEMLOOP_FIELD("sensor.rings", sensor.rings, int),
        DEMLOOP_FIELD("sensor.rays_per_ring", sensor.rays_per_ring, int),
        DEMLOOP_FIELD("sensor.max_range", sensor.max_range, double),
        DEMLOOP_FIELD("sensor.noise_sigma", sensor.noise_sigma, double),
        DEMLOOP_FIELD("sensor.elev_min_deg", sensor.elev_min_deg, double),
        DEMLOOP_FIELD("sensor.elev_max_deg", sensor.elev_max_deg, double),
        DEMLOOP_FIELD("trajectory.laps", trajectory.laps, int),
        DEMLOOP_FIELD("trajectory.scans_per_lap", trajectory.scans_per_lap, int),
        DEMLOOP_FIELD("trajectory.path_radius", trajectory.path_radius, double),
        DEMLOOP_FIELD("trajectory.sensor_height", trajectory.sensor_height, double),
        DEMLOOP_FIELD("trajectory.rp_max_deg", trajectory.rp_max_deg, double),
        DEMLOOP_FIELD("trajectory.lap_offset", trajectory.lap_offset, double),
        DEMLOOP_FIELD("trajectory.revisits", trajectory.revisits, bool),
        DEMLOOP_FIELD("ransac.iters", ransac.iters, int),
        DEMLOOP_FIELD("ransac.inlier_tol", ransac.inlier_tol, double),
        DEMLOOP_FIELD("ransac.min_inliers", ransac.min_inliers, std::size_t),
        DEMLOOP_FIELD("ransac.max_tilt_deg", ransac.max_tilt_deg, double),
        DEMLOOP_FIELD("dem.extent", dem.extent, double),
        DEMLOOP_FIELD("dem.resolution", dem.resolution, int),
        DEMLOOP_FIELD("dem.h_max", dem.h_max, double),
        DEMLOOP_FIELD("codec.block", codec.block, int),
        DEMLOOP_FIELD("codec.quant_bits", codec.quant_bits, int),
        DEMLOOP_FIELD("dyt.coarse_steps", dyt.coarse_steps, int),
        DEMLOOP_FIELD("dyt.refine_iters", dyt.refine_iters, int),
        DEMLOOP_FIELD("dyt.grad_tol", dyt.grad_tol, double),
        DEMLOOP_FIELD("detect.exclusion_window", detect.exclusion_window, std::int64_t),
        DEMLOOP_FIELD("detect.tp_radius", detect.tp_radius, double),
        DEMLOOP_FIELD("detect.triplet_margin", detect.triplet_margin, double),
        DEMLOOP_FIELD("close.search_radius", close.alignment.translation.search_radius, double),
        DEMLOOP_FIELD("close.min_peak", close.alignment.translation.min_peak, double),
        DEMLOOP_FIELD("close.min_overlap_cells", close.alignment.translation.min_overlap_cells, int),
        DEMLOOP_FIELD("close.yaw_span", close.alignment.yaw_span, double),
        DEMLOOP_FIELD("close.yaw_step", close.alignment.yaw_step, double),
        DEMLOOP_FIELD("close.icp_max_iters", close.icp.max_iters, int),
        DEMLOOP_FIELD("close.icp_corr_dist", close.icp.corr_dist, double),
        DEMLOOP_FIELD("close.icp_normal_k", close.icp.normal_k, int),
    };
    return fields;
}

} // namespace

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw Error("config parse", "line " + std::to_string(lineno));
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config parse", "line " + std::to_string(lineno) + ": missing '='");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string full = section.empty() ? key : section + "." + key;
        const auto it = registry().find(full);
        if (it == registry().end())
            throw Error("config parse", "unknown key '" + full + "'");
        it->second.set(cfg, value);
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    apply_config_text(cfg, ss.str());
    return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, f] : registry()) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << '\n';
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
    }
    return out.str();
}

} // namespace demloop
