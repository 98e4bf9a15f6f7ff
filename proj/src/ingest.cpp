#include "demloop/ingest.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "demloop/util.hpp"

namespace demloop {

PointCloud load_kitti_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("io", "cannot open " + path);
    const std::streamoff size = in.tellg();
    if (size % 16 != 0)
        throw Error("truncated scan",
                    path + " at byte offset " + std::to_string(size - size % 16));
    in.seekg(0);
    const std::size_t n = static_cast<std::size_t>(size / 16);
    std::vector<float> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), size);
    if (!in) throw Error("io", "short read on " + path);

    PointCloud cloud;
    cloud.points.reserve(n);
    cloud.intensity.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float x = raw[4 * i], y = raw[4 * i + 1], z = raw[4 * i + 2];
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) continue;
        cloud.points.emplace_back(x, y, z);
        cloud.intensity.push_back(raw[4 * i + 3]);
    }
    if (cloud.empty()) throw Error("empty scan", path);
    return cloud;
}

void save_kitti_bin(const std::string& path, const PointCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write " + path);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        float rec[4] = {static_cast<float>(cloud.points[i].x()),
                        static_cast<float>(cloud.points[i].y()),
                        static_cast<float>(cloud.points[i].z()),
                        cloud.intensity.size() == cloud.size() ? cloud.intensity[i] : 0.0f};
        out.write(reinterpret_cast<const char*>(rec), sizeof rec);
    }
    if (!out) throw Error("io", "write failed on " + path);
}

PointCloud load_ply_ascii(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
        throw Error("ply parse", "missing ply magic in " + path);
    long n_vertex = -1;
    std::vector<std::string> props;
    bool ascii = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (tok == "element") {
            std::string name;
            ls >> name;
            if (name == "vertex") ls >> n_vertex;
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (n_vertex >= 0) props.push_back(name);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw Error("ply parse", "only ascii ply supported: " + path);
    if (n_vertex < 0) throw Error("ply parse", "no vertex element in " + path);
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t i = 0; i < props.size(); ++i) {
        if (props[i] == "x") ix = static_cast<int>(i);
        if (props[i] == "y") iy = static_cast<int>(i);
        if (props[i] == "z") iz = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw Error("ply parse", "vertex lacks x/y/z in " + path);

    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(n_vertex));
    for (long v = 0; v < n_vertex; ++v) {
        if (!std::getline(in, line))
            throw Error("ply parse", "unexpected eof at vertex " + std::to_string(v));
        std::istringstream ls(line);
        std::vector<double> vals(props.size());
        for (auto& val : vals)
            if (!(ls >> val))
                throw Error("ply parse", "bad vertex line " + std::to_string(v));
        Vec3 p(vals[ix], vals[iy], vals[iz]);
        if (p.allFinite()) cloud.points.push_back(p);
    }
    if (cloud.empty()) throw Error("empty scan", path);
    return cloud;
}

std::vector<RigidTransform> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path);
    std::vector<RigidTransform> poses;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        double v[12];
        for (int i = 0; i < 12; ++i)
            if (!(ls >> v[i]))
                throw Error("pose parse", "line " + std::to_string(lineno));
        double extra;
        if (ls >> extra) throw Error("pose parse", "line " + std::to_string(lineno));
        RigidTransform t;
        t.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
        t.translation = Vec3(v[3], v[7], v[11]);
        const double drift =
            (t.rotation.transpose() * t.rotation - RotationMatrix::Identity())
                .cwiseAbs()
                .maxCoeff();
        if (drift >= 1e-3)
            throw Error("pose parse",
                        "non-orthonormal rotation at line " + std::to_string(lineno));
        if (drift > 1e-12) t.rotation = orthonormalize(t.rotation);
        poses.push_back(t);
    }
    return poses;
}

void save_poses(const std::string& path, const std::vector<RigidTransform>& poses) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    out.precision(17);
    for (const auto& t : poses) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out << t.rotation(r, c) << ' ';
            out << t.translation(r) << (r == 2 ? '\n' : ' ');
        }
    }
}

// ---------------------------------------------------------------------------

double Scene::ground_height(double x, double y) const {
    double h = 0.0;
    for (const auto& w : waves)
        h += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
    return h;
}

Scene synth_scene(const SceneSpec& spec) {
    if (spec.extent <= 0.0) throw Error("bad spec", "extent must be positive");
    if (spec.n_buildings < 0 || spec.n_trees < 0)
        throw Error("bad spec", "negative object count");
    Scene scene;
    scene.spec = spec;
    std::mt19937_64 rng(mix_seed(spec.seed));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    if (spec.ground_roughness > 0.0) {
        const int n_waves = 5;
        for (int i = 0; i < n_waves; ++i) {
            GroundWave w;
            w.amp = spec.ground_roughness / n_waves * (0.5 + 0.5 * u01(rng));
            const double wavelength = 8.0 + 40.0 * u01(rng);
            const double dir = 2.0 * M_PI * u01(rng);
            w.fx = 2.0 * M_PI / wavelength * std::cos(dir);
            w.fy = 2.0 * M_PI / wavelength * std::sin(dir);
            w.phase = 2.0 * M_PI * u01(rng);
            scene.waves.push_back(w);
        }
    }

    const double half = spec.extent / 2.0;
    for (int i = 0; i < spec.n_buildings; ++i) {
        const double cx = (u01(rng) * 2.0 - 1.0) * half;
        const double cy = (u01(rng) * 2.0 - 1.0) * half;
        const double wx = 6.0 + 14.0 * u01(rng);
        const double wy = 6.0 + 14.0 * u01(rng);
        const double h = spec.building_height_min +
                         (spec.building_height_max - spec.building_height_min) * u01(rng);
        const double base = scene.ground_height(cx, cy) - 0.5;
        scene.buildings.push_back(
            {Vec3(cx - wx / 2, cy - wy / 2, base), Vec3(cx + wx / 2, cy + wy / 2, base + h)});
    }
    for (int i = 0; i < spec.n_trees; ++i) {
        const double cx = (u01(rng) * 2.0 - 1.0) * half;
        const double cy = (u01(rng) * 2.0 - 1.0) * half;
        const double trunk_h = 3.0 + 5.0 * u01(rng);
        const double trunk_r = 0.25 + 0.35 * u01(rng);
        const double canopy_r = 1.5 + 2.0 * u01(rng);
        const double base = scene.ground_height(cx, cy);
        scene.trunks.push_back({cx, cy, trunk_r, base - 0.5, base + trunk_h});
        scene.canopies.push_back({Vec3(cx, cy, base + trunk_h + canopy_r * 0.6), canopy_r});
    }
    return scene;
}

namespace {

bool ray_box(const Vec3& o, const Vec3& d, const Box& b, double& s_hit) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-12) {
            if (o[i] < b.lo[i] || o[i] > b.hi[i]) return false;
            continue;
        }
        double ta = (b.lo[i] - o[i]) / d[i];
        double tb = (b.hi[i] - o[i]) / d[i];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (t0 <= 1e-9) return false;
    s_hit = t0;
    return true;
}

bool ray_cylinder(const Vec3& o, const Vec3& d, const Cylinder& c, double& s_hit) {
    const double ox = o.x() - c.cx, oy = o.y() - c.cy;
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a < 1e-14) return false;
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double cc = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    for (double s : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (s <= 1e-9) continue;
        const double z = o.z() + s * d.z();
        if (z >= c.z0 && z <= c.z1) {
            s_hit = s;
            return true;
        }
    }
    return false;
}

bool ray_sphere(const Vec3& o, const Vec3& d, const Sphere& sp, double& s_hit) {
    const Vec3 oc = o - sp.center;
    const double b = 2.0 * oc.dot(d);
    const double c = oc.squaredNorm() - sp.radius * sp.radius;
    const double disc = b * b - 4.0 * c;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    const double s0 = (-b - sq) / 2.0, s1 = (-b + sq) / 2.0;
    if (s0 > 1e-9) {
        s_hit = s0;
        return true;
    }
    if (s1 > 1e-9) {
        s_hit = s1;
        return true;
    }
    return false;
}

/// Ground hit: Newton refinement of the flat-plane solution against the
/// rough ground field. Returns false if the ray never crosses the ground.
bool ray_ground(const Scene& scene, const Vec3& o, const Vec3& d, double max_range,
                double& s_hit) {
    if (d.z() > -1e-4) return false; // only downward rays hit ground
    double s = -o.z() / d.z();
    if (s <= 1e-9) {
        // origin below z=0; still may hit the perturbed field ahead
        s = 1.0;
    }
    if (scene.waves.empty()) {
        if (s <= 1e-9 || s > max_range) return false;
        s_hit = s;
        return true;
    }
    for (int iter = 0; iter < 12; ++iter) {
        const double x = o.x() + s * d.x();
        const double y = o.y() + s * d.y();
        const double f = o.z() + s * d.z() - scene.ground_height(x, y);
        double dgdx = 0.0, dgdy = 0.0;
        for (const auto& w : scene.waves) {
            const double cs = w.amp * std::cos(w.fx * x + w.fy * y + w.phase);
            dgdx += cs * w.fx;
            dgdy += cs * w.fy;
        }
        const double df = d.z() - dgdx * d.x() - dgdy * d.y();
        if (std::abs(df) < 1e-12) return false;
        const double step = f / df;
        s -= step;
        if (s <= 1e-9 || s > 4.0 * max_range) return false;
        if (std::abs(step) < 1e-10) break;
    }
    const double x = o.x() + s * d.x();
    const double y = o.y() + s * d.y();
    if (std::abs(o.z() + s * d.z() - scene.ground_height(x, y)) > 1e-6) return false;
    if (s > max_range) return false;
    s_hit = s;
    return true;
}

} // namespace

PointCloud synth_scan(const Scene& scene, const RigidTransform& pose,
                      const SensorModel& sensor) {
    if (sensor.rings <= 0 || sensor.rays_per_ring <= 0)
        throw Error("bad sensor", "counts must be positive");
    const Vec3 origin = pose.translation;
    if (origin.z() < scene.ground_height(origin.x(), origin.y()) + 0.01)
        throw Error("sensor underground");

    std::mt19937_64 rng(mix_seed(scene.spec.seed ^ mix_seed(sensor.noise_seed)));
    std::normal_distribution<double> noise(0.0, 1.0);

    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(sensor.rings) * sensor.rays_per_ring);
    for (int ring = 0; ring < sensor.rings; ++ring) {
        const double frac = sensor.rings == 1 ? 0.5
                                              : static_cast<double>(ring) / (sensor.rings - 1);
        const double elev =
            deg2rad(sensor.elev_min_deg + frac * (sensor.elev_max_deg - sensor.elev_min_deg));
        for (int i = 0; i < sensor.rays_per_ring; ++i) {
            const double az = 2.0 * M_PI * i / sensor.rays_per_ring;
            const Vec3 dir_sensor(std::cos(elev) * std::cos(az),
                                  std::cos(elev) * std::sin(az), std::sin(elev));
            const Vec3 d = pose.rotation * dir_sensor;
            double best = std::numeric_limits<double>::infinity();
            double s;
            if (ray_ground(scene, origin, d, sensor.max_range, s)) best = s;
            for (const auto& b : scene.buildings)
                if (ray_box(origin, d, b, s) && s < best) best = s;
            for (const auto& c : scene.trunks)
                if (ray_cylinder(origin, d, c, s) && s < best) best = s;
            for (const auto& sp : scene.canopies)
                if (ray_sphere(origin, d, sp, s) && s < best) best = s;
            // noise draw is unconditional so ray<->sample pairing is stable
            const double eps = sensor.noise_sigma > 0.0
                                   ? noise(rng) * sensor.noise_sigma
                                   : 0.0;
            if (!std::isfinite(best) || best > sensor.max_range) continue;
            const double range = std::max(0.05, best + eps);
            cloud.points.push_back(dir_sensor * range);
        }
    }
    if (cloud.empty()) throw Error("empty scan", "no ray hits within range");
    return cloud;
}

} // namespace demloop
