#include "demloop/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "demloop/util.hpp"

namespace demloop {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kPacketsMagic[4] = {'D', 'L', 'P', 'K'};

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::string scan_path(const std::string& dataset_dir, std::int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06lld.bin", static_cast<long long>(id));
    return (fs::path(dataset_dir) / "scans" / buf).string();
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

void write_packets(const std::string& path, const std::vector<PacketRecord>& packets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write " + path);
    out.write(kPacketsMagic, 4);
    const auto count = static_cast<std::uint32_t>(packets.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& p : packets) {
        const auto id = static_cast<std::int64_t>(p.id);
        const auto len = static_cast<std::uint32_t>(p.bytes.size());
        out.write(reinterpret_cast<const char*>(&id), 8);
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(reinterpret_cast<const char*>(p.bytes.data()),
                  static_cast<std::streamsize>(p.bytes.size()));
    }
    if (!out) throw Error("io", "write failed on " + path);
}

std::vector<PacketRecord> read_packets(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kPacketsMagic, 4) != 0)
        throw Error("bad magic", path);
    std::uint32_t count;
    in.read(reinterpret_cast<char*>(&count), 4);
    std::vector<PacketRecord> packets(count);
    for (auto& p : packets) {
        std::int64_t id;
        std::uint32_t len;
        in.read(reinterpret_cast<char*>(&id), 8);
        in.read(reinterpret_cast<char*>(&len), 4);
        if (!in) throw Error("bad packet", "truncated packets file " + path);
        p.id = id;
        p.bytes.resize(len);
        in.read(reinterpret_cast<char*>(p.bytes.data()), len);
        if (!in) throw Error("bad packet", "truncated packets file " + path);
    }
    return packets;
}

std::vector<RigidTransform> synth_trajectory(const RunConfig& cfg, const Scene& scene) {
    const auto& tj = cfg.trajectory;
    if (tj.laps <= 0 || tj.scans_per_lap <= 0)
        throw Error("bad config", "trajectory counts must be positive");
    std::mt19937_64 rng(mix_seed(cfg.seed ^ 0xA17Au));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    std::vector<RigidTransform> poses;
    poses.reserve(static_cast<std::size_t>(tj.laps) * tj.scans_per_lap);
    for (int lap = 0; lap < tj.laps; ++lap) {
        for (int i = 0; i < tj.scans_per_lap; ++i) {
            const double phi = 2.0 * M_PI * i / tj.scans_per_lap;
            double r = tj.path_radius + lap * tj.lap_offset;
            if (!tj.revisits) {
                // outward spiral: successive laps are >2x the loop radius apart
                const double per_scan =
                    10.0 / tj.scans_per_lap;
                r = tj.path_radius + (lap * tj.scans_per_lap + i) * per_scan;
            }
            const double x = r * std::cos(phi);
            const double y = r * std::sin(phi);
            const double z = scene.ground_height(x, y) + tj.sensor_height +
                             0.5 * std::sin(3.0 * phi + lap);
            Rpy att;
            att.yaw = 2.0 * M_PI * u01(rng); // unrestricted heading
            att.pitch = deg2rad(tj.rp_max_deg) * (2.0 * u01(rng) - 1.0);
            att.roll = deg2rad(tj.rp_max_deg) * (2.0 * u01(rng) - 1.0);
            RigidTransform pose;
            pose.rotation = rpy_compose(att);
            pose.translation = Vec3(x, y, z);
            poses.push_back(pose);
        }
    }
    return poses;
}

std::size_t count_loop_pairs(const std::vector<RigidTransform>& poses,
                             std::int64_t exclusion_window, double radius) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < poses.size(); ++i)
        for (std::size_t j = i + 1; j < poses.size(); ++j) {
            // same reachability rule as LoopIndex::query
            if (static_cast<std::int64_t>(j - i) < exclusion_window) continue;
            if ((poses[i].translation - poses[j].translation).norm() < radius) ++count;
        }
    return count;
}

SynthSummary synth_dataset(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "scans");

    SceneSpec spec = cfg.scene;
    spec.seed = cfg.seed;
    const Scene scene = synth_scene(spec);
    const auto poses = synth_trajectory(cfg, scene);

    std::vector<PointCloud> clouds(poses.size());
    std::vector<std::string> errors(poses.size());
    parallel_for(poses.size(), [&](std::size_t i) {
        SensorModel sensor = cfg.sensor;
        sensor.noise_seed = mix_seed(cfg.seed) + i;
        try {
            clouds[i] = synth_scan(scene, poses[i], sensor);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < poses.size(); ++i)
        if (!errors[i].empty())
            throw Error("synth failed", "scan " + std::to_string(i) + ": " + errors[i]);
    for (std::size_t i = 0; i < poses.size(); ++i)
        save_kitti_bin(scan_path(out_dir, static_cast<std::int64_t>(i)), clouds[i]);
    save_poses((fs::path(out_dir) / "poses.txt").string(), poses);

    {
        std::ofstream out(fs::path(out_dir) / "config.cfg");
        out << config_to_text(cfg);
    }
    SynthSummary summary;
    summary.n_scans = static_cast<int>(poses.size());
    summary.n_loop_pairs =
        count_loop_pairs(poses, cfg.detect.exclusion_window, cfg.detect.tp_radius);
    {
        std::ofstream out(fs::path(out_dir) / "manifest.txt");
        out << "n_scans = " << summary.n_scans << '\n'
            << "n_loop_pairs = " << summary.n_loop_pairs << '\n'
            << "seed = " << cfg.seed << '\n';
    }
    return summary;
}

namespace {

int dataset_scan_count(const std::string& dataset_dir) {
    std::ifstream in(fs::path(dataset_dir) / "manifest.txt");
    if (!in) throw Error("io", "missing manifest.txt in " + dataset_dir);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        int value;
        if (ls >> key >> eq >> value && key == "n_scans") return value;
    }
    throw Error("io", "manifest.txt lacks n_scans in " + dataset_dir);
}

struct ProcessedScan {
    CanonicalScan canonical;
    PacketMeta meta;
    std::vector<std::uint8_t> packet;
    std::size_t raw_bytes = 0;
};

ProcessedScan process_scan(const RunConfig& cfg, const std::string& dataset_dir,
                           std::int64_t id) {
    const PointCloud cloud = load_kitti_bin(scan_path(dataset_dir, id));
    RansacParams ransac = cfg.ransac;
    ransac.seed = mix_seed(cfg.seed) ^ static_cast<std::uint64_t>(id);
    const GroundPlane coarse = fit_ground_plane_coarse(cloud, ransac);
    const GroundPlane fine = refine_plane_fine(cloud, coarse, ransac.inlier_tol);

    ProcessedScan out;
    out.canonical = rp_canonicalize(cloud, fine);
    const Dem dem = rasterize(out.canonical, cfg.dem);
    const LatentGrid latent = encode(dem, cfg.codec);
    out.meta.dem_config = cfg.dem;
    out.meta.r_rp = rpy_decompose(out.canonical.r_rp);
    out.meta.z_offset = out.canonical.z_offset;
    out.packet = serialize(latent, out.meta);
    out.raw_bytes = 16 * cloud.size();
    return out;
}

} // namespace

IndexSummary run_index(const RunConfig& cfg, const std::string& dataset_dir,
                       const std::string& packets_path) {
    const double t0 = now_ms();
    const int n = dataset_scan_count(dataset_dir);
    std::vector<PacketRecord> packets(static_cast<std::size_t>(n));
    std::vector<double> ratios(static_cast<std::size_t>(n));
    std::vector<std::size_t> raw_bytes(static_cast<std::size_t>(n));
    std::vector<std::string> errors(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        try {
            ProcessedScan ps = process_scan(cfg, dataset_dir, static_cast<std::int64_t>(i));
            packets[i].id = static_cast<std::int64_t>(i);
            packets[i].bytes = std::move(ps.packet);
            ratios[i] = static_cast<double>(ps.raw_bytes) / packets[i].bytes.size();
            raw_bytes[i] = ps.raw_bytes;
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty())
            throw Error("index failed", "scan " + std::to_string(i) + ": " + errors[i]);
    write_packets(packets_path, packets);

    IndexSummary summary;
    summary.stats.elapsed_ms = now_ms() - t0;
    summary.stats.items = n;
    summary.stats.per_item_ms = summary.stats.elapsed_ms / std::max(1, n);
    summary.min_compression_ratio = *std::min_element(ratios.begin(), ratios.end());
    summary.mean_compression_ratio =
        std::accumulate(ratios.begin(), ratios.end(), 0.0) / ratios.size();
    for (std::size_t i = 0; i < packets.size(); ++i) {
        summary.total_packet_bytes += packets[i].bytes.size();
        summary.total_raw_bytes += raw_bytes[i];
    }

    json stats = {{"stage", "index"},
                  {"elapsed_ms", summary.stats.elapsed_ms},
                  {"per_scan_ms", summary.stats.per_item_ms},
                  {"n_scans", n},
                  {"mean_compression_ratio", summary.mean_compression_ratio},
                  {"min_compression_ratio", summary.min_compression_ratio},
                  {"total_packet_bytes", summary.total_packet_bytes},
                  {"total_raw_bytes", summary.total_raw_bytes}};
    std::ofstream out(packets_path + ".stats.json");
    out << stats.dump(2) << '\n';
    return summary;
}

void write_candidates_csv(const std::string& path,
                          const std::vector<std::vector<LoopCandidate>>& per_query) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    out << "query_id,rank,db_id,distance,theta\n";
    for (const auto& cands : per_query) {
        int rank = 0;
        for (const auto& c : cands)
            out << c.query_id << ',' << rank++ << ',' << c.db_id << ',' << fmt(c.distance)
                << ',' << fmt(c.theta) << '\n';
    }
}

std::vector<std::vector<LoopCandidate>> read_candidates_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path);
    std::string line;
    std::getline(in, line); // header
    std::vector<std::vector<LoopCandidate>> per_query;
    std::int64_t last_query = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LoopCandidate c;
        int rank;
        if (std::sscanf(line.c_str(), "%lld,%d,%lld,%lf,%lf",
                        reinterpret_cast<long long*>(&c.query_id), &rank,
                        reinterpret_cast<long long*>(&c.db_id), &c.distance,
                        &c.theta) != 5)
            throw Error("csv parse", path + ": " + line);
        if (c.query_id != last_query) {
            per_query.emplace_back();
            last_query = c.query_id;
        }
        per_query.back().push_back(c);
    }
    return per_query;
}

QuerySummary run_query(const RunConfig& cfg, const std::string& packets_path,
                       const std::string& candidates_csv) {
    const double t0 = now_ms();
    const auto packets = read_packets(packets_path);
    std::vector<DecodedPacket> decoded(packets.size());
    std::map<std::int64_t, std::size_t> slot;
    std::vector<IndexEntry> entries;
    entries.reserve(packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i) {
        decoded[i] = deserialize(packets[i].bytes);
        slot[packets[i].id] = i;
        entries.push_back({packets[i].id, decoded[i].latent});
    }
    const LoopIndex index(std::move(entries));

    // Verification of the latent-level shortlist: the masked correlation is
    // nearly translation-blind at latent resolution, so same-circuit scans
    // tens of meters apart can outscore the true revisit. Rechecking the top
    // candidates with the DEM translation correlation (search capped near the
    // loop radius) separates the two: a verified loop gets 1 - peak, anything
    // unverified is pushed past 2 so it can never outrank a verified loop.
    constexpr std::size_t kVerifyTop = 5;
    TranslationParams vparams = cfg.close.alignment.translation;
    vparams.search_radius = cfg.detect.tp_radius + 2.0;
    vparams.min_overlap_cells = std::max(50, vparams.min_overlap_cells / 4);
    // verification runs on half-resolution DEMs: the peak and the metric
    // offset gate survive 2x block averaging, at a tenth of the cost
    const auto half_res = [](const Dem& dem) {
        if (dem.config.resolution % 2 != 0) return dem;
        Dem out;
        out.config = dem.config;
        out.config.resolution /= 2;
        const int n = out.config.resolution;
        out.heights = Eigen::ArrayXXd::Zero(n, n);
        out.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n,
                                                                                false);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                double sum = 0.0;
                int count = 0;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        if (dem.valid(2 * r + dr, 2 * c + dc)) {
                            sum += dem.heights(2 * r + dr, 2 * c + dc);
                            ++count;
                        }
                if (count > 0) {
                    out.heights(r, c) = sum / count;
                    out.valid(r, c) = true;
                }
            }
        return out;
    };
    const auto dem_for = [&](std::int64_t id) {
        const DecodedPacket& dp = decoded[slot.at(id)];
        return half_res(decode(dp.latent, dp.meta.dem_config));
    };

    std::vector<std::vector<LoopCandidate>> per_query;
    per_query.reserve(packets.size());
    for (const auto& e : index.entries()) {
        auto cands = index.query(e.id, e.latent, cfg.detect.exclusion_window, cfg.dyt);
        const Dem qdem = dem_for(e.id);
        for (std::size_t k = 0; k < cands.size(); ++k) {
            LoopCandidate& c = cands[k];
            if (k >= kVerifyTop) {
                c.distance += 2.0;
                continue;
            }
            const Dem cdem = dem_for(c.db_id);
            double best_peak = -1.0, best_t = 0.0, best_theta = c.theta;
            for (const int s : {-1, 0, 1}) {
                const double th = c.theta + s * cfg.close.alignment.yaw_step;
                try {
                    const TranslationEstimate est =
                        estimate_translation(rotate_dem(qdem, th), cdem, vparams);
                    if (est.peak > best_peak) {
                        best_peak = est.peak;
                        best_t = std::hypot(est.tx, est.ty);
                        best_theta = th;
                    }
                } catch (const Error&) {
                }
            }
            if (best_peak >= vparams.min_peak && best_t <= cfg.detect.tp_radius) {
                c.distance = 1.0 - best_peak;
                c.theta = wrap_angle(best_theta);
            } else {
                c.distance += 2.0;
            }
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const LoopCandidate& a, const LoopCandidate& b) {
                             return a.distance != b.distance ? a.distance < b.distance
                                                            : a.db_id < b.db_id;
                         });
        per_query.push_back(std::move(cands));
    }
    write_candidates_csv(candidates_csv, per_query);

    QuerySummary summary;
    summary.n_queries = static_cast<int>(per_query.size());
    summary.stats.elapsed_ms = now_ms() - t0;
    summary.stats.items = summary.n_queries;
    summary.stats.per_item_ms = summary.stats.elapsed_ms / std::max(1, summary.n_queries);
    json stats = {{"stage", "query"},
                  {"elapsed_ms", summary.stats.elapsed_ms},
                  {"per_query_ms", summary.stats.per_item_ms},
                  {"n_queries", summary.n_queries}};
    std::ofstream out(candidates_csv + ".stats.json");
    out << stats.dump(2) << '\n';
    return summary;
}

void write_closures_csv(const std::string& path, const std::vector<ClosureRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    out << "query_id,db_id,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz,te,re\n";
    for (const auto& row : rows) {
        out << row.query_id << ',' << row.db_id;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out << ',' << fmt(row.pose.rotation(r, c));
            out << ',' << fmt(row.pose.translation(r));
        }
        out << ',' << fmt(row.te) << ',' << fmt(row.re) << '\n';
    }
}

std::vector<ClosureRow> read_closures_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path);
    std::string line;
    std::getline(in, line);
    std::vector<ClosureRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ClosureRow row;
        double v[14];
        if (std::sscanf(line.c_str(),
                        "%lld,%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf",
                        reinterpret_cast<long long*>(&row.query_id),
                        reinterpret_cast<long long*>(&row.db_id), &v[0], &v[1], &v[2], &v[3],
                        &v[4], &v[5], &v[6], &v[7], &v[8], &v[9], &v[10], &v[11], &v[12],
                        &v[13]) != 16)
            throw Error("csv parse", path + ": " + line);
        row.pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
        row.pose.translation = Vec3(v[3], v[7], v[11]);
        row.te = v[12];
        row.re = v[13];
        rows.push_back(row);
    }
    return rows;
}

CloseSummary run_close(const RunConfig& cfg, const std::string& dataset_dir,
                       const std::string& packets_path, const std::string& candidates_csv,
                       const std::string& closures_csv, bool refine_icp_flag) {
    const double t0 = now_ms();
    const auto packets = read_packets(packets_path);
    std::map<std::int64_t, DecodedPacket> decoded;
    for (const auto& p : packets) decoded[p.id] = deserialize(p.bytes);

    const auto per_query = read_candidates_csv(candidates_csv);
    std::vector<RigidTransform> gt;
    const auto poses_path = (fs::path(dataset_dir) / "poses.txt").string();
    if (fs::exists(poses_path)) gt = load_poses(poses_path);

    struct Task {
        std::int64_t query_id, db_id;
        double theta;
    };
    std::vector<Task> tasks;
    for (const auto& cands : per_query)
        if (!cands.empty())
            tasks.push_back({cands.front().query_id, cands.front().db_id,
                             cands.front().theta});

    std::vector<ClosureRow> rows(tasks.size());
    std::vector<int> status(tasks.size(), 0); // 0 ok, 1 failed
    parallel_for(tasks.size(), [&](std::size_t i) {
        const Task& task = tasks[i];
        try {
            const DecodedPacket& qp = decoded.at(task.query_id);
            const DecodedPacket& cp = decoded.at(task.db_id);
            const Dem qdem = decode(qp.latent, qp.meta.dem_config);
            const Dem cdem = decode(cp.latent, cp.meta.dem_config);
            const AlignmentEstimate al =
                refine_alignment(qdem, cdem, task.theta, cfg.close.alignment);
            RigidTransform pose = compose_relative_pose(qp.meta, cp.meta, al.theta,
                                                        al.translation.tx,
                                                        al.translation.ty);
            if (refine_icp_flag) {
                const PointCloud qc = load_kitti_bin(scan_path(dataset_dir, task.query_id));
                const PointCloud cc = load_kitti_bin(scan_path(dataset_dir, task.db_id));
                pose = refine_icp(qc, cc, pose, cfg.close.icp).pose;
            }
            ClosureRow row;
            row.query_id = task.query_id;
            row.db_id = task.db_id;
            row.pose = pose;
            if (!gt.empty()) {
                const RigidTransform rel =
                    compose(invert(gt[static_cast<std::size_t>(task.db_id)]),
                            gt[static_cast<std::size_t>(task.query_id)]);
                const PoseError err = pose_errors(pose, rel);
                row.te = err.te;
                row.re = err.re;
            }
            rows[i] = row;
        } catch (const Error&) {
            status[i] = 1;
        }
    });

    std::vector<ClosureRow> ok_rows;
    CloseSummary summary;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (status[i] == 0)
            ok_rows.push_back(rows[i]);
        else
            ++summary.n_failed;
    }
    write_closures_csv(closures_csv, ok_rows);
    summary.n_closed = static_cast<int>(ok_rows.size());
    summary.stats.elapsed_ms = now_ms() - t0;
    summary.stats.items = static_cast<int>(tasks.size());
    summary.stats.per_item_ms =
        summary.stats.elapsed_ms / std::max<std::size_t>(1, tasks.size());
    json stats = {{"stage", "close"},
                  {"elapsed_ms", summary.stats.elapsed_ms},
                  {"per_pair_ms", summary.stats.per_item_ms},
                  {"n_closed", summary.n_closed},
                  {"n_failed", summary.n_failed}};
    std::ofstream out(closures_csv + ".stats.json");
    out << stats.dump(2) << '\n';
    return summary;
}

void write_pr_csv(const std::string& path, const PrCurve& curve) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    out << "threshold,precision,recall\n";
    for (const auto& p : curve.points)
        out << fmt(p.threshold) << ',' << fmt(p.precision) << ',' << fmt(p.recall) << '\n';
}

void write_pr_svg(const std::string& path, const PrCurve& curve) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    const int w = 480, h = 480, m = 50;
    auto px = [&](double recall) { return m + recall * (w - 2 * m); };
    auto py = [&](double precision) { return h - m - precision * (h - 2 * m); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n";
    out << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << w - 2 * m
        << "\" height=\"" << h - 2 * m << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-size=\"14\">recall</text>\n";
    out << "<text x=\"16\" y=\"" << h / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 " << h / 2
        << ")\">precision</text>\n";
    out << "<text x=\"" << w - m << "\" y=\"" << m - 10
        << "\" text-anchor=\"end\" font-size=\"14\">AP = " << fmt(curve.ap) << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve.points) out << px(p.recall) << ',' << py(p.precision) << ' ';
    out << "\"/>\n</svg>\n";
}

EvalReport run_eval(const RunConfig& cfg, const std::string& dataset_dir,
                    const std::string& candidates_csv, const std::string& closures_csv,
                    const std::string& packets_path, const std::string& report_json,
                    const std::string& pr_csv, const std::string& pr_svg) {
    const auto per_query = read_candidates_csv(candidates_csv);
    const auto poses = load_poses((fs::path(dataset_dir) / "poses.txt").string());
    std::map<std::int64_t, RigidTransform> gt;
    for (std::size_t i = 0; i < poses.size(); ++i)
        gt[static_cast<std::int64_t>(i)] = poses[i];

    const PrCurve curve = evaluate_pr(per_query, gt, cfg.detect.tp_radius);
    write_pr_csv(pr_csv, curve);
    write_pr_svg(pr_svg, curve);

    EvalReport report;
    report.ap = curve.ap;
    report.n_queries = static_cast<int>(per_query.size());
    report.n_loop_pairs =
        count_loop_pairs(poses, cfg.detect.exclusion_window, cfg.detect.tp_radius);

    json j = {{"ap", report.ap},
              {"n_queries", report.n_queries},
              {"n_loop_pairs", report.n_loop_pairs},
              {"pr_csv", pr_csv},
              {"pr_svg", pr_svg},
              {"candidates_csv", candidates_csv}};

    if (!closures_csv.empty() && fs::exists(closures_csv)) {
        const auto rows = read_closures_csv(closures_csv);
        std::vector<double> tes, res;
        for (const auto& row : rows) {
            if (row.te < 0.0) continue;
            // aggregate over true loop pairs only
            const double sep = (poses[static_cast<std::size_t>(row.query_id)].translation -
                                poses[static_cast<std::size_t>(row.db_id)].translation)
                                   .norm();
            if (sep >= cfg.detect.tp_radius) continue;
            tes.push_back(row.te);
            res.push_back(row.re);
        }
        auto median = [](std::vector<double> v) {
            if (v.empty()) return 0.0;
            std::sort(v.begin(), v.end());
            const std::size_t mid = v.size() / 2;
            return v.size() % 2 ? v[mid] : (v[mid - 1] + v[mid]) / 2.0;
        };
        auto mean = [](const std::vector<double>& v) {
            return v.empty() ? 0.0
                             : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        };
        report.n_closures_evaluated = static_cast<int>(tes.size());
        report.mean_te = mean(tes);
        report.median_te = median(tes);
        report.mean_re = mean(res);
        report.median_re = median(res);
        j["closure"] = {{"n_evaluated", report.n_closures_evaluated},
                        {"mean_te_m", report.mean_te},
                        {"median_te_m", report.median_te},
                        {"mean_re_deg", report.mean_re},
                        {"median_re_deg", report.median_re}};
    }

    if (!packets_path.empty() && fs::exists(packets_path)) {
        const auto packets = read_packets(packets_path);
        std::vector<double> ratios;
        for (const auto& p : packets) {
            const auto cloud = load_kitti_bin(scan_path(dataset_dir, p.id));
            ratios.push_back(compression_ratio(cloud, p.bytes));
        }
        if (!ratios.empty()) {
            report.min_compression_ratio = *std::min_element(ratios.begin(), ratios.end());
            report.mean_compression_ratio =
                std::accumulate(ratios.begin(), ratios.end(), 0.0) / ratios.size();
            j["compression"] = {{"mean_ratio", report.mean_compression_ratio},
                                {"min_ratio", report.min_compression_ratio}};
        }
    }

    // merge per-stage timing emitted by earlier stages
    json timing = json::object();
    for (const std::string& stats_path :
         {packets_path + ".stats.json", candidates_csv + ".stats.json",
          closures_csv.empty() ? std::string() : closures_csv + ".stats.json"}) {
        if (stats_path.empty() || !fs::exists(stats_path)) continue;
        std::ifstream in(stats_path);
        json s = json::parse(in, nullptr, false);
        if (!s.is_discarded() && s.contains("stage"))
            timing[s["stage"].get<std::string>()] = s;
    }
    if (!timing.empty()) j["timing"] = timing;

    std::ofstream out(report_json);
    if (!out) throw Error("io", "cannot write " + report_json);
    out << j.dump(2) << '\n';
    return report;
}

} // namespace demloop
