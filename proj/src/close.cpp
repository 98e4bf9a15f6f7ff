#include "demloop/close.hpp"

#include <cmath>
#include <unordered_map>

#include "demloop/util.hpp"

namespace demloop {

namespace {

struct MaskedZncc {
    double score = -2.0;
    std::size_t overlap = 0;
};

/// 2D prefix sums of a validity mask; p(r, c) counts valid cells in
/// [0, r) x [0, c), so any window count is four lookups.
Eigen::ArrayXXi prefix_count(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& v) {
    const int nr = static_cast<int>(v.rows());
    const int nc = static_cast<int>(v.cols());
    Eigen::ArrayXXi p = Eigen::ArrayXXi::Zero(nr + 1, nc + 1);
    for (int r = 0; r < nr; ++r)
        for (int c = 0; c < nc; ++c)
            p(r + 1, c + 1) = p(r, c + 1) + p(r + 1, c) - p(r, c) + (v(r, c) ? 1 : 0);
    return p;
}

int window_count(const Eigen::ArrayXXi& p, int r0, int r1, int c0, int c1) {
    return p(r1, c1) - p(r0, c1) - p(r1, c0) + p(r0, c0);
}

/// Overlap-weighted correlation of a(r-sy, c-sx) against b(r, c): ZNCC over
/// jointly valid cells, scaled by the Dice overlap of the two validity masks
/// within the window. Raw ZNCC is nearly flat across shifts when the joint
/// support is thin, while the mask overlap spikes at the true alignment, so
/// the Dice factor is what makes the peak selective.
MaskedZncc shifted_zncc(const Eigen::ArrayXXd& ha,
                        const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& va,
                        const Eigen::ArrayXXd& hb,
                        const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& vb,
                        const Eigen::ArrayXXi& pa, const Eigen::ArrayXXi& pb,
                        int sx, int sy, int min_overlap) {
    const int n_rows = static_cast<int>(ha.rows());
    const int n_cols = static_cast<int>(ha.cols());
    const int r0 = std::max(0, sy), r1 = std::min(n_rows, n_rows + sy);
    const int c0 = std::max(0, sx), c1 = std::min(n_cols, n_cols + sx);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    std::size_t n = 0;
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
            if (!vb(r, c) || !va(r - sy, c - sx)) continue;
            const double x = ha(r - sy, c - sx);
            const double y = hb(r, c);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
            ++n;
        }
    }
    MaskedZncc out;
    out.overlap = n;
    if (n < static_cast<std::size_t>(min_overlap)) return out;
    const double nn = static_cast<double>(n);
    const double cov = sab - sa * sb / nn;
    const double vx = saa - sa * sa / nn;
    const double vy = sbb - sb * sb / nn;
    if (vx <= 1e-12 || vy <= 1e-12) return out;
    const int ca = window_count(pa, r0 - sy, r1 - sy, c0 - sx, c1 - sx);
    const int cb = window_count(pb, r0, r1, c0, c1);
    const double dice = 2.0 * nn / static_cast<double>(ca + cb);
    out.score = dice * cov / std::sqrt(vx * vy);
    return out;
}

/// Block-mean downsample with any-valid mask, for the coarse shift search.
void downsample(const Dem& dem, int factor, Eigen::ArrayXXd& h,
                Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& v) {
    const int n = dem.config.resolution / factor;
    h = Eigen::ArrayXXd::Zero(n, n);
    v = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (int br = 0; br < n; ++br)
        for (int bc = 0; bc < n; ++bc) {
            double sum = 0.0;
            int count = 0;
            for (int r = 0; r < factor; ++r)
                for (int c = 0; c < factor; ++c)
                    if (dem.valid(br * factor + r, bc * factor + c)) {
                        sum += dem.heights(br * factor + r, bc * factor + c);
                        ++count;
                    }
            if (count > 0) {
                h(br, bc) = sum / count;
                v(br, bc) = true;
            }
        }
}

/// Same score as shifted_zncc, but iterating a precomputed list of b's valid
/// cells instead of the whole window; the fine stage evaluates hundreds of
/// shifts on sparse full-resolution DEMs, where this is the dominant cost.
MaskedZncc shifted_zncc_sparse(const Eigen::ArrayXXd& ha,
                               const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& va,
                               const Eigen::ArrayXXd& hb,
                               const std::vector<std::pair<int, int>>& b_cells,
                               const Eigen::ArrayXXi& pa, const Eigen::ArrayXXi& pb,
                               int sx, int sy, int min_overlap) {
    const int n_rows = static_cast<int>(ha.rows());
    const int n_cols = static_cast<int>(ha.cols());
    const int r0 = std::max(0, sy), r1 = std::min(n_rows, n_rows + sy);
    const int c0 = std::max(0, sx), c1 = std::min(n_cols, n_cols + sx);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    std::size_t n = 0;
    for (const auto& [r, c] : b_cells) {
        if (r < r0 || r >= r1 || c < c0 || c >= c1) continue;
        if (!va(r - sy, c - sx)) continue;
        const double x = ha(r - sy, c - sx);
        const double y = hb(r, c);
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
        ++n;
    }
    MaskedZncc out;
    out.overlap = n;
    if (n < static_cast<std::size_t>(min_overlap)) return out;
    const double nn = static_cast<double>(n);
    const double cov = sab - sa * sb / nn;
    const double vx = saa - sa * sa / nn;
    const double vy = sbb - sb * sb / nn;
    if (vx <= 1e-12 || vy <= 1e-12) return out;
    const int ca = window_count(pa, r0 - sy, r1 - sy, c0 - sx, c1 - sx);
    const int cb = window_count(pb, r0, r1, c0, c1);
    const double dice = 2.0 * nn / static_cast<double>(ca + cb);
    out.score = dice * cov / std::sqrt(vx * vy);
    return out;
}

double parabolic_offset(double sm, double s0, double sp) {
    const double denom = sm - 2.0 * s0 + sp;
    if (std::abs(denom) < 1e-12) return 0.0;
    return std::clamp(0.5 * (sm - sp) / denom, -0.5, 0.5);
}

} // namespace

TranslationEstimate estimate_translation(const Dem& a, const Dem& b,
                                         const TranslationParams& params) {
    if (!(a.config == b.config)) throw Error("config mismatch");
    const double cell = a.config.cell_size();
    const int radius_cells = static_cast<int>(std::round(params.search_radius / cell));

    // coarse stage on a block-downsampled grid
    int factor = 1;
    for (int f : {10, 5, 4, 2})
        if (a.config.resolution % f == 0 && radius_cells / f >= 2) {
            factor = f;
            break;
        }
    int best_sx = 0, best_sy = 0;
    if (factor > 1) {
        Eigen::ArrayXXd ha, hb;
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> va, vb;
        downsample(a, factor, ha, va);
        downsample(b, factor, hb, vb);
        const Eigen::ArrayXXi pa = prefix_count(va), pb = prefix_count(vb);
        const int cr = radius_cells / factor;
        const int min_overlap = std::max(4, params.min_overlap_cells / (factor * factor));
        double best = -2.0;
        for (int sy = -cr; sy <= cr; ++sy)
            for (int sx = -cr; sx <= cr; ++sx) {
                const auto z = shifted_zncc(ha, va, hb, vb, pa, pb, sx, sy, min_overlap);
                if (z.score > best) {
                    best = z.score;
                    best_sx = sx * factor;
                    best_sy = sy * factor;
                }
            }
        if (best <= -2.0) throw Error("unreliable translation", "no coarse overlap");
    }

    // fine stage: full-resolution shifts around the coarse peak
    const int fine_r = factor > 1 ? factor + 2 : radius_cells;
    const int lo_x = std::max(-radius_cells, best_sx - fine_r);
    const int hi_x = std::min(radius_cells, best_sx + fine_r);
    const int lo_y = std::max(-radius_cells, best_sy - fine_r);
    const int hi_y = std::min(radius_cells, best_sy + fine_r);
    const int nx = hi_x - lo_x + 1, ny = hi_y - lo_y + 1;
    const Eigen::ArrayXXi pa = prefix_count(a.valid), pb = prefix_count(b.valid);
    std::vector<std::pair<int, int>> b_cells;
    for (int r = 0; r < a.config.resolution; ++r)
        for (int c = 0; c < a.config.resolution; ++c)
            if (b.valid(r, c)) b_cells.emplace_back(r, c);
    Eigen::ArrayXXd scores = Eigen::ArrayXXd::Constant(ny, nx, -2.0);
    std::vector<int> ys(static_cast<std::size_t>(ny));
    for (int i = 0; i < ny; ++i) ys[static_cast<std::size_t>(i)] = lo_y + i;
    parallel_for(ys.size(), [&](std::size_t yi) {
        const int sy = ys[yi];
        for (int sx = lo_x; sx <= hi_x; ++sx) {
            const auto z = shifted_zncc_sparse(a.heights, a.valid, b.heights, b_cells, pa, pb,
                                               sx, sy, params.min_overlap_cells);
            scores(static_cast<int>(yi), sx - lo_x) = z.score;
        }
    });

    int pr = 0, pc = 0;
    double peak = -2.0;
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c)
            if (scores(r, c) > peak) {
                peak = scores(r, c);
                pr = r;
                pc = c;
            }
    if (peak < params.min_peak) throw Error("unreliable translation");

    double fx = 0.0, fy = 0.0;
    if (pc > 0 && pc + 1 < nx && scores(pr, pc - 1) > -2.0 && scores(pr, pc + 1) > -2.0)
        fx = parabolic_offset(scores(pr, pc - 1), scores(pr, pc), scores(pr, pc + 1));
    if (pr > 0 && pr + 1 < ny && scores(pr - 1, pc) > -2.0 && scores(pr + 1, pc) > -2.0)
        fy = parabolic_offset(scores(pr - 1, pc), scores(pr, pc), scores(pr + 1, pc));

    TranslationEstimate est;
    est.tx = (lo_x + pc + fx) * cell;
    est.ty = (lo_y + pr + fy) * cell;
    est.peak = peak;
    return est;
}

AlignmentEstimate refine_alignment(const Dem& a, const Dem& b, double theta0,
                                   const AlignmentParams& params) {
    const auto eval = [&](double theta) -> TranslationEstimate {
        try {
            return estimate_translation(rotate_dem(a, theta), b, params.translation);
        } catch (const Error&) {
            TranslationEstimate bad;
            bad.peak = -2.0;
            return bad;
        }
    };

    double best_theta = theta0;
    TranslationEstimate best = eval(theta0);
    for (double off = params.yaw_step; off <= params.yaw_span + 1e-12;
         off += params.yaw_step)
        for (const double s : {-off, off}) {
            const TranslationEstimate t = eval(theta0 + s);
            if (t.peak > best.peak) {
                best = t;
                best_theta = theta0 + s;
            }
        }

    // pattern descent: halve the step whenever neither neighbor improves
    double step = params.yaw_step / 2.0;
    while (step >= params.min_step) {
        bool improved = false;
        for (const double s : {-step, step}) {
            const TranslationEstimate t = eval(best_theta + s);
            if (t.peak > best.peak) {
                best = t;
                best_theta += s;
                improved = true;
                break;
            }
        }
        if (!improved) step /= 2.0;
    }
    if (best.peak < params.translation.min_peak) throw Error("unreliable translation");
    return {wrap_angle(best_theta), best};
}

RigidTransform compose_relative_pose(const PacketMeta& query_meta,
                                     const PacketMeta& cand_meta, double theta,
                                     double tx, double ty) {
    const RotationMatrix r1 = rpy_compose(query_meta.r_rp);
    const RotationMatrix r2 = rpy_compose(cand_meta.r_rp);
    const RotationMatrix rz = yaw_rotation(theta);
    const double dz = query_meta.z_offset - cand_meta.z_offset;
    RigidTransform pose;
    pose.rotation = r2.transpose() * rz * r1;
    pose.translation = r2.transpose() * Vec3(tx, ty, dz);
    return pose;
}

// ---------------------------------------------------------------------------
// Point-to-plane ICP with a uniform voxel hash for neighbor queries.

namespace {

struct VoxelHash {
    double inv_cell;
    std::unordered_map<std::uint64_t, std::vector<int>> cells;
    const std::vector<Vec3>* points;

    static std::uint64_t key(int x, int y, int z) {
        const auto ux = static_cast<std::uint64_t>(static_cast<std::uint32_t>(x + (1 << 20)));
        const auto uy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(y + (1 << 20)));
        const auto uz = static_cast<std::uint64_t>(static_cast<std::uint32_t>(z + (1 << 20)));
        return (ux << 42) ^ (uy << 21) ^ uz;
    }

    VoxelHash(const std::vector<Vec3>& pts, double cell) : inv_cell(1.0 / cell), points(&pts) {
        for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
            const Vec3& p = pts[static_cast<std::size_t>(i)];
            cells[key(static_cast<int>(std::floor(p.x() * inv_cell)),
                      static_cast<int>(std::floor(p.y() * inv_cell)),
                      static_cast<int>(std::floor(p.z() * inv_cell)))]
                .push_back(i);
        }
    }

    int nearest(const Vec3& q, double max_dist) const {
        const int cx = static_cast<int>(std::floor(q.x() * inv_cell));
        const int cy = static_cast<int>(std::floor(q.y() * inv_cell));
        const int cz = static_cast<int>(std::floor(q.z() * inv_cell));
        int best = -1;
        double best_sq = max_dist * max_dist;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const auto it = cells.find(key(cx + dx, cy + dy, cz + dz));
                    if (it == cells.end()) continue;
                    for (int i : it->second) {
                        const double d = ((*points)[static_cast<std::size_t>(i)] - q).squaredNorm();
                        if (d < best_sq) {
                            best_sq = d;
                            best = i;
                        }
                    }
                }
        return best;
    }

    void knn(const Vec3& q, int k, std::vector<int>& out) const {
        const int cx = static_cast<int>(std::floor(q.x() * inv_cell));
        const int cy = static_cast<int>(std::floor(q.y() * inv_cell));
        const int cz = static_cast<int>(std::floor(q.z() * inv_cell));
        std::vector<std::pair<double, int>> found;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const auto it = cells.find(key(cx + dx, cy + dy, cz + dz));
                    if (it == cells.end()) continue;
                    for (int i : it->second)
                        found.emplace_back(((*points)[static_cast<std::size_t>(i)] - q).squaredNorm(), i);
                }
        const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), found.size());
        std::partial_sort(found.begin(), found.begin() + static_cast<long>(kk), found.end());
        out.clear();
        for (std::size_t i = 0; i < kk; ++i) out.push_back(found[i].second);
    }
};

struct Correspondences {
    double objective = 0.0; // mean squared point-to-plane residual
    std::size_t count = 0;
};

Correspondences eval_objective(const std::vector<Vec3>& query, const VoxelHash& hash,
                               const std::vector<Vec3>& normals, const RigidTransform& t,
                               double corr_dist) {
    Correspondences c;
    double sum = 0.0;
    for (const auto& p : query) {
        const Vec3 tp = t.apply(p);
        const int j = hash.nearest(tp, corr_dist);
        if (j < 0) continue;
        const double r = normals[static_cast<std::size_t>(j)].dot(
            tp - (*hash.points)[static_cast<std::size_t>(j)]);
        sum += r * r;
        ++c.count;
    }
    c.objective = c.count ? sum / static_cast<double>(c.count) : 0.0;
    return c;
}

} // namespace

IcpResult refine_icp(const PointCloud& query_cloud, const PointCloud& cand_cloud,
                     const RigidTransform& init, const IcpParams& params) {
    if (query_cloud.empty() || cand_cloud.empty())
        throw Error("insufficient overlap", "empty cloud");
    const VoxelHash hash(cand_cloud.points, params.corr_dist);

    // candidate normals from k-NN PCA
    std::vector<Vec3> normals(cand_cloud.size(), Vec3::UnitZ());
    parallel_for(cand_cloud.size(), [&](std::size_t i) {
        std::vector<int> nbrs;
        hash.knn(cand_cloud.points[i], params.normal_k, nbrs);
        if (nbrs.size() < 3) return;
        Vec3 mean = Vec3::Zero();
        for (int j : nbrs) mean += cand_cloud.points[static_cast<std::size_t>(j)];
        mean /= static_cast<double>(nbrs.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (int j : nbrs) {
            const Vec3 q = cand_cloud.points[static_cast<std::size_t>(j)] - mean;
            cov += q * q.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        Vec3 n = eig.eigenvectors().col(0);
        if (n.z() < 0.0) n = -n;
        normals[i] = n.normalized();
    });

    const Correspondences at_init =
        eval_objective(query_cloud.points, hash, normals, init, params.corr_dist);
    if (at_init.count < params.min_correspondences) throw Error("insufficient overlap");

    IcpResult result;
    result.pose = init;
    result.objective_trace.push_back(at_init.objective);
    RigidTransform current = init;
    double current_obj = at_init.objective;

    for (int iter = 0; iter < params.max_iters; ++iter) {
        Eigen::Matrix<double, 6, 6> a = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
        std::size_t count = 0;
        for (const auto& p : query_cloud.points) {
            const Vec3 tp = current.apply(p);
            const int j = hash.nearest(tp, params.corr_dist);
            if (j < 0) continue;
            const Vec3& n = normals[static_cast<std::size_t>(j)];
            const double r = n.dot(tp - cand_cloud.points[static_cast<std::size_t>(j)]);
            Eigen::Matrix<double, 6, 1> jac;
            jac.head<3>() = tp.cross(n);
            jac.tail<3>() = n;
            a += jac * jac.transpose();
            rhs -= jac * r;
            ++count;
        }
        if (count < params.min_correspondences) break;
        const Eigen::Matrix<double, 6, 1> delta = a.ldlt().solve(rhs);
        if (!delta.allFinite()) break;

        // step-halving keeps the recorded objective non-increasing
        bool accepted = false;
        double scale = 1.0;
        for (int h = 0; h < 8; ++h) {
            const Vec3 omega = delta.head<3>() * scale;
            RigidTransform step;
            const double ang = omega.norm();
            step.rotation = ang < 1e-15
                                ? RotationMatrix::Identity()
                                : Eigen::AngleAxisd(ang, omega / ang).toRotationMatrix();
            step.translation = delta.tail<3>() * scale;
            const RigidTransform trial = compose(step, current);
            const Correspondences c =
                eval_objective(query_cloud.points, hash, normals, trial, params.corr_dist);
            if (c.count >= params.min_correspondences && c.objective <= current_obj) {
                const double improvement = current_obj - c.objective;
                current = trial;
                current.rotation = orthonormalize(current.rotation);
                current_obj = c.objective;
                result.objective_trace.push_back(current_obj);
                accepted = true;
                if (improvement < 1e-6) iter = params.max_iters; // converged
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;
    }

    // guard: never return a pose whose overlap residual is >10% worse than init
    if (current_obj > at_init.objective * 1.10) {
        result.pose = init;
        result.guarded = true;
        result.objective_trace = {at_init.objective};
    } else {
        result.pose = current;
    }
    return result;
}

PoseError pose_errors(const RigidTransform& est, const RigidTransform& gt) {
    const RigidTransform rel = compose(invert(gt), est);
    PoseError err;
    err.te = rel.translation.norm();
    err.re = rad2deg(rotation_angle(rel.rotation));
    return err;
}

} // namespace demloop
