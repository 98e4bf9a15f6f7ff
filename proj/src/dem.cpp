#include "demloop/dem.hpp"

#include <cmath>
#include <fstream>

#include "demloop/util.hpp"

namespace demloop {

Dem rasterize(const CanonicalScan& scan, const DemConfig& cfg) {
    if (cfg.extent <= 0.0 || cfg.resolution <= 0 || cfg.h_max <= 0.0)
        throw Error("bad config", "dem config fields must be positive");
    const int n = cfg.resolution;
    Dem dem;
    dem.config = cfg;
    dem.heights = Eigen::ArrayXXd::Zero(n, n);
    dem.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);

    const double half = cfg.extent / 2.0;
    const double inv_cell = n / cfg.extent;
    std::size_t hits = 0;
    for (const auto& p : scan.cloud.points) {
        if (std::abs(p.x()) > half || std::abs(p.y()) > half) continue;
        int col = static_cast<int>(std::floor((p.x() + half) * inv_cell));
        int row = static_cast<int>(std::floor((p.y() + half) * inv_cell));
        col = std::clamp(col, 0, n - 1); // points exactly on the +edge
        row = std::clamp(row, 0, n - 1);
        const double h = std::clamp(p.z(), 0.0, cfg.h_max) / cfg.h_max;
        if (!dem.valid(row, col)) {
            dem.valid(row, col) = true;
            dem.heights(row, col) = h;
            ++hits;
        } else if (h > dem.heights(row, col)) {
            dem.heights(row, col) = h;
        }
    }
    if (hits == 0) throw Error("empty DEM");
    return dem;
}

namespace {

/// Exact rotation by k*90 degrees as an index permutation.
Dem rotate_quarter(const Dem& dem, int k) {
    const int n = dem.config.resolution;
    Dem out;
    out.config = dem.config;
    out.heights.resize(n, n);
    out.valid.resize(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            int sr = r, sc = c;
            // inverse rotation of (c,r) about the center, k quarter turns
            switch (k & 3) {
                case 0: break;
                case 1: sc = r; sr = n - 1 - c; break;
                case 2: sc = n - 1 - c; sr = n - 1 - r; break;
                case 3: sc = n - 1 - r; sr = c; break;
            }
            out.heights(r, c) = dem.heights(sr, sc);
            out.valid(r, c) = dem.valid(sr, sc);
        }
    }
    return out;
}

} // namespace

Dem rotate_dem(const Dem& dem, double theta) {
    const double quarter = M_PI / 2.0;
    const double k_real = theta / quarter;
    const double k_round = std::round(k_real);
    if (std::abs(k_real - k_round) < 1e-12) {
        int k = static_cast<int>(k_round) % 4;
        if (k < 0) k += 4;
        return rotate_quarter(dem, k);
    }

    const int n = dem.config.resolution;
    const double ctr = (n - 1) / 2.0;
    const double disk_r = ctr;
    const double cs = std::cos(-theta), sn = std::sin(-theta);
    Dem out;
    out.config = dem.config;
    out.heights = Eigen::ArrayXXd::Zero(n, n);
    out.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double dx = c - ctr, dy = r - ctr;
            const double sx = ctr + cs * dx - sn * dy;
            const double sy = ctr + sn * dx + cs * dy;
            if (sx * sx + sy * sy - 2 * ctr * (sx + sy) + 2 * ctr * ctr > disk_r * disk_r)
                continue; // source outside the inscribed disk
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            if (x0 < 0 || y0 < 0 || x0 + 1 >= n || y0 + 1 >= n) continue;
            const double fx = sx - x0, fy = sy - y0;
            const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const int cols[4] = {x0, x0 + 1, x0, x0 + 1};
            const int rows[4] = {y0, y0, y0 + 1, y0 + 1};
            double wsum = 0.0, hsum = 0.0;
            for (int t = 0; t < 4; ++t) {
                if (!dem.valid(rows[t], cols[t])) continue;
                wsum += w[t];
                hsum += w[t] * dem.heights(rows[t], cols[t]);
            }
            if (wsum > 0.5) { // invalid-dominated neighborhoods stay invalid
                out.valid(r, c) = true;
                out.heights(r, c) = std::clamp(hsum / wsum, 0.0, 1.0);
            }
        }
    }
    return out;
}

Dem shift_dem(const Dem& dem, int dx, int dy) {
    const int n = dem.config.resolution;
    Dem out;
    out.config = dem.config;
    out.heights = Eigen::ArrayXXd::Zero(n, n);
    out.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (int r = 0; r < n; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= n) continue;
        for (int c = 0; c < n; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= n) continue;
            out.heights(r, c) = dem.heights(sr, sc);
            out.valid(r, c) = dem.valid(sr, sc);
        }
    }
    return out;
}

DemResidual dem_residual(const Dem& a, const Dem& b) {
    if (!(a.config == b.config)) throw Error("config mismatch");
    const auto joint = a.valid && b.valid;
    const auto uni = a.valid || b.valid;
    const Eigen::Index n_joint = joint.count();
    if (n_joint == 0) throw Error("disjoint DEMs");
    const Eigen::Index n_union = uni.count();
    const double sq =
        (joint.cast<double>() * (a.heights - b.heights).square()).sum();
    DemResidual res;
    res.rms = std::sqrt(sq / static_cast<double>(n_joint));
    res.overlap_fraction = static_cast<double>(n_joint) / static_cast<double>(n_union);
    return res;
}

void write_dem_pgm(const Dem& dem, const std::string& height_path,
                   const std::string& mask_path) {
    const int n = dem.config.resolution;
    {
        std::ofstream out(height_path, std::ios::binary);
        if (!out) throw Error("io", "cannot write " + height_path);
        out << "P5\n" << n << ' ' << n << "\n65535\n";
        for (int r = n - 1; r >= 0; --r) { // top row = +y
            for (int c = 0; c < n; ++c) {
                const auto v = static_cast<std::uint16_t>(
                    std::lround(std::clamp(dem.heights(r, c), 0.0, 1.0) * 65535.0));
                const unsigned char be[2] = {static_cast<unsigned char>(v >> 8),
                                             static_cast<unsigned char>(v & 0xFF)};
                out.write(reinterpret_cast<const char*>(be), 2);
            }
        }
    }
    {
        std::ofstream out(mask_path, std::ios::binary);
        if (!out) throw Error("io", "cannot write " + mask_path);
        out << "P5\n" << n << ' ' << n << "\n255\n";
        for (int r = n - 1; r >= 0; --r)
            for (int c = 0; c < n; ++c)
                out.put(dem.valid(r, c) ? char(255) : char(0));
    }
}

} // namespace demloop
