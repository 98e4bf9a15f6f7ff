#ifndef DEMLOOP_DEM_HPP
#define DEMLOOP_DEM_HPP

#include <Eigen/Dense>
#include <string>

#include "demloop/canonicalize.hpp"

namespace demloop {

struct DemConfig {
    double extent = 50.0;  // m, square side
    int resolution = 500;  // cells per side
    double h_max = 25.0;   // m, height clamp

    double cell_size() const { return extent / resolution; }
    bool operator==(const DemConfig& o) const {
        return extent == o.extent && resolution == o.resolution && h_max == o.h_max;
    }
};

/// Digital Elevation Map: per-cell maximum height above the canonical ground,
/// linearly scaled to [0,1] by h_max. Grid center is the sensor (x,y).
/// heights(row, col) with row = y index, col = x index.
struct Dem {
    Eigen::ArrayXXd heights;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> valid;
    DemConfig config;
};

/// Bin canonical points to cells keeping the per-cell max height.
/// Throws "empty DEM" when no point falls inside the window.
Dem rasterize(const CanonicalScan& scan, const DemConfig& cfg);

/// Rotate scene content by +theta about the grid center (bilinear resampling;
/// exact index permutation at multiples of 90 degrees).
Dem rotate_dem(const Dem& dem, double theta);

/// Shift scene content by integer cells (dx cols, dy rows); cells shifted in
/// from outside become invalid.
Dem shift_dem(const Dem& dem, int dx, int dy);

struct DemResidual {
    double rms = 0.0;
    double overlap_fraction = 0.0;
};

/// RMS over jointly valid cells. Throws "disjoint DEMs" when none exist.
DemResidual dem_residual(const Dem& a, const Dem& b);

/// Debug dump: 16-bit PGM of heights plus an 8-bit mask PGM.
void write_dem_pgm(const Dem& dem, const std::string& height_path,
                   const std::string& mask_path);

} // namespace demloop

#endif
