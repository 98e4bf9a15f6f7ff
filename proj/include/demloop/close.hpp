#ifndef DEMLOOP_CLOSE_HPP
#define DEMLOOP_CLOSE_HPP

#include "demloop/codec.hpp"

namespace demloop {

struct ClosureResult {
    RigidTransform pose;   // query sensor frame -> candidate sensor frame
    double theta = 0.0;    // yaw used, radians
    double tx = 0.0;       // planar offset in the canonical frame, m
    double ty = 0.0;
    double corr_peak = 0.0;
    bool refined = false;
};

struct TranslationEstimate {
    double tx = 0.0; // m
    double ty = 0.0;
    double peak = 0.0;
};

struct TranslationParams {
    double search_radius = 10.0; // m
    double min_peak = 0.05;
    int min_overlap_cells = 200;
};

/// Planar offset between yaw-aligned DEMs by overlap-weighted normalized
/// correlation over integer shifts (coarse block stage then a local fine
/// stage), with sub-cell quadratic peak refinement. The score is ZNCC scaled
/// by the Dice overlap of the validity masks, so the peak stays selective on
/// sparse DEMs where raw ZNCC is nearly flat across shifts. Finds (tx, ty)
/// such that content of `a` shifted by (tx, ty) overlays `b`.
/// Throws "unreliable translation" when the peak is below min_peak.
TranslationEstimate estimate_translation(const Dem& a, const Dem& b,
                                         const TranslationParams& params = {});

struct AlignmentParams {
    double yaw_span = 10.0 * M_PI / 180.0; // radians, searched either side of theta0
    double yaw_step = 2.0 * M_PI / 180.0;
    double min_step = 0.1 * M_PI / 180.0;
    TranslationParams translation;
};

struct AlignmentEstimate {
    double theta = 0.0; // radians
    TranslationEstimate translation;
};

/// Joint refinement of the canonical alignment p_b = Rz(theta) p_a + t. The
/// latent-level yaw estimate absorbs part of the planar offset into rotation,
/// so this searches yaw locally around theta0 and scores each candidate by
/// its translation correlation peak, which is far more selective in yaw.
/// Throws "unreliable translation" when no candidate clears min_peak.
AlignmentEstimate refine_alignment(const Dem& a, const Dem& b, double theta0,
                                   const AlignmentParams& params = {});

/// Assemble the 6-DOF pose from canonicalization metadata plus the yaw and
/// planar offset of the canonical alignment p_cand = Rz(theta) p_query + t.
RigidTransform compose_relative_pose(const PacketMeta& query_meta,
                                     const PacketMeta& cand_meta, double theta,
                                     double tx, double ty);

struct IcpParams {
    int max_iters = 30;
    double corr_dist = 1.0; // m
    int normal_k = 10;
    std::size_t min_correspondences = 100;
};

struct IcpResult {
    RigidTransform pose;
    std::vector<double> objective_trace; // mean squared point-to-plane residual
    bool guarded = false;                // refinement rejected, init returned
};

/// Point-to-plane ICP from `init` (query -> candidate frame). Guarded: if the
/// refined pose raises the overlap residual by more than 10%, init wins.
/// Throws "insufficient overlap" when too few correspondences exist at init.
IcpResult refine_icp(const PointCloud& query_cloud, const PointCloud& cand_cloud,
                     const RigidTransform& init, const IcpParams& params = {});

struct PoseError {
    double te = 0.0; // m
    double re = 0.0; // degrees, geodesic
};

PoseError pose_errors(const RigidTransform& est, const RigidTransform& gt);

} // namespace demloop

#endif
