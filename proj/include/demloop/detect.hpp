#ifndef DEMLOOP_DETECT_HPP
#define DEMLOOP_DETECT_HPP

#include <map>

#include "demloop/dyt.hpp"

namespace demloop {

struct LoopCandidate {
    std::int64_t query_id = 0;
    std::int64_t db_id = 0;
    double distance = 0.0; // 1 - best alignment score, in [0, 2]
    double theta = 0.0;    // estimated relative yaw, radians
};

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points; // ordered by loosening threshold
    double ap = 0.0;
};

struct DistanceResult {
    double distance = 0.0;
    double theta = 0.0;
    double score = 0.0;
};

/// Yaw-invariant descriptor distance: 1 - estimate_yaw(a, b).score.
DistanceResult descriptor_distance(const LatentGrid& a, const LatentGrid& b,
                                   const YawOptions& opts = {});

/// max(0, d(a,p) - d(a,n) + margin) with d = descriptor_distance.
double triplet_loss(const LatentGrid& anchor, const LatentGrid& positive,
                    const LatentGrid& negative, double margin = 0.75,
                    const YawOptions& opts = {});

struct IndexEntry {
    std::int64_t id = 0;
    LatentGrid latent;
};

/// Immutable exhaustive-scan index over latent descriptors.
class LoopIndex {
public:
    explicit LoopIndex(std::vector<IndexEntry> entries);
    std::size_t size() const { return entries_.size(); }
    const std::vector<IndexEntry>& entries() const { return entries_; }

    /// Distance to every entry whose id differs from query_id by at least
    /// exclusion_window (0 disables exclusion), ranked ascending distance
    /// with ties broken by lower id. Deterministic.
    std::vector<LoopCandidate> query(std::int64_t query_id, const LatentGrid& latent,
                                     std::int64_t exclusion_window,
                                     const YawOptions& opts = {}) const;

private:
    std::vector<IndexEntry> entries_;
};

/// Protocol-2 PR sweep: per query, the top candidate is accepted when its
/// distance is under the threshold; accepted candidates are true positives
/// when the ground-truth poses are within tp_radius. Queries with an actual
/// loop that produce no accepted true positive count against recall.
PrCurve evaluate_pr(const std::vector<std::vector<LoopCandidate>>& candidates_per_query,
                    const std::map<std::int64_t, RigidTransform>& gt_poses,
                    double tp_radius = 4.0);

} // namespace demloop

#endif
