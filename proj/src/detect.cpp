#include "demloop/detect.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "demloop/util.hpp"

namespace demloop {

DistanceResult descriptor_distance(const LatentGrid& a, const LatentGrid& b,
                                   const YawOptions& opts) {
    const YawEstimate est = estimate_yaw(a, b, opts);
    return {1.0 - est.score, est.theta, est.score};
}

double triplet_loss(const LatentGrid& anchor, const LatentGrid& positive,
                    const LatentGrid& negative, double margin, const YawOptions& opts) {
    const double dp = descriptor_distance(anchor, positive, opts).distance;
    const double dn = descriptor_distance(anchor, negative, opts).distance;
    return std::max(0.0, dp - dn + margin);
}

LoopIndex::LoopIndex(std::vector<IndexEntry> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw Error("empty index");
    std::set<std::int64_t> ids;
    for (const auto& e : entries_)
        if (!ids.insert(e.id).second)
            throw Error("duplicate id", std::to_string(e.id));
    std::sort(entries_.begin(), entries_.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.id < b.id; });
}

std::vector<LoopCandidate> LoopIndex::query(std::int64_t query_id, const LatentGrid& latent,
                                            std::int64_t exclusion_window,
                                            const YawOptions& opts) const {
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (std::llabs(entries_[i].id - query_id) >= exclusion_window)
            targets.push_back(i);
    if (targets.empty()) throw Error("no candidates", "exclusion window covers the index");

    const YawSweepCache cache(latent, opts.coarse_steps);
    std::vector<LoopCandidate> out(targets.size());
    parallel_for(targets.size(), [&](std::size_t t) {
        const IndexEntry& e = entries_[targets[t]];
        const YawEstimate est = estimate_yaw(cache, e.latent, opts);
        out[t] = {query_id, e.id, 1.0 - est.score, est.theta};
    });
    std::stable_sort(out.begin(), out.end(), [](const LoopCandidate& a, const LoopCandidate& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.db_id < b.db_id;
    });
    return out;
}

PrCurve evaluate_pr(const std::vector<std::vector<LoopCandidate>>& candidates_per_query,
                    const std::map<std::int64_t, RigidTransform>& gt_poses,
                    double tp_radius) {
    struct QueryTop {
        double distance;
        bool tp; // top candidate within tp_radius of the query
        bool has_actual_loop;
    };
    std::vector<QueryTop> tops;
    std::size_t positives = 0;
    for (const auto& cands : candidates_per_query) {
        if (cands.empty()) continue;
        const auto qit = gt_poses.find(cands.front().query_id);
        if (qit == gt_poses.end())
            throw Error("missing gt pose", std::to_string(cands.front().query_id));
        const Vec3 q = qit->second.translation;
        bool has_loop = false;
        for (const auto& c : cands) {
            const auto dit = gt_poses.find(c.db_id);
            if (dit == gt_poses.end())
                throw Error("missing gt pose", std::to_string(c.db_id));
            if ((dit->second.translation - q).norm() < tp_radius) {
                has_loop = true;
                break;
            }
        }
        const auto tit = gt_poses.find(cands.front().db_id);
        const bool tp = (tit->second.translation - q).norm() < tp_radius;
        tops.push_back({cands.front().distance, tp, has_loop});
        positives += has_loop;
    }
    if (positives == 0) throw Error("degenerate evaluation", "no actual loops in gt");

    std::vector<double> thresholds;
    thresholds.reserve(tops.size());
    for (const auto& t : tops) thresholds.push_back(t.distance);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    PrCurve curve;
    for (double tau : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (const auto& t : tops) {
            if (t.distance > tau) continue;
            if (t.tp)
                ++tp;
            else
                ++fp;
        }
        if (tp + fp == 0) continue;
        PrPoint pt;
        pt.threshold = tau;
        pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        pt.recall = static_cast<double>(tp) / static_cast<double>(positives);
        curve.points.push_back(pt);
    }
    if (curve.points.empty()) throw Error("degenerate evaluation", "no predictions");

    // trapezoidal area over the recall axis, anchored at recall 0 with the
    // strictest threshold's precision
    double ap = 0.0;
    double prev_r = 0.0, prev_p = curve.points.front().precision;
    for (const auto& pt : curve.points) {
        ap += (pt.recall - prev_r) * (pt.precision + prev_p) / 2.0;
        prev_r = pt.recall;
        prev_p = pt.precision;
    }
    curve.ap = ap;
    return curve;
}

} // namespace demloop
