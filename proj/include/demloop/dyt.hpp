#ifndef DEMLOOP_DYT_HPP
#define DEMLOOP_DYT_HPP

#include "demloop/codec.hpp"

namespace demloop {

struct YawEstimate {
    double theta = 0.0;     // radians in [-pi, pi)
    double score = 0.0;     // alignment score at theta, in [-1, 1]
    bool converged = false; // |gradient| < grad_tol reached
    int iterations = 0;     // refinement iterations used
};

struct YawOptions {
    int coarse_steps = 360;
    int refine_iters = 25;
    double grad_tol = 1e-4;
};

/// Rotate latent content by +theta about the grid center. Smooth (C1) cubic
/// resampling; exact index permutation at multiples of 90 degrees; samples
/// from outside the inscribed disk are zeroed (valid fraction 0).
LatentGrid rotate_resample(const LatentGrid& latent, double theta);

/// Masked zero-mean normalized cross-correlation averaged over the content
/// channels, on cells where both valid fractions exceed the threshold.
/// Throws "no jointly valid cells".
double alignment_score(const LatentGrid& a, const LatentGrid& b);

/// d/dtheta of alignment_score(rotate_resample(a, theta), b), analytic.
/// Throws "nondifferentiable point" within 1e-6 of a multiple of 90 degrees.
double score_gradient(const LatentGrid& a, const LatentGrid& b, double theta);

/// Score and gradient in one evaluation (same value as the two ops above).
void score_and_gradient(const LatentGrid& a, const LatentGrid& b, double theta,
                        double& score, double& gradient);

/// Precomputed coarse-sweep rotations of one query latent, shareable across
/// database comparisons.
class YawSweepCache {
public:
    YawSweepCache(const LatentGrid& query, int coarse_steps);
    int steps() const { return static_cast<int>(rotated_.size()); }
    double angle(int k) const;
    const LatentGrid& rotated(int k) const { return rotated_[k]; }
    const LatentGrid& query() const { return query_; }

private:
    LatentGrid query_;
    std::vector<LatentGrid> rotated_;
};

/// Coarse sweep over uniform angles followed by gradient ascent with
/// backtracking line search. Deterministic.
YawEstimate estimate_yaw(const LatentGrid& query, const LatentGrid& target,
                         const YawOptions& opts = {});

YawEstimate estimate_yaw(const YawSweepCache& cache, const LatentGrid& target,
                         const YawOptions& opts = {});

} // namespace demloop

#endif
