#include "demloop/dyt.hpp"

#include <cmath>

#include "demloop/geometry.hpp"
#include "demloop/util.hpp"

namespace demloop {

namespace {

// Catmull-Rom (Keys a=-0.5) kernel: C1, interpolating, support (-2, 2).
inline double cubic_w(double s) {
    const double t = std::abs(s);
    if (t < 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
    if (t < 2.0) return (((-0.5 * t + 2.5) * t) - 4.0) * t + 2.0;
    return 0.0;
}

inline double cubic_dw(double s) {
    const double t = std::abs(s);
    double d;
    if (t < 1.0)
        d = (4.5 * t - 5.0) * t;
    else if (t < 2.0)
        d = (-1.5 * t + 5.0) * t - 4.0;
    else
        return 0.0;
    return s < 0.0 ? -d : d;
}

struct TapWeights {
    int idx[4];
    double w[4];
    double dw[4];
};

inline TapWeights taps_for(double u, int n) {
    TapWeights t;
    const int i0 = static_cast<int>(std::floor(u));
    const double f = u - i0;
    for (int k = 0; k < 4; ++k) {
        const int j = i0 - 1 + k;
        t.idx[k] = std::clamp(j, 0, n - 1);
        const double s = u - j;
        t.w[k] = cubic_w(s);
        t.dw[k] = cubic_dw(s);
    }
    return t;
}

bool is_quarter_turn(double theta, double tol, int& k_out) {
    const double k_real = theta / (M_PI / 2.0);
    const double k_round = std::round(k_real);
    if (std::abs(k_real - k_round) * (M_PI / 2.0) < tol) {
        int k = static_cast<int>(k_round) % 4;
        if (k < 0) k += 4;
        k_out = k;
        return true;
    }
    return false;
}

LatentGrid quarter_turn(const LatentGrid& latent, int k) {
    const int n = latent.width;
    LatentGrid out = latent;
    for (int ch = 0; ch < latent.channels; ++ch) {
        auto& dst = out.values[ch];
        const auto& src = latent.values[ch];
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                int sr = r, sc = c;
                switch (k) {
                    case 0: break;
                    case 1: sc = r; sr = n - 1 - c; break;
                    case 2: sc = n - 1 - c; sr = n - 1 - r; break;
                    case 3: sc = n - 1 - r; sr = c; break;
                }
                dst(r, c) = src(sr, sc);
            }
    }
    return out;
}

struct RotatedQuery {
    std::vector<Eigen::ArrayXXd> vals;  // all channels
    std::vector<Eigen::ArrayXXd> dvals; // content channels (empty array at mask idx)
};

/// Resample all channels at +theta; optionally with d/dtheta of each content
/// channel. Cells sourcing outside the inscribed disk are zeroed.
RotatedQuery rotate_eval(const LatentGrid& latent, double theta, bool want_deriv) {
    const int n = latent.width;
    const double ctr = (n - 1) / 2.0;
    const double disk_r2 = ctr * ctr;
    const double cth = std::cos(theta), sth = std::sin(theta);

    RotatedQuery out;
    out.vals.assign(latent.channels, Eigen::ArrayXXd::Zero(n, n));
    if (want_deriv)
        out.dvals.assign(latent.channels, Eigen::ArrayXXd::Zero(n, n));

    for (int r = 0; r < n; ++r) {
        const double dy = r - ctr;
        for (int c = 0; c < n; ++c) {
            const double dx = c - ctr;
            const double su = ctr + cth * dx + sth * dy; // R(-theta) applied
            const double sv = ctr - sth * dx + cth * dy;
            const double ru = su - ctr, rv = sv - ctr;
            if (ru * ru + rv * rv > disk_r2) continue;
            const TapWeights tu = taps_for(su, n);
            const TapWeights tv = taps_for(sv, n);
            const double du_dth = -sth * dx + cth * dy;
            const double dv_dth = -cth * dx - sth * dy;
            for (int ch = 0; ch < latent.channels; ++ch) {
                const auto& src = latent.values[ch];
                double val = 0.0, gu = 0.0, gv = 0.0;
                for (int a = 0; a < 4; ++a) {
                    const int row = tv.idx[a];
                    double acc = 0.0, dacc = 0.0;
                    for (int b = 0; b < 4; ++b) {
                        const double s = src(row, tu.idx[b]);
                        acc += tu.w[b] * s;
                        dacc += tu.dw[b] * s;
                    }
                    val += tv.w[a] * acc;
                    gu += tv.w[a] * dacc;
                    gv += tv.dw[a] * acc;
                }
                if (ch == LatentGrid::kMaskChannel) val = std::clamp(val, 0.0, 1.0);
                out.vals[ch](r, c) = val;
                if (want_deriv && ch != LatentGrid::kMaskChannel)
                    out.dvals[ch](r, c) = gu * du_dth + gv * dv_dth;
            }
        }
    }
    return out;
}

constexpr double kVarEps = 1e-12;

/// Masked ZNCC (and optionally its theta-derivative) between rotated query
/// channels and a target latent.
void masked_score(const std::vector<Eigen::ArrayXXd>& avals,
                  const std::vector<Eigen::ArrayXXd>* advals, const LatentGrid& b,
                  double& score_out, double* grad_out) {
    const int channels = static_cast<int>(avals.size());
    const Eigen::Index n_cells = avals[0].size();
    using ConstMap = Eigen::Map<const Eigen::ArrayXd>;
    const ConstMap ma(avals[LatentGrid::kMaskChannel].data(), n_cells);
    const ConstMap mb(b.mask().data(), n_cells);

    const Eigen::ArrayXd mask =
        (ma > LatentGrid::kValidThreshold && mb > LatentGrid::kValidThreshold)
            .cast<double>();
    const double n = mask.sum();
    if (n == 0.0) throw Error("no jointly valid cells");

    double score = 0.0, grad = 0.0;
    int counted = 0;
    Eigen::ArrayXd xm(n_cells), ym(n_cells);
    for (int ch = 0; ch < channels; ++ch) {
        if (ch == LatentGrid::kMaskChannel) continue;
        const ConstMap x(avals[ch].data(), n_cells);
        const ConstMap y(b.values[ch].data(), n_cells);
        xm = mask * x;
        ym = mask * y;
        const double sa = xm.sum();
        const double sb = ym.sum();
        const double saa = xm.matrix().dot(x.matrix());
        const double sbb = ym.matrix().dot(y.matrix());
        const double sab = xm.matrix().dot(y.matrix());
        const double mx = sa / n, my = sb / n;
        const double cov = sab - n * mx * my;
        const double vx = saa - n * mx * mx;
        const double vy = sbb - n * my * my;
        if (vx <= kVarEps || vy <= kVarEps) continue;
        const double denom = std::sqrt(vx * vy);
        score += cov / denom;
        ++counted;
        if (grad_out && advals) {
            const ConstMap dx((*advals)[ch].data(), n_cells);
            ym = mask * dx;
            const double sda = ym.sum();
            const double sdab = ym.matrix().dot(y.matrix());
            const double sdaa = ym.matrix().dot(x.matrix());
            const double dcov = sdab - my * sda;
            const double dvx = 2.0 * (sdaa - mx * sda);
            grad += dcov / denom - cov * dvx / (2.0 * vx * denom);
        }
    }
    score_out = counted ? score / counted : 0.0;
    if (grad_out) *grad_out = counted ? grad / counted : 0.0;
}

void check_same_dims(const LatentGrid& a, const LatentGrid& b) {
    if (a.channels != b.channels || a.width != b.width || a.height != b.height)
        throw Error("dim mismatch");
    if (a.channels <= LatentGrid::kMaskChannel)
        throw Error("bad latent", "missing mask channel");
}

} // namespace

LatentGrid rotate_resample(const LatentGrid& latent, double theta) {
    if (latent.width != latent.height) throw Error("non-square latent");
    int k;
    if (is_quarter_turn(theta, 1e-12, k))
        return k == 0 ? latent : quarter_turn(latent, k);
    RotatedQuery rq = rotate_eval(latent, theta, false);
    LatentGrid out = latent;
    out.values = std::move(rq.vals);
    return out;
}

double alignment_score(const LatentGrid& a, const LatentGrid& b) {
    check_same_dims(a, b);
    double score;
    masked_score(a.values, nullptr, b, score, nullptr);
    return score;
}

double score_gradient(const LatentGrid& a, const LatentGrid& b, double theta) {
    double score, grad;
    score_and_gradient(a, b, theta, score, grad);
    return grad;
}

void score_and_gradient(const LatentGrid& a, const LatentGrid& b, double theta,
                        double& score, double& gradient) {
    check_same_dims(a, b);
    if (a.width != a.height) throw Error("non-square latent");
    int k;
    if (is_quarter_turn(theta, 1e-6, k)) throw Error("nondifferentiable point");
    RotatedQuery rq = rotate_eval(a, theta, true);
    masked_score(rq.vals, &rq.dvals, b, score, &gradient);
}

YawSweepCache::YawSweepCache(const LatentGrid& query, int coarse_steps)
    : query_(query) {
    if (coarse_steps <= 0) throw Error("bad config", "coarse_steps must be positive");
    rotated_.resize(static_cast<std::size_t>(coarse_steps));
    parallel_for(rotated_.size(), [&](std::size_t k) {
        const double th = wrap_angle(-M_PI + 2.0 * M_PI * static_cast<double>(k) / coarse_steps);
        rotated_[k] = rotate_resample(query_, th);
    });
}

double YawSweepCache::angle(int k) const {
    const int n = static_cast<int>(rotated_.size());
    return wrap_angle(-M_PI + 2.0 * M_PI * k / n);
}

YawEstimate estimate_yaw(const LatentGrid& query, const LatentGrid& target,
                         const YawOptions& opts) {
    YawSweepCache cache(query, opts.coarse_steps);
    return estimate_yaw(cache, target, opts);
}

YawEstimate estimate_yaw(const YawSweepCache& cache, const LatentGrid& target,
                         const YawOptions& opts) {
    const LatentGrid& query = cache.query();
    check_same_dims(query, target);
    const int steps = cache.steps();

    double best_score = -std::numeric_limits<double>::infinity();
    double best_theta = 0.0;
    bool any = false;
    for (int k = 0; k < steps; ++k) {
        double s;
        try {
            s = alignment_score(cache.rotated(k), target);
        } catch (const Error&) {
            continue; // no jointly valid cells at this angle
        }
        if (s > best_score) {
            best_score = s;
            best_theta = cache.angle(k);
            any = true;
        }
    }
    if (!any) throw Error("no jointly valid cells", "coarse sweep found no overlap");

    YawEstimate est;
    est.theta = best_theta;
    est.score = best_score;

    const double coarse_step = 2.0 * M_PI / steps;
    const double max_step = std::min(deg2rad(0.5), coarse_step / 2.0);
    double step = max_step; // carried across iterations so the line search
                            // shrinks with the basin instead of restarting
    double theta = best_theta;
    double score = best_score;
    for (int it = 0; it < opts.refine_iters; ++it) {
        est.iterations = it + 1;
        double s, g;
        double theta_eval = theta;
        try {
            score_and_gradient(query, target, theta_eval, s, g);
        } catch (const Error& e) {
            if (std::string(e.code()) != "nondifferentiable point") throw;
            theta_eval = theta + 1e-5; // step off the lattice kink
            score_and_gradient(query, target, theta_eval, s, g);
        }
        theta = theta_eval;
        score = s;
        if (s > est.score) {
            est.score = s;
            est.theta = theta;
        }
        if (std::abs(g) < opts.grad_tol) {
            est.converged = true;
            break;
        }
        bool accepted = false;
        for (int bt = 0; bt < 20 && step >= 1e-6; ++bt) {
            const double cand = theta + step * (g > 0 ? 1.0 : -1.0);
            double cs;
            try {
                LatentGrid rot = rotate_resample(query, cand);
                cs = alignment_score(rot, target);
            } catch (const Error&) {
                step *= 0.5;
                continue;
            }
            if (cs > score) {
                theta = cand;
                score = cs;
                if (cs > est.score) {
                    est.score = cs;
                    est.theta = cand;
                }
                accepted = true;
                step = std::min(2.0 * step, max_step);
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // at a local maximum within line-search resolution
    }
    est.theta = wrap_angle(est.theta);
    return est;
}

} // namespace demloop
