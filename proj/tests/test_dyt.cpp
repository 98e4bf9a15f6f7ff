#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "demloop/dyt.hpp"
#include "demloop/geometry.hpp"
#include "demloop/util.hpp"

using namespace demloop;

namespace {

/// Structured random DEM: wavy ground plus random boxes, fully valid.
/// Gives latents with strong, asymmetric yaw signal like urban scans.
Dem boxes_dem(std::uint64_t seed) {
    DemConfig cfg;
    Dem dem;
    dem.config = cfg;
    const int n = cfg.resolution;
    std::mt19937_64 rng(mix_seed(seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double px = u(rng) * 2 * M_PI, py = u(rng) * 2 * M_PI;
    dem.heights.resize(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            dem.heights(r, c) =
                0.15 + 0.05 * std::sin(0.05 * c + px) * std::cos(0.04 * r + py);
    dem.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, true);
    std::uniform_int_distribution<int> pos(30, n - 90);
    std::uniform_int_distribution<int> side(20, 60);
    for (int b = 0; b < 12; ++b) {
        const int r0 = pos(rng), c0 = pos(rng), h = side(rng), w = side(rng);
        const double z = 0.3 + 0.6 * u(rng);
        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c) dem.heights(r, c) = z;
    }
    return dem;
}

LatentGrid make_latent(std::uint64_t seed) {
    return encode(boxes_dem(seed), CodecConfig{});
}

LatentGrid constant_latent(double value = 0.5) {
    LatentGrid latent;
    latent.channels = 7;
    latent.width = 50;
    latent.height = 50;
    latent.quant_step = 1.0 / 255.0;
    latent.values.assign(7, Eigen::ArrayXXd::Constant(50, 50, value));
    latent.values[LatentGrid::kMaskChannel].setConstant(1.0);
    return latent;
}

bool latent_equal(const LatentGrid& a, const LatentGrid& b) {
    for (int ch = 0; ch < a.channels; ++ch)
        if (!(a.values[ch] == b.values[ch]).all()) return false;
    return true;
}

/// Brute-force yaw oracle: full 0.5-degree sweep, then a 0.05-degree local
/// grid around the best coarse angle (score basins are several degrees wide).
double brute_yaw(const LatentGrid& q, const LatentGrid& t) {
    double best_s = -2.0, best_th = 0.0;
    auto eval = [&](double th) {
        const double s = alignment_score(rotate_resample(q, th), t);
        if (s > best_s) {
            best_s = s;
            best_th = th;
        }
    };
    for (int k = 0; k < 720; ++k) eval(-M_PI + 2.0 * M_PI * k / 720.0);
    const double center = best_th;
    for (int k = -12; k <= 12; ++k) eval(center + deg2rad(0.05) * k);
    return wrap_angle(best_th);
}

double yaw_diff(double a, double b) { return std::abs(wrap_angle(a - b)); }

} // namespace

TEST_CASE("rotate_resample by zero is bit-identical") {
    const LatentGrid latent = make_latent(1);
    CHECK(latent_equal(rotate_resample(latent, 0.0), latent));
}

TEST_CASE("rotate_resample rejects non-square latents") {
    LatentGrid latent = constant_latent();
    latent.height = 25;
    for (auto& v : latent.values) v.conservativeResize(25, 50);
    CHECK_THROWS_WITH_AS(rotate_resample(latent, 0.3), "non-square latent", Error);
}

TEST_CASE("quarter turns permute latent indices exactly") {
    const LatentGrid latent = make_latent(2);
    const int n = latent.width;
    const LatentGrid q1 = rotate_resample(latent, M_PI / 2.0);
    for (int ch = 0; ch < latent.channels; ++ch)
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                CHECK(q1.values[ch](r, c) == latent.values[ch](n - 1 - c, r));
    // four quarter turns compose to the identity, bit-exact
    LatentGrid cur = latent;
    for (int k = 0; k < 4; ++k) cur = rotate_resample(cur, M_PI / 2.0);
    CHECK(latent_equal(cur, latent));
}

TEST_CASE("rotate there-and-back stays close on the inscribed disk") {
    for (std::uint64_t seed : {3u, 4u, 5u}) {
        const LatentGrid latent = make_latent(seed);
        const double theta = deg2rad(23.0 + 7.0 * static_cast<double>(seed));
        const LatentGrid back = rotate_resample(rotate_resample(latent, theta), -theta);
        const int n = latent.width;
        const double ctr = (n - 1) / 2.0;
        double sum = 0.0;
        int count = 0;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                // shrink by 2 cells: back-rotation pulls in boundary zeros
                if ((r - ctr) * (r - ctr) + (c - ctr) * (c - ctr) > (ctr - 2) * (ctr - 2))
                    continue;
                for (int ch = 0; ch < latent.channels; ++ch) {
                    sum += std::abs(back.values[ch](r, c) - latent.values[ch](r, c));
                    ++count;
                }
            }
        CHECK(sum / count < 0.02);
    }
}

TEST_CASE("alignment_score of a latent with itself is 1") {
    const LatentGrid latent = make_latent(6);
    CHECK(alignment_score(latent, latent) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("alignment_score of an affinely flipped latent is -1") {
    const LatentGrid a = make_latent(7);
    LatentGrid b = a;
    for (int ch = 0; ch < a.channels; ++ch) {
        if (ch == LatentGrid::kMaskChannel) continue;
        b.values[ch] = 1.0 - a.values[ch];
    }
    CHECK(alignment_score(a, b) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("alignment_score requires overlap") {
    LatentGrid a = constant_latent();
    LatentGrid b = constant_latent();
    a.values[LatentGrid::kMaskChannel].rightCols(25).setConstant(0.0);
    b.values[LatentGrid::kMaskChannel].leftCols(25).setConstant(0.0);
    CHECK_THROWS_WITH_AS(alignment_score(a, b), "no jointly valid cells", Error);
}

TEST_CASE("unrelated latents score near zero") {
    int small = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        const double s = alignment_score(make_latent(100 + 2 * i), make_latent(101 + 2 * i));
        if (std::abs(s) < 0.2) ++small;
    }
    CHECK(small >= (trials * 95) / 100);
}

TEST_CASE("constant latents have exactly zero gradient") {
    const LatentGrid a = constant_latent();
    const LatentGrid b = constant_latent(0.7);
    double s, g;
    score_and_gradient(a, b, 0.3, s, g);
    CHECK(g == 0.0);
    CHECK(s == 0.0);
}

TEST_CASE("gradient throws only near lattice kinks") {
    const LatentGrid a = make_latent(8);
    const LatentGrid b = make_latent(9);
    CHECK_THROWS_WITH_AS(score_gradient(a, b, M_PI / 2.0), "nondifferentiable point", Error);
    CHECK_THROWS_AS(score_gradient(a, b, M_PI / 2.0 + 5e-7), Error);
    CHECK_THROWS_AS(score_gradient(a, b, -M_PI), Error);
    CHECK_NOTHROW(score_gradient(a, b, M_PI / 2.0 + 1e-4));
}

TEST_CASE("analytic gradient matches central finite differences") {
    const double h = 1e-5;
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> uth(-M_PI + 0.1, M_PI - 0.1);
    int checked = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const LatentGrid a = make_latent(5000 + trial);
        const LatentGrid b = (trial % 2) ? make_latent(6000 + trial)
                                         : rotate_resample(a, uth(rng));
        double theta = uth(rng);
        int k;
        const double quarter = M_PI / 2.0;
        if (std::abs(theta / quarter - std::round(theta / quarter)) * quarter < 1e-3)
            theta += 0.01;
        (void)k;

        double s, g;
        score_and_gradient(a, b, theta, s, g);
        const double sp = alignment_score(rotate_resample(a, theta + h), b);
        const double sm = alignment_score(rotate_resample(a, theta - h), b);
        const double fd = (sp - sm) / (2.0 * h);
        if (std::abs(fd) < 1e-3) continue; // near-stationary, relative error ill-posed
        ++checked;
        CHECK(std::abs(g - fd) / std::abs(fd) < 1e-4);
        // the fused evaluation agrees with the split ops
        CHECK(g == score_gradient(a, b, theta));
        CHECK(s == doctest::Approx(alignment_score(rotate_resample(a, theta), b))
                       .epsilon(1e-12));
    }
    CHECK(checked >= 70);
}

TEST_CASE("gradient is stationary at the estimated optimum") {
    const LatentGrid b = make_latent(11);
    const LatentGrid a = rotate_resample(b, deg2rad(41.0));
    const YawEstimate est = estimate_yaw(a, b);
    CHECK(std::abs(score_gradient(a, b, est.theta)) < 1e-3);
    if (est.converged) CHECK(std::abs(score_gradient(a, b, est.theta)) < 1e-4);
}

TEST_CASE("estimate_yaw recovers a constructed rotation") {
    const LatentGrid query = make_latent(12);
    const double theta0 = deg2rad(37.3);
    const LatentGrid target = rotate_resample(query, theta0);
    const YawEstimate est = estimate_yaw(query, target);
    CHECK(yaw_diff(est.theta, theta0) < deg2rad(0.25));
    CHECK(est.score > 0.95);
}

TEST_CASE("estimate_yaw of identical latents is zero") {
    const LatentGrid latent = make_latent(13);
    const YawEstimate est = estimate_yaw(latent, latent);
    CHECK(yaw_diff(est.theta, 0.0) < deg2rad(0.25));
    CHECK(est.score > 0.99);
    CHECK(est.theta >= -M_PI);
    CHECK(est.theta < M_PI);
}

TEST_CASE("estimate_yaw matches the exhaustive grid oracle") {
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> uth(-M_PI, M_PI);
    for (std::uint64_t pair = 0; pair < 50; ++pair) {
        const LatentGrid query = make_latent(7000 + pair);
        const LatentGrid target = rotate_resample(query, uth(rng));
        const double oracle = brute_yaw(query, target);
        const YawEstimate est = estimate_yaw(query, target);
        CHECK(yaw_diff(est.theta, oracle) <= deg2rad(0.1));
    }
}

TEST_CASE("yaw estimation is equivariant and antisymmetric") {
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> uth(-2.0, 2.0);
    for (std::uint64_t i = 0; i < 5; ++i) {
        const LatentGrid q = make_latent(8000 + i);
        const LatentGrid t = rotate_resample(q, uth(rng));
        const double alpha = uth(rng);
        const double base = estimate_yaw(q, t).theta;
        const double shifted = estimate_yaw(rotate_resample(q, alpha), t).theta;
        CHECK(yaw_diff(shifted, base - alpha) < deg2rad(0.5));
        const double reverse = estimate_yaw(t, q).theta;
        CHECK(yaw_diff(reverse, -base) < deg2rad(0.5));
    }
}

TEST_CASE("sweep cache reproduces the direct estimate") {
    const LatentGrid q = make_latent(14);
    const LatentGrid t = rotate_resample(q, deg2rad(-71.0));
    const YawOptions opts;
    const YawSweepCache cache(q, opts.coarse_steps);
    CHECK(cache.steps() == opts.coarse_steps);
    CHECK(cache.angle(0) == doctest::Approx(-M_PI).epsilon(1e-12));
    const YawEstimate direct = estimate_yaw(q, t, opts);
    const YawEstimate cached = estimate_yaw(cache, t, opts);
    CHECK(direct.theta == cached.theta);
    CHECK(direct.score == cached.score);
    CHECK(direct.iterations == cached.iterations);
}
