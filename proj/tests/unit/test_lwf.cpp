#include <doctest.h>

#include <cmath>
#include <random>

#include "dragkit/error.hpp"
#include "dragkit/lwf.hpp"
#include "../support/oracles.hpp"

using namespace dragkit;

namespace {

// Mask equal to 1 on the rectangle [x0, x1] x [y0, y1] and 0 elsewhere.
SoftMask rectangle_mask(std::size_t h, std::size_t w, int x0, int x1, int y0, int y1) {
    ScalarGrid2D g(h, w, 0.0);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) g.at(y, x) = 1.0;
    }
    return {g, 0.0};
}

LatentField random_latent(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
    return LatentField(c, h, w, 10, oracle::random_values(c * h * w, rng));
}

}  // namespace

TEST_SUITE("lwf") {

TEST_CASE("scale_drags") {
    CHECK(scale_drags({{{2, 3}, {10, 3}}}, 0.0)[0].x == 0.0);
    const auto one = scale_drags({{{2, 3}, {10, 3}}}, 1.0);
    CHECK(one[0].x == 8.0);
    CHECK(one[0].y == 0.0);
    const auto p = scale_drags({{{0, 0}, {20, 0}}}, 0.15);
    CHECK(p[0].x == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(p[0].y == 0.0);
}

TEST_CASE("inverse distance weights") {
    const std::vector<Point2> one{{3, 4}};
    CHECK(inverse_distance_weights({7, 1}, one, 1e-6)[0] == 1.0);
    const std::vector<Point2> two{{0, 0}, {4, 0}};
    const auto half = inverse_distance_weights({2, 5}, two, 1e-6);
    CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-15));
    const std::vector<Point2> lr{{0, 0}, {4, 0}};
    const auto w = inverse_distance_weights({1, 0}, lr, 1e-6);
    const double a = 1.0 / (1.0 + 1e-6), b = 1.0 / (3.0 + 1e-6);
    CHECK(w[0] == doctest::Approx(a / (a + b)).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(b / (a + b)).epsilon(1e-14));
    CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-6));
    // at a handle the epsilon guard keeps the weights finite
    const auto at = inverse_distance_weights({0, 0}, lr, 1e-6);
    CHECK(std::isfinite(at[0]));
    CHECK(at[0] > 0.999999);
}

TEST_CASE("weights sum to one") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<Point2> handles(1 + trial % 6);
        for (auto& h : handles) h = {u(rng), u(rng)};
        const auto w = inverse_distance_weights({u(rng), u(rng)}, handles, 1e-6);
        double total = 0.0;
        for (double v : w) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("stretch factor on a rectangle") {
    const SoftMask m = rectangle_mask(11, 31, 5, 25, 2, 8);
    const Point2 handle{15, 5}, drag{3, 0};
    CHECK(stretch_factor(handle, handle, drag, m, 0.5) == 1.0);
    CHECK(boundary_distance(handle, {-1, 0}, m, 0.5) == 10.0);
    CHECK(stretch_factor({10, 5}, handle, drag, m, 0.5) == 0.5);
    CHECK(stretch_factor({5, 5}, handle, drag, m, 0.5) == 0.0);
    CHECK(stretch_factor({20, 5}, handle, drag, m, 0.5) == 1.0);  // clamped
    CHECK(stretch_factor({10, 5}, handle, {0, 0}, m, 0.5) == 1.0);
}

TEST_CASE("stretch factor against the rectangle closed form") {
    // rectangle spans x in [x0, x1]; march toward -x gives b = x - x0
    const int x0 = 4, x1 = 40;
    const SoftMask m = rectangle_mask(9, 48, x0, x1, 1, 7);
    for (int hx = x0 + 1; hx <= x1; hx += 3) {
        for (int px = x0; px <= x1; ++px) {
            const double expect = std::clamp(double(px - x0) / double(hx - x0), 0.0, 1.0);
            CHECK(stretch_factor({double(px), 4}, {double(hx), 4}, {1, 0}, m, 0.5) == doctest::Approx(expect).epsilon(1e-15));
        }
    }
}

TEST_CASE("rho 0 gives a zero field, handle cell carries the full scaled drag") {
    const SoftMask m = rectangle_mask(20, 40, 5, 35, 4, 15);
    LwfParams p;
    p.rho = 0.0;
    const DisplacementField zero = compute_displacement_field(m, {{{10, 10}, {30, 10}}}, p);
    CHECK(zero.max_norm() == 0.0);
    p.rho = 0.15;
    const DisplacementField f = compute_displacement_field(m, {{{10, 10}, {30, 10}}}, p);
    CHECK(f.at(10, 10).x == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(f.at(10, 10).y == 0.0);
    CHECK(f.supported(10, 10));
    CHECK(!f.supported(0, 0));
    CHECK(f.at(0, 0).x == 0.0);
}

TEST_CASE("opposite symmetric drags cancel on the bisector") {
    const SoftMask m = rectangle_mask(32, 33, 2, 30, 8, 24);
    const std::vector<PointPair> pairs{{{12, 16}, {4, 16}}, {{20, 16}, {28, 16}}};
    LwfParams p;
    p.rho = 0.5;
    const DisplacementField f = compute_displacement_field(m, pairs, p);
    const auto drags = scale_drags(pairs, p.rho);
    const std::vector<Point2> handles{{12, 16}, {20, 16}};
    for (std::size_t y = 8; y <= 24; ++y) {
        const Point2 px{16, double(y)};
        const auto w = inverse_distance_weights(px, handles, p.weight_epsilon);
        Point2 direct{};
        for (std::size_t i = 0; i < 2; ++i) {
            const double lam = stretch_factor(px, handles[i], drags[i], m, p.mask_threshold);
            direct.x += w[i] * lam * drags[i].x;
            direct.y += w[i] * lam * drags[i].y;
        }
        CHECK(std::abs(direct.x) <= 1e-12);
        CHECK(std::abs(f.at(y, 16).x) <= 1e-12);
        CHECK(std::abs(f.at(y, 16).y) <= 1e-12);
    }
}

TEST_CASE("displacement magnitude is bounded by rho times the longest drag") {
    std::mt19937_64 rng(22);
    std::uniform_int_distribution<int> ux(0, 39), uy(0, 29);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<PointPair> pairs;
        double longest = 0.0;
        for (int i = 0; i < 1 + trial % 3; ++i) {
            PointPair pr{{ux(rng), uy(rng)}, {ux(rng), uy(rng)}};
            longest = std::max(longest, std::hypot(pr.target.x - pr.handle.x, pr.target.y - pr.handle.y));
            pairs.push_back(pr);
        }
        const SoftMask m = generate_soft_mask(pairs, {30, 40}, 3.0);
        LwfParams p;
        p.rho = 0.15 + 0.03 * trial;
        const DisplacementField f = compute_displacement_field(m, pairs, p);
        for (const auto& v : f.vectors) CHECK(std::hypot(v.x, v.y) <= p.rho * longest + 1e-12);
    }
}

TEST_CASE("displacement field is translation equivariant") {
    const std::vector<PointPair> pairs{{{6, 7}, {14, 9}}, {{10, 12}, {8, 4}}};
    const SoftMask small = generate_soft_mask(pairs, {20, 22}, 2.0);
    const int ox = 9, oy = 5;
    ScalarGrid2D big(20 + 2 * oy, 22 + 2 * ox, 0.0);
    for (std::size_t y = 0; y < 20; ++y) {
        for (std::size_t x = 0; x < 22; ++x) big.at(y + oy, x + ox) = small.grid.at(y, x);
    }
    std::vector<PointPair> moved;
    for (auto p : pairs) moved.push_back({{p.handle.x + ox, p.handle.y + oy}, {p.target.x + ox, p.target.y + oy}});
    const LwfParams params;
    const DisplacementField a = compute_displacement_field(small, pairs, params);
    const DisplacementField b = compute_displacement_field({big, 2.0}, moved, params);
    for (std::size_t y = 0; y < 20; ++y) {
        for (std::size_t x = 0; x < 22; ++x) {
            CHECK(a.supported(y, x) == b.supported(y + oy, x + ox));
            CHECK(std::abs(a.at(y, x).x - b.at(y + oy, x + ox).x) <= 1e-12);
            CHECK(std::abs(a.at(y, x).y - b.at(y + oy, x + ox).y) <= 1e-12);
        }
    }
}

TEST_CASE("zero field warp is bit-exact identity") {
    std::mt19937_64 rng(23);
    const LatentField z = random_latent(4, 9, 11, rng);
    DisplacementField f;
    f.height = 9;
    f.width = 11;
    f.vectors.assign(99, Point2{});
    f.support.assign(99, 1);
    CHECK(warp_latent(z, f) == z);
}

TEST_CASE("uniform unit field shifts the latent one cell right") {
    std::mt19937_64 rng(24);
    const LatentField z = random_latent(2, 6, 10, rng);
    DisplacementField f;
    f.height = 6;
    f.width = 10;
    f.vectors.assign(60, Point2{1.0, 0.0});
    f.support.assign(60, 1);
    const LatentField out = warp_latent(z, f);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t y = 0; y < 6; ++y) {
            for (std::size_t x = 1; x < 10; ++x) CHECK(out.at(c, y, x) == z.at(c, y, x - 1));
        }
    }
}

TEST_CASE("half-cell field on a checkerboard averages horizontal neighbours") {
    LatentField z(1, 8, 8, 3);
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) z.at(0, y, x) = (x + y) % 2 ? 1.0 : -1.0;
    }
    DisplacementField f;
    f.height = 8;
    f.width = 8;
    f.vectors.assign(64, Point2{0.5, 0.0});
    f.support.assign(64, 1);
    const LatentField out = warp_latent(z, f);
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 1; x < 8; ++x) {
            CHECK(out.at(0, y, x) == doctest::Approx(0.5 * (z.at(0, y, x - 1) + z.at(0, y, x))).epsilon(1e-15));
        }
    }
}

TEST_CASE("unsupported cells are copied; shape mismatch is an error") {
    std::mt19937_64 rng(25);
    const LatentField z = random_latent(1, 4, 4, rng);
    DisplacementField f;
    f.height = 4;
    f.width = 4;
    f.vectors.assign(16, Point2{1.0, 1.0});
    f.support.assign(16, 0);
    CHECK(warp_latent(z, f) == z);
    f.height = 3;
    CHECK_THROWS_AS(warp_latent(z, f), Error);
}

TEST_CASE("parameter validation") {
    LwfParams p;
    p.rho = 1.5;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.weight_epsilon = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.mask_threshold = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
}

}  // TEST_SUITE
