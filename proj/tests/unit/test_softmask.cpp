#include <doctest.h>

#include <algorithm>
#include <random>

#include "dragkit/error.hpp"
#include "dragkit/softmask.hpp"
#include "../support/oracles.hpp"

using namespace dragkit;

namespace {

std::vector<Pixel> cells_of(std::initializer_list<std::pair<int, int>> xs) {
    std::vector<Pixel> out;
    for (auto [x, y] : xs) out.push_back({x, y});
    return out;
}

PointPair random_pair(std::mt19937_64& rng, Dims d) {
    std::uniform_int_distribution<int> ux(0, int(d.width) - 1), uy(0, int(d.height) - 1);
    return {{ux(rng), uy(rng)}, {ux(rng), uy(rng)}};
}

std::size_t half_max_area(const SoftMask& m) {
    return static_cast<std::size_t>(std::count_if(m.grid.values().begin(), m.grid.values().end(),
                                                  [](double v) { return v >= 0.5; }));
}

}  // namespace

TEST_SUITE("softmask") {

TEST_CASE("zero-length drag rasterizes to one cell") {
    const PathRaster r = rasterize_drag_path({{0, 0}, {0, 0}}, {4, 4});
    CHECK(r.sample_count == 1);
    CHECK(r.cells == cells_of({{0, 0}}));
}

TEST_CASE("horizontal drag") {
    const PathRaster r = rasterize_drag_path({{0, 0}, {3, 0}}, {4, 4});
    CHECK(r.sample_count == 4);
    CHECK(r.cells == cells_of({{0, 0}, {1, 0}, {2, 0}, {3, 0}}));
    CHECK(r.blend_weights == std::vector<double>{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0});
}

TEST_CASE("shallow diagonal rounds ties away from zero") {
    const PathRaster r = rasterize_drag_path({{0, 0}, {3, 1}}, {4, 4});
    CHECK(r.sample_count == 4);
    CHECK(r.cells == cells_of({{0, 0}, {1, 0}, {2, 1}, {3, 1}}));
    // a tie at exactly .5: (0,0) -> (1,1) needs no tie; (0,0) -> (2,1) puts the middle sample at y = 0.5
    const PathRaster tie = rasterize_drag_path({{0, 0}, {2, 1}}, {4, 4});
    CHECK(tie.cells == cells_of({{0, 0}, {1, 1}, {2, 1}}));
    const PathRaster neg = rasterize_drag_path({{2, 1}, {0, 0}}, {4, 4});
    CHECK(neg.cells == cells_of({{2, 1}, {1, 1}, {0, 0}}));
}

TEST_CASE("rasterization matches direct formula evaluation on random pairs") {
    std::mt19937_64 rng(11);
    const Dims d{97, 131};
    for (int i = 0; i < 1000; ++i) {
        const PointPair p = random_pair(rng, d);
        const PathRaster r = rasterize_drag_path(p, d);
        const auto expect = oracle::path_cells(p.handle.x, p.handle.y, p.target.x, p.target.y);
        REQUIRE(r.cells.size() == expect.size());
        CHECK(r.sample_count == std::size_t(std::max(std::abs(p.target.x - p.handle.x), std::abs(p.target.y - p.handle.y)) + 1));
        for (std::size_t k = 0; k < expect.size(); ++k) {
            CHECK(r.cells[k].x == expect[k].first);
            CHECK(r.cells[k].y == expect[k].second);
        }
        CHECK(r.cells.front() == p.handle);
        CHECK(r.cells.back() == p.target);
    }
}

TEST_CASE("points outside the image are rejected") {
    CHECK_THROWS_AS(rasterize_drag_path({{-1, 0}, {2, 2}}, {4, 4}), Error);
    CHECK_THROWS_AS(rasterize_drag_path({{0, 0}, {4, 2}}, {4, 4}), Error);
    CHECK_THROWS_AS(generate_soft_mask({{{0, 0}, {0, 4}}}, {4, 4}, 1.0), Error);
}

TEST_CASE("empty pair list is an error, negative sigma is an error") {
    CHECK_THROWS_AS(generate_soft_mask({}, {8, 8}, 1.0), Error);
    CHECK_THROWS_AS(generate_soft_mask({{{1, 1}, {2, 2}}}, {8, 8}, -1.0), Error);
}

TEST_CASE("sigma 0 gives the binary raster") {
    const PointPair p{{1, 2}, {9, 5}};
    const SoftMask m = generate_soft_mask({p}, {12, 12}, 0.0);
    CHECK(m.grid == accumulate_paths({p}, {12, 12}));
    for (double v : m.grid.values()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("degenerate pair with sigma 0 is a valid single-pixel mask") {
    const SoftMask m = generate_soft_mask({{{3, 3}, {3, 3}}}, {6, 6}, 0.0);
    CHECK(m.grid.sum() == 1.0);
    CHECK(m.grid.at(3, 3) == 1.0);
}

TEST_CASE("horizontal path mask is mirror symmetric about its row and matches the dense oracle") {
    const Dims d{64, 64};
    const SoftMask m = generate_soft_mask({{{10, 10}, {20, 10}}}, d, 3.0);
    for (std::size_t k = 1; k <= 9; ++k) {
        for (std::size_t x = 0; x < 64; ++x) CHECK(std::abs(m.grid.at(10 - k, x) - m.grid.at(10 + k, x)) <= 1e-9);
    }
    const ScalarGrid2D marks = accumulate_paths({{{10, 10}, {20, 10}}}, d);
    oracle::Grid ref = oracle::dense_blur({64, 64, std::vector<double>(marks.values().begin(), marks.values().end())}, 3.0);
    const double peak = *std::max_element(ref.v.begin(), ref.v.end());
    for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(std::abs(m.grid.values()[i] - ref.v[i] / peak) <= 1e-9);
}

TEST_CASE("union of disjoint pairs dominates each single-pair mask before normalization") {
    const Dims d{32, 32};
    const PointPair a{{2, 2}, {8, 4}}, b{{20, 25}, {28, 18}};
    const ScalarGrid2D both = gaussian_blur(accumulate_paths({a, b}, d), 2.0);
    const ScalarGrid2D only_a = gaussian_blur(accumulate_paths({a}, d), 2.0);
    const ScalarGrid2D only_b = gaussian_blur(accumulate_paths({b}, d), 2.0);
    for (std::size_t i = 0; i < both.size(); ++i) {
        CHECK(both.values()[i] >= only_a.values()[i]);
        CHECK(both.values()[i] >= only_b.values()[i]);
    }
}

TEST_CASE("mask is normalized and lies in [0, 1]") {
    std::mt19937_64 rng(12);
    const Dims d{40, 50};
    for (int i = 0; i < 30; ++i) {
        const SoftMask m = generate_soft_mask({random_pair(rng, d), random_pair(rng, d)}, d, 0.5 + i * 0.2);
        CHECK(m.grid.max() == 1.0);
        for (double v : m.grid.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("permuting pairs leaves the mask bit-identical") {
    std::mt19937_64 rng(13);
    const Dims d{40, 40};
    std::vector<PointPair> pairs;
    for (int i = 0; i < 5; ++i) pairs.push_back(random_pair(rng, d));
    const SoftMask base = generate_soft_mask(pairs, d, 2.5);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        CHECK(generate_soft_mask(pairs, d, 2.5).grid == base.grid);
    }
}

TEST_CASE("mask decays with distance from a straight path") {
    const SoftMask m = generate_soft_mask({{{10, 20}, {30, 20}}}, {41, 41}, 3.0);
    for (std::size_t k = 0; k < 9; ++k) CHECK(m.grid.at(20 - k - 1, 20) < m.grid.at(20 - k, 20) + 1e-9);
    for (std::size_t k = 0; k < 9; ++k) CHECK(m.grid.at(20, 30 + k + 1) < m.grid.at(20, 30 + k) + 1e-9);
}

TEST_CASE("half-maximum footprint grows with sigma") {
    std::mt19937_64 rng(14);
    // paths stay ceil(3 * 4.5) clear of the edge; replicated borders shift the peak otherwise
    const Dims d{72, 72};
    std::uniform_int_distribution<int> u(14, 57);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<PointPair> pairs{{{u(rng), u(rng)}, {u(rng), u(rng)}}};
        std::size_t last = 0;
        for (double sigma : {0.0, 0.5, 1.0, 2.0, 3.0, 4.5}) {
            const std::size_t area = half_max_area(generate_soft_mask(pairs, d, sigma));
            CHECK(area >= last);
            last = area;
        }
    }
}

TEST_CASE("mask at a reduced scale uses scaled pairs and sigma") {
    const std::vector<PointPair> pairs{{{8, 16}, {40, 16}}};
    const SoftMask small = generate_soft_mask_at_scale(pairs, {64, 64}, 8.0, 4);
    CHECK(small.grid.height() == 16);
    CHECK(small.sigma == 2.0);
    CHECK(small.grid == generate_soft_mask({{{2, 4}, {10, 4}}}, {16, 16}, 2.0).grid);
    CHECK_THROWS_AS(generate_soft_mask_at_scale(pairs, {63, 64}, 8.0, 4), Error);
    CHECK(downscale_pairs({{{63, 5}, {6, 2}}}, 4) == std::vector<PointPair>{{{16, 1}, {2, 1}}});
}

}  // TEST_SUITE
